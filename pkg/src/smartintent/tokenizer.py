"""Byte-level BPE vocabulary with reserved special tokens.

Ids 0-4 are reserved ([PAD], [CLS], [SEP], [MASK], [UNK]), ids 5-260 are the
256 raw bytes, and every trained merge appends one id. Byte fallback means
encoding never produces [UNK]; it exists to flag corrupt vocabulary files.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
MASK_ID = 3
UNK_ID = 4
SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]")

_NUM_SPECIAL = len(SPECIAL_TOKENS)
_NUM_BYTES = 256
BASE_VOCAB_SIZE = _NUM_SPECIAL + _NUM_BYTES  # 261
MAX_SEQ_LEN = 512


class VocabError(ValueError):
    """Invalid vocabulary parameters or a corrupt vocabulary file."""


@dataclass(frozen=True)
class TokenSequence:
    """Encoded ids: [CLS] content [SEP], never padded, never longer than 512."""

    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) < 2 or len(self.ids) > MAX_SEQ_LEN:
            raise VocabError(f"sequence length {len(self.ids)} outside [2, {MAX_SEQ_LEN}]")
        if self.ids[0] != CLS_ID or self.ids[-1] != SEP_ID:
            raise VocabError("sequence must start with [CLS] and end with [SEP]")
        if PAD_ID in self.ids:
            raise VocabError("[PAD] may not appear inside a token sequence")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Vocabulary:
    """Ordered merge list plus id lookup tables; immutable after training."""

    merges: list[tuple[int, int]] = field(default_factory=list)
    token_bytes: dict[int, bytes] = field(default_factory=dict)
    token_to_id: dict[bytes, int] = field(default_factory=dict)

    @classmethod
    def base(cls) -> "Vocabulary":
        vocab = cls()
        for b in range(_NUM_BYTES):
            token = bytes([b])
            vocab.token_bytes[_NUM_SPECIAL + b] = token
            vocab.token_to_id[token] = _NUM_SPECIAL + b
        return vocab

    @property
    def size(self) -> int:
        return BASE_VOCAB_SIZE + len(self.merges)

    def add_merge(self, left: int, right: int) -> int:
        new_id = self.size
        token = self.token_bytes[left] + self.token_bytes[right]
        self.merges.append((left, right))
        self.token_bytes[new_id] = token
        self.token_to_id[token] = new_id
        return new_id


def _pair_counts(sequences: list[list[int]]) -> Counter:
    counts: Counter = Counter()
    for seq in sequences:
        for pair in zip(seq, seq[1:]):
            counts[pair] += 1
    return counts


def _apply_merge(seq: list[int], left: int, right: int, new_id: int) -> list[int]:
    out: list[int] = []
    i, n = 0, len(seq)
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def train_vocab(corpus: list, target_size: int) -> Vocabulary:
    """Train a byte-level BPE vocabulary on function units (greediest pair first).

    Ties break toward the lexicographically smaller byte pair. If the corpus
    runs out of repeated pairs, the vocabulary finalizes below ``target_size``.
    """
    if target_size < BASE_VOCAB_SIZE:
        raise VocabError(f"target_size must be >= {BASE_VOCAB_SIZE}, got {target_size}")
    if not corpus:
        raise VocabError("training corpus is empty")
    vocab = Vocabulary.base()
    sequences = [
        [_NUM_SPECIAL + b for b in unit.code.encode("utf-8")] for unit in corpus
    ]
    for _ in range(target_size - BASE_VOCAB_SIZE):
        counts = _pair_counts(sequences)
        if not counts:
            break
        best_count = max(counts.values())
        best = min(
            (pair for pair, c in counts.items() if c == best_count),
            key=lambda p: (vocab.token_bytes[p[0]], vocab.token_bytes[p[1]]),
        )
        new_id = vocab.add_merge(*best)
        sequences = [_apply_merge(seq, best[0], best[1], new_id) for seq in sequences]
    return vocab


def encode(text: str, vocab: Vocabulary, max_len: int = MAX_SEQ_LEN) -> TokenSequence:
    """Encode text to ids, applying merges in training order, left to right.

    Content beyond ``max_len - 2`` tokens is truncated from the tail so the
    total length is ``max_len`` with [SEP] retained.
    """
    if max_len < 2:
        raise VocabError(f"max_len must be >= 2, got {max_len}")
    seq = [_NUM_SPECIAL + b for b in text.encode("utf-8")]
    for merge_idx, (left, right) in enumerate(vocab.merges):
        if left in seq:
            seq = _apply_merge(seq, left, right, BASE_VOCAB_SIZE + merge_idx)
    return TokenSequence(tuple([CLS_ID] + seq[: max_len - 2] + [SEP_ID]))


def decode(ids, vocab: Vocabulary) -> str:
    """Invert encode over the content region; special tokens are dropped."""
    raw = b""
    for token_id in ids.ids if isinstance(ids, TokenSequence) else ids:
        if token_id >= vocab.size or token_id < 0:
            raise VocabError(f"id {token_id} outside vocabulary of size {vocab.size}")
        if token_id < _NUM_SPECIAL:
            continue
        raw += vocab.token_bytes[token_id]
    return raw.decode("utf-8", errors="replace")


def dumps_vocab(vocab: Vocabulary) -> str:
    """Versioned text serialization: header then one hex byte-pair per line."""
    lines = [f"BPEv1 {vocab.size}"]
    for left, right in vocab.merges:
        lines.append(f"{vocab.token_bytes[left].hex()} {vocab.token_bytes[right].hex()}")
    return "\n".join(lines) + "\n"


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(dumps_vocab(vocab), encoding="utf-8", newline="\n")


def load_vocab(path: str | Path) -> Vocabulary:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("BPEv1 "):
        raise VocabError("missing BPEv1 header")
    try:
        declared = int(lines[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise VocabError("malformed BPEv1 header") from exc
    vocab = Vocabulary.base()
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise VocabError(f"line {line_no}: expected two hex fields")
        try:
            left_bytes, right_bytes = bytes.fromhex(parts[0]), bytes.fromhex(parts[1])
        except ValueError as exc:
            raise VocabError(f"line {line_no}: invalid hex") from exc
        left = vocab.token_to_id.get(left_bytes)
        right = vocab.token_to_id.get(right_bytes)
        if left is None or right is None:
            raise VocabError(f"line {line_no}: merge references unknown token")
        vocab.add_merge(left, right)
    if vocab.size != declared:
        raise VocabError(f"header declares {declared} tokens, file defines {vocab.size}")
    return vocab


def vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256(dumps_vocab(vocab).encode("utf-8")).hexdigest()
