"""Labeled contract datasets: JSONL ingest, deterministic splits, balanced sampling.

The wire format is JSONL, one object per line:
``{"id": str, "source": str, "labels": [10 x 0|1]}`` (UTF-8, LF endings).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INTENT_CATEGORIES = (
    "Fee",
    "DisableTrading",
    "Blacklist",
    "Reflect",
    "MaxTX",
    "Mint",
    "Honeypot",
    "Reward",
    "Rebase",
    "MaxSell",
)
NUM_CLASSES = len(INTENT_CATEGORIES)


class DatasetError(ValueError):
    """A dataset file or record violates the JSONL contract."""


@dataclass(frozen=True)
class SourceContract:
    """One labeled contract: identifier, raw source text, 10-bit intent labels."""

    id: str
    source: str
    labels: tuple[int, ...]


@dataclass(frozen=True)
class DatasetSplit:
    train: list[SourceContract]
    eval: list[SourceContract]
    seed: int


def _round_half_up(x: float) -> int:
    # Avoids banker's rounding so counts are reproducible across interpreters.
    return int(math.floor(x + 0.5))


def _parse_labels(raw: object, line_no: int) -> tuple[int, ...]:
    if not isinstance(raw, list) or len(raw) != NUM_CLASSES:
        raise DatasetError(f"line {line_no}: label arity must be {NUM_CLASSES}")
    bits = []
    for value in raw:
        if value not in (0, 1, False, True):
            raise DatasetError(f"line {line_no}: labels must be 0 or 1")
        bits.append(int(value))
    return tuple(bits)


def ingest_jsonl(path: str | Path) -> list[SourceContract]:
    """Read contracts from a JSONL file, validating ids, sources, and labels."""
    contracts: list[SourceContract] = []
    seen: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip("\n")
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise DatasetError(f"line {line_no}: expected a JSON object")
            for key in ("id", "source", "labels"):
                if key not in record:
                    raise DatasetError(f"line {line_no}: missing key {key!r}")
            cid = record["id"]
            if not isinstance(cid, str) or not cid:
                raise DatasetError(f"line {line_no}: id must be a nonempty string")
            if cid in seen:
                raise DatasetError(f"line {line_no}: duplicate id {cid!r}")
            source = record["source"]
            if not isinstance(source, str) or not source:
                raise DatasetError(f"line {line_no}: source must be nonempty")
            labels = _parse_labels(record["labels"], line_no)
            seen.add(cid)
            contracts.append(SourceContract(id=cid, source=source, labels=labels))
    return contracts


def write_jsonl(contracts: list[SourceContract], path: str | Path) -> None:
    """Serialize contracts back to the JSONL wire format (inverse of ingest)."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        for contract in contracts:
            record = {
                "id": contract.id,
                "source": contract.source,
                "labels": list(contract.labels),
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def split(data: list[SourceContract], eval_fraction: float, seed: int) -> DatasetSplit:
    """Partition contracts into disjoint train/eval sides, deterministically per seed."""
    if not data:
        raise DatasetError("cannot split an empty dataset")
    if not 0.0 < eval_fraction < 1.0:
        raise DatasetError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    n_eval = _round_half_up(eval_fraction * len(data))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    eval_ids = {data[i].id for i in order[:n_eval]}
    train = [c for c in data if c.id not in eval_ids]
    evals = [c for c in data if c.id in eval_ids]
    return DatasetSplit(train=train, eval=evals, seed=seed)


def balanced_sample(
    data: list[SourceContract], per_class: int, seed: int
) -> list[SourceContract]:
    """Draw ``per_class`` contracts positive for each intent class.

    Draws are uniform without replacement when a class has enough positives,
    with replacement otherwise; duplicates across classes are retained, so the
    result always has exactly ``NUM_CLASSES * per_class`` entries.
    """
    if per_class < 1:
        raise DatasetError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    drawn: list[SourceContract] = []
    for class_idx, category in enumerate(INTENT_CATEGORIES):
        positives = [c for c in data if c.labels[class_idx] == 1]
        if not positives:
            raise DatasetError(f"class {category} has no positive instances")
        replace = len(positives) < per_class
        picks = rng.choice(len(positives), size=per_class, replace=replace)
        drawn.extend(positives[i] for i in picks)
    return drawn
