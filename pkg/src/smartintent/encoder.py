"""Small pre-norm transformer encoder with an MLM head, in float64 throughout.

Forward and backward passes are written out explicitly so analytic gradients
can be audited against finite differences. Mean pooling over all token states
(specials included) turns a hidden matrix into one function embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from smartintent.optim import OptimizerState, TrainingError, adam_step
from smartintent.seeding import STREAM_MASK, STREAM_ORDER, child_rng, child_seed
from smartintent.tokenizer import CLS_ID, MASK_ID, MAX_SEQ_LEN, SEP_ID, TokenSequence

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class EncoderError(ValueError):
    """Invalid encoder configuration or input."""


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    dim: int = 32
    heads: int = 2
    ffn_mult: int = 4
    max_len: int = MAX_SEQ_LEN

    def __post_init__(self):
        if self.layers < 1:
            raise EncoderError("layers must be >= 1")
        if self.dim % self.heads != 0:
            raise EncoderError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 1 <= self.max_len <= MAX_SEQ_LEN:
            raise EncoderError(f"max_len must be in [1, {MAX_SEQ_LEN}]")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "layers": self.layers,
            "dim": self.dim,
            "heads": self.heads,
            "ffn_mult": self.ffn_mult,
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]


def init_encoder_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """BERT-style init: N(0, 0.02) projections, unit layer-norm gain, zero biases."""
    rng = np.random.default_rng(seed)
    d, hidden = config.dim, config.ffn_mult * config.dim
    t: dict[str, np.ndarray] = {
        "tok_emb": rng.normal(0.0, 0.02, (config.vocab_size, d)),
        "pos_emb": rng.normal(0.0, 0.02, (config.max_len, d)),
    }
    for layer in range(config.layers):
        p = f"layers.{layer}"
        for proj in ("wq", "wk", "wv", "wo"):
            t[f"{p}.attn.{proj}"] = rng.normal(0.0, 0.02, (d, d))
        t[f"{p}.ln1.g"] = np.ones(d)
        t[f"{p}.ln1.b"] = np.zeros(d)
        t[f"{p}.ln2.g"] = np.ones(d)
        t[f"{p}.ln2.b"] = np.zeros(d)
        t[f"{p}.ffn.w1"] = rng.normal(0.0, 0.02, (d, hidden))
        t[f"{p}.ffn.b1"] = np.zeros(hidden)
        t[f"{p}.ffn.w2"] = rng.normal(0.0, 0.02, (hidden, d))
        t[f"{p}.ffn.b2"] = np.zeros(d)
    # Pre-norm stacks need a closing norm; without it the output scale is
    # init-dependent and pooled embeddings degenerate at small dimensions.
    t["final_ln.g"] = np.ones(d)
    t["final_ln.b"] = np.zeros(d)
    t["head.w"] = rng.normal(0.0, 0.02, (d, config.vocab_size))
    t["head.b"] = np.zeros(config.vocab_size)
    return EncoderParams(config=config, tensors=t)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    # d/dx x*Phi(x) = Phi(x) + x*phi(x)
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, xhat, inv


def _layer_norm_backward(dy, g, xhat, inv):
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _join_heads(x: np.ndarray) -> np.ndarray:
    heads, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, heads * dh)


def _forward(params: EncoderParams, ids: np.ndarray):
    cfg = params.config
    t = params.tensors
    x = t["tok_emb"][ids] + t["pos_emb"][: len(ids)]
    caches = []
    for layer in range(cfg.layers):
        p = f"layers.{layer}"
        a_in, xhat1, inv1 = _layer_norm(x, t[f"{p}.ln1.g"], t[f"{p}.ln1.b"])
        q = a_in @ t[f"{p}.attn.wq"]
        k = a_in @ t[f"{p}.attn.wk"]
        v = a_in @ t[f"{p}.attn.wv"]
        qh, kh, vh = (_split_heads(m, cfg.heads) for m in (q, k, v))
        scale = 1.0 / math.sqrt(cfg.dim // cfg.heads)
        probs = _softmax(qh @ kh.transpose(0, 2, 1) * scale)
        attn = _join_heads(probs @ vh)
        x_mid = x + attn @ t[f"{p}.attn.wo"]
        b_in, xhat2, inv2 = _layer_norm(x_mid, t[f"{p}.ln2.g"], t[f"{p}.ln2.b"])
        pre = b_in @ t[f"{p}.ffn.w1"] + t[f"{p}.ffn.b1"]
        act = _gelu(pre)
        x_out = x_mid + act @ t[f"{p}.ffn.w2"] + t[f"{p}.ffn.b2"]
        caches.append(
            {
                "x": x, "a_in": a_in, "xhat1": xhat1, "inv1": inv1,
                "qh": qh, "kh": kh, "vh": vh, "probs": probs, "attn": attn,
                "x_mid": x_mid, "b_in": b_in, "xhat2": xhat2, "inv2": inv2,
                "pre": pre, "act": act, "scale": scale,
            }
        )
        x = x_out
    out, xhat_f, inv_f = _layer_norm(x, t["final_ln.g"], t["final_ln.b"])
    return out, (caches, xhat_f, inv_f)


def _backward(params: EncoderParams, ids: np.ndarray, caches, d_out: np.ndarray):
    cfg = params.config
    t = params.tensors
    layer_caches, xhat_f, inv_f = caches
    caches = layer_caches
    grads = {name: np.zeros_like(tensor) for name, tensor in t.items()
             if not name.startswith("head.")}
    dx, dg_f, db_f = _layer_norm_backward(d_out, t["final_ln.g"], xhat_f, inv_f)
    grads["final_ln.g"] += dg_f
    grads["final_ln.b"] += db_f
    for layer in reversed(range(cfg.layers)):
        p = f"layers.{layer}"
        c = caches[layer]
        # FFN branch (x_out = x_mid + gelu(b_in@w1 + b1)@w2 + b2)
        grads[f"{p}.ffn.w2"] += c["act"].T @ dx
        grads[f"{p}.ffn.b2"] += dx.sum(axis=0)
        d_pre = (dx @ t[f"{p}.ffn.w2"].T) * _gelu_grad(c["pre"])
        grads[f"{p}.ffn.w1"] += c["b_in"].T @ d_pre
        grads[f"{p}.ffn.b1"] += d_pre.sum(axis=0)
        d_bin = d_pre @ t[f"{p}.ffn.w1"].T
        d_xmid_ln, dg2, db2 = _layer_norm_backward(d_bin, t[f"{p}.ln2.g"], c["xhat2"], c["inv2"])
        grads[f"{p}.ln2.g"] += dg2
        grads[f"{p}.ln2.b"] += db2
        d_xmid = dx + d_xmid_ln
        # Attention branch (x_mid = x + join(probs@vh)@wo)
        grads[f"{p}.attn.wo"] += c["attn"].T @ d_xmid
        d_attn = _split_heads(d_xmid @ t[f"{p}.attn.wo"].T, cfg.heads)
        d_probs = d_attn @ c["vh"].transpose(0, 2, 1)
        d_vh = c["probs"].transpose(0, 2, 1) @ d_attn
        probs = c["probs"]
        d_scores = probs * (d_probs - (d_probs * probs).sum(axis=-1, keepdims=True))
        d_scores *= c["scale"]
        d_qh = d_scores @ c["kh"]
        d_kh = d_scores.transpose(0, 2, 1) @ c["qh"]
        dq, dk, dv = (_join_heads(m) for m in (d_qh, d_kh, d_vh))
        a_in = c["a_in"]
        grads[f"{p}.attn.wq"] += a_in.T @ dq
        grads[f"{p}.attn.wk"] += a_in.T @ dk
        grads[f"{p}.attn.wv"] += a_in.T @ dv
        d_ain = dq @ t[f"{p}.attn.wq"].T + dk @ t[f"{p}.attn.wk"].T + dv @ t[f"{p}.attn.wv"].T
        d_x_ln, dg1, db1 = _layer_norm_backward(d_ain, t[f"{p}.ln1.g"], c["xhat1"], c["inv1"])
        grads[f"{p}.ln1.g"] += dg1
        grads[f"{p}.ln1.b"] += db1
        dx = d_xmid + d_x_ln
    np.add.at(grads["tok_emb"], ids, dx)
    grads["pos_emb"][: len(ids)] += dx
    return grads


def _check_ids(params: EncoderParams, seq: TokenSequence) -> np.ndarray:
    ids = np.asarray(seq.ids, dtype=np.intp)
    if len(ids) > params.config.max_len:
        raise EncoderError(f"sequence length {len(ids)} exceeds max_len {params.config.max_len}")
    if ids.max() >= params.config.vocab_size:
        raise EncoderError(f"token id {ids.max()} outside vocabulary of size {params.config.vocab_size}")
    return ids


def encode_sequence(params: EncoderParams, seq: TokenSequence) -> np.ndarray:
    """Run the encoder stack; returns the T x d matrix of contextual token states."""
    hidden, _ = _forward(params, _check_ids(params, seq))
    return hidden


def mean_pool(hidden: np.ndarray) -> np.ndarray:
    """Average all token states (specials included) into one function embedding."""
    hidden = np.asarray(hidden, dtype=np.float64)
    if hidden.ndim != 2 or hidden.shape[0] < 1:
        raise EncoderError("mean_pool needs a nonempty T x d matrix")
    return hidden.mean(axis=0)


def mask_tokens(
    seq: TokenSequence, rate: float = 0.15, seed: int = 0
) -> tuple[TokenSequence, tuple[int, ...], tuple[int, ...]]:
    """Replace a seeded sample of content positions with [MASK].

    [CLS] and [SEP] are never candidates. The sample size is
    ``max(1, round(rate * (T - 2)))`` with half-up rounding; positions are
    returned sorted together with the original ids at those positions.
    """
    if not 0.0 < rate < 1.0:
        raise EncoderError(f"mask rate must be in (0, 1), got {rate}")
    content = len(seq) - 2
    if content < 1:
        raise EncoderError("nothing maskable: sequence has no content tokens")
    count = max(1, int(math.floor(rate * content + 0.5)))
    rng = np.random.default_rng(seed)
    picks = rng.choice(np.arange(1, len(seq) - 1), size=count, replace=False)
    positions = tuple(sorted(int(p) for p in picks))
    ids = list(seq.ids)
    targets = tuple(ids[p] for p in positions)
    for p in positions:
        ids[p] = MASK_ID
    return TokenSequence(tuple(ids)), positions, targets


def _mlm_loss_from_hidden(params: EncoderParams, hidden, positions, targets):
    rows = hidden[list(positions)]
    logits = rows @ params.tensors["head.w"] + params.tensors["head.b"]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    picked = shifted[np.arange(len(positions)), list(targets)]
    return float(np.mean(log_z - picked)), logits, rows


def mlm_loss(
    params: EncoderParams,
    masked: TokenSequence,
    positions: tuple[int, ...],
    targets: tuple[int, ...],
) -> float:
    """Mean negative log-likelihood of the original ids at the masked positions."""
    if not positions:
        raise EncoderError("mlm_loss needs at least one masked position")
    hidden = encode_sequence(params, masked)
    loss, _, _ = _mlm_loss_from_hidden(params, hidden, positions, targets)
    return loss


def mlm_loss_and_grads(
    params: EncoderParams,
    masked: TokenSequence,
    positions: tuple[int, ...],
    targets: tuple[int, ...],
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus analytic gradients for every encoder and head tensor."""
    if not positions:
        raise EncoderError("mlm_loss needs at least one masked position")
    ids = _check_ids(params, masked)
    hidden, caches = _forward(params, ids)
    loss, logits, rows = _mlm_loss_from_hidden(params, hidden, positions, targets)
    d_logits = _softmax(logits)
    d_logits[np.arange(len(positions)), list(targets)] -= 1.0
    d_logits /= len(positions)
    grads = _backward(
        params,
        ids,
        caches,
        _scatter_rows(hidden.shape, positions, d_logits @ params.tensors["head.w"].T),
    )
    grads["head.w"] = rows.T @ d_logits
    grads["head.b"] = d_logits.sum(axis=0)
    return loss, grads


def _scatter_rows(shape, positions, rows):
    out = np.zeros(shape)
    out[list(positions)] = rows
    return out


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    mask_rate: float = 0.15
    seed: int = 0
    stop_loss: float | None = None


def pretrain(
    params: EncoderParams,
    corpus: list[TokenSequence],
    config: PretrainConfig,
) -> tuple[EncoderParams, list[float]]:
    """MLM pretraining with fresh masking each step and AdamW updates.

    Deterministic per seed: epoch order, batch membership, and per-sequence
    masking all derive from ``config.seed``. Returns the trained parameters
    and the per-step mean batch loss trace.
    """
    sequences = [seq for seq in corpus if len(seq) > 2]
    if not sequences:
        raise EncoderError("pretraining corpus has no maskable sequences")
    tensors = {name: t.copy() for name, t in params.tensors.items()}
    trained = EncoderParams(config=params.config, tensors=tensors)
    state = OptimizerState.for_tensors(tensors, weight_decay=config.weight_decay)
    trace: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        order = child_rng(config.seed, STREAM_ORDER, epoch).permutation(len(sequences))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            step += 1
            total = 0.0
            acc: dict[str, np.ndarray] | None = None
            for offset, seq_idx in enumerate(batch):
                seq = sequences[seq_idx]
                masked, positions, targets = mask_tokens(
                    seq, config.mask_rate, seed=child_seed(config.seed, STREAM_MASK, step, offset)
                )
                loss, grads = mlm_loss_and_grads(trained, masked, positions, targets)
                total += loss
                if acc is None:
                    acc = grads
                else:
                    for name, g in grads.items():
                        acc[name] += g
            assert acc is not None
            mean_loss = total / len(batch)
            if not math.isfinite(mean_loss):
                raise TrainingError(f"non-finite pretraining loss at step {step}")
            for name in acc:
                acc[name] /= len(batch)
            adam_step(tensors, acc, state, config.lr)
            trace.append(mean_loss)
            if config.stop_loss is not None and mean_loss < config.stop_loss:
                return trained, trace
    return trained, trace
