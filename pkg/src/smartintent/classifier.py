"""Contract-level classification: padded embedding matrices, a masked BiLSTM,
a dropout + sigmoid head, and binary focal loss.

Padded rows never enter either recurrence; the forward pass runs over rows
0..valid-1 and the backward pass over valid-1..0, so growing the padded
capacity leaves the output bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from smartintent.dataset import NUM_CLASSES

PROB_EPS = 1e-12


class ClassifierError(ValueError):
    """Invalid classifier configuration or input."""


@dataclass(frozen=True)
class ClassifierConfig:
    input_dim: int
    units: int = 8
    classes: int = NUM_CLASSES
    dropout: float = 0.5

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "units": self.units,
            "classes": self.classes,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClassifierConfig":
        return cls(**data)


@dataclass
class ClassifierParams:
    config: ClassifierConfig
    tensors: dict[str, np.ndarray]


@dataclass(frozen=True)
class ContractMatrix:
    """L x d matrix of function embeddings; rows >= valid are exactly zero."""

    x: np.ndarray
    valid: int


@dataclass(frozen=True)
class PredictionVector:
    probs: np.ndarray
    binarized: np.ndarray
    threshold: float


def init_classifier_params(config: ClassifierConfig, seed: int) -> ClassifierParams:
    rng = np.random.default_rng(seed)
    d, u, c = config.input_dim, config.units, config.classes
    bound = 1.0 / math.sqrt(u)
    t: dict[str, np.ndarray] = {}
    for direction in ("fw", "bw"):
        t[f"{direction}.wx"] = rng.uniform(-bound, bound, (d, 4 * u))
        t[f"{direction}.wh"] = rng.uniform(-bound, bound, (u, 4 * u))
        bias = np.zeros(4 * u)
        bias[u : 2 * u] = 1.0  # forget-gate bias
        t[f"{direction}.b"] = bias
    t["head.w"] = rng.uniform(-bound, bound, (c, 2 * u))
    t["head.b"] = np.zeros(c)
    return ClassifierParams(config=config, tensors=t)


def build_contract_matrix(embeddings: list[np.ndarray], l_cap: int) -> ContractMatrix:
    """Stack function embeddings in source order, zero-padded or tail-truncated to l_cap rows."""
    if not embeddings:
        raise ClassifierError("cannot build a contract matrix from zero embeddings")
    if l_cap < 1:
        raise ClassifierError("l_cap must be >= 1")
    dim = len(embeddings[0])
    if any(len(e) != dim for e in embeddings):
        raise ClassifierError("inconsistent embedding dimensions")
    valid = min(len(embeddings), l_cap)
    x = np.zeros((l_cap, dim))
    for row in range(valid):
        x[row] = embeddings[row]
    return ContractMatrix(x=x, valid=valid)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    exp_x = np.exp(x[~pos])
    out[~pos] = exp_x / (1.0 + exp_x)
    return out


def _lstm_forward(rows: np.ndarray, wx, wh, b):
    """Unidirectional LSTM over rows; returns final hidden state and step cache."""
    u = wh.shape[0]
    h = np.zeros(u)
    c = np.zeros(u)
    cache = []
    for x in rows:
        pre = x @ wx + h @ wh + b
        i = _sigmoid(pre[:u])
        f = _sigmoid(pre[u : 2 * u])
        g = np.tanh(pre[2 * u : 3 * u])
        o = _sigmoid(pre[3 * u :])
        c_prev = c
        h_prev = h
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        cache.append((x, h_prev, c_prev, i, f, g, o, tanh_c))
    return h, cache


def _lstm_backward(cache, wx, wh, d_h_final):
    u = wh.shape[0]
    d_wx = np.zeros_like(wx)
    d_wh = np.zeros_like(wh)
    d_b = np.zeros(4 * u)
    d_rows = np.zeros((len(cache), wx.shape[0]))
    dh = d_h_final.copy()
    dc = np.zeros(u)
    for t in reversed(range(len(cache))):
        x, h_prev, c_prev, i, f, g, o, tanh_c = cache[t]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c * tanh_c)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc = dc * f
        da = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ]
        )
        d_wx += np.outer(x, da)
        d_wh += np.outer(h_prev, da)
        d_b += da
        d_rows[t] = wx @ da
        dh = wh @ da
    return d_wx, d_wh, d_b, d_rows


def bilstm_forward(params: ClassifierParams, matrix: ContractMatrix) -> np.ndarray:
    """Concatenated final forward and backward hidden states over the valid rows."""
    h, _, _ = _bilstm_forward_cached(params, matrix)
    return h


def _bilstm_forward_cached(params: ClassifierParams, matrix: ContractMatrix):
    if matrix.valid < 1:
        raise ClassifierError("contract matrix has no valid rows")
    rows = matrix.x[: matrix.valid]
    t = params.tensors
    h_fw, cache_fw = _lstm_forward(rows, t["fw.wx"], t["fw.wh"], t["fw.b"])
    h_bw, cache_bw = _lstm_forward(rows[::-1], t["bw.wx"], t["bw.wh"], t["bw.b"])
    return np.concatenate([h_fw, h_bw]), cache_fw, cache_bw


def dropout_mask(size: int, rate: float, seed: int) -> np.ndarray:
    """The seeded keep-mask used by train-mode classification (regenerable)."""
    return np.random.default_rng(seed).random(size) < (1.0 - rate)


def classify(
    params: ClassifierParams,
    h: np.ndarray,
    mode: str = "infer",
    dropout_seed: int | None = None,
) -> np.ndarray:
    """Per-class probabilities from the BiLSTM summary state.

    Train mode applies inverted dropout (kept units scaled by 1/(1-p)) before
    the affine map; inference is a pure affine + sigmoid.
    """
    if mode not in ("train", "infer"):
        raise ClassifierError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train":
        if dropout_seed is None:
            raise ClassifierError("train mode requires a dropout_seed")
        rate = params.config.dropout
        if rate > 0.0:
            mask = dropout_mask(len(h), rate, dropout_seed)
            h = h * mask / (1.0 - rate)
    z = params.tensors["head.w"] @ h + params.tensors["head.b"]
    return _sigmoid(z)


def focal_loss(p, y, gamma: float = 2.0, alpha: float = 0.25):
    """Binary focal loss; broadcasts over array-shaped p and y."""
    if gamma < 0:
        raise ClassifierError(f"gamma must be >= 0, got {gamma}")
    if not 0.0 <= alpha <= 1.0:
        raise ClassifierError(f"alpha must be in [0, 1], got {alpha}")
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    loss = -alpha * y * (1.0 - p) ** gamma * np.log(p) - (1.0 - alpha) * (
        1.0 - y
    ) * p**gamma * np.log(1.0 - p)
    return float(loss) if loss.ndim == 0 else loss


def batch_loss(probs: np.ndarray, labels: np.ndarray, gamma: float, alpha: float) -> float:
    """Mean over samples of the per-class focal-loss sum."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if probs.shape != labels.shape:
        raise ClassifierError(f"shape mismatch: probs {probs.shape} vs labels {labels.shape}")
    if probs.shape[0] == 0:
        raise ClassifierError("batch is empty")
    return float(np.mean(focal_loss(probs, labels, gamma, alpha).sum(axis=1)))


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Bit c is set iff probs[c] >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ClassifierError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(probs) >= threshold).astype(np.int64)


def _focal_grad_wrt_p(p: np.ndarray, y: np.ndarray, gamma: float, alpha: float) -> np.ndarray:
    """dFL/dp at the clamped probability; gamma=0 handled without 0*inf."""
    if gamma > 0:
        pos_focus = gamma * (1.0 - p) ** (gamma - 1.0) * np.log(p)
        neg_focus = gamma * p ** (gamma - 1.0) * np.log(1.0 - p)
    else:
        pos_focus = np.zeros_like(p)
        neg_focus = np.zeros_like(p)
    d_pos = alpha * (pos_focus - (1.0 - p) ** gamma / p)
    d_neg = (1.0 - alpha) * (p**gamma / (1.0 - p) - neg_focus)
    return y * d_pos + (1.0 - y) * d_neg


def classifier_loss_and_grads(
    params: ClassifierParams,
    matrices: list[ContractMatrix],
    labels: np.ndarray,
    gamma: float,
    alpha: float,
    dropout_seeds: list[int] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch focal loss and analytic gradients for every classifier tensor.

    ``dropout_seeds`` (one per sample) turns on train-mode dropout; None keeps
    the forward pass deterministic for gradient checks and evaluation.
    """
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    m = len(matrices)
    if m == 0:
        raise ClassifierError("batch is empty")
    if labels.shape != (m, params.config.classes):
        raise ClassifierError(f"labels must be {m} x {params.config.classes}")
    t = params.tensors
    u = params.config.units
    rate = params.config.dropout
    grads = {name: np.zeros_like(tensor) for name, tensor in t.items()}
    total = 0.0
    for idx, matrix in enumerate(matrices):
        h, cache_fw, cache_bw = _bilstm_forward_cached(params, matrix)
        if dropout_seeds is not None and rate > 0.0:
            mask = dropout_mask(2 * u, rate, dropout_seeds[idx])
            h_in = h * mask / (1.0 - rate)
        else:
            mask = None
            h_in = h
        z = t["head.w"] @ h_in + t["head.b"]
        p = _sigmoid(z)
        pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
        y = labels[idx]
        total += float(
            np.sum(
                -alpha * y * (1.0 - pc) ** gamma * np.log(pc)
                - (1.0 - alpha) * (1.0 - y) * pc**gamma * np.log(1.0 - pc)
            )
        )
        not_clipped = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
        dz = _focal_grad_wrt_p(pc, y, gamma, alpha) * not_clipped * p * (1.0 - p) / m
        grads["head.w"] += np.outer(dz, h_in)
        grads["head.b"] += dz
        dh = t["head.w"].T @ dz
        if mask is not None:
            dh = dh * mask / (1.0 - rate)
        d_wx_fw, d_wh_fw, d_b_fw, _ = _lstm_backward(cache_fw, t["fw.wx"], t["fw.wh"], dh[:u])
        d_wx_bw, d_wh_bw, d_b_bw, _ = _lstm_backward(cache_bw, t["bw.wx"], t["bw.wh"], dh[u:])
        grads["fw.wx"] += d_wx_fw
        grads["fw.wh"] += d_wh_fw
        grads["fw.b"] += d_b_fw
        grads["bw.wx"] += d_wx_bw
        grads["bw.wh"] += d_wh_bw
        grads["bw.b"] += d_b_bw
    return total / m, grads
