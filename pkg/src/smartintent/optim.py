"""Bias-corrected Adam with optional decoupled weight decay, over named tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    """Non-finite gradient or loss encountered during an update."""


@dataclass
class OptimizerState:
    """Per-tensor first/second moment accumulators and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_tensors(cls, tensors: dict[str, np.ndarray], **kwargs) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(t) for name, t in tensors.items()},
            v={name: np.zeros_like(t) for name, t in tensors.items()},
            **kwargs,
        )


def adam_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> None:
    """Apply one Adam update in place. Tensor order is fixed (sorted names).

    Weight decay, when configured, is decoupled: it shrinks parameters
    directly instead of entering the moment estimates.
    """
    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    for name in sorted(tensors):
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise TrainingError(f"non-finite gradient in tensor {name!r} at step {state.step}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        if state.weight_decay:
            tensors[name] -= lr * state.weight_decay * tensors[name]
        tensors[name] -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
