"""Two-phase classifier training on top of frozen function embeddings.

Phase 1 iterates chunks of the complete dataset; phase 2 re-trains at a
reduced learning rate on per-class balanced samples. The encoder is never
updated here: its tensors are read-only inputs to the embedding step.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from smartintent.checkpoint import checkpoint_hash
from smartintent.classifier import (
    ClassifierConfig,
    ClassifierParams,
    ContractMatrix,
    PredictionVector,
    binarize,
    bilstm_forward,
    build_contract_matrix,
    classifier_loss_and_grads,
    classify,
    init_classifier_params,
)
from smartintent.dataset import NUM_CLASSES, SourceContract, balanced_sample
from smartintent.encoder import EncoderConfig, EncoderParams, encode_sequence, mean_pool
from smartintent.extractor import contract_to_units
from smartintent.optim import OptimizerState, TrainingError, adam_step
from smartintent.seeding import STREAM_DROPOUT, STREAM_INIT, STREAM_SAMPLE, child_seed
from smartintent.tokenizer import Vocabulary, encode, vocab_hash

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "TrainingError",
    "adam_step",
    "EmbeddingCache",
    "embed_contract",
    "embed_contracts",
    "train_phase1",
    "train_phase2",
    "run_training",
    "predict_contracts",
    "pack_model",
    "unpack_model",
    "worker_count",
]


@dataclass(frozen=True)
class TrainConfig:
    phase1_lr: float = 1e-3
    batch_size: int = 200
    chunks: int = 80
    epochs_per_chunk: int = 100
    phase2_lr: float = 1e-4
    per_class: int = 10
    phase2_epochs: int = 40
    phase2_batch: int = 20
    gamma: float = 2.0
    alpha: float = 0.25
    l_cap: int = 16
    units: int = 8
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.phase1_lr < 0 or self.phase2_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if min(self.batch_size, self.chunks, self.epochs_per_chunk) < 1:
            raise ValueError("batch_size, chunks, and epochs_per_chunk must be >= 1")
        if self.phase2_epochs < 0 or self.phase2_batch < 1 or self.per_class < 1:
            raise ValueError("invalid phase-2 configuration")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def worker_count() -> int:
    """Worker cap from SINN_THREADS (default 1, i.e. serial)."""
    raw = os.environ.get("SINN_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class EmbeddingCache:
    """Contract embeddings keyed by (contract id, vocab hash, encoder hash)."""

    def __init__(self):
        self._store: dict[tuple[str, str, str], ContractMatrix] = {}

    def get(self, key: tuple[str, str, str]) -> ContractMatrix | None:
        return self._store.get(key)

    def put(self, key: tuple[str, str, str], matrix: ContractMatrix) -> None:
        self._store[key] = matrix

    def __len__(self) -> int:
        return len(self._store)


def embed_contract(
    contract: SourceContract,
    vocab: Vocabulary,
    enc_params: EncoderParams,
    l_cap: int,
) -> ContractMatrix:
    """Extract, encode, and mean-pool a contract's functions into an L x d matrix."""
    units = contract_to_units(contract)
    embeddings = []
    for unit in units[:l_cap]:  # rows past l_cap would be truncated anyway
        seq = encode(unit.code, vocab, max_len=enc_params.config.max_len)
        embeddings.append(mean_pool(encode_sequence(enc_params, seq)))
    return build_contract_matrix(embeddings, l_cap)


def _encoder_hash(enc_params: EncoderParams) -> str:
    return checkpoint_hash(enc_params.config.to_dict(), enc_params.tensors)


def embed_contracts(
    contracts: list[SourceContract],
    vocab: Vocabulary,
    enc_params: EncoderParams,
    l_cap: int,
    cache: EmbeddingCache | None = None,
    workers: int | None = None,
) -> list[ContractMatrix]:
    """Embed contracts in order, reusing the cache and fanning out read-only work."""
    vhash = vocab_hash(vocab)
    ehash = _encoder_hash(enc_params)
    results: list[ContractMatrix | None] = [None] * len(contracts)
    pending: list[int] = []
    for idx, contract in enumerate(contracts):
        hit = cache.get((contract.id, vhash, ehash)) if cache is not None else None
        if hit is not None:
            results[idx] = hit
        else:
            pending.append(idx)
    workers = worker_count() if workers is None else max(1, workers)
    if pending:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                computed = list(
                    pool.map(
                        lambda i: embed_contract(contracts[i], vocab, enc_params, l_cap),
                        pending,
                    )
                )
        else:
            computed = [embed_contract(contracts[i], vocab, enc_params, l_cap) for i in pending]
        for idx, matrix in zip(pending, computed):
            results[idx] = matrix
            if cache is not None:
                cache.put((contracts[idx].id, vhash, ehash), matrix)
    return results  # type: ignore[return-value]


def _run_steps(
    cls_params: ClassifierParams,
    state: OptimizerState,
    batches,
    lr: float,
    gamma: float,
    alpha: float,
    seed: int,
    phase_tag: int,
    phase_name: str,
    trace: list[tuple[int, str, float]],
    step: int,
) -> int:
    for matrices, labels in batches:
        step += 1
        seeds = [
            child_seed(seed, STREAM_DROPOUT, phase_tag, step, i) for i in range(len(matrices))
        ]
        loss, grads = classifier_loss_and_grads(
            cls_params, matrices, labels, gamma, alpha, dropout_seeds=seeds
        )
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at {phase_name} step {step}")
        adam_step(cls_params.tensors, grads, state, lr)
        trace.append((step, phase_name, loss))
    return step


def train_phase1(
    enc_params: EncoderParams,
    vocab: Vocabulary,
    data: list[SourceContract],
    cfg: TrainConfig,
    cache: EmbeddingCache | None = None,
) -> tuple[ClassifierParams, list[tuple[int, str, float]]]:
    """Complete-data phase: chunk the dataset, then run E epochs per chunk."""
    if not data:
        raise TrainingError("phase-1 training data is empty")
    matrices = embed_contracts(data, vocab, enc_params, cfg.l_cap, cache)
    labels = np.array([c.labels for c in data], dtype=np.float64)
    cls_cfg = ClassifierConfig(
        input_dim=enc_params.config.dim,
        units=cfg.units,
        classes=NUM_CLASSES,
        dropout=cfg.dropout,
    )
    cls_params = init_classifier_params(cls_cfg, seed=child_seed(cfg.seed, STREAM_INIT))
    state = OptimizerState.for_tensors(cls_params.tensors)
    trace: list[tuple[int, str, float]] = []
    n_chunks = min(cfg.chunks, math.ceil(len(data) / cfg.batch_size))
    step = 0
    for chunk_idx in range(n_chunks):
        lo = chunk_idx * cfg.batch_size
        hi = min(lo + cfg.batch_size, len(data))
        batches = (
            (matrices[lo:hi], labels[lo:hi]) for _ in range(cfg.epochs_per_chunk)
        )
        step = _run_steps(
            cls_params, state, batches, cfg.phase1_lr, cfg.gamma, cfg.alpha,
            cfg.seed, 1, "phase1", trace, step,
        )
    return cls_params, trace


def train_phase2(
    cls_params: ClassifierParams,
    enc_params: EncoderParams,
    vocab: Vocabulary,
    data: list[SourceContract],
    cfg: TrainConfig,
    cache: EmbeddingCache | None = None,
) -> tuple[ClassifierParams, list[tuple[int, str, float]]]:
    """Class-balanced phase: fresh per-epoch balanced samples at the reduced rate."""
    tuned = ClassifierParams(
        config=cls_params.config,
        tensors={name: t.copy() for name, t in cls_params.tensors.items()},
    )
    trace: list[tuple[int, str, float]] = []
    if cfg.phase2_epochs == 0:
        return tuned, trace
    matrices = embed_contracts(data, vocab, enc_params, cfg.l_cap, cache)
    by_id = {c.id: m for c, m in zip(data, matrices)}
    state = OptimizerState.for_tensors(tuned.tensors)
    step = 0
    for epoch in range(cfg.phase2_epochs):
        drawn = balanced_sample(data, cfg.per_class, seed=child_seed(cfg.seed, STREAM_SAMPLE, epoch))
        batches = []
        for start in range(0, len(drawn), cfg.phase2_batch):
            chunk = drawn[start : start + cfg.phase2_batch]
            batches.append(
                (
                    [by_id[c.id] for c in chunk],
                    np.array([c.labels for c in chunk], dtype=np.float64),
                )
            )
        step = _run_steps(
            tuned, state, batches, cfg.phase2_lr, cfg.gamma, cfg.alpha,
            cfg.seed, 2, "phase2", trace, step,
        )
    return tuned, trace


def run_training(
    enc_params: EncoderParams,
    vocab: Vocabulary,
    data: list[SourceContract],
    cfg: TrainConfig,
    cache: EmbeddingCache | None = None,
) -> tuple[ClassifierParams, list[tuple[int, str, float]]]:
    """Phase 1 followed by phase 2, sharing one embedding cache."""
    cache = cache if cache is not None else EmbeddingCache()
    cls_params, trace1 = train_phase1(enc_params, vocab, data, cfg, cache)
    tuned, trace2 = train_phase2(cls_params, enc_params, vocab, data, cfg, cache)
    return tuned, trace1 + trace2


def predict_contracts(
    enc_params: EncoderParams,
    cls_params: ClassifierParams,
    vocab: Vocabulary,
    contracts: list[SourceContract],
    l_cap: int,
    threshold: float = 0.5,
    cache: EmbeddingCache | None = None,
) -> list[PredictionVector]:
    """Inference-mode predictions (no dropout) for each contract."""
    matrices = embed_contracts(contracts, vocab, enc_params, l_cap, cache)
    out = []
    for matrix in matrices:
        probs = classify(cls_params, bilstm_forward(cls_params, matrix), mode="infer")
        out.append(
            PredictionVector(probs=probs, binarized=binarize(probs, threshold), threshold=threshold)
        )
    return out


def pack_model(
    enc_params: EncoderParams, cls_params: ClassifierParams | None = None
) -> tuple[dict, dict[str, np.ndarray]]:
    """Namespace tensors for the shared checkpoint container (enc.* / cls.*)."""
    config: dict = {"encoder": enc_params.config.to_dict()}
    tensors = {f"enc.{name}": t for name, t in enc_params.tensors.items()}
    if cls_params is not None:
        config["classifier"] = cls_params.config.to_dict()
        tensors.update({f"cls.{name}": t for name, t in cls_params.tensors.items()})
    return config, tensors


def unpack_model(
    config: dict, tensors: dict[str, np.ndarray]
) -> tuple[EncoderParams, ClassifierParams | None]:
    enc_params = EncoderParams(
        config=EncoderConfig.from_dict(config["encoder"]),
        tensors={
            name[len("enc.") :]: t for name, t in tensors.items() if name.startswith("enc.")
        },
    )
    cls_params = None
    if "classifier" in config:
        cls_params = ClassifierParams(
            config=ClassifierConfig.from_dict(config["classifier"]),
            tensors={
                name[len("cls.") :]: t for name, t in tensors.items() if name.startswith("cls.")
            },
        )
    return enc_params, cls_params
