"""Command-line pipeline wiring: extract, vocab, pretrain, train, eval, predict.

Exit codes: 0 success, 2 parse error, 3 missing artifact, 4 config violation,
5 non-finite loss. Every produced artifact gets a run manifest written
atomically next to it. Seeds are mandatory where randomness is involved;
there are no wall-clock defaults anywhere.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from smartintent import __version__
from smartintent.checkpoint import (
    CheckpointError,
    checkpoint_hash,
    file_hash,
    load_checkpoint,
    save_checkpoint,
)
from smartintent.classifier import ClassifierError
from smartintent.dataset import DatasetError, ingest_jsonl
from smartintent.encoder import (
    EncoderConfig,
    EncoderError,
    EncoderParams,
    PretrainConfig,
    init_encoder_params,
    pretrain,
)
from smartintent.extractor import ExtractError, FunctionUnit, contract_to_units
from smartintent.metrics import build_report, report_to_csv, report_to_json
from smartintent.optim import TrainingError
from smartintent.seeding import STREAM_INIT, child_seed
from smartintent.tokenizer import VocabError, encode, load_vocab, save_vocab, train_vocab
from smartintent.trainer import (
    EmbeddingCache,
    TrainConfig,
    pack_model,
    predict_contracts,
    run_training,
    unpack_model,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_CONFIG = 4
EXIT_NON_FINITE = 5


class ConfigError(ValueError):
    """A flag or config-file value violates a command's contract."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config violations, not exit 2
        raise ConfigError(message)


@dataclass
class RunManifest:
    """Reproducibility record written next to every produced artifact."""

    command: str
    artifact: str
    config: dict
    seeds: dict
    inputs: dict
    outputs: dict
    checkpoint_hashes: dict = field(default_factory=dict)
    duration_s: float = 0.0
    version: str = __version__

    def write(self, artifact_path: Path) -> None:
        payload = json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"
        _write_text_atomic(manifest_path(artifact_path), payload)


def manifest_path(artifact: Path) -> Path:
    return artifact.with_name(artifact.name + ".manifest.json")


def _write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def _require_file(path: str, role: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"missing {role}: {path}")
    return p


def _load_config_file(path: str | None) -> dict:
    """TOML-like key=value file; values parse as int, then float, then string."""
    if path is None:
        return {}
    values: dict = {}
    for line_no, line in enumerate(_require_file(path, "config file").read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key=value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        for cast in (int, float):
            try:
                values[key] = cast(raw)
                break
            except ValueError:
                continue
        else:
            values[key] = raw
    return values


class _Options:
    """Flag resolution: explicit CLI > config file > built-in default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = _load_config_file(getattr(args, "config", None))
        self.resolved: dict = {}

    def get(self, name: str, default=None, cast=None, required: bool = False):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.file.get(name, default)
        if value is None and required:
            raise ConfigError(f"{name.replace('_', '-')} is required (flag or config file)")
        if value is not None and cast is not None:
            try:
                value = cast(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid value for {name}: {value!r}") from exc
        self.resolved[name] = value
        return value


def _read_function_units(path: Path) -> list[FunctionUnit]:
    units: list[FunctionUnit] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            if "code" not in record:
                raise DatasetError(f"line {line_no}: missing key 'code'")
            units.append(
                FunctionUnit(
                    name=record.get("name", ""),
                    code=record["code"],
                    ordinal=record.get("ordinal", 0),
                )
            )
    return units


def _write_trace(path: Path, trace: list[tuple[int, str, float]]) -> None:
    lines = ["step,phase,loss"]
    lines += [f"{step},{phase},{loss!r}" for step, phase, loss in trace]
    _write_text_atomic(path, "\n".join(lines) + "\n")


def _load_model(path: str, need_classifier: bool):
    config, tensors = load_checkpoint(_require_file(path, "model checkpoint"))
    enc_params, cls_params = unpack_model(config, tensors)
    if need_classifier and cls_params is None:
        raise FileNotFoundError(f"checkpoint {path} has no classifier tensors")
    return enc_params, cls_params


def cmd_extract(args) -> int:
    opts = _Options(args)
    started = time.monotonic()
    in_path = _require_file(args.in_path, "input dataset")
    out_path = Path(args.out_path)
    contracts = ingest_jsonl(in_path)
    lines = []
    for contract in contracts:
        try:
            units = contract_to_units(contract)
        except ExtractError as exc:
            raise ExtractError(f"contract {contract.id}: {exc}", offset=exc.offset) from exc
        for unit in units:
            lines.append(
                json.dumps(
                    {"id": contract.id, "ordinal": unit.ordinal, "name": unit.name, "code": unit.code},
                    ensure_ascii=False,
                )
            )
    _write_text_atomic(out_path, "".join(line + "\n" for line in lines))
    RunManifest(
        command="extract",
        artifact=out_path.name,
        config=opts.resolved,
        seeds={},
        inputs={"data": str(in_path)},
        outputs={"functions": str(out_path)},
        duration_s=round(time.monotonic() - started, 3),
    ).write(out_path)
    return EXIT_OK


def cmd_vocab(args) -> int:
    opts = _Options(args)
    started = time.monotonic()
    in_path = _require_file(args.in_path, "functions file")
    out_path = Path(args.out_path)
    vocab_size = opts.get("vocab_size", 2048, int)
    units = _read_function_units(in_path)
    vocab = train_vocab(units, vocab_size)
    save_vocab(vocab, out_path)
    RunManifest(
        command="vocab",
        artifact=out_path.name,
        config=opts.resolved,
        seeds={},
        inputs={"functions": str(in_path)},
        outputs={"vocab": str(out_path)},
        duration_s=round(time.monotonic() - started, 3),
    ).write(out_path)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    opts = _Options(args)
    started = time.monotonic()
    functions_path = _require_file(args.functions, "functions file")
    vocab = load_vocab(_require_file(args.vocab, "vocabulary"))
    out_path = Path(args.out_path)
    seed = opts.get("seed", cast=int, required=True)
    enc_config = EncoderConfig(
        vocab_size=vocab.size,
        layers=opts.get("layers", 2, int),
        dim=opts.get("dim", 32, int),
        heads=opts.get("heads", 2, int),
        max_len=opts.get("max_len", 512, int),
    )
    pre_config = PretrainConfig(
        epochs=opts.get("epochs", 10, int),
        batch_size=opts.get("batch_size", 16, int),
        lr=opts.get("lr", 5e-5, float),
        weight_decay=opts.get("weight_decay", 0.01, float),
        mask_rate=opts.get("mask_rate", 0.15, float),
        seed=seed,
        stop_loss=opts.get("stop_loss", None, float),
    )
    units = _read_function_units(functions_path)
    corpus = [encode(u.code, vocab, max_len=enc_config.max_len) for u in units]
    params = init_encoder_params(enc_config, seed=child_seed(seed, STREAM_INIT))
    trained, trace = pretrain(params, corpus, pre_config)
    config, tensors = pack_model(trained)
    save_checkpoint(out_path, config, tensors)
    trace_path = Path(args.trace) if args.trace else out_path.with_name(out_path.name + ".trace.csv")
    _write_trace(trace_path, [(i + 1, "pretrain", loss) for i, loss in enumerate(trace)])
    manifest = RunManifest(
        command="pretrain",
        artifact=out_path.name,
        config=opts.resolved,
        seeds={"seed": seed},
        inputs={"functions": str(functions_path), "vocab": str(args.vocab)},
        outputs={"encoder": str(out_path), "trace": str(trace_path)},
        checkpoint_hashes={"encoder": checkpoint_hash(config, tensors)},
        duration_s=round(time.monotonic() - started, 3),
    )
    manifest.write(out_path)
    manifest.write(trace_path)
    return EXIT_OK


def cmd_train(args) -> int:
    opts = _Options(args)
    started = time.monotonic()
    data = ingest_jsonl(_require_file(args.data, "training dataset"))
    vocab = load_vocab(_require_file(args.vocab, "vocabulary"))
    enc_params, _ = _load_model(args.encoder, need_classifier=False)
    out_path = Path(args.out_path)
    seed = opts.get("seed", cast=int, required=True)
    try:
        cfg = TrainConfig(
            phase1_lr=opts.get("phase1_lr", 1e-3, float),
            batch_size=opts.get("batch_size", 200, int),
            chunks=opts.get("chunks", 80, int),
            epochs_per_chunk=opts.get("epochs_per_chunk", 100, int),
            phase2_lr=opts.get("phase2_lr", 1e-4, float),
            per_class=opts.get("per_class", 10, int),
            phase2_epochs=opts.get("phase2_epochs", 40, int),
            phase2_batch=opts.get("phase2_batch", 20, int),
            gamma=opts.get("gamma", 2.0, float),
            alpha=opts.get("alpha", 0.25, float),
            l_cap=opts.get("l_cap", 16, int),
            units=opts.get("units", 8, int),
            dropout=opts.get("dropout", 0.5, float),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cls_params, trace = run_training(enc_params, vocab, data, cfg)
    config, tensors = pack_model(enc_params, cls_params)
    save_checkpoint(out_path, config, tensors)
    trace_path = Path(args.trace) if args.trace else out_path.with_name(out_path.name + ".trace.csv")
    _write_trace(trace_path, trace)
    enc_config, enc_tensors = pack_model(enc_params)
    manifest = RunManifest(
        command="train",
        artifact=out_path.name,
        config=opts.resolved,
        seeds={"seed": seed},
        inputs={"data": str(args.data), "vocab": str(args.vocab), "encoder": str(args.encoder)},
        outputs={"model": str(out_path), "trace": str(trace_path)},
        checkpoint_hashes={
            "encoder": checkpoint_hash(enc_config, enc_tensors),
            "model": checkpoint_hash(config, tensors),
        },
        duration_s=round(time.monotonic() - started, 3),
    )
    manifest.write(out_path)
    manifest.write(trace_path)
    return EXIT_OK


def _prediction_inputs(args, opts):
    data = ingest_jsonl(_require_file(args.data, "dataset"))
    vocab = load_vocab(_require_file(args.vocab, "vocabulary"))
    enc_params, cls_params = _load_model(args.model, need_classifier=True)
    threshold = opts.get("threshold", 0.5, float)
    l_cap = opts.get("l_cap", 16, int)
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    return data, vocab, enc_params, cls_params, threshold, l_cap


def cmd_eval(args) -> int:
    opts = _Options(args)
    started = time.monotonic()
    data, vocab, enc_params, cls_params, threshold, l_cap = _prediction_inputs(args, opts)
    predictions = predict_contracts(
        enc_params, cls_params, vocab, data, l_cap, threshold, EmbeddingCache()
    )
    preds = [tuple(int(b) for b in p.binarized) for p in predictions]
    truths = [c.labels for c in data]
    report = build_report(preds, truths, threshold)
    json_path = Path(args.out_path)
    csv_path = (
        json_path.with_suffix(".csv")
        if json_path.suffix == ".json"
        else json_path.with_name(json_path.name + ".csv")
    )
    _write_text_atomic(json_path, report_to_json(report))
    _write_text_atomic(csv_path, report_to_csv(report))
    manifest = RunManifest(
        command="eval",
        artifact=json_path.name,
        config=opts.resolved,
        seeds={},
        inputs={"data": str(args.data), "vocab": str(args.vocab), "model": str(args.model)},
        outputs={"report_json": str(json_path), "report_csv": str(csv_path)},
        checkpoint_hashes={"model": file_hash(args.model)},
        duration_s=round(time.monotonic() - started, 3),
    )
    manifest.write(json_path)
    manifest.write(csv_path)
    return EXIT_OK


def cmd_predict(args) -> int:
    opts = _Options(args)
    started = time.monotonic()
    data, vocab, enc_params, cls_params, threshold, l_cap = _prediction_inputs(args, opts)
    predictions = predict_contracts(
        enc_params, cls_params, vocab, data, l_cap, threshold, EmbeddingCache()
    )
    out_path = Path(args.out_path)
    lines = []
    for contract, pred in zip(data, predictions):
        lines.append(
            json.dumps(
                {
                    "id": contract.id,
                    "probs": [float(p) for p in pred.probs],
                    "labels": [int(b) for b in pred.binarized],
                    "threshold": threshold,
                },
                ensure_ascii=False,
            )
        )
    _write_text_atomic(out_path, "".join(line + "\n" for line in lines))
    RunManifest(
        command="predict",
        artifact=out_path.name,
        config=opts.resolved,
        seeds={},
        inputs={"data": str(args.data), "vocab": str(args.vocab), "model": str(args.model)},
        outputs={"predictions": str(out_path)},
        checkpoint_hashes={"model": file_hash(args.model)},
        duration_s=round(time.monotonic() - started, 3),
    ).write(out_path)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smartintent", description=__doc__)
    parser.add_argument("--version", action="version", version=f"smartintent {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="contracts JSONL -> function units JSONL")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("vocab", help="train a byte-level BPE vocabulary")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("pretrain", help="masked-language-model pretraining")
    p.add_argument("--functions", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--mask-rate", dest="mask_rate", type=float)
    p.add_argument("--stop-loss", dest="stop_loss", type=float)
    p.add_argument("--trace")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="two-phase classifier training")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--phase1-lr", dest="phase1_lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--chunks", type=int)
    p.add_argument("--epochs-per-chunk", dest="epochs_per_chunk", type=int)
    p.add_argument("--phase2-lr", dest="phase2_lr", type=float)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--phase2-epochs", dest="phase2_epochs", type=int)
    p.add_argument("--phase2-batch", dest="phase2_batch", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--l-cap", dest="l_cap", type=int)
    p.add_argument("--units", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--trace")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("predict", cmd_predict)):
        p = sub.add_parser(name, help=f"{name} a trained model")
        p.add_argument("--data", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--out", dest="out_path", required=True)
        p.add_argument("--threshold", type=float)
        p.add_argument("--l-cap", dest="l_cap", type=int)
        _add_common(p)
        p.set_defaults(func=func)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (DatasetError, ExtractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FileNotFoundError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (ConfigError, VocabError, EncoderError, ClassifierError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NON_FINITE


if __name__ == "__main__":
    sys.exit(main())
