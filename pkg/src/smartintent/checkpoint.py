"""SINNv2 checkpoint container: named float64 tensors plus a config snapshot.

Layout: an ASCII header line ``SINNv2 <format-version>``, a JSON config line,
a JSON index line listing tensor names and shapes (names sorted
lexicographically), then the raw little-endian float64 tensor data
concatenated in index order. Writes are atomic (temp file, then rename).
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

MAGIC = "SINNv2"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def serialize(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    names = sorted(tensors)
    header = f"{MAGIC} {FORMAT_VERSION}\n".encode("ascii")
    config_line = json.dumps(config, sort_keys=True).encode("utf-8") + b"\n"
    index = [{"name": name, "shape": list(tensors[name].shape)} for name in names]
    index_line = json.dumps(index, sort_keys=True).encode("utf-8") + b"\n"
    blobs = b"".join(
        np.ascontiguousarray(tensors[name], dtype="<f8").tobytes() for name in names
    )
    return header + config_line + index_line + blobs


def save_checkpoint(path: str | Path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    payload = serialize(config, tensors)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    try:
        header_end = data.index(b"\n")
        config_end = data.index(b"\n", header_end + 1)
        index_end = data.index(b"\n", config_end + 1)
    except ValueError as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    header = data[:header_end].decode("ascii", errors="replace").split()
    if len(header) != 2 or header[0] != MAGIC:
        raise CheckpointError(f"bad magic, expected {MAGIC}")
    if int(header[1]) != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {header[1]}")
    config = json.loads(data[header_end + 1 : config_end])
    index = json.loads(data[config_end + 1 : index_end])
    tensors: dict[str, np.ndarray] = {}
    offset = index_end + 1
    for entry in index:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        blob = data[offset : offset + nbytes]
        if len(blob) != nbytes:
            raise CheckpointError(f"tensor {entry['name']!r} data truncated")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError("trailing bytes after tensor data")
    return config, tensors


def checkpoint_hash(config: dict, tensors: dict[str, np.ndarray]) -> str:
    return hashlib.sha256(serialize(config, tensors)).hexdigest()


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
