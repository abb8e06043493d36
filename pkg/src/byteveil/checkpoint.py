"""Model checkpoint serialization.

Layout: magic b"BVML", format version (u32 LE), header length (u32 LE),
UTF-8 JSON header, then all tensors as little-endian float32, row-major,
in manifest order. The header holds the hyperparameters and a tensor
manifest of (name, shape, byte offset); offsets are relative to the start
of the tensor payload. Because in-memory parameters are kept on the
float32 grid, save followed by load reproduces them bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import Hyper, ModelParams

MAGIC = b"BVML"
VERSION = 1


class CheckpointError(ValueError):
    """Base class for checkpoint read failures."""


class BadMagic(CheckpointError):
    """File does not start with the BVML magic."""


class VersionMismatch(CheckpointError):
    """Checkpoint written by an unsupported format version."""


class CorruptTensor(CheckpointError):
    """Tensor payload or manifest is inconsistent with the file contents."""


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write params to path in the BVML format."""
    entries = []
    offset = 0
    blobs = []
    for name, arr in params.tensors():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {"hyper": asdict(params.hyper), "tensors": entries}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(4, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a BVML checkpoint back into ModelParams (float64 in memory)."""
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not a BVML checkpoint")
    pos = len(MAGIC)
    version = int.from_bytes(data[pos : pos + 4], "little")
    if version != VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {VERSION}")
    pos += 4
    header_len = int.from_bytes(data[pos : pos + 4], "little")
    pos += 4
    if pos + header_len > len(data):
        raise CorruptTensor(f"{path}: header extends past end of file")
    try:
        header = json.loads(data[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptTensor(f"{path}: unreadable header: {exc}") from exc
    payload = data[pos + header_len :]

    entries = {entry["name"]: entry for entry in header["tensors"]}
    if set(entries) != set(ModelParams.TENSOR_NAMES):
        raise CorruptTensor(
            f"{path}: manifest names {sorted(entries)} do not match the model"
        )
    tensors = {}
    for name in ModelParams.TENSOR_NAMES:
        entry = entries[name]
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = int(entry["offset"])
        end = start + 4 * count
        if start < 0 or end > len(payload):
            raise CorruptTensor(
                f"{path}: tensor {name} spans [{start}, {end}) outside payload "
                f"of {len(payload)} bytes"
            )
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float64)
    hyper = Hyper(**header["hyper"])
    return ModelParams(hyper=hyper, **tensors)


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Bit-exact equality of hyperparameters and every tensor."""
    if a.hyper != b.hyper:
        return False
    for (name_a, ta), (name_b, tb) in zip(a.tensors(), b.tensors()):
        if name_a != name_b or ta.shape != tb.shape or ta.tobytes() != tb.tobytes():
            return False
    return True
