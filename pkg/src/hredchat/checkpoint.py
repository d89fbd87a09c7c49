"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic     8 bytes  b"HREDCKPT"
    version   u32
    hlen      u32, then hlen bytes of UTF-8 JSON header
    nrec      u32
    records   name_len u16 + UTF-8 name, ndim u8, ndim * u32 dims,
              raw little-endian float64 values (row-major)

The header carries the model identity (variant, dims, vocab size and hash,
decoder options) plus a free-form "extra" dict for optimizer state and
counters.  Values round-trip bit-exactly: they are written as raw IEEE-754
bytes, never through text.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .models import DialogueModel, ModelDims, build_model
from .tensor import Rng

MAGIC = b"HREDCKPT"
VERSION = 1


@dataclass
class CheckpointFile:
    header: dict
    tensors: dict[str, np.ndarray]

    @property
    def variant(self) -> str:
        return self.header["variant"]

    @property
    def vocab_hash(self) -> str:
        return self.header["vocab_hash"]


def save_checkpoint(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    header = dict(header)
    header.setdefault("extra", {})
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            name_b = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<I", d))
            f.write(data.tobytes())


def load_checkpoint(path) -> CheckpointFile:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        (nrec,) = struct.unpack("<I", f.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(nrec):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape)
            tensors[name] = arr.astype(np.float64)
    return CheckpointFile(header, tensors)


def model_header(model: DialogueModel, vocab_hash: str, extra: dict | None = None) -> dict:
    return {
        "variant": model.variant,
        "d_h": model.dims.d_h,
        "d_ctx": model.dims.d_ctx,
        "d_e": model.dims.d_e,
        "vocab_size": model.vocab_size,
        "eou_id": model.eou_id,
        "bi_mode": model.bi_mode,
        "maxout_k": len(model.output.maxout),
        "vocab_hash": vocab_hash,
        "extra": extra or {},
    }


def save_model(path, model: DialogueModel, vocab_hash: str, extra: dict | None = None) -> None:
    tensors = {k: p.data for k, p in model.parameters().items()}
    save_checkpoint(path, model_header(model, vocab_hash, extra), tensors)


def load_model(path) -> tuple[DialogueModel, CheckpointFile]:
    """Rebuild a model from a checkpoint; raises if records do not match the
    architecture described by the header."""
    ckpt = load_checkpoint(path)
    h = ckpt.header
    model = build_model(
        h["variant"],
        vocab_size=h["vocab_size"],
        eou_id=h["eou_id"],
        dims=ModelDims(d_h=h["d_h"], d_ctx=h["d_ctx"], d_e=h["d_e"]),
        rng=Rng(0),
        maxout_k=h["maxout_k"],
        bi_mode=h["bi_mode"],
    )
    params = model.parameters()
    if set(params) != set(ckpt.tensors):
        missing = set(params) ^ set(ckpt.tensors)
        raise ValueError(f"{path}: checkpoint records do not match architecture: {sorted(missing)}")
    for name, p in params.items():
        arr = ckpt.tensors[name]
        if arr.shape != p.data.shape:
            raise ValueError(f"{path}: shape of {name} is {arr.shape}, expected {p.data.shape}")
        p.data = arr.copy()
    return model, ckpt
