"""Checkpoint container.

Layout::

    b"RVNETCKP"                magic
    uint32 LE                  format version
    uint64 LE                  manifest length in bytes
    manifest                   UTF-8 JSON
    payload                    raw little-endian IEEE-754 tensors, back to back

Each manifest tensor entry carries name, shape, dtype, offset and nbytes
(offsets are relative to the payload start).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .corpus import Vocabulary
from .model import ModelConfig, ReviewNet

MAGIC = b"RVNETCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    vocab: Vocabulary
    model: ReviewNet
    optimizer: dict[str, np.ndarray] | None = None
    extra: dict | None = None


def _entries(prefix: str, tensors: dict[str, np.ndarray], payload: list[bytes], offset: int):
    out = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        out.append({"name": f"{prefix}{name}", "shape": list(arr.shape), "dtype": le.dtype.str,
                    "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    return out, offset


def save_checkpoint(path, config: RunConfig, vocab: Vocabulary, model: ReviewNet,
                    optimizer: dict[str, np.ndarray] | None = None, extra: dict | None = None) -> None:
    payload: list[bytes] = []
    entries, offset = _entries("param/", model.state_dict(), payload, 0)
    if optimizer:
        more, offset = _entries("adagrad/", optimizer, payload, offset)
        entries += more
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "model": asdict(model.config),
        "vocab": {"words": vocab.words, "counts": vocab.counts, "threshold": vocab.threshold},
        "tensors": entries,
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", data[8:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (mlen,) = struct.unpack("<Q", data[12:20])
    manifest = json.loads(data[20:20 + mlen].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: manifest version mismatch")
    base = 20 + mlen
    params, optim = {}, {}
    for e in manifest["tensors"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arr = arr.astype(arr.dtype.newbyteorder("="))
        kind, name = e["name"].split("/", 1)
        (params if kind == "param" else optim)[name] = arr
    config = RunConfig.from_dict(manifest["config"])
    v = manifest["vocab"]
    vocab = Vocabulary(v["words"], v["counts"], v["threshold"])
    model = ReviewNet(ModelConfig(**manifest["model"]))
    model.load_state_dict(params)
    return Checkpoint(config, vocab, model, optim or None, manifest.get("extra") or None)
