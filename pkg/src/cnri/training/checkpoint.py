"""Versioned on-disk store for model parameters and run metadata.

Layout::

    8 bytes   magic  b"CNRICKPT"
    u32 LE    format version
    u32 LE    manifest length L
    L bytes   UTF-8 JSON manifest: kind, config, tensor directory
              (name, shape, offset in floats), payload sha256, metadata
    payload   float64 LE tensors, concatenated in directory order
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cnri.errors import FormatError, IntegrityError, RegimeMismatchError, VersionError

MAGIC = b"CNRICKPT"
VERSION = 1
_PREFIX = len(MAGIC) + 8


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict
    stats: dict | None = None
    fold: int | None = None
    epoch: int | None = None
    rng_state: dict | None = None
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def regime(self):
        return self.config.get("regime")


def save_checkpoint(path, ckpt):
    names = list(ckpt.tensors)
    directory, chunks, offset = [], [], 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.reshape(-1))
        offset += arr.size
    payload = (np.concatenate(chunks) if chunks else np.zeros(0)).astype("<f8").tobytes()
    manifest = {
        "kind": ckpt.kind, "config": ckpt.config, "tensors": directory,
        "sha256": hashlib.sha256(payload).hexdigest(), "payload_bytes": len(payload),
        "stats": ckpt.stats, "fold": ckpt.fold, "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state, "metadata": ckpt.metadata,
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<II", VERSION, len(mbytes)) + mbytes + payload)


def load_checkpoint(path, expected_kind=None, expected_regime=None):
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX or blob[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file", offset=0)
    version, mlen = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"checkpoint version {version} unsupported (expected {VERSION})")
    try:
        manifest = json.loads(blob[_PREFIX:_PREFIX + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"manifest unreadable: {exc}", offset=_PREFIX) from None
    payload = blob[_PREFIX + mlen:]
    if len(payload) != manifest.get("payload_bytes") or \
            hashlib.sha256(payload).hexdigest() != manifest.get("sha256"):
        raise IntegrityError("checkpoint payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8")
    tensors = {}
    for entry in manifest["tensors"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        tensors[entry["name"]] = flat[entry["offset"]:entry["offset"] + n].reshape(entry["shape"]).copy()
    ckpt = Checkpoint(kind=manifest["kind"], config=manifest["config"], tensors=tensors,
                      stats=manifest.get("stats"), fold=manifest.get("fold"),
                      epoch=manifest.get("epoch"), rng_state=manifest.get("rng_state"),
                      metadata=manifest.get("metadata") or {}, version=version)
    if expected_kind is not None and ckpt.kind != expected_kind:
        raise RegimeMismatchError(f"checkpoint holds a {ckpt.kind!r} model, expected {expected_kind!r}")
    if expected_regime is not None and ckpt.regime != expected_regime:
        raise RegimeMismatchError(
            f"checkpoint was trained under regime {ckpt.regime!r}, requested {expected_regime!r}")
    return ckpt
