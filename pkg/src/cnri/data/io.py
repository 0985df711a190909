"""Binary dataset container.

Layout::

    8 bytes   magic  b"CNRIDSET"
    u32 LE    format version
    u32 LE    header length H
    H bytes   UTF-8 JSON header (shapes, field order, payload size, sha256)
    payload   float64 LE, per sample: trajectory, condition, group_id,
              regime_label, adjacency (M*M)
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from cnri.data.dataset import SystemSample
from cnri.errors import FormatError, IntegrityError, VersionError

MAGIC = b"CNRIDSET"
VERSION = 1
FIELDS = ["trajectory", "condition", "group_id", "regime_label", "adjacency"]
_PREFIX = len(MAGIC) + 8


def write_dataset(path, samples, metadata=None):
    if not samples:
        raise FormatError("refusing to write an empty dataset")
    T, M, D = samples[0].trajectory.shape
    d = samples[0].condition.shape[0]
    rows = []
    for s in samples:
        adj = s.adjacency if s.adjacency is not None else np.full((M, M), np.nan)
        rows.append(np.concatenate([s.trajectory.reshape(-1), s.condition,
                                    [s.group_id, s.regime_label], adj.reshape(-1)]))
    payload = np.stack(rows).astype("<f8").tobytes()
    header = {
        "n_samples": len(samples), "n_frames": T, "n_bodies": M, "n_features": D,
        "condition_dim": d, "fields": FIELDS, "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(), "metadata": metadata or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blob = MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + payload
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_header(blob):
    if len(blob) < _PREFIX:
        raise FormatError("file shorter than fixed prefix", offset=len(blob))
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic", offset=0)
    version, hlen = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"dataset version {version} unsupported (expected {VERSION})")
    end = _PREFIX + hlen
    if len(blob) < end:
        raise FormatError("truncated header", offset=len(blob))
    try:
        header = json.loads(blob[_PREFIX:end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", offset=_PREFIX) from None
    return header, end


def read_dataset(path):
    blob = Path(path).read_bytes()
    header, start = read_header(blob)
    if header.get("fields") != FIELDS:
        raise FormatError(f"unexpected field order {header.get('fields')}", offset=len(MAGIC) + 8)
    payload = blob[start:]
    if len(payload) != header["payload_bytes"]:
        raise FormatError(
            f"payload holds {len(payload)} bytes, header declares {header['payload_bytes']}",
            offset=len(blob))
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise IntegrityError("payload checksum mismatch")
    T, M, D = header["n_frames"], header["n_bodies"], header["n_features"]
    d = header["condition_dim"]
    width = T * M * D + d + 2 + M * M
    rows = np.frombuffer(payload, dtype="<f8").reshape(header["n_samples"], width)
    samples = []
    for r in rows:
        o = T * M * D
        adj = r[o + d + 2:].reshape(M, M).copy()
        samples.append(SystemSample(
            trajectory=r[:o].reshape(T, M, D).copy(),
            condition=r[o:o + d].copy(),
            group_id=int(r[o + d]),
            regime_label=int(r[o + d + 1]),
            adjacency=None if np.isnan(adj).all() else adj,
        ))
    return samples


def dataset_metadata(path):
    header, _ = read_header(Path(path).read_bytes())
    return header.get("metadata", {})


def export_dataset_json(path, samples):
    """Human-readable dump for inspection; not read back by the pipeline."""
    doc = {"format": "cnri-dataset-debug", "version": VERSION, "samples": [
        {"group_id": s.group_id, "regime_label": s.regime_label,
         "condition": s.condition.tolist(), "trajectory": s.trajectory.tolist(),
         "adjacency": None if s.adjacency is None else s.adjacency.tolist()}
        for s in samples]}
    Path(path).write_text(json.dumps(doc))
