"""Writers for the toolkit's external interfaces.

This module implements the ``.dtek`` wire format and the JSON-lines
manifest independently of the consumer package, so emitted files
exercise the published format contract: magic ``DTEK``, u32 version 1,
u32 feature dimension, f64 frame rate, u64 frame count, row-major
float32 little-endian payload. Manifests are one JSON object per line
with an optional ``<manifest>.phones.json`` sidecar naming phone labels.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"DTEK"
VERSION = 1


def _atomic_bytes(path: Path, payload: bytes) -> None:
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_dtek(path, data: np.ndarray, frame_rate: float) -> int:
    """Write (T, F) float32 frames at a rate; returns bytes written."""
    arr = np.ascontiguousarray(np.asarray(data, dtype="<f4"))
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError(f"frames must be (T, F>=1), got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("refusing to write non-finite frames")
    frames, dim = arr.shape
    blob = (
        MAGIC
        + struct.pack("<I", VERSION)
        + struct.pack("<I", dim)
        + struct.pack("<d", float(frame_rate))
        + struct.pack("<Q", frames)
        + arr.tobytes()
    )
    _atomic_bytes(Path(path), blob)
    return len(blob)


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    path: str
    frames: int
    frame_rate: float
    duration_s: float
    phone_alignment: tuple[int, ...] | None = None


def write_manifest(records, destination, phone_table=None) -> Path:
    """Write utterance records as JSON-lines plus an optional phone sidecar."""
    path = Path(destination)
    lines = []
    for rec in records:
        entry = {
            "utt_id": rec.utt_id,
            "path": rec.path,
            "frames": rec.frames,
            "frame_rate": rec.frame_rate,
            "duration_s": rec.duration_s,
        }
        if rec.phone_alignment is not None:
            entry["phone_alignment"] = list(rec.phone_alignment)
        lines.append(json.dumps(entry, sort_keys=True))
    _atomic_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
    if phone_table is not None:
        sidecar = path.with_name(path.name + ".phones.json")
        _atomic_bytes(sidecar, json.dumps(list(phone_table)).encode("utf-8"))
    return path
