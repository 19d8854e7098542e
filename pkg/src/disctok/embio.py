"""Embedding-matrix files, dataset manifests and frame streaming.

The on-disk ``.dtek`` layout is fixed and little-endian: magic ``DTEK``,
u32 version, u32 feature dimension F, f64 frame rate, u64 frame count T,
then the frames as row-major float32. Matrices are held in memory as
float32 so write/read round-trips are bit-exact.

Manifests are JSON-lines (one utterance per line, UTF-8). Phone
alignments are stored as integer labels; an optional sidecar file
``<manifest>.phones.json`` maps label -> phone string.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import _binio
from .errors import (
    CapacityError,
    ConfigurationError,
    CorruptionError,
    FormatError,
    SchemaError,
    ValidationError,
)

MAGIC = b"DTEK"
VERSION = 1
HEADER_SIZE = 28  # magic + u32 version + u32 dim + f64 rate + u64 frames

_ENTRY_KEYS = {"utt_id", "path", "frames", "frame_rate", "duration_s", "phone_alignment"}


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """A T x F sequence of finite real-valued frames at a fixed frame rate.

    Immutable after construction and safe to share across threads. The
    payload is float32; anything else is converted on the way in.
    """

    data: np.ndarray
    frame_rate: float

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32))
        if arr.ndim != 2:
            raise ValidationError(f"embedding data must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise ValidationError("feature dimension must be at least 1")
        if not np.isfinite(arr).all():
            raise ValidationError("embedding data contains non-finite values")
        rate = float(self.frame_rate)
        if not (math.isfinite(rate) and rate > 0):
            raise ValidationError(f"frame rate must be positive and finite, got {self.frame_rate}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "frame_rate", rate)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.frames / self.frame_rate


def write_embedding(matrix: EmbeddingMatrix, destination) -> int:
    """Write ``matrix`` to ``destination`` in .dtek format.

    Returns the number of bytes written. Refuses non-finite payloads so
    that every file on disk satisfies the matrix invariants.
    """
    if not np.isfinite(matrix.data).all():
        raise ValidationError("refusing to write non-finite embedding data")
    header = (
        MAGIC
        + _binio.pack_u32(VERSION)
        + _binio.pack_u32(matrix.dim)
        + _binio.pack_f64(matrix.frame_rate)
        + _binio.pack_u64(matrix.frames)
    )
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    with _binio.atomic_write(destination) as fh:
        fh.write(header)
        fh.write(payload)
    return len(header) + len(payload)


def read_embedding(source) -> EmbeddingMatrix:
    """Read a .dtek file back into an EmbeddingMatrix."""
    path = Path(source)
    with open(path, "rb") as fh:
        _binio.expect_magic(fh, MAGIC, path)
        _binio.expect_version(fh, VERSION, path)
        dim = _binio.read_u32(fh)
        rate = _binio.read_f64(fh)
        frames = _binio.read_u64(fh)
        payload = fh.read()
    if dim < 1:
        raise CorruptionError(f"{path}: header declares dimension {dim}")
    expected = 4 * frames * dim
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes but header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(frames, dim)
    try:
        return EmbeddingMatrix(data=data, frame_rate=rate)
    except ValidationError as exc:
        # The writer rejects invalid data, so this can only be corruption.
        raise CorruptionError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    path: str
    frames: int
    frame_rate: float
    duration_s: float
    phone_alignment: tuple[int, ...] | None = None

    def validate(self) -> None:
        if self.frames < 0:
            raise ValidationError(f"{self.utt_id}: negative frame count")
        if self.frame_rate <= 0:
            raise ValidationError(f"{self.utt_id}: frame rate must be positive")
        period = 1.0 / self.frame_rate
        if abs(self.duration_s - self.frames / self.frame_rate) > period + 1e-9:
            raise ValidationError(
                f"{self.utt_id}: duration {self.duration_s}s inconsistent with "
                f"{self.frames} frames at {self.frame_rate} Hz"
            )
        if self.phone_alignment is not None:
            if len(self.phone_alignment) != self.frames:
                raise ValidationError(
                    f"{self.utt_id}: alignment has {len(self.phone_alignment)} labels "
                    f"for {self.frames} frames"
                )
            if any(label < 0 for label in self.phone_alignment):
                raise ValidationError(f"{self.utt_id}: negative phone label")


@dataclass
class Manifest:
    """Utterance catalog driving ingestion, training and subset sampling."""

    entries: list[ManifestEntry] = field(default_factory=list)
    phone_table: list[str] | None = None

    def validate(self) -> None:
        seen = set()
        for entry in self.entries:
            if entry.utt_id in seen:
                raise ValidationError(f"duplicate utt_id {entry.utt_id!r} in manifest")
            seen.add(entry.utt_id)
            entry.validate()
            if self.phone_table is not None and entry.phone_alignment is not None:
                top = len(self.phone_table)
                if any(label >= top for label in entry.phone_alignment):
                    raise ValidationError(
                        f"{entry.utt_id}: phone label outside the {top}-entry phone table"
                    )

    @property
    def total_duration_s(self) -> float:
        return float(sum(entry.duration_s for entry in self.entries))

    @property
    def total_frames(self) -> int:
        return int(sum(entry.frames for entry in self.entries))

    def __len__(self) -> int:
        return len(self.entries)


def _phone_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".phones.json")


def write_manifest(manifest: Manifest, destination) -> None:
    """Write a manifest as JSON-lines, plus a phone-table sidecar if present."""
    manifest.validate()
    path = Path(destination)
    with _binio.atomic_write(path) as fh:
        for entry in manifest.entries:
            record = {
                "utt_id": entry.utt_id,
                "path": entry.path,
                "frames": entry.frames,
                "frame_rate": entry.frame_rate,
                "duration_s": entry.duration_s,
            }
            if entry.phone_alignment is not None:
                record["phone_alignment"] = list(entry.phone_alignment)
            fh.write(json.dumps(record, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
    if manifest.phone_table is not None:
        with _binio.atomic_write(_phone_sidecar(path)) as fh:
            fh.write(json.dumps(manifest.phone_table).encode("utf-8"))


def read_manifest(source, resolve_paths: bool = True) -> Manifest:
    """Read a JSON-lines manifest.

    With ``resolve_paths`` (the default), relative entry paths are made
    absolute against the manifest's own directory.
    """
    path = Path(source)
    base = path.parent
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict):
                raise FormatError(f"{path}:{lineno}: manifest line is not an object")
            unknown = set(record) - _ENTRY_KEYS
            if unknown:
                raise ValidationError(f"{path}:{lineno}: unknown manifest keys {sorted(unknown)}")
            missing = {"utt_id", "path", "frames", "frame_rate", "duration_s"} - set(record)
            if missing:
                raise ValidationError(f"{path}:{lineno}: missing manifest keys {sorted(missing)}")
            entry_path = record["path"]
            if resolve_paths and not Path(entry_path).is_absolute():
                entry_path = str(base / entry_path)
            alignment = record.get("phone_alignment")
            entries.append(
                ManifestEntry(
                    utt_id=str(record["utt_id"]),
                    path=entry_path,
                    frames=int(record["frames"]),
                    frame_rate=float(record["frame_rate"]),
                    duration_s=float(record["duration_s"]),
                    phone_alignment=None if alignment is None else tuple(int(x) for x in alignment),
                )
            )
    phone_table = None
    sidecar = _phone_sidecar(path)
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as fh:
            phone_table = json.load(fh)
        if not isinstance(phone_table, list) or not all(isinstance(p, str) for p in phone_table):
            raise FormatError(f"{sidecar}: phone table must be a JSON list of strings")
    manifest = Manifest(entries=entries, phone_table=phone_table)
    manifest.validate()
    return manifest


def sample_subset(manifest: Manifest, target_hours: float, seed: int) -> Manifest:
    """Pick a uniformly random permutation prefix covering ``target_hours``.

    The returned subset overshoots the target minimally: dropping its last
    entry would fall below the target. Deterministic for a given seed.
    """
    if target_hours <= 0:
        raise ConfigurationError(f"target_hours must be positive, got {target_hours}")
    target_s = float(target_hours) * 3600.0
    total = manifest.total_duration_s
    if total < target_s:
        raise CapacityError(
            f"manifest holds {total / 3600.0:.3f} h, below the {target_hours} h target"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(manifest.entries))
    picked: list[ManifestEntry] = []
    acc = 0.0
    for idx in order:
        picked.append(manifest.entries[int(idx)])
        acc += picked[-1].duration_s
        if acc >= target_s:
            break
    return Manifest(entries=picked, phone_table=manifest.phone_table)


_BERNOULLI = re.compile(r"^bernoulli\(([^)]+)\)$")


def _parse_policy(policy: str):
    if policy == "all":
        return "all", None
    match = _BERNOULLI.match(policy)
    if match:
        try:
            p = float(match.group(1))
        except ValueError as exc:
            raise ConfigurationError(f"bad bernoulli probability in {policy!r}") from exc
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"bernoulli probability must be in [0, 1], got {p}")
        return "bernoulli", p
    raise ConfigurationError(f"unknown frame-sampling policy {policy!r}")


def _iter_frame_blocks(manifest: Manifest, sampler: str, seed: int) -> Iterator[np.ndarray]:
    kind, p = _parse_policy(sampler)
    rng = np.random.default_rng(seed)
    dim = None
    for entry in manifest.entries:
        matrix = read_embedding(entry.path)
        if matrix.frames != entry.frames:
            raise ValidationError(
                f"{entry.utt_id}: file has {matrix.frames} frames, manifest says {entry.frames}"
            )
        if dim is None:
            dim = matrix.dim
        elif matrix.dim != dim:
            raise SchemaError(
                f"{entry.utt_id}: dimension {matrix.dim} does not match corpus dimension {dim}"
            )
        if kind == "all":
            yield matrix.data
        else:
            mask = rng.random(matrix.frames) < p
            yield matrix.data[mask]


def iterate_frames(manifest: Manifest, sampler: str = "all", seed: int = 0) -> Iterator[np.ndarray]:
    """Stream F-dim frames from every utterance in manifest order.

    ``sampler`` is ``"all"`` (every frame exactly once) or ``"bernoulli(p)"``
    (each frame independently with probability p). Deterministic per seed.
    """
    for block in _iter_frame_blocks(manifest, sampler, seed):
        yield from block


def collect_frames(manifest: Manifest, sampler: str = "all", seed: int = 0) -> np.ndarray:
    """Materialize iterate_frames into one (N, F) float32 array."""
    blocks = [block for block in _iter_frame_blocks(manifest, sampler, seed) if len(block)]
    if not blocks:
        empty_dim = 1
        for entry in manifest.entries:
            empty_dim = read_embedding(entry.path).dim
            break
        return np.empty((0, empty_dim), dtype=np.float32)
    return np.concatenate(blocks, axis=0)
