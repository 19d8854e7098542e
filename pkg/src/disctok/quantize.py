"""Trainable vector quantizers: plain k-means, grouped VQ and residual VQ.

Centroids are float32 end to end so codebook file round-trips are
bit-exact. All nearest-centroid searches compute squared-Euclidean
distances in float64 as chunked elementwise reductions, which makes them
bit-identical to a naive per-frame brute-force search; ties break toward
the smallest centroid index. Chunks are reduced in index order, so
results do not depend on the worker count.

The on-disk ``.dtcb`` layout is little-endian: magic ``DTCB``, u32
version, u32 kind (0 plain / 1 grouped / 2 residual), u32 part count
(1, G or Q), u32 total dimension, u32 entry count per part, then each
part's centroids as row-major float32. A JSON sidecar ``<file>.json``
carries training metadata (entry counts, inertia traces, seed...).
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _binio
from .embio import EmbeddingMatrix
from .errors import (
    CapacityError,
    ConfigurationError,
    CorruptionError,
    DegenerateCodebookWarning,
    SchemaError,
    TokenRangeError,
    ValidationError,
)
from .tokens import TokenSequence

MAGIC = b"DTCB"
VERSION = 1
KIND_PLAIN, KIND_GROUPED, KIND_RESIDUAL = 0, 1, 2
_KIND_NAMES = {KIND_PLAIN: "plain", KIND_GROUPED: "grouped", KIND_RESIDUAL: "residual"}

# Cap on the float64 scratch block used per distance chunk.
_CHUNK_BUDGET_BYTES = 32 << 20


@dataclass(frozen=True)
class KMeansConfig:
    """Knobs for codebook training.

    ``tolerance`` is the relative inertia improvement below which Lloyd
    iterations stop; minibatch mode always runs ``max_iters`` rounds of
    ``batch_size`` samples with per-centroid 1/count learning rates.
    """

    seed: int
    max_iters: int = 100
    tolerance: float = 1e-6
    init: str = "kmeans++"
    mode: str = "lloyd"
    batch_size: int = 1024
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if self.tolerance < 0:
            raise ConfigurationError("tolerance must be non-negative")
        if self.init not in ("kmeans++", "random"):
            raise ConfigurationError(f"unknown init {self.init!r} (use 'kmeans++' or 'random')")
        if self.mode not in ("lloyd", "minibatch"):
            raise ConfigurationError(f"unknown mode {self.mode!r} (use 'lloyd' or 'minibatch')")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")


@dataclass(frozen=True, eq=False)
class Codebook:
    """A K x F centroid table under squared-Euclidean distance."""

    centroids: np.ndarray
    trained_on_frames: int = 0
    inertia_trace: tuple[float, ...] = ()
    metric: str = "squared-euclidean"

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float32))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"centroids must be a non-empty 2-D table, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("centroids contain non-finite values")
        object.__setattr__(self, "centroids", arr)

    @property
    def entries(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True, eq=False)
class GroupedCodebook:
    """One codebook per contiguous feature-axis slice."""

    per_group: tuple[Codebook, ...]

    def __post_init__(self):
        if len(self.per_group) < 1:
            raise ValidationError("a grouped codebook needs at least one group")
        dims = {cb.dim for cb in self.per_group}
        if len(dims) != 1:
            raise ValidationError(f"groups must share one slice width, got {sorted(dims)}")

    @property
    def groups(self) -> int:
        return len(self.per_group)

    @property
    def total_dim(self) -> int:
        return sum(cb.dim for cb in self.per_group)


@dataclass(frozen=True, eq=False)
class ResidualCodebookStack:
    """Chained codebooks; stage q quantizes the residual left by stages < q."""

    per_stage: tuple[Codebook, ...]

    def __post_init__(self):
        if len(self.per_stage) < 1:
            raise ValidationError("a residual stack needs at least one stage")
        dims = {cb.dim for cb in self.per_stage}
        if len(dims) != 1:
            raise ValidationError(f"all stages must share one dimension, got {sorted(dims)}")

    @property
    def stages(self) -> int:
        return len(self.per_stage)

    @property
    def dim(self) -> int:
        return self.per_stage[0].dim


def _as_frame_array(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        arr = frames
    else:
        rows = list(frames)
        if not rows:
            raise CapacityError("frame stream is empty")
        arr = np.stack(rows)
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    if arr.ndim != 2:
        raise ValidationError(f"frames must form a 2-D array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise CapacityError("frame stream is empty")
    if not np.isfinite(arr).all():
        raise ValidationError("frames contain non-finite values")
    return arr


def _chunk_rows(n_centroids: int, dim: int) -> int:
    per_row = max(1, n_centroids * dim * 8)
    return max(1, min(4096, _CHUNK_BUDGET_BYTES // per_row))


def _nearest_block(block: np.ndarray, centroids: np.ndarray):
    diff = block[:, None, :] - centroids[None, :, :]
    np.square(diff, out=diff)
    dist = diff.sum(axis=2)
    labels = dist.argmin(axis=1)
    return labels, dist[np.arange(block.shape[0]), labels]


def _assign_labels(data: np.ndarray, centroids: np.ndarray, workers: int = 1):
    """Exact nearest-centroid labels + squared distances, chunk by chunk."""
    n = data.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    step = _chunk_rows(centroids.shape[0], centroids.shape[1])
    chunks = [data[start : start + step] for start in range(0, n, step)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _nearest_block(c, centroids), chunks))
    else:
        parts = [_nearest_block(chunk, centroids) for chunk in chunks]
    labels = np.concatenate([p[0] for p in parts]).astype(np.int64)
    sqdist = np.concatenate([p[1] for p in parts])
    return labels, sqdist


def _kmeanspp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]), dtype=np.float64)
    idx = int(rng.integers(n))
    centers[0] = data[idx]
    closest = ((data - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            # every remaining point coincides with a chosen center
            idx = int(rng.integers(n))
        else:
            target = rng.random() * total
            idx = min(int(np.searchsorted(np.cumsum(closest), target, side="right")), n - 1)
        centers[j] = data[idx]
        np.minimum(closest, ((data - centers[j]) ** 2).sum(axis=1), out=closest)
    return centers


def _random_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    picked = rng.choice(data.shape[0], size=k, replace=False)
    return data[picked].astype(np.float64)


def _update_centers(data, labels, sqdist, centers):
    """Mean update with deterministic farthest-point reseeding of empty clusters."""
    k = centers.shape[0]
    counts = np.bincount(labels, minlength=k)
    new = np.empty_like(centers)
    for f in range(data.shape[1]):
        new[:, f] = np.bincount(labels, weights=data[:, f], minlength=k)
    nonzero = counts > 0
    new[nonzero] /= counts[nonzero, None]
    reseeded = 0
    if not nonzero.all():
        distances = sqdist.copy()
        for cluster in np.flatnonzero(~nonzero):
            farthest = int(distances.argmax())
            new[cluster] = data[farthest]
            distances[farthest] = -np.inf
            reseeded += 1
    return new, reseeded


def _lloyd(data, centers, cfg: KMeansConfig):
    trace: list[float] = []
    prev_inertia = None
    just_reseeded = False
    for iteration in range(cfg.max_iters):
        labels, sqdist = _assign_labels(data, centers, cfg.workers)
        inertia = float(sqdist.sum())
        trace.append(inertia)
        stop = inertia == 0.0
        if not stop and prev_inertia is not None and not just_reseeded:
            stop = (prev_inertia - inertia) < cfg.tolerance * prev_inertia
        if stop or iteration == cfg.max_iters - 1:
            break
        centers, reseeded = _update_centers(data, labels, sqdist, centers)
        just_reseeded = reseeded > 0
        prev_inertia = inertia
    return centers, trace


def _minibatch(data, centers, cfg: KMeansConfig, rng: np.random.Generator):
    # Sculley-style updates; the trace records pre-update batch inertia,
    # a progress signal that avoids a full-data pass per iteration.
    n = data.shape[0]
    counts = np.zeros(centers.shape[0], dtype=np.float64)
    trace: list[float] = []
    for _ in range(cfg.max_iters):
        picked = rng.integers(0, n, size=cfg.batch_size)
        batch = data[picked]
        labels, sqdist = _assign_labels(batch, centers, cfg.workers)
        trace.append(float(sqdist.sum()))
        for row, cluster in zip(batch, labels):
            counts[cluster] += 1.0
            eta = 1.0 / counts[cluster]
            centers[cluster] += eta * (row - centers[cluster])
    return centers, trace


def _check_degenerate(centers_f32: np.ndarray, data: np.ndarray, k: int) -> None:
    if np.unique(centers_f32, axis=0).shape[0] == k:
        return
    distinct = np.unique(data, axis=0).shape[0]
    warnings.warn(
        f"codebook is degenerate: {k} centroids requested but the data holds only "
        f"{distinct} distinct frames; duplicate centroids remain after reseeding",
        DegenerateCodebookWarning,
        stacklevel=3,
    )


def train_kmeans(frames, k: int, config: KMeansConfig) -> Codebook:
    """Train a K-entry codebook on a stream of F-dim frames.

    Parameters
    ----------
    frames : (N, F) array or iterable of F-dim vectors
    k : number of centroids
    config : KMeansConfig

    Returns a Codebook carrying the per-iteration inertia trace. In Lloyd
    mode the trace is non-increasing and training halts once the relative
    improvement drops below ``config.tolerance`` (or at ``max_iters``).
    Deterministic for a given seed. Fewer distinct frames than ``k``
    leaves duplicate centroids and emits DegenerateCodebookWarning.
    """
    if k < 1:
        raise ConfigurationError(f"k must be at least 1, got {k}")
    data = _as_frame_array(frames)
    n = data.shape[0]
    if n < k:
        raise CapacityError(f"stream yields {n} frames, fewer than k={k}")
    rng = np.random.default_rng(config.seed)
    if config.init == "kmeans++":
        centers = _kmeanspp_init(data, k, rng)
    else:
        centers = _random_init(data, k, rng)
    if config.mode == "lloyd":
        centers, trace = _lloyd(data, centers, cfg=config)
    else:
        centers, trace = _minibatch(data, centers, cfg=config, rng=rng)
    centroids = centers.astype(np.float32)
    _check_degenerate(centroids, data, k)
    return Codebook(
        centroids=centroids,
        trained_on_frames=n,
        inertia_trace=tuple(trace),
    )


def assign(codebook: Codebook, matrix: EmbeddingMatrix) -> TokenSequence:
    """Map each frame to its nearest centroid index (lowest index on ties)."""
    if matrix.dim != codebook.dim:
        raise SchemaError(f"matrix dim {matrix.dim} != codebook dim {codebook.dim}")
    labels, _ = _assign_labels(matrix.data.astype(np.float64), codebook.centroids.astype(np.float64))
    return TokenSequence(
        tokens=labels[None, :],
        vocab_sizes=(codebook.entries,),
        frame_rate=matrix.frame_rate,
    )


def _per_part_k(k, parts: int, what: str) -> list[int]:
    if isinstance(k, (int, np.integer)):
        return [int(k)] * parts
    ks = [int(v) for v in k]
    if len(ks) != parts:
        raise ConfigurationError(f"got {len(ks)} entry counts for {parts} {what}")
    return ks


def train_grouped(frames, groups: int, k_per_group, config: KMeansConfig) -> GroupedCodebook:
    """Train one codebook per contiguous feature slice.

    Group g trains on the g-th F/G-wide subvector with seed ``seed + g``,
    so a single group reproduces train_kmeans exactly.
    """
    if groups < 1:
        raise ConfigurationError(f"groups must be at least 1, got {groups}")
    data = _as_frame_array(frames)
    dim = data.shape[1]
    if dim % groups != 0:
        raise ConfigurationError(f"dimension {dim} is not divisible by {groups} groups")
    ks = _per_part_k(k_per_group, groups, "groups")
    width = dim // groups
    per_group = []
    for g in range(groups):
        sub = data[:, g * width : (g + 1) * width]
        per_group.append(train_kmeans(sub, ks[g], replace(config, seed=config.seed + g)))
    return GroupedCodebook(per_group=tuple(per_group))


def assign_grouped(codebook: GroupedCodebook, matrix: EmbeddingMatrix) -> TokenSequence:
    """Quantize each feature slice with its group codebook; one stream per group."""
    if matrix.dim != codebook.total_dim:
        raise SchemaError(f"matrix dim {matrix.dim} != grouped dim {codebook.total_dim}")
    data = matrix.data.astype(np.float64)
    rows = []
    offset = 0
    for cb in codebook.per_group:
        labels, _ = _assign_labels(data[:, offset : offset + cb.dim], cb.centroids.astype(np.float64))
        rows.append(labels)
        offset += cb.dim
    return TokenSequence(
        tokens=np.vstack(rows),
        vocab_sizes=tuple(cb.entries for cb in codebook.per_group),
        frame_rate=matrix.frame_rate,
    )


def train_rvq(frames, stages: int, k_per_stage, config: KMeansConfig) -> ResidualCodebookStack:
    """Train a residual stack: stage q fits the residual left by stages < q.

    Stage q uses seed ``seed + q``. With lloyd mode and ``max_iters >= 2``
    (so centroids are cluster means), mean residual energy never increases
    from stage to stage on the training data.
    """
    if stages < 1:
        raise ConfigurationError(f"stages must be at least 1, got {stages}")
    ks = _per_part_k(k_per_stage, stages, "stages")
    residual = _as_frame_array(frames).copy()
    per_stage = []
    for q in range(stages):
        cb = train_kmeans(residual, ks[q], replace(config, seed=config.seed + q))
        labels, _ = _assign_labels(residual, cb.centroids.astype(np.float64), config.workers)
        residual -= cb.centroids.astype(np.float64)[labels]
        per_stage.append(cb)
    return ResidualCodebookStack(per_stage=tuple(per_stage))


def rvq_encode(
    stack: ResidualCodebookStack, matrix: EmbeddingMatrix, use_stages: int | None = None
) -> TokenSequence:
    """Greedy per-stage nearest-centroid encoding of the running residual."""
    if use_stages is None:
        use_stages = stack.stages
    if not 1 <= use_stages <= stack.stages:
        raise ConfigurationError(f"use_stages {use_stages} outside [1, {stack.stages}]")
    if matrix.dim != stack.dim:
        raise SchemaError(f"matrix dim {matrix.dim} != stack dim {stack.dim}")
    residual = matrix.data.astype(np.float64)
    rows = []
    for q in range(use_stages):
        centroids = stack.per_stage[q].centroids.astype(np.float64)
        labels, _ = _assign_labels(residual, centroids)
        residual = residual - centroids[labels]
        rows.append(labels)
    return TokenSequence(
        tokens=np.vstack(rows),
        vocab_sizes=tuple(stack.per_stage[q].entries for q in range(use_stages)),
        frame_rate=matrix.frame_rate,
    )


def rvq_decode(stack: ResidualCodebookStack, tokens: TokenSequence) -> EmbeddingMatrix:
    """Reconstruct frames as the sum of the selected codewords per stage."""
    if tokens.streams > stack.stages:
        raise SchemaError(f"{tokens.streams} token streams but only {stack.stages} stages")
    recon = np.zeros((tokens.frames, stack.dim), dtype=np.float64)
    for s in range(tokens.streams):
        cb = stack.per_stage[s]
        row = tokens.tokens[s]
        if row.size and int(row.max()) >= cb.entries:
            raise TokenRangeError(
                f"stream {s}: token {int(row.max())} outside stage vocab {cb.entries}"
            )
        recon += cb.centroids.astype(np.float64)[row]
    return EmbeddingMatrix(data=recon.astype(np.float32), frame_rate=tokens.frame_rate)


def reconstruct(codebook, tokens: TokenSequence) -> EmbeddingMatrix:
    """Rebuild an embedding matrix from tokens for any codebook kind."""
    if isinstance(codebook, ResidualCodebookStack):
        return rvq_decode(codebook, tokens)
    if isinstance(codebook, GroupedCodebook):
        if tokens.streams != codebook.groups:
            raise SchemaError(f"{tokens.streams} streams for {codebook.groups} groups")
        parts = []
        for s, cb in enumerate(codebook.per_group):
            row = tokens.tokens[s]
            if row.size and int(row.max()) >= cb.entries:
                raise TokenRangeError(f"stream {s}: token outside group vocab {cb.entries}")
            parts.append(cb.centroids[row])
        data = np.concatenate(parts, axis=1) if parts else np.empty((0, codebook.total_dim))
        return EmbeddingMatrix(data=data, frame_rate=tokens.frame_rate)
    if isinstance(codebook, Codebook):
        if tokens.streams != 1:
            raise SchemaError(f"plain codebooks decode single-stream tokens, got {tokens.streams}")
        row = tokens.tokens[0]
        if row.size and int(row.max()) >= codebook.entries:
            raise TokenRangeError(f"token outside vocab {codebook.entries}")
        return EmbeddingMatrix(data=codebook.centroids[row], frame_rate=tokens.frame_rate)
    raise ConfigurationError(f"cannot reconstruct from {type(codebook).__name__}")


def _parts_of(obj) -> tuple[int, tuple[Codebook, ...]]:
    if isinstance(obj, Codebook):
        return KIND_PLAIN, (obj,)
    if isinstance(obj, GroupedCodebook):
        return KIND_GROUPED, obj.per_group
    if isinstance(obj, ResidualCodebookStack):
        return KIND_RESIDUAL, obj.per_stage
    raise ConfigurationError(f"not a codebook object: {type(obj).__name__}")


def codebook_parts(obj) -> tuple[str, tuple[Codebook, ...]]:
    """Kind name ('plain'/'grouped'/'residual') and flat part list."""
    kind, parts = _parts_of(obj)
    return _KIND_NAMES[kind], parts


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_codebook(obj, destination, metadata: dict | None = None) -> int:
    """Write a codebook (any kind) as .dtcb plus a JSON metadata sidecar."""
    kind, parts = _parts_of(obj)
    total_dim = sum(p.dim for p in parts) if kind == KIND_GROUPED else parts[0].dim
    path = Path(destination)
    header = (
        MAGIC
        + _binio.pack_u32(VERSION)
        + _binio.pack_u32(kind)
        + _binio.pack_u32(len(parts))
        + _binio.pack_u32(total_dim)
        + b"".join(_binio.pack_u32(p.entries) for p in parts)
    )
    payload = b"".join(np.ascontiguousarray(p.centroids, dtype="<f4").tobytes() for p in parts)
    with _binio.atomic_write(path) as fh:
        fh.write(header)
        fh.write(payload)
    sidecar = {
        "kind": _KIND_NAMES[kind],
        "dim": total_dim,
        "parts": [
            {
                "entries": p.entries,
                "dim": p.dim,
                "trained_on_frames": p.trained_on_frames,
                "inertia_trace": list(p.inertia_trace),
            }
            for p in parts
        ],
        "metadata": metadata or {},
    }
    with _binio.atomic_write(_sidecar(path)) as fh:
        fh.write(json.dumps(sidecar, indent=2, sort_keys=True).encode("utf-8"))
    return len(header) + len(payload)


def load_codebook(source):
    """Read a .dtcb file; returns the matching codebook kind."""
    path = Path(source)
    with open(path, "rb") as fh:
        _binio.expect_magic(fh, MAGIC, path)
        _binio.expect_version(fh, VERSION, path)
        kind = _binio.read_u32(fh)
        n_parts = _binio.read_u32(fh)
        total_dim = _binio.read_u32(fh)
        if kind not in _KIND_NAMES:
            raise CorruptionError(f"{path}: unknown codebook kind {kind}")
        if n_parts < 1:
            raise CorruptionError(f"{path}: header declares {n_parts} parts")
        if kind != KIND_GROUPED and n_parts >= 1 and total_dim < 1:
            raise CorruptionError(f"{path}: header declares dimension {total_dim}")
        entries = [_binio.read_u32(fh) for _ in range(n_parts)]
        if kind == KIND_GROUPED:
            if total_dim % n_parts != 0:
                raise CorruptionError(
                    f"{path}: dimension {total_dim} not divisible into {n_parts} groups"
                )
            dims = [total_dim // n_parts] * n_parts
        else:
            dims = [total_dim] * n_parts
        payload = fh.read()
    expected = 4 * sum(k * d for k, d in zip(entries, dims))
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes but header implies {expected}"
        )
    meta_parts = [{} for _ in range(n_parts)]
    sidecar = _sidecar(path)
    if sidecar.exists():
        with open(sidecar, "r", encoding="utf-8") as fh:
            info = json.load(fh)
        recorded = info.get("parts", [])
        if len(recorded) == n_parts:
            meta_parts = recorded
    parts = []
    offset = 0
    for k, d, meta in zip(entries, dims, meta_parts):
        size = 4 * k * d
        block = np.frombuffer(payload[offset : offset + size], dtype="<f4").reshape(k, d)
        offset += size
        try:
            parts.append(
                Codebook(
                    centroids=block,
                    trained_on_frames=int(meta.get("trained_on_frames", 0)),
                    inertia_trace=tuple(float(x) for x in meta.get("inertia_trace", ())),
                )
            )
        except ValidationError as exc:
            raise CorruptionError(f"{path}: {exc}") from exc
    if kind == KIND_PLAIN:
        if n_parts != 1:
            raise CorruptionError(f"{path}: plain codebook with {n_parts} parts")
        return parts[0]
    if kind == KIND_GROUPED:
        return GroupedCodebook(per_group=tuple(parts))
    return ResidualCodebookStack(per_stage=tuple(parts))
