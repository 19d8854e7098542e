"""Token-to-feature frontend: embedding lookup, group fusion, resampling.

Tokens become dense features via a per-stream embedding table (randomly
initialized, or a codebook passed through a linear projection). Multiple
streams are each embedded, concatenated and projected down to one
feature width. Feature sequences can then be nearest-neighbor resampled
to a uniform frame rate.

A feature sequence is structurally an embedding matrix (T x F float32
frames at a rate), so the container type is shared.

The on-disk ``.dtem`` table layout is little-endian: magic ``DTEM``, u32
version, u32 vocab, u32 out_dim, u32 init mode (0 random / 1 codebook
projected), u32 projection input rows (0 when absent), the K x out_dim
weights as float32, then the optional projection block.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _binio
from .embio import EmbeddingMatrix
from .errors import (
    ConfigurationError,
    CorruptionError,
    SchemaError,
    TokenRangeError,
    ValidationError,
)
from .quantize import Codebook
from .tokens import TokenSequence

FeatureSequence = EmbeddingMatrix

MAGIC = b"DTEM"
VERSION = 1
DEFAULT_OUT_DIM = 80

_MODE_RANDOM = "random"
_MODE_PROJECTED = "codebook_projected"
_MODE_CODES = {_MODE_RANDOM: 0, _MODE_PROJECTED: 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


def _uniform_init(rng: np.random.Generator, shape: tuple[int, int], out_dim: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(out_dim)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """K x out_dim lookup table mapping token indices to feature rows."""

    weights: np.ndarray
    init_mode: str = _MODE_RANDOM
    projection: np.ndarray | None = None

    def __post_init__(self):
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float32))
        if weights.ndim != 2 or weights.shape[0] < 1 or weights.shape[1] < 1:
            raise ValidationError(f"weights must be a non-empty 2-D table, got {weights.shape}")
        if not np.isfinite(weights).all():
            raise ValidationError("weights contain non-finite values")
        if self.init_mode not in _MODE_CODES:
            raise ValidationError(f"unknown init mode {self.init_mode!r}")
        projection = self.projection
        if self.init_mode == _MODE_PROJECTED:
            if projection is None:
                raise ValidationError("codebook_projected tables must carry their projection")
            projection = np.ascontiguousarray(np.asarray(projection, dtype=np.float32))
            if projection.ndim != 2 or projection.shape[1] != weights.shape[1]:
                raise ValidationError(
                    f"projection shape {projection.shape} does not yield out_dim {weights.shape[1]}"
                )
            if not np.isfinite(projection).all():
                raise ValidationError("projection contains non-finite values")
        elif projection is not None:
            raise ValidationError("random tables do not carry a projection")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "projection", projection)

    @property
    def vocab(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def random(cls, vocab: int, out_dim: int = DEFAULT_OUT_DIM, seed: int = 0) -> "EmbeddingTable":
        """Seeded i.i.d. uniform initialization in [-1/sqrt(out_dim), 1/sqrt(out_dim)]."""
        if vocab < 1 or out_dim < 1:
            raise ConfigurationError("vocab and out_dim must be positive")
        rng = np.random.default_rng(seed)
        return cls(weights=_uniform_init(rng, (vocab, out_dim), out_dim), init_mode=_MODE_RANDOM)

    @classmethod
    def from_codebook(
        cls,
        codebook: Codebook,
        projection: np.ndarray | None = None,
        out_dim: int = DEFAULT_OUT_DIM,
        seed: int = 0,
    ) -> "EmbeddingTable":
        """Rows are codebook centroids passed through a linear projection.

        Pass an explicit ``projection`` (codebook dim x out_dim) or let a
        seeded uniform one be drawn.
        """
        if projection is None:
            if out_dim < 1:
                raise ConfigurationError("out_dim must be positive")
            rng = np.random.default_rng(seed)
            projection = _uniform_init(rng, (codebook.dim, out_dim), out_dim)
        projection = np.ascontiguousarray(np.asarray(projection, dtype=np.float32))
        if projection.ndim != 2 or projection.shape[0] != codebook.dim:
            raise ConfigurationError(
                f"projection must be ({codebook.dim}, out_dim), got {projection.shape}"
            )
        weights = (
            codebook.centroids.astype(np.float64) @ projection.astype(np.float64)
        ).astype(np.float32)
        return cls(weights=weights, init_mode=_MODE_PROJECTED, projection=projection)


def embed_tokens(seq: TokenSequence, table: EmbeddingTable) -> FeatureSequence:
    """Look up each frame's token in the table; frame rate is preserved."""
    if seq.streams != 1:
        raise SchemaError(f"embed_tokens takes a single stream, got {seq.streams}")
    if seq.vocab_sizes[0] != table.vocab:
        raise SchemaError(f"stream vocab {seq.vocab_sizes[0]} != table vocab {table.vocab}")
    row = seq.tokens[0]
    if row.size and int(row.max()) >= table.vocab:
        raise TokenRangeError(f"token {int(row.max())} outside table vocab {table.vocab}")
    return FeatureSequence(data=table.weights[row], frame_rate=seq.frame_rate)


def random_fusion_projection(
    streams: int, embed_dim: int, out_dim: int | None = None, seed: int = 0
) -> np.ndarray:
    """Seeded (streams*embed_dim) x out_dim fusion matrix, uniform init."""
    if streams < 1 or embed_dim < 1:
        raise ConfigurationError("streams and embed_dim must be positive")
    out = embed_dim if out_dim is None else out_dim
    if out < 1:
        raise ConfigurationError("out_dim must be positive")
    rng = np.random.default_rng(seed)
    return _uniform_init(rng, (streams * embed_dim, out), out)


def fuse_groups(
    seq: TokenSequence,
    tables: list[EmbeddingTable] | tuple[EmbeddingTable, ...],
    fusion_projection: np.ndarray,
) -> FeatureSequence:
    """Embed every stream, concatenate, and project down to one width.

    With S streams of d-dim embeddings the projection must be
    (S*d) x out_dim; each output frame is the concatenated embedding row
    times the projection.
    """
    if len(tables) != seq.streams:
        raise ConfigurationError(f"{seq.streams} streams but {len(tables)} tables")
    dims = {t.out_dim for t in tables}
    if len(dims) != 1:
        raise ConfigurationError(f"tables must share one embedding width, got {sorted(dims)}")
    embed_dim = dims.pop()
    projection = np.asarray(fusion_projection)
    if projection.ndim != 2 or projection.shape[0] != seq.streams * embed_dim:
        raise ConfigurationError(
            f"fusion projection must be ({seq.streams * embed_dim}, out), got {projection.shape}"
        )
    for s, table in enumerate(tables):
        if seq.vocab_sizes[s] != table.vocab:
            raise SchemaError(f"stream {s} vocab {seq.vocab_sizes[s]} != table vocab {table.vocab}")
    stacked = np.concatenate(
        [tables[s].weights[seq.tokens[s]] for s in range(seq.streams)], axis=1
    )
    fused = stacked.astype(np.float64) @ projection.astype(np.float64)
    return FeatureSequence(data=fused.astype(np.float32), frame_rate=seq.frame_rate)


def resample_nearest(seq: FeatureSequence, target_rate: float) -> FeatureSequence:
    """Nearest-neighbor resample to ``target_rate``.

    Output length is round(T * target/source); output frame j copies
    source frame min(floor(j * source/target), T-1). Equal rates return
    the input unchanged.
    """
    if target_rate <= 0:
        raise ConfigurationError(f"target rate must be positive, got {target_rate}")
    source_rate = seq.frame_rate
    if target_rate == source_rate:
        return seq
    frames = seq.frames
    if frames == 0:
        return FeatureSequence(
            data=np.empty((0, seq.dim), dtype=np.float32), frame_rate=target_rate
        )
    length = int(np.floor(frames * target_rate / source_rate + 0.5))
    if length == 0:
        return FeatureSequence(
            data=np.empty((0, seq.dim), dtype=np.float32), frame_rate=target_rate
        )
    idx = np.floor(np.arange(length) * source_rate / target_rate).astype(np.int64)
    np.clip(idx, 0, frames - 1, out=idx)
    return FeatureSequence(data=seq.data[idx], frame_rate=target_rate)


def save_table(table: EmbeddingTable, destination) -> int:
    """Write an embedding table to ``destination`` in .dtem format."""
    header = (
        MAGIC
        + _binio.pack_u32(VERSION)
        + _binio.pack_u32(table.vocab)
        + _binio.pack_u32(table.out_dim)
        + _binio.pack_u32(_MODE_CODES[table.init_mode])
        + _binio.pack_u32(0 if table.projection is None else table.projection.shape[0])
    )
    payload = np.ascontiguousarray(table.weights, dtype="<f4").tobytes()
    if table.projection is not None:
        payload += np.ascontiguousarray(table.projection, dtype="<f4").tobytes()
    with _binio.atomic_write(destination) as fh:
        fh.write(header)
        fh.write(payload)
    return len(header) + len(payload)


def load_table(source) -> EmbeddingTable:
    """Read a .dtem file back into an EmbeddingTable."""
    path = Path(source)
    with open(path, "rb") as fh:
        _binio.expect_magic(fh, MAGIC, path)
        _binio.expect_version(fh, VERSION, path)
        vocab = _binio.read_u32(fh)
        out_dim = _binio.read_u32(fh)
        mode_code = _binio.read_u32(fh)
        proj_rows = _binio.read_u32(fh)
        payload = fh.read()
    if mode_code not in _MODE_NAMES:
        raise CorruptionError(f"{path}: unknown init mode code {mode_code}")
    expected = 4 * (vocab * out_dim + proj_rows * out_dim)
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes but header implies {expected}"
        )
    weights = np.frombuffer(payload[: 4 * vocab * out_dim], dtype="<f4").reshape(vocab, out_dim)
    projection = None
    if proj_rows:
        projection = np.frombuffer(payload[4 * vocab * out_dim :], dtype="<f4").reshape(
            proj_rows, out_dim
        )
    try:
        return EmbeddingTable(
            weights=weights, init_mode=_MODE_NAMES[mode_code], projection=projection
        )
    except ValidationError as exc:
        raise CorruptionError(f"{path}: {exc}") from exc
