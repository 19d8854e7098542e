"""Token-quality measurement: PNMI, codebook usage, reconstruction error.

All probabilities are empirical plug-in estimates (no smoothing) and all
logarithms are base 2. PNMI is computed as
(H(phone) - H(phone | token)) / H(phone), which keeps the two boundary
cases exact: a token<->phone bijection scores exactly 1.0 and a constant
token exactly 0.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embio import EmbeddingMatrix
from .errors import (
    ConfigurationError,
    SchemaError,
    UndefinedMetricError,
    ValidationError,
)
from .tokens import TokenSequence


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """Phone x token joint counts."""

    joint: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.joint, dtype=np.int64))
        if arr.ndim != 2:
            raise ValidationError(f"joint counts must be 2-D, got shape {arr.shape}")
        if arr.size and arr.min() < 0:
            raise ValidationError("joint counts must be non-negative")
        object.__setattr__(self, "joint", arr)

    @property
    def phone_count(self) -> int:
        return self.joint.shape[0]

    @property
    def token_count(self) -> int:
        return self.joint.shape[1]

    @property
    def total(self) -> int:
        return int(self.joint.sum())


def build_contingency(seq: TokenSequence, phones, stream: int = 0) -> ContingencyTable:
    """Count frame-by-frame co-occurrences of phone labels and tokens.

    ``phones`` is one non-negative integer label per frame. Rows cover
    labels 0..max(phones); columns cover the stream's full vocabulary.
    """
    if not 0 <= stream < seq.streams:
        raise ConfigurationError(f"stream {stream} outside [0, {seq.streams})")
    labels = np.asarray(phones, dtype=np.int64)
    if labels.ndim != 1:
        raise SchemaError("phone labels must be a flat sequence")
    if labels.shape[0] != seq.frames:
        raise SchemaError(f"{labels.shape[0]} phone labels for {seq.frames} frames")
    vocab = seq.vocab_sizes[stream]
    if labels.size == 0:
        return ContingencyTable(joint=np.zeros((0, vocab), dtype=np.int64))
    if labels.min() < 0:
        raise ValidationError("phone labels must be non-negative")
    phone_count = int(labels.max()) + 1
    flat = np.bincount(labels * vocab + seq.tokens[stream], minlength=phone_count * vocab)
    return ContingencyTable(joint=flat.reshape(phone_count, vocab))


def build_joint_contingency(
    seq: TokenSequence, phones, max_product_vocab: int = 1 << 20
) -> ContingencyTable:
    """Contingency over the product alphabet of all streams.

    The product alphabet is exponential in the stream count, so the
    nominal size must stay under ``max_product_vocab``. Columns are
    compacted to the combinations actually observed.
    """
    product = 1
    for v in seq.vocab_sizes:
        product *= v
        if product > max_product_vocab:
            raise ConfigurationError(
                f"product alphabet exceeds the {max_product_vocab}-entry cap"
            )
    labels = np.asarray(phones, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != seq.frames:
        raise SchemaError(f"{labels.shape} phone labels for {seq.frames} frames")
    if labels.size == 0:
        return ContingencyTable(joint=np.zeros((0, 1), dtype=np.int64))
    combined = np.zeros(seq.frames, dtype=np.int64)
    for s in range(seq.streams):
        combined = combined * seq.vocab_sizes[s] + seq.tokens[s]
    _, compact = np.unique(combined, return_inverse=True)
    merged = TokenSequence(
        tokens=compact[None, :],
        vocab_sizes=(int(compact.max()) + 1,),
        frame_rate=seq.frame_rate,
    )
    return build_contingency(merged, labels)


def merge_tables(a: ContingencyTable, b: ContingencyTable) -> ContingencyTable:
    """Pad to the larger shape and sum; associative, so corpus merges are order-free."""
    rows = max(a.phone_count, b.phone_count)
    cols = max(a.token_count, b.token_count)
    joint = np.zeros((rows, cols), dtype=np.int64)
    joint[: a.phone_count, : a.token_count] += a.joint
    joint[: b.phone_count, : b.token_count] += b.joint
    return ContingencyTable(joint=joint)


def _entropy_bits(counts: np.ndarray, total: float) -> float:
    probs = counts[counts > 0] / total
    return float(-(probs * np.log2(probs)).sum())


def pnmi(table: ContingencyTable) -> float:
    """Phone-normalized mutual information I(phone; token) / H(phone) in [0, 1]."""
    total = table.total
    if total < 1:
        raise UndefinedMetricError("PNMI needs at least one observation")
    phone_counts = table.joint.sum(axis=1)
    h_phone = _entropy_bits(phone_counts, total)
    if h_phone == 0.0:
        raise UndefinedMetricError("PNMI is undefined with fewer than two phone classes")
    token_counts = table.joint.sum(axis=0)
    h_cond = 0.0
    for column in np.flatnonzero(token_counts):
        col = table.joint[:, column]
        h_cond += (token_counts[column] / total) * _entropy_bits(col, float(token_counts[column]))
    value = (h_phone - h_cond) / h_phone
    # guard float dust outside [0, 1]; exact 0.0 and 1.0 pass through
    return min(1.0, max(0.0, value))


@dataclass(frozen=True)
class CodebookStats:
    utilization: float
    perplexity: float


def codebook_stats(seq: TokenSequence, stream: int = 0) -> CodebookStats:
    """Fraction of the vocabulary in use, and 2**entropy of token usage."""
    if not 0 <= stream < seq.streams:
        raise ConfigurationError(f"stream {stream} outside [0, {seq.streams})")
    if seq.frames == 0:
        raise UndefinedMetricError("codebook stats need at least one frame")
    vocab = seq.vocab_sizes[stream]
    counts = np.bincount(seq.tokens[stream], minlength=vocab)
    distinct = int((counts > 0).sum())
    entropy = _entropy_bits(counts, float(seq.frames))
    return CodebookStats(utilization=distinct / vocab, perplexity=float(2.0**entropy))


@dataclass(frozen=True)
class ReconstructionError:
    mse: float
    snr_db: float  # +inf when the reconstruction is exact


def reconstruction_error(
    original: EmbeddingMatrix, reconstructed: EmbeddingMatrix
) -> ReconstructionError:
    """Mean squared error and signal-to-noise ratio between two matrices."""
    if original.data.shape != reconstructed.data.shape:
        raise SchemaError(
            f"shape mismatch: {original.data.shape} vs {reconstructed.data.shape}"
        )
    if original.data.size == 0:
        raise UndefinedMetricError("reconstruction error needs at least one frame")
    diff = original.data.astype(np.float64) - reconstructed.data.astype(np.float64)
    mse = float((diff * diff).mean())
    signal = float((original.data.astype(np.float64) ** 2).sum())
    if signal == 0.0:
        raise UndefinedMetricError("SNR is undefined for an all-zero signal")
    error = float((diff * diff).sum())
    snr = math.inf if error == 0.0 else 10.0 * math.log10(signal / error)
    return ReconstructionError(mse=mse, snr_db=snr)
