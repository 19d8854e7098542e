"""Augmentation policy for discrete token streams and their embeddings.

Token-domain deformations (time warping, time masking, optional frame
duplication) act on a TokenSequence; feature-domain deformations
(embedding masking, additive standard-normal noise) act on the
post-lookup FeatureSequence. ``augment_sample`` chains both stages
behind a single per-sample gate and is a pure function of
(input, config, rng state).

All operations draw from the supplied generator in a fixed order, so a
given seed reproduces outputs byte for byte. Masked values are written
as ``config.mask_value`` (zero by default).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, ValidationError
from .frontend import FeatureSequence
from .tokens import TokenSequence


@dataclass(frozen=True)
class AugmentationConfig:
    """Policy constants; defaults are the standard discretized-input recipe.

    ``frame_dup_prob`` defaults to 0 (off): per-frame i.i.d. duplication
    is this toolkit's reading of the frame-duplication knob, which has no
    settled definition elsewhere.
    """

    warp_factor: int = 80
    time_mask_count_cap: int = 10
    time_mask_frac: float = 0.0015
    time_mask_width_cap: int = 100
    time_mask_budget_frac: float = 0.15
    emb_mask_max_stride: int = 27
    emb_mask_repeats: int = 2
    noise_prob: float = 0.25
    sample_prob: float = 0.9
    mask_value: int = 0
    frame_dup_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("noise_prob", "sample_prob", "frame_dup_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {value}")
        for name in ("time_mask_frac", "time_mask_budget_frac"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {value}")
        for name in ("warp_factor", "time_mask_count_cap", "time_mask_width_cap"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.emb_mask_max_stride < 0 or self.emb_mask_repeats < 0:
            raise ConfigurationError("embedding mask parameters must be non-negative")
        if self.mask_value < 0:
            raise ConfigurationError("mask_value must be a valid token index")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigurationError(f"seed must be a non-negative integer, got {self.seed!r}")


def sample_rng(seed: int, utt_id: str) -> np.random.Generator:
    """Independent per-utterance generator derived from (seed, utt_id).

    Streams are stable across processes and independent of processing
    order, so per-sample augmentation parallelizes freely.
    """
    digest = hashlib.sha256(utt_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng([int(seed), *words])


@dataclass(frozen=True)
class MaskRegion:
    start: int
    width: int


def _nearest_indices(length_in: int, length_out: int) -> np.ndarray:
    # floor(j * in / out), exact in integer arithmetic
    return (np.arange(length_out, dtype=np.int64) * length_in) // length_out


def time_warp(seq: TokenSequence, warp_factor: int, rng) -> TokenSequence:
    """Warp the sequence around a random centre, preserving length exactly.

    A centre C is drawn from [W+1, T-W) and a warped size S from
    [C-W, C+W+1); the first C-1 frames are nearest-resampled to S frames
    and the rest to T-S. Sequences with T <= 2W+1 pass through unchanged
    (the centre interval is empty there).
    """
    if warp_factor < 1:
        raise ConfigurationError(f"warp factor must be positive, got {warp_factor}")
    frames = seq.frames
    if frames <= 2 * warp_factor + 1:
        return seq
    centre = int(rng.integers(warp_factor + 1, frames - warp_factor))
    size = int(rng.integers(centre - warp_factor, centre + warp_factor + 1))
    left = centre - 1
    right = frames - centre + 1
    idx = np.concatenate(
        (
            _nearest_indices(left, size),
            left + _nearest_indices(right, frames - size),
        )
    )
    return TokenSequence(
        tokens=seq.tokens[:, idx], vocab_sizes=seq.vocab_sizes, frame_rate=seq.frame_rate
    )


def mask_budget(config: AugmentationConfig, frames: int) -> tuple[int, int]:
    """Number of time masks N and maximum width M for a T-frame sequence.

    N = min(count_cap, ceil(frac*T)); M = min(width_cap, floor(budget*T/N)).
    Computed with rational arithmetic: float evaluation misrounds at
    values like 0.0015*2000.
    """
    if frames < 1:
        raise ValidationError("time masking needs at least one frame")
    frac = Fraction(str(config.time_mask_frac))
    budget = Fraction(str(config.time_mask_budget_frac))
    count = min(config.time_mask_count_cap, math.ceil(frac * frames))
    if count == 0:
        return 0, 0
    width = min(config.time_mask_width_cap, math.floor(budget * frames / count))
    return count, width


def time_mask(
    seq: TokenSequence, config: AugmentationConfig, rng
) -> tuple[TokenSequence, list[MaskRegion]]:
    """Zero out N random spans of up to M frames across all streams.

    Each mask i draws a width m_i uniform on [0, M] and starts at
    floor(lambda * (T - m_i)) with lambda ~ U[0, 1). Returns the masked
    sequence and the list of (start, width) regions.
    """
    if config.mask_value >= min(seq.vocab_sizes):
        raise ConfigurationError(
            f"mask value {config.mask_value} outside the smallest stream vocab"
        )
    count, max_width = mask_budget(config, seq.frames)
    tokens = seq.tokens.copy()
    report: list[MaskRegion] = []
    for _ in range(count):
        width = int(rng.integers(0, max_width + 1))
        lam = float(rng.random())
        start = int(lam * (seq.frames - width))
        if width:
            tokens[:, start : start + width] = config.mask_value
        report.append(MaskRegion(start=start, width=width))
    return (
        TokenSequence(tokens=tokens, vocab_sizes=seq.vocab_sizes, frame_rate=seq.frame_rate),
        report,
    )


def embedding_mask(seq: FeatureSequence, config: AugmentationConfig, rng) -> FeatureSequence:
    """Zero contiguous bands of feature dimensions, applied repeatedly.

    Each application draws a stride m uniform on [0, max_stride] and a
    start floor(lambda * (F - m)); dimensions [start, start+m) are zeroed
    for every frame. Applications may overlap.
    """
    dim = seq.dim
    data = seq.data.copy()
    for _ in range(config.emb_mask_repeats):
        stride = int(rng.integers(0, config.emb_mask_max_stride + 1))
        stride = min(stride, dim)  # the band cannot exceed the feature width
        lam = float(rng.random())
        start = int(lam * (dim - stride))
        if stride:
            data[:, start : start + stride] = float(config.mask_value)
    return FeatureSequence(data=data, frame_rate=seq.frame_rate)


def gaussian_noise(seq: FeatureSequence, prob: float, rng) -> FeatureSequence:
    """With one Bernoulli draw per sequence, add i.i.d. standard-normal noise."""
    if not 0.0 <= prob <= 1.0:
        raise ConfigurationError(f"probability must be in [0, 1], got {prob}")
    if float(rng.random()) >= prob:
        return seq
    noisy = seq.data.astype(np.float64) + rng.standard_normal(seq.data.shape)
    return FeatureSequence(data=noisy.astype(np.float32), frame_rate=seq.frame_rate)


def duplicate_frames(seq: TokenSequence, per_frame_prob: float, rng) -> TokenSequence:
    """Duplicate each frame independently with the given probability.

    Duplication is consistent across streams, so run structure is
    preserved: deduplicating the output equals deduplicating the input.
    """
    if not 0.0 <= per_frame_prob <= 1.0:
        raise ConfigurationError(f"probability must be in [0, 1], got {per_frame_prob}")
    if seq.frames == 0:
        return seq
    repeats = np.where(rng.random(seq.frames) < per_frame_prob, 2, 1)
    return TokenSequence(
        tokens=np.repeat(seq.tokens, repeats, axis=1),
        vocab_sizes=seq.vocab_sizes,
        frame_rate=seq.frame_rate,
    )


@dataclass(frozen=True)
class AugmentResult:
    """Augmented token stage plus, when an embed hook is given, feature stage."""

    tokens: TokenSequence
    features: FeatureSequence | None
    applied: bool
    time_masks: tuple[MaskRegion, ...] = ()
    duplicated_frames: int = 0


def augment_sample(
    tokens: TokenSequence,
    config: AugmentationConfig,
    *,
    embed=None,
    rng: np.random.Generator | None = None,
) -> AugmentResult:
    """Run the full per-sample policy behind a single probability gate.

    With probability ``sample_prob``: time warp, then time masking, then
    (when ``frame_dup_prob`` > 0) frame duplication on the tokens; the
    ``embed`` hook, when given, maps the token stage to features, which
    then receive embedding masking and gaussian noise. Otherwise both
    stages pass through untouched.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if float(rng.random()) >= config.sample_prob:
        features = embed(tokens) if embed is not None else None
        return AugmentResult(tokens=tokens, features=features, applied=False)
    out = time_warp(tokens, config.warp_factor, rng)
    out, regions = time_mask(out, config, rng)
    duplicated = 0
    if config.frame_dup_prob > 0.0:
        before = out.frames
        out = duplicate_frames(out, config.frame_dup_prob, rng)
        duplicated = out.frames - before
    features = None
    if embed is not None:
        features = embed(out)
        features = embedding_mask(features, config, rng)
        features = gaussian_noise(features, config.noise_prob, rng)
    return AugmentResult(
        tokens=out,
        features=features,
        applied=True,
        time_masks=tuple(regions),
        duplicated_frames=duplicated,
    )
