"""Seeded gaussian-mixture embedding generator.

Synthetic utterances carry a known cluster structure: every frame is one
of ``clusters`` well-scattered centers plus isotropic noise, and the
per-frame center indices ship as the manifest's phone alignment, so
quantizer recovery and PNMI can be checked end to end without any
pretrained model.
"""

from __future__ import annotations

import numpy as np

from .spec import ExtractionSpec


def mixture_centers(spec: ExtractionSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    return rng.uniform(-spec.center_scale, spec.center_scale, size=(spec.clusters, spec.dim))


def synthesize_utterance(spec: ExtractionSpec, index: int, centers: np.ndarray):
    """Frames and cluster labels for the index-th declared utterance.

    Deterministic per (spec.seed, index), independent of generation order.
    """
    utt = spec.utterances[index]
    rng = np.random.default_rng([spec.seed, index + 1])
    frames = max(1, int(np.floor(utt.duration_s * spec.frame_rate + 0.5)))
    labels = rng.integers(0, spec.clusters, size=frames)
    data = centers[labels] + rng.normal(0.0, spec.cluster_sigma, size=(frames, spec.dim))
    return data.astype(np.float32), labels.astype(np.int64)
