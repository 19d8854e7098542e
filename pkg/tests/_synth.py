"""Synthetic data builders shared by the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from disctok import EmbeddingMatrix, Manifest, ManifestEntry, TokenSequence, write_embedding, write_manifest


def gaussian_clusters(
    seed: int,
    n_clusters: int,
    dim: int,
    points_per_cluster: int,
    sigma: float = 0.01,
    min_separation: float = 10.0,
):
    """Well-separated gaussian blobs with known centers and labels."""
    rng = np.random.default_rng(seed)
    centers = []
    while len(centers) < n_clusters:
        candidate = rng.uniform(-30.0, 30.0, size=dim)
        if all(np.linalg.norm(candidate - c) >= min_separation for c in centers):
            centers.append(candidate)
    centers = np.asarray(centers)
    labels = np.repeat(np.arange(n_clusters), points_per_cluster)
    labels = rng.permutation(labels)
    points = centers[labels] + rng.normal(0.0, sigma, size=(labels.size, dim))
    return points, labels, centers


def random_tokens(rng: np.random.Generator, streams=None, frames=None, max_vocab=50) -> TokenSequence:
    """A random valid TokenSequence for fuzz tests."""
    streams = int(rng.integers(1, 4)) if streams is None else streams
    frames = int(rng.integers(0, 40)) if frames is None else frames
    vocab = tuple(int(rng.integers(2, max_vocab + 1)) for _ in range(streams))
    tokens = np.vstack([rng.integers(0, v, size=frames) for v in vocab]) if streams else None
    rate = float(rng.choice([50.0, 75.0, 100.0]))
    return TokenSequence(tokens=tokens.reshape(streams, frames), vocab_sizes=vocab, frame_rate=rate)


def random_matrix(rng: np.random.Generator, frames=None, dim=None, rate=None) -> EmbeddingMatrix:
    frames = int(rng.integers(0, 30)) if frames is None else frames
    dim = int(rng.integers(1, 9)) if dim is None else dim
    rate = float(rng.choice([50.0, 75.0, 100.0])) if rate is None else rate
    data = rng.standard_normal((frames, dim)).astype(np.float32)
    return EmbeddingMatrix(data=data, frame_rate=rate)


def build_corpus(
    directory: Path,
    seed: int = 0,
    utterances: int = 4,
    frames: int = 200,
    dim: int = 4,
    rate: float = 50.0,
    labels_fn=None,
) -> Path:
    """Write .dtek files plus a manifest; returns the manifest path.

    ``labels_fn(utt_index, matrix)`` may supply a phone alignment per
    utterance.
    """
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(utterances):
        matrix = EmbeddingMatrix(
            data=rng.standard_normal((frames, dim)).astype(np.float32), frame_rate=rate
        )
        name = f"utt{i:03d}.dtek"
        write_embedding(matrix, directory / name)
        alignment = None if labels_fn is None else tuple(labels_fn(i, matrix))
        entries.append(
            ManifestEntry(
                utt_id=f"utt{i:03d}",
                path=name,
                frames=matrix.frames,
                frame_rate=rate,
                duration_s=matrix.frames / rate,
                phone_alignment=alignment,
            )
        )
    manifest_path = directory / "corpus.jsonl"
    write_manifest(Manifest(entries=entries), manifest_path)
    return manifest_path
