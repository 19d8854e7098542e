"""Token sequences, run-length codec, serialization and bandwidth accounting.

A TokenSequence is an S x T integer grid: S parallel streams (quantizer
groups or RVQ stages) over T frames at one frame rate. The ``.dtts``
on-disk layout is little-endian: magic ``DTTS``, u32 version, u32 stream
count, u64 frame count, f64 frame rate, u32 vocab size per stream, then
each stream's tokens packed at the minimal whole-byte width for its
vocabulary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _binio
from .errors import ConfigurationError, CorruptionError, ValidationError

MAGIC = b"DTTS"
VERSION = 1


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """S parallel streams of per-frame integer tokens."""

    tokens: np.ndarray
    vocab_sizes: tuple[int, ...]
    frame_rate: float

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.tokens, dtype=np.int64))
        if arr.ndim != 2:
            raise ValidationError(f"tokens must be a 2-D (streams, frames) grid, got {arr.shape}")
        vocab = tuple(int(v) for v in self.vocab_sizes)
        if len(vocab) != arr.shape[0]:
            raise ValidationError(
                f"{arr.shape[0]} streams but {len(vocab)} vocab sizes declared"
            )
        if len(vocab) < 1:
            raise ValidationError("a token sequence needs at least one stream")
        if any(v < 1 for v in vocab):
            raise ValidationError("vocab sizes must be at least 1")
        if arr.shape[1] > 0:
            if arr.min() < 0:
                raise ValidationError("negative token index")
            for s, v in enumerate(vocab):
                top = int(arr[s].max())
                if top >= v:
                    raise ValidationError(f"stream {s}: token {top} outside vocab {v}")
        rate = float(self.frame_rate)
        if not (math.isfinite(rate) and rate > 0):
            raise ValidationError(f"frame rate must be positive and finite, got {self.frame_rate}")
        object.__setattr__(self, "tokens", arr)
        object.__setattr__(self, "vocab_sizes", vocab)
        object.__setattr__(self, "frame_rate", rate)

    @property
    def streams(self) -> int:
        return self.tokens.shape[0]

    @property
    def frames(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True, eq=False)
class RunLengthSequence:
    """Per-stream (token, run_count) pairs produced by deduplicate."""

    runs: tuple[tuple[tuple[int, int], ...], ...]
    original_frames: int
    vocab_sizes: tuple[int, ...]
    frame_rate: float

    def __post_init__(self):
        if len(self.runs) != len(self.vocab_sizes):
            raise ValidationError("one run list per stream is required")
        for s, stream_runs in enumerate(self.runs):
            previous = None
            total = 0
            for token, count in stream_runs:
                if count < 1:
                    raise ValidationError(f"stream {s}: run count {count} below 1")
                if not 0 <= token < self.vocab_sizes[s]:
                    raise ValidationError(f"stream {s}: run token {token} outside vocab")
                if previous is not None and token == previous:
                    raise ValidationError(f"stream {s}: adjacent runs share token {token}")
                previous = token
                total += count
            if total != self.original_frames:
                raise ValidationError(
                    f"stream {s}: runs cover {total} frames, expected {self.original_frames}"
                )


def deduplicate(seq: TokenSequence) -> RunLengthSequence:
    """Collapse consecutive repeated tokens per stream into runs."""
    streams = []
    for s in range(seq.streams):
        row = seq.tokens[s]
        if row.size == 0:
            streams.append(())
            continue
        boundaries = np.flatnonzero(np.diff(row)) + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [row.size]))
        streams.append(tuple((int(row[i]), int(j - i)) for i, j in zip(starts, ends)))
    return RunLengthSequence(
        runs=tuple(streams),
        original_frames=seq.frames,
        vocab_sizes=seq.vocab_sizes,
        frame_rate=seq.frame_rate,
    )


def inflate(runs: RunLengthSequence) -> TokenSequence:
    """Exact inverse of deduplicate."""
    rows = []
    for stream_runs in runs.runs:
        if stream_runs:
            values = np.array([t for t, _ in stream_runs], dtype=np.int64)
            counts = np.array([c for _, c in stream_runs], dtype=np.int64)
            rows.append(np.repeat(values, counts))
        else:
            rows.append(np.empty(0, dtype=np.int64))
    tokens = np.vstack(rows) if rows else np.empty((0, 0), dtype=np.int64)
    return TokenSequence(tokens=tokens, vocab_sizes=runs.vocab_sizes, frame_rate=runs.frame_rate)


def bandwidth_kbps(vocab_sizes: Sequence[int], frame_rate: float) -> float:
    """Information rate of a token stream set in kilobits per second.

    rate * sum(log2(vocab)) / 1000, the information-theoretic convention
    behind quoted tokenizer bitrates (2000 codes at 50 Hz = 0.55 kbps).
    """
    if frame_rate <= 0:
        raise ConfigurationError(f"frame rate must be positive, got {frame_rate}")
    if len(vocab_sizes) == 0:
        raise ConfigurationError("at least one stream is required")
    if any(v < 2 for v in vocab_sizes):
        raise ConfigurationError("bandwidth needs vocab sizes of at least 2 per stream")
    return frame_rate * sum(math.log2(v) for v in vocab_sizes) / 1000.0


def continuous_bandwidth_kbps(dims: int, bits: int, frame_rate: float) -> float:
    """Bandwidth of a continuous feature: dims x bits per frame at a rate."""
    if dims < 1 or bits < 1:
        raise ConfigurationError("dims and bits must be positive")
    if frame_rate <= 0:
        raise ConfigurationError(f"frame rate must be positive, got {frame_rate}")
    return dims * bits * frame_rate / 1000.0


def format_kbps(value: float) -> str:
    """Render kbps with 2 decimals, rounding half-up (table display style)."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def token_byte_width(vocab_size: int) -> int:
    """Minimal whole-byte storage width for a vocabulary."""
    if vocab_size < 1:
        raise ConfigurationError(f"vocab size must be at least 1, got {vocab_size}")
    bits = max(1, (vocab_size - 1).bit_length())
    return (bits + 7) // 8


def _encode_stream(row: np.ndarray, width: int) -> bytes:
    as_u64 = row.astype("<u8")
    byte_view = as_u64.view(np.uint8).reshape(-1, 8)
    return np.ascontiguousarray(byte_view[:, :width]).tobytes()


def _decode_stream(buf: bytes, frames: int, width: int) -> np.ndarray:
    packed = np.frombuffer(buf, dtype=np.uint8).reshape(frames, width)
    full = np.zeros((frames, 8), dtype=np.uint8)
    full[:, :width] = packed
    return full.view("<u8").reshape(frames)


def write_tokens(seq: TokenSequence, destination) -> int:
    """Write a token sequence to ``destination`` in .dtts format."""
    header = (
        MAGIC
        + _binio.pack_u32(VERSION)
        + _binio.pack_u32(seq.streams)
        + _binio.pack_u64(seq.frames)
        + _binio.pack_f64(seq.frame_rate)
        + b"".join(_binio.pack_u32(v) for v in seq.vocab_sizes)
    )
    payload = b"".join(
        _encode_stream(seq.tokens[s], token_byte_width(seq.vocab_sizes[s]))
        for s in range(seq.streams)
    )
    with _binio.atomic_write(destination) as fh:
        fh.write(header)
        fh.write(payload)
    return len(header) + len(payload)


def read_tokens(source) -> TokenSequence:
    """Read a .dtts file back into a TokenSequence."""
    path = Path(source)
    with open(path, "rb") as fh:
        _binio.expect_magic(fh, MAGIC, path)
        _binio.expect_version(fh, VERSION, path)
        streams = _binio.read_u32(fh)
        frames = _binio.read_u64(fh)
        rate = _binio.read_f64(fh)
        if streams < 1:
            raise CorruptionError(f"{path}: header declares {streams} streams")
        vocab = tuple(_binio.read_u32(fh) for _ in range(streams))
        payload = fh.read()
    widths = [token_byte_width(v) for v in vocab]
    expected = frames * sum(widths)
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes but header implies {expected}"
        )
    rows = []
    offset = 0
    for s in range(streams):
        size = frames * widths[s]
        decoded = _decode_stream(payload[offset : offset + size], frames, widths[s])
        offset += size
        if decoded.size and int(decoded.max()) >= vocab[s]:
            raise CorruptionError(
                f"{path}: stream {s} holds token {int(decoded.max())} outside vocab {vocab[s]}"
            )
        rows.append(decoded.astype(np.int64))
    tokens = np.vstack(rows) if rows else np.empty((0, 0), dtype=np.int64)
    return TokenSequence(tokens=tokens, vocab_sizes=vocab, frame_rate=rate)


def write_tokens_jsonl(items: Iterable[tuple[str, TokenSequence]], destination) -> int:
    """Export (utt_id, sequence) pairs as JSON-lines, one utterance per line."""
    count = 0
    with _binio.atomic_write(destination) as fh:
        for utt_id, seq in items:
            record = {
                "utt_id": utt_id,
                "frame_rate": seq.frame_rate,
                "vocab_sizes": list(seq.vocab_sizes),
                "tokens": seq.tokens.tolist(),
            }
            fh.write(json.dumps(record, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")
            count += 1
    return count


def read_tokens_jsonl(source) -> list[tuple[str, TokenSequence]]:
    """Read back a JSON-lines token export."""
    path = Path(source)
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            rows = np.asarray(record["tokens"], dtype=np.int64)
            if rows.ndim == 1:  # tolerate a single flattened stream
                rows = rows[None, :]
            try:
                seq = TokenSequence(
                    tokens=rows,
                    vocab_sizes=tuple(record["vocab_sizes"]),
                    frame_rate=record["frame_rate"],
                )
            except ValidationError as exc:
                raise CorruptionError(f"{path}:{lineno}: {exc}") from exc
            out.append((str(record["utt_id"]), seq))
    return out
