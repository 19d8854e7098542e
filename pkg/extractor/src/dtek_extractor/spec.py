"""Extraction specs: which model, which layer, which inputs, where to.

A spec is a JSON document. Synthetic mode (the default and the only mode
with no external assets) declares utterances by id and duration; real
model families declare audio files. The declared frame rate must match
the model family: 50 Hz for hubert/wavlm-style encoders, 75 Hz for
codec-style, 100 Hz for vq-wav2vec-style. Synthetic accepts any rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import SpecError

# model-name prefix -> (expected frame rate, huggingface checkpoint)
MODEL_FAMILIES = {
    "hubert": (50.0, "facebook/hubert-large-ll60k"),
    "wavlm": (50.0, "microsoft/wavlm-large"),
    "encodec": (75.0, "facebook/encodec_24khz"),
    "vq-wav2vec": (100.0, None),
}

_KNOWN_KEYS = {
    "model", "layer", "frame_rate", "output_dir", "utterances", "audio",
    "dim", "seed", "clusters", "cluster_sigma", "center_scale", "checkpoint",
}


@dataclass(frozen=True)
class SyntheticUtterance:
    utt_id: str
    duration_s: float


@dataclass(frozen=True)
class ExtractionSpec:
    model: str
    frame_rate: float
    output_dir: str
    layer: int = -1
    utterances: tuple[SyntheticUtterance, ...] = ()
    audio: tuple[str, ...] = ()
    dim: int = 16
    seed: int = 0
    clusters: int = 8
    cluster_sigma: float = 0.01
    center_scale: float = 50.0
    checkpoint: str | None = None

    def __post_init__(self):
        if not (math.isfinite(self.frame_rate) and self.frame_rate > 0):
            raise SpecError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.model == "synthetic":
            if not self.utterances:
                raise SpecError("synthetic mode needs a non-empty 'utterances' list")
            if self.dim < 1 or self.clusters < 1:
                raise SpecError("dim and clusters must be positive")
            if self.cluster_sigma < 0:
                raise SpecError("cluster_sigma must be non-negative")
            seen = set()
            for utt in self.utterances:
                if utt.duration_s <= 0:
                    raise SpecError(f"{utt.utt_id}: duration must be positive")
                if utt.utt_id in seen:
                    raise SpecError(f"duplicate utt_id {utt.utt_id!r}")
                seen.add(utt.utt_id)
            return
        family = self.family()
        if family is None:
            known = ", ".join(sorted(MODEL_FAMILIES)) + ", synthetic"
            raise SpecError(f"unknown model {self.model!r} (known: {known})")
        expected_rate = MODEL_FAMILIES[family][0]
        if self.frame_rate != expected_rate:
            raise SpecError(
                f"model {self.model!r} runs at {expected_rate} Hz, spec declares {self.frame_rate}"
            )
        if not self.audio:
            raise SpecError(f"model {self.model!r} needs a non-empty 'audio' list")

    def family(self) -> str | None:
        for prefix in MODEL_FAMILIES:
            if self.model == prefix or self.model.startswith(prefix + "-"):
                return prefix
        return None


def load_spec(source) -> ExtractionSpec:
    """Parse and validate a JSON extraction spec."""
    path = Path(source)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise SpecError(f"{path}: spec must be a JSON object")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise SpecError(f"{path}: unknown spec keys {sorted(unknown)}")
    for key in ("model", "frame_rate", "output_dir"):
        if key not in raw:
            raise SpecError(f"{path}: missing required key {key!r}")
    utterances = tuple(
        SyntheticUtterance(utt_id=str(u["utt_id"]), duration_s=float(u["duration_s"]))
        for u in raw.get("utterances", ())
    )
    return ExtractionSpec(
        model=str(raw["model"]),
        frame_rate=float(raw["frame_rate"]),
        output_dir=str(raw["output_dir"]),
        layer=int(raw.get("layer", -1)),
        utterances=utterances,
        audio=tuple(str(a) for a in raw.get("audio", ())),
        dim=int(raw.get("dim", 16)),
        seed=int(raw.get("seed", 0)),
        clusters=int(raw.get("clusters", 8)),
        cluster_sigma=float(raw.get("cluster_sigma", 0.01)),
        center_scale=float(raw.get("center_scale", 50.0)),
        checkpoint=raw.get("checkpoint"),
    )


def frames_consistent(frames: int, duration_s: float, frame_rate: float) -> bool:
    """True when a frame count agrees with the audio length within one frame.

    Encoders frame with edge effects, so one second at 50 Hz may yield
    49, 50 or 51 frames; all are accepted and the true count is recorded.
    """
    return abs(frames - duration_s * frame_rate) <= 1.0 + 1e-9
