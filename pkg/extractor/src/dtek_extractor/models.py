"""Pretrained-encoder adapters.

These paths need torch, torchaudio and transformers plus a checkpoint;
anything missing raises MissingAssetError naming the asset so the caller
knows exactly what to install (or can fall back to synthetic mode).
"""

from __future__ import annotations

import importlib
from pathlib import Path

import numpy as np

from .errors import MissingAssetError
from .spec import MODEL_FAMILIES, ExtractionSpec

_REQUIRED_PACKAGES = ("torch", "torchaudio", "transformers")


def _require_packages(model: str) -> None:
    missing = [name for name in _REQUIRED_PACKAGES if importlib.util.find_spec(name) is None]
    if missing:
        raise MissingAssetError(
            f"model {model!r} needs the {', '.join(missing)} package"
            f"{'s' if len(missing) > 1 else ''}; install them or use model='synthetic'"
        )


def _resolve_checkpoint(spec: ExtractionSpec) -> str:
    if spec.checkpoint:
        return spec.checkpoint
    family = spec.family()
    default = MODEL_FAMILIES[family][1]
    if default is None:
        raise MissingAssetError(
            f"model {spec.model!r} has no default checkpoint; set 'checkpoint' in the spec"
        )
    return default


def extract_with_model(spec: ExtractionSpec, audio_path: str) -> np.ndarray:
    """Run one audio file through the encoder; returns (T, F) float32 frames."""
    checkpoint = _resolve_checkpoint(spec)  # spec-level, checked before imports
    _require_packages(spec.model)
    if not Path(audio_path).exists():
        raise MissingAssetError(f"audio file not found: {audio_path}")

    import torch
    import torchaudio
    from transformers import AutoModel

    try:
        model = AutoModel.from_pretrained(checkpoint)
    except Exception as exc:
        raise MissingAssetError(
            f"checkpoint {checkpoint!r} unavailable: {exc}; download it or point "
            f"'checkpoint' at a local copy"
        ) from exc
    model.eval()
    waveform, sample_rate = torchaudio.load(audio_path)
    if waveform.shape[0] > 1:
        waveform = waveform.mean(dim=0, keepdim=True)
    target_sr = 24_000 if spec.family() == "encodec" else 16_000
    if sample_rate != target_sr:
        waveform = torchaudio.functional.resample(waveform, sample_rate, target_sr)
    with torch.no_grad():
        outputs = model(waveform, output_hidden_states=True)
    hidden = outputs.hidden_states[spec.layer]
    return hidden.squeeze(0).cpu().numpy().astype(np.float32)
