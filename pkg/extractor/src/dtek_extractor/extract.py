"""The extraction pipeline: spec in, .dtek files + manifest out."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import models, synth
from .errors import SpecError
from .spec import ExtractionSpec, frames_consistent
from .writer import UtteranceRecord, write_dtek, write_manifest

MANIFEST_NAME = "manifest.jsonl"


def extract(spec: ExtractionSpec, workers: int = 1) -> Path:
    """Run the extraction and return the manifest path.

    Synthetic mode emits gaussian-mixture embeddings with the true
    cluster index per frame recorded as the phone alignment; model mode
    runs each audio file through the selected encoder layer.
    """
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if spec.model == "synthetic":
        centers = synth.mixture_centers(spec)

        def work(index: int) -> UtteranceRecord:
            utt = spec.utterances[index]
            data, labels = synth.synthesize_utterance(spec, index, centers)
            name = f"{utt.utt_id}.dtek"
            write_dtek(out_dir / name, data, spec.frame_rate)
            return UtteranceRecord(
                utt_id=utt.utt_id,
                path=name,
                frames=data.shape[0],
                frame_rate=spec.frame_rate,
                duration_s=utt.duration_s,
                phone_alignment=tuple(int(x) for x in labels),
            )

        records = _run(work, range(len(spec.utterances)), workers)
        phone_table = [f"c{idx}" for idx in range(spec.clusters)]
    else:

        def work(audio_path: str) -> UtteranceRecord:
            data = models.extract_with_model(spec, audio_path)
            utt_id = Path(audio_path).stem
            name = f"{utt_id}.dtek"
            write_dtek(out_dir / name, data, spec.frame_rate)
            duration = data.shape[0] / spec.frame_rate
            return UtteranceRecord(
                utt_id=utt_id,
                path=name,
                frames=data.shape[0],
                frame_rate=spec.frame_rate,
                duration_s=duration,
            )

        records = _run(work, spec.audio, workers)
        phone_table = None

    for rec in records:
        if not frames_consistent(rec.frames, rec.duration_s, rec.frame_rate):
            raise SpecError(
                f"{rec.utt_id}: {rec.frames} frames disagree with "
                f"{rec.duration_s}s at {rec.frame_rate} Hz by more than one frame"
            )
    return write_manifest(records, out_dir / MANIFEST_NAME, phone_table=phone_table)


def _run(work, items, workers: int):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(work, items))
    return [work(item) for item in items]
