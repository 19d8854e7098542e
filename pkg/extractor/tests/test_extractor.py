"""Extractor tests; emitted files are validated through the consumer toolkit."""

import json

import numpy as np
import pytest

import disctok
from dtek_extractor import (
    ExtractionSpec,
    MissingAssetError,
    SpecError,
    SyntheticUtterance,
    extract,
    frames_consistent,
    load_spec,
)
from dtek_extractor.cli import main
from dtek_extractor.models import extract_with_model


def synthetic_spec(tmp_path, count=3, dim=16, rate=50.0, seed=7, duration=2.0):
    return ExtractionSpec(
        model="synthetic",
        frame_rate=rate,
        output_dir=str(tmp_path / "out"),
        dim=dim,
        seed=seed,
        utterances=tuple(
            SyntheticUtterance(utt_id=f"utt{i:04d}", duration_s=duration) for i in range(count)
        ),
    )


class TestSpecValidation:
    def test_load_spec_roundtrip(self, tmp_path):
        doc = {
            "model": "synthetic",
            "frame_rate": 50.0,
            "output_dir": str(tmp_path / "o"),
            "dim": 8,
            "seed": 3,
            "utterances": [{"utt_id": "a", "duration_s": 1.5}],
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(doc))
        spec = load_spec(path)
        assert spec.model == "synthetic"
        assert spec.utterances[0].duration_s == 1.5

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"model": "synthetic", "frame_rate": 50.0,
                                    "output_dir": "o", "turbo": True}))
        with pytest.raises(SpecError):
            load_spec(path)

    def test_family_frame_rates_enforced(self, tmp_path):
        for model, rate in (("wavlm-large", 50.0), ("hubert-large", 50.0),
                            ("encodec", 75.0), ("vq-wav2vec", 100.0)):
            ExtractionSpec(model=model, frame_rate=rate, output_dir="o", audio=("a.wav",))
            with pytest.raises(SpecError):
                ExtractionSpec(model=model, frame_rate=rate + 5.0, output_dir="o",
                               audio=("a.wav",))

    def test_synthetic_accepts_any_rate(self, tmp_path):
        spec = synthetic_spec(tmp_path, rate=62.5)
        assert spec.frame_rate == 62.5

    def test_unknown_model_rejected(self):
        with pytest.raises(SpecError):
            ExtractionSpec(model="whisper", frame_rate=50.0, output_dir="o", audio=("a.wav",))

    def test_duplicate_utterance_ids_rejected(self, tmp_path):
        with pytest.raises(SpecError):
            ExtractionSpec(
                model="synthetic", frame_rate=50.0, output_dir="o",
                utterances=(SyntheticUtterance("a", 1.0), SyntheticUtterance("a", 2.0)),
            )

    def test_framing_tolerance_one_frame(self):
        # one second at 50 Hz may frame to 49, 50 or 51
        for frames in (49, 50, 51):
            assert frames_consistent(frames, 1.0, 50.0)
        assert not frames_consistent(48, 1.0, 50.0)
        assert not frames_consistent(52, 1.0, 50.0)


class TestSyntheticExtraction:
    def test_acceptance_hundred_utterances_pass_consumer_validation(self, tmp_path):
        rng = np.random.default_rng(0)
        spec = ExtractionSpec(
            model="synthetic",
            frame_rate=50.0,
            output_dir=str(tmp_path / "out"),
            dim=16,
            seed=11,
            utterances=tuple(
                SyntheticUtterance(utt_id=f"utt{i:04d}", duration_s=float(rng.uniform(0.5, 3.0)))
                for i in range(100)
            ),
        )
        manifest_path = extract(spec)
        manifest = disctok.read_manifest(manifest_path)  # validates schema + invariants
        assert len(manifest.entries) == 100
        for entry in manifest.entries:
            matrix = disctok.read_embedding(entry.path)  # validates format + payload
            assert matrix.dim == 16
            assert matrix.frame_rate == 50.0
            assert matrix.frames == entry.frames
            assert abs(entry.duration_s - entry.frames / entry.frame_rate) <= 1.0 / 50.0
        print("[acceptance] PASS  extractor contract (100 synthetic utterances)")

    def test_deterministic_given_seed(self, tmp_path):
        spec_a = synthetic_spec(tmp_path / "a")
        spec_b = synthetic_spec(tmp_path / "b")
        manifest_a = extract(spec_a)
        manifest_b = extract(spec_b)
        for entry_a, entry_b in zip(
            disctok.read_manifest(manifest_a).entries, disctok.read_manifest(manifest_b).entries
        ):
            bytes_a = disctok.read_embedding(entry_a.path).data.tobytes()
            bytes_b = disctok.read_embedding(entry_b.path).data.tobytes()
            assert bytes_a == bytes_b

    def test_order_independent_per_utterance_streams(self, tmp_path):
        full = synthetic_spec(tmp_path / "full", count=3)
        extract(full)
        # regenerate only the last utterance in a fresh spec listing it at index 2
        again = synthetic_spec(tmp_path / "again", count=3)
        extract(again)
        last_a = disctok.read_embedding(tmp_path / "full" / "out" / "utt0002.dtek")
        last_b = disctok.read_embedding(tmp_path / "again" / "out" / "utt0002.dtek")
        assert last_a.data.tobytes() == last_b.data.tobytes()

    def test_known_cluster_structure_survives_quantization(self, tmp_path):
        spec = synthetic_spec(tmp_path, count=4, dim=8, duration=4.0)
        manifest = disctok.read_manifest(extract(spec))
        frames = disctok.collect_frames(manifest)
        book = disctok.train_kmeans(frames, spec.clusters, disctok.KMeansConfig(seed=1))
        merged = None
        for entry in manifest.entries:
            matrix = disctok.read_embedding(entry.path)
            seq = disctok.assign(book, matrix)
            table = disctok.build_contingency(seq, np.asarray(entry.phone_alignment))
            merged = table if merged is None else disctok.merge_tables(merged, table)
        assert disctok.pnmi(merged) >= 0.99

    def test_phone_table_sidecar_written(self, tmp_path):
        spec = synthetic_spec(tmp_path, count=2)
        manifest_path = extract(spec)
        manifest = disctok.read_manifest(manifest_path)
        assert manifest.phone_table == [f"c{i}" for i in range(spec.clusters)]

    def test_workers_give_identical_output(self, tmp_path):
        serial = extract(synthetic_spec(tmp_path / "s", count=6), workers=1)
        threaded = extract(synthetic_spec(tmp_path / "t", count=6), workers=4)
        for a, b in zip(disctok.read_manifest(serial).entries,
                        disctok.read_manifest(threaded).entries):
            assert disctok.read_embedding(a.path).data.tobytes() == \
                   disctok.read_embedding(b.path).data.tobytes()


class TestModelMode:
    def test_missing_packages_named_in_error(self, tmp_path):
        spec = ExtractionSpec(
            model="wavlm-large", frame_rate=50.0, output_dir=str(tmp_path),
            audio=(str(tmp_path / "a.wav"),),
        )
        importable = all(
            __import__("importlib").util.find_spec(p) is not None
            for p in ("torch", "torchaudio", "transformers")
        )
        if importable:
            pytest.skip("model packages installed; error path not reachable")
        with pytest.raises(MissingAssetError) as info:
            extract_with_model(spec, spec.audio[0])
        assert "torch" in str(info.value)

    def test_vq_wav2vec_needs_explicit_checkpoint(self, tmp_path):
        spec = ExtractionSpec(
            model="vq-wav2vec", frame_rate=100.0, output_dir=str(tmp_path),
            audio=("a.wav",),
        )
        with pytest.raises(MissingAssetError) as info:
            extract(spec)
        assert "checkpoint" in str(info.value)


class TestCli:
    def test_synthetic_run(self, tmp_path, capsys):
        doc = {
            "model": "synthetic",
            "frame_rate": 50.0,
            "output_dir": str(tmp_path / "out"),
            "dim": 8,
            "seed": 5,
            "utterances": [{"utt_id": f"u{i}", "duration_s": 1.0} for i in range(4)],
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(doc))
        code = main(["--spec", str(spec_path)])
        captured = capsys.readouterr()
        assert code == 0
        report = json.loads(captured.out)
        assert report["utterances"] == 4
        manifest = disctok.read_manifest(report["manifest"])
        assert len(manifest.entries) == 4
        assert "resolved_spec" in captured.err

    def test_bad_spec_exits_2(self, tmp_path, capsys):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({"model": "synthetic", "frame_rate": 50.0}))
        assert main(["--spec", str(spec_path)]) == 2

    def test_missing_assets_exit_3(self, tmp_path, capsys):
        doc = {
            "model": "vq-wav2vec",
            "frame_rate": 100.0,
            "output_dir": str(tmp_path / "out"),
            "audio": ["missing.wav"],
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(doc))
        assert main(["--spec", str(spec_path)]) == 3
