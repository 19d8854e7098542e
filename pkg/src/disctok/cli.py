"""Command-line surface binding the toolkit into manifest-driven stages.

Subcommands: train-quantizer, encode, decode, augment, stats, inspect.
Every command echoes its resolved configuration to stderr as one JSON
line and exits 0 on success, 2 on usage/configuration errors and 3 on
data/format errors. Randomized stages require an explicit --seed.

A ``--config FILE`` of ``key=value`` lines (kebab- or snake-case keys,
``#`` comments) supplies defaults for any flag of the subcommand;
explicit flags win. Unknown keys are rejected.

Outputs are written atomically (temp file + rename); logs go to stderr
and reports to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import augment as augment_mod
from . import embio, frontend, metrics, quantize, tokens
from .errors import (
    CapacityError,
    ConfigurationError,
    CorruptionError,
    DegenerateCodebookWarning,
    FormatError,
    SchemaError,
    TokenRangeError,
    UndefinedMetricError,
    ValidationError,
)


def _error(message) -> None:
    print(f"disctok: error: {message}", file=sys.stderr)


_CONFIG_EXIT = (ConfigurationError,)
_DATA_EXIT = (
    FormatError,
    CorruptionError,
    SchemaError,
    ValidationError,
    CapacityError,
    TokenRangeError,
    UndefinedMetricError,
)


def _emit(report: dict) -> None:
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _echo_config(command: str, args: argparse.Namespace) -> None:
    resolved = {
        key: (str(value) if isinstance(value, Path) else value)
        for key, value in sorted(vars(args).items())
        if key not in ("func", "command")
    }
    print(json.dumps({"command": command, "resolved_config": resolved}, sort_keys=True),
          file=sys.stderr)


def _require_seed(args) -> int:
    if args.seed is None:
        raise ConfigurationError("this stage is randomized: pass an explicit --seed")
    return int(args.seed)


def _load_config_file(path: str, known: set[str]) -> dict:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in known:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        values[dest] = value
    return values


def _dtts_inputs(in_dir: str) -> list[Path]:
    paths = sorted(Path(in_dir).glob("*.dtts"))
    if not paths:
        raise CapacityError(f"no .dtts files found in {in_dir}")
    return paths


def _map_utterances(worker, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, items))
    return [worker(item) for item in items]


# ---------------------------------------------------------------- train


def cmd_train_quantizer(args) -> int:
    seed = _require_seed(args)
    manifest = embio.read_manifest(args.manifest)
    subset_summary = None
    if args.target_hours is not None:
        manifest = embio.sample_subset(manifest, args.target_hours, seed)
        subset_summary = {
            "target_hours": args.target_hours,
            "selected_utterances": len(manifest),
            "selected_hours": manifest.total_duration_s / 3600.0,
        }
    frames = embio.collect_frames(manifest, sampler=args.frame_policy, seed=seed)
    config = quantize.KMeansConfig(
        seed=seed,
        max_iters=args.max_iters,
        tolerance=args.tolerance,
        init=args.init,
        mode=args.mode,
        batch_size=args.batch_size,
        workers=args.workers,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateCodebookWarning)
        if args.kind == "kmeans":
            book = quantize.train_kmeans(frames, args.k, config)
        elif args.kind == "grouped":
            if args.groups is None:
                raise ConfigurationError("grouped training needs --groups")
            book = quantize.train_grouped(frames, args.groups, args.k, config)
        else:
            if args.stages is None:
                raise ConfigurationError("rvq training needs --stages")
            book = quantize.train_rvq(frames, args.stages, args.k, config)
    degenerate = [w for w in caught if issubclass(w.category, DegenerateCodebookWarning)]
    if degenerate:
        # a degenerate codebook is useless at corpus scale: fail instead of writing it
        raise CapacityError(str(degenerate[0].message))
    metadata = {
        "seed": seed,
        "kind": args.kind,
        "max_iters": args.max_iters,
        "tolerance": args.tolerance,
        "init": args.init,
        "mode": args.mode,
        "batch_size": args.batch_size,
        "frame_policy": args.frame_policy,
        "frames_used": int(frames.shape[0]),
    }
    if subset_summary is not None:
        metadata["subset"] = subset_summary
    quantize.save_codebook(book, args.out, metadata=metadata)
    _, parts = quantize.codebook_parts(book)
    _emit(
        {
            "codebook": str(args.out),
            "kind": args.kind,
            "entries": [p.entries for p in parts],
            "dim": parts[0].dim if args.kind != "grouped" else sum(p.dim for p in parts),
            "frames_used": int(frames.shape[0]),
            "inertia_trace": [list(p.inertia_trace) for p in parts],
            "subset": subset_summary,
        }
    )
    return 0


# ---------------------------------------------------------------- encode


def _encode_one(book, matrix: embio.EmbeddingMatrix, use_stages) -> tokens.TokenSequence:
    if isinstance(book, quantize.ResidualCodebookStack):
        return quantize.rvq_encode(book, matrix, use_stages)
    if isinstance(book, quantize.GroupedCodebook):
        return quantize.assign_grouped(book, matrix)
    return quantize.assign(book, matrix)


def cmd_encode(args) -> int:
    book = quantize.load_codebook(args.codebook)
    manifest = embio.read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry):
        matrix = embio.read_embedding(entry.path)
        seq = _encode_one(book, matrix, args.use_stages)
        destination = out_dir / f"{entry.utt_id}.dtts"
        tokens.write_tokens(seq, destination)
        return {
            "utt_id": entry.utt_id,
            "path": str(destination),
            "frames": seq.frames,
            "frame_rate": seq.frame_rate,
            "vocab_sizes": list(seq.vocab_sizes),
            "bandwidth_kbps": tokens.format_kbps(
                tokens.bandwidth_kbps(seq.vocab_sizes, seq.frame_rate)
            ),
        }

    results = _map_utterances(work, manifest.entries, args.workers)
    rates = {r["frame_rate"] for r in results}
    report = {
        "codebook": str(args.codebook),
        "utterances": results,
        "streams": len(results[0]["vocab_sizes"]) if results else 0,
        "vocab_sizes": results[0]["vocab_sizes"] if results else [],
        "frame_rate": rates.pop() if len(rates) == 1 else None,
        "bandwidth_kbps": results[0]["bandwidth_kbps"] if results and len({r["bandwidth_kbps"] for r in results}) == 1 else None,
    }
    _emit(report)
    return 0


# ---------------------------------------------------------------- decode


def cmd_decode(args) -> int:
    book = quantize.load_codebook(args.codebook)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(path: Path):
        seq = tokens.read_tokens(path)
        matrix = quantize.reconstruct(book, seq)
        destination = out_dir / (path.stem + ".dtek")
        embio.write_embedding(matrix, destination)
        return {"utt_id": path.stem, "path": str(destination), "frames": matrix.frames,
                "dim": matrix.dim}

    results = _map_utterances(work, _dtts_inputs(args.in_dir), args.workers)
    _emit({"codebook": str(args.codebook), "utterances": results})
    return 0


# ---------------------------------------------------------------- augment


def _augment_config(args, seed: int) -> augment_mod.AugmentationConfig:
    return augment_mod.AugmentationConfig(
        warp_factor=args.warp_factor,
        time_mask_count_cap=args.time_mask_count_cap,
        time_mask_frac=args.time_mask_frac,
        time_mask_width_cap=args.time_mask_width_cap,
        time_mask_budget_frac=args.time_mask_budget_frac,
        emb_mask_max_stride=args.emb_mask_max_stride,
        emb_mask_repeats=args.emb_mask_repeats,
        noise_prob=args.noise_prob,
        sample_prob=args.sample_prob,
        mask_value=args.mask_value,
        frame_dup_prob=args.frame_dup_prob,
        seed=seed,
    )


def cmd_augment(args) -> int:
    seed = _require_seed(args)
    config = _augment_config(args, seed)
    table = frontend.load_table(args.table) if args.table else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(path: Path):
        utt_id = path.stem
        seq = tokens.read_tokens(path)
        embed = None
        if table is not None:
            if seq.streams != 1:
                raise ConfigurationError(
                    f"{utt_id}: --table drives a single-stream embed hook, got {seq.streams} streams"
                )
            embed = lambda s: frontend.embed_tokens(s, table)
        result = augment_mod.augment_sample(
            seq, config, embed=embed, rng=augment_mod.sample_rng(seed, utt_id)
        )
        destination = out_dir / f"{utt_id}.dtts"
        tokens.write_tokens(result.tokens, destination)
        record = {
            "utt_id": utt_id,
            "path": str(destination),
            "applied": result.applied,
            "frames_out": result.tokens.frames,
            "time_masks": [[m.start, m.width] for m in result.time_masks],
            "duplicated_frames": result.duplicated_frames,
        }
        if result.features is not None:
            feat_path = out_dir / f"{utt_id}.features.dtek"
            embio.write_embedding(result.features, feat_path)
            record["features_path"] = str(feat_path)
        return record

    results = _map_utterances(work, _dtts_inputs(args.in_dir), args.workers)
    _emit({"seed": seed, "utterances": results})
    return 0


# ---------------------------------------------------------------- stats


def cmd_stats(args) -> int:
    alignments = {}
    phone_table = None
    if args.manifest:
        manifest = embio.read_manifest(args.manifest)
        phone_table = manifest.phone_table
        alignments = {
            e.utt_id: e.phone_alignment
            for e in manifest.entries
            if e.phone_alignment is not None
        }
    if args.pnmi and not alignments:
        raise ConfigurationError("--pnmi needs a --manifest with phone alignments")

    paths = _dtts_inputs(args.in_dir)
    per_utt = {}
    corpus_tables: list[metrics.ContingencyTable | None] = []
    corpus_counts: list[np.ndarray] = []
    vocab_sizes = None
    frame_rate = None
    total_frames = 0

    for path in paths:
        utt_id = path.stem
        seq = tokens.read_tokens(path)
        if vocab_sizes is None:
            vocab_sizes = seq.vocab_sizes
            frame_rate = seq.frame_rate
            corpus_counts = [np.zeros(v, dtype=np.int64) for v in vocab_sizes]
            corpus_tables = [None] * seq.streams
        elif seq.vocab_sizes != vocab_sizes or seq.frame_rate != frame_rate:
            raise SchemaError(f"{utt_id}: stream layout differs from the rest of the corpus")
        total_frames += seq.frames
        entry = {"frames": seq.frames, "streams": []}
        for s in range(seq.streams):
            stats = metrics.codebook_stats(seq, s) if seq.frames else None
            stream_entry = {
                "utilization": None if stats is None else stats.utilization,
                "perplexity": None if stats is None else stats.perplexity,
            }
            corpus_counts[s] += np.bincount(seq.tokens[s], minlength=vocab_sizes[s])
            if args.pnmi:
                if utt_id not in alignments:
                    raise ConfigurationError(f"--pnmi: no alignment for utterance {utt_id}")
                table = metrics.build_contingency(seq, alignments[utt_id], s)
                corpus_tables[s] = (
                    table if corpus_tables[s] is None else metrics.merge_tables(corpus_tables[s], table)
                )
                stream_entry["pnmi"] = metrics.pnmi(table)
            entry["streams"].append(stream_entry)
        per_utt[utt_id] = entry

    corpus = {
        "utterances": len(paths),
        "frames": total_frames,
        "frame_rate": frame_rate,
        "vocab_sizes": list(vocab_sizes),
        "bandwidth_kbps": tokens.format_kbps(tokens.bandwidth_kbps(vocab_sizes, frame_rate)),
        "streams": [],
    }
    for s, counts in enumerate(corpus_counts):
        used = counts[counts > 0]
        entropy = float(-(used / total_frames * np.log2(used / total_frames)).sum()) if total_frames else 0.0
        stream_entry = {
            "utilization": float((counts > 0).sum() / vocab_sizes[s]) if total_frames else None,
            "perplexity": float(2.0**entropy) if total_frames else None,
        }
        if args.pnmi and corpus_tables[s] is not None:
            stream_entry["pnmi"] = metrics.pnmi(corpus_tables[s])
        corpus["streams"].append(stream_entry)
    if phone_table is not None:
        corpus["phone_table_size"] = len(phone_table)
    _emit({"per_utterance": per_utt, "corpus": corpus})
    return 0


# ---------------------------------------------------------------- inspect


def _inspect_one(path: Path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == embio.MAGIC:
        matrix = embio.read_embedding(path)
        return {"path": str(path), "format": "dtek", "frames": matrix.frames,
                "dim": matrix.dim, "frame_rate": matrix.frame_rate}
    if magic == tokens.MAGIC:
        seq = tokens.read_tokens(path)
        return {"path": str(path), "format": "dtts", "frames": seq.frames,
                "streams": seq.streams, "vocab_sizes": list(seq.vocab_sizes),
                "frame_rate": seq.frame_rate,
                "bandwidth_kbps": tokens.format_kbps(
                    tokens.bandwidth_kbps(seq.vocab_sizes, seq.frame_rate))}
    if magic == quantize.MAGIC:
        book = quantize.load_codebook(path)
        kind, parts = quantize.codebook_parts(book)
        return {"path": str(path), "format": "dtcb", "kind": kind,
                "entries": [p.entries for p in parts],
                "dim": sum(p.dim for p in parts) if kind == "grouped" else parts[0].dim}
    if magic == frontend.MAGIC:
        table = frontend.load_table(path)
        return {"path": str(path), "format": "dtem", "vocab": table.vocab,
                "out_dim": table.out_dim, "init_mode": table.init_mode}
    raise FormatError(f"{path}: unrecognized magic {magic!r}")


def cmd_inspect(args) -> int:
    _emit({"files": [_inspect_one(Path(p)) for p in args.paths]})
    return 0


# ---------------------------------------------------------------- parser


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="key=value defaults file")
    sub.add_argument("--workers", type=int, default=1, help="parallel utterance workers")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="disctok",
        description="Discrete speech token toolkit: train quantizers, encode/decode, "
        "augment and score token streams.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    by_name: dict[str, argparse.ArgumentParser] = {}

    train = subs.add_parser("train-quantizer", help="train a codebook from a manifest")
    train.add_argument("--manifest")
    train.add_argument("--kind", choices=("kmeans", "grouped", "rvq"), default="kmeans")
    train.add_argument("--k", type=int, help="entries (per group/stage)")
    train.add_argument("--groups", type=int, default=None)
    train.add_argument("--stages", type=int, default=None)
    train.add_argument("--max-iters", type=int, default=100)
    train.add_argument("--tolerance", type=float, default=1e-6)
    train.add_argument("--init", choices=("kmeans++", "random"), default="kmeans++")
    train.add_argument("--mode", choices=("lloyd", "minibatch"), default="lloyd")
    train.add_argument("--batch-size", type=int, default=1024)
    train.add_argument("--frame-policy", default="all", help='"all" or "bernoulli(p)"')
    train.add_argument("--target-hours", type=float, default=None,
                       help="train on a random subset of this many hours")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out")
    _add_common(train)
    train.set_defaults(func=cmd_train_quantizer)
    by_name["train-quantizer"] = train

    encode = subs.add_parser("encode", help="quantize embeddings into token files")
    encode.add_argument("--codebook")
    encode.add_argument("--manifest")
    encode.add_argument("--out-dir")
    encode.add_argument("--use-stages", type=int, default=None,
                        help="rvq: encode with this many stages")
    _add_common(encode)
    encode.set_defaults(func=cmd_encode)
    by_name["encode"] = encode

    decode = subs.add_parser("decode", help="reconstruct embeddings from token files")
    decode.add_argument("--codebook")
    decode.add_argument("--in-dir")
    decode.add_argument("--out-dir")
    _add_common(decode)
    decode.set_defaults(func=cmd_decode)
    by_name["decode"] = decode

    aug = subs.add_parser("augment", help="apply the augmentation policy to token files")
    aug.add_argument("--in-dir")
    aug.add_argument("--out-dir")
    aug.add_argument("--table", default=None,
                     help=".dtem embedding table enabling the feature stage")
    aug.add_argument("--warp-factor", type=int, default=80)
    aug.add_argument("--time-mask-count-cap", type=int, default=10)
    aug.add_argument("--time-mask-frac", type=float, default=0.0015)
    aug.add_argument("--time-mask-width-cap", type=int, default=100)
    aug.add_argument("--time-mask-budget-frac", type=float, default=0.15)
    aug.add_argument("--emb-mask-max-stride", type=int, default=27)
    aug.add_argument("--emb-mask-repeats", type=int, default=2)
    aug.add_argument("--noise-prob", type=float, default=0.25)
    aug.add_argument("--sample-prob", type=float, default=0.9)
    aug.add_argument("--mask-value", type=int, default=0)
    aug.add_argument("--frame-dup-prob", type=float, default=0.0)
    aug.add_argument("--seed", type=int, default=None)
    _add_common(aug)
    aug.set_defaults(func=cmd_augment)
    by_name["augment"] = aug

    stats = subs.add_parser("stats", help="token-quality metrics as JSON")
    stats.add_argument("--in-dir")
    stats.add_argument("--manifest", default=None, help="manifest with phone alignments")
    stats.add_argument("--pnmi", action="store_true")
    _add_common(stats)
    stats.set_defaults(func=cmd_stats)
    by_name["stats"] = stats

    inspect = subs.add_parser("inspect", help="print file headers as JSON")
    inspect.add_argument("paths", nargs="+")
    _add_common(inspect)
    inspect.set_defaults(func=cmd_inspect)
    by_name["inspect"] = inspect

    return parser, by_name


# options every command must end up with, whether from flags or a config file
_REQUIRED = {
    "train-quantizer": ("manifest", "k", "out"),
    "encode": ("codebook", "manifest", "out_dir"),
    "decode": ("codebook", "in_dir", "out_dir"),
    "augment": ("in_dir", "out_dir"),
    "stats": ("in_dir",),
    "inspect": (),
}


def _check_required(args) -> None:
    for dest in _REQUIRED[args.command]:
        if getattr(args, dest) is None:
            raise ConfigurationError(f"--{dest.replace('_', '-')} is required")


_CONFIG_TYPES = {
    "k": int, "groups": int, "stages": int, "max_iters": int, "batch_size": int,
    "workers": int, "seed": int, "use_stages": int, "warp_factor": int,
    "time_mask_count_cap": int, "time_mask_width_cap": int, "emb_mask_max_stride": int,
    "emb_mask_repeats": int, "mask_value": int,
    "tolerance": float, "target_hours": float, "time_mask_frac": float,
    "time_mask_budget_frac": float, "noise_prob": float, "sample_prob": float,
    "frame_dup_prob": float,
    "pnmi": lambda v: v.lower() in ("1", "true", "yes", "on"),
}


def _apply_config_file(parser, sub, argv: list[str], args: argparse.Namespace):
    known = {
        action.dest
        for action in sub._actions
        if action.dest not in ("help", "config", "func", "command")
    }
    raw = _load_config_file(args.config, known)
    typed = {}
    for dest, text in raw.items():
        caster = _CONFIG_TYPES.get(dest, str)
        try:
            typed[dest] = caster(text)
        except ValueError as exc:
            raise ConfigurationError(f"config key {dest}: bad value {text!r} ({exc})") from exc
    sub.set_defaults(**typed)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, by_name = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            args = _apply_config_file(parser, by_name[args.command], argv, args)
        _check_required(args)
        _echo_config(args.command, args)
        return args.func(args)
    except _CONFIG_EXIT as exc:
        _error(exc)
        return 2
    except _DATA_EXIT as exc:
        _error(exc)
        return 3
    except OSError as exc:
        _error(exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
