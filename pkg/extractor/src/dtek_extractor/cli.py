"""Command line: dtek-extract --spec spec.json [--workers N]."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import MissingAssetError, SpecError
from .extract import extract
from .spec import load_spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dtek-extract",
        description="Dump speech-encoder (or synthetic) embeddings as .dtek files "
        "plus a JSON-lines manifest.",
    )
    parser.add_argument("--spec", required=True, help="JSON extraction spec")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(sys.argv[1:] if argv is None else argv)
    try:
        spec = load_spec(args.spec)
        print(json.dumps({"resolved_spec": spec.__dict__}, default=str, sort_keys=True),
              file=sys.stderr)
        manifest = extract(spec, workers=args.workers)
    except SpecError as exc:
        print(f"dtek-extract: error: {exc}", file=sys.stderr)
        return 2
    except (MissingAssetError, OSError) as exc:
        print(f"dtek-extract: error: {exc}", file=sys.stderr)
        return 3
    utterances = len(spec.utterances) if spec.model == "synthetic" else len(spec.audio)
    json.dump({"manifest": str(manifest), "utterances": utterances}, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
