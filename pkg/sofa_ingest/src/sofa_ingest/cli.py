"""Command-line entry points: ingest one SOFA file, or emit the HUTUBS
split manifest."""

from __future__ import annotations

import argparse
import sys

from .sofa import SofaError, convert, emit_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sofa-ingest",
        description="Convert SOFA HRTF files into hrtfnp raw containers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert one SOFA file")
    p.add_argument("--sofa", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subject-id", required=True)

    p = sub.add_parser("manifest", help="write the HUTUBS split manifest")
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ingest":
            meta = convert(args.sofa, args.out, args.subject_id)
            print(
                f"converted {meta['measurements']} positions x {meta['taps']} taps "
                f"at {meta['sampling_rate_hz']} Hz -> {args.out}"
            )
        else:
            emit_manifest(args.out)
            print(f"wrote HUTUBS split manifest -> {args.out}")
    except (SofaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
