"""Command-line front end: `export` writes the engine weight file,
`fixture` writes the reference-activation JSON."""

from __future__ import annotations

import argparse
import sys

from .exporter import CheckpointError, emit_fixture, export_weights


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vggxport")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="convert a checkpoint to a weight file")
    p.add_argument("--checkpoint", required=True, help="VGG-19 state dict (.pth)")
    p.add_argument("--out", required=True, help="output weight file (.htxw)")

    p = sub.add_parser("fixture", help="emit reference activations as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="32x32 RGB fixture image")
    p.add_argument("--out", required=True, help="output JSON path")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        if args.command == "export":
            summary = export_weights(args.checkpoint, args.out)
            for row in summary["layers"]:
                shape = "x".join(map(str, row["shape"])) if row["shape"] else "-"
                print(f"{row['layer']:<10} {shape}")
            print(f"wrote {summary['path']}  sha256 {summary['digest']}")
        else:
            summary = emit_fixture(args.checkpoint, args.image, args.out)
            print(f"wrote {summary['path']}  sha256 {summary['digest']}  "
                  f"tags {','.join(summary['tags'])}")
        return 0
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
