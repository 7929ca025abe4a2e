"""Command-line front end.

Commands: texture, transfer, gram-lab, selfcheck. Every synthesis output
is accompanied by a manifest (resolved config + input digests) that is
sufficient to reproduce the output bit-identically. HISTOTEX_THREADS caps
internal worker counts and never changes results; the reference loops are
sequential.

Exit codes: 0 ok, 2 bad arguments, 3 I/O failure, 4 numerical abort,
5 failed selfcheck.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, gram_lab, selfcheck
from .images import file_digest, load_image, load_mask, save_image
from .network import ConfigError, WeightFormatError, load_network, random_filter_bank
from .synthesis import NumericalAbort, SynthesisConfig, style_transfer, synthesize_texture
from .tensor_ops import ShapeError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_SELFCHECK = 5


def thread_cap() -> int:
    """Worker-count cap from HISTOTEX_THREADS; informational only for the
    sequential reference implementation."""
    raw = os.environ.get("HISTOTEX_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"size must look like 256x256, got {text!r}") from exc


def _add_shared(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (SynthesisConfig fields)")
    p.add_argument("--seed", type=int, help="optimization seed")
    p.add_argument("--weights", help="weight file (.htxw); omitted = random bank")
    p.add_argument("--backend-seed", type=int, default=0,
                   help="seed for the random filter bank backend")
    p.add_argument("--report", help="write the per-iteration loss report (JSON lines)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--pyramid-levels", type=int)
    p.add_argument("--out", required=True, help="output PNG path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="histotex")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("texture", help="synthesize a texture from an exemplar")
    p.add_argument("--source", required=True, help="exemplar image (PNG)")
    p.add_argument("--size", type=_parse_size, help="output size, e.g. 256x256")
    _add_shared(p)

    p = sub.add_parser("transfer", help="transfer a style onto a content image")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--style-mask", help="indexed mask for the style image")
    p.add_argument("--out-mask", help="indexed mask for the output image")
    _add_shared(p)

    p = sub.add_parser("gram-lab", help="equal-Gram drift experiments")
    p.add_argument("--dims", default="1,2,4,8,16",
                   help="comma-separated feature dimensions")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--long", action="store_true",
                   help="allow the long-running dimensions 32 and 64")
    p.add_argument("--fig3", action="store_true",
                   help="print the closed-form 1-feature drift pair")
    p.add_argument("--out", help="write the JSON experiment report here")

    p = sub.add_parser("selfcheck", help="gradient and histogram oracle suite")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--seeds", type=int, default=20,
                   help="number of gradient-check seeds")
    p.add_argument("--pairs", type=int, default=50,
                   help="number of histogram oracle pairs")
    return parser


def _resolve_config(args) -> SynthesisConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    config = SynthesisConfig.from_dict(base)
    if args.seed is not None:
        config.seed = args.seed
    if args.iterations is not None:
        config.iterations = args.iterations
    if args.pyramid_levels is not None:
        config.pyramid_levels = args.pyramid_levels
    if getattr(args, "size", None) is not None:
        config.output_size = args.size
    return SynthesisConfig.from_dict(config.to_dict())  # re-validate


def _load_backend(args):
    if args.weights:
        net = load_network(args.weights)
        backend = {"kind": "weights", "path": args.weights,
                   "digest": file_digest(args.weights)}
    else:
        net = random_filter_bank(args.backend_seed)
        backend = {"kind": "random_filter_bank", "seed": args.backend_seed}
    return net, backend


def _manifest_path(out_path: str) -> str:
    root, _ = os.path.splitext(out_path)
    return root + ".manifest.json"


def _write_outputs(args, image, report, config, backend, inputs, command):
    save_image(image, args.out)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "backend": backend,
        "inputs": {name: file_digest(path) for name, path in inputs.items()},
        "output": {"path": args.out, "digest": file_digest(args.out)},
    }
    with open(_manifest_path(args.out), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.report:
        with open(args.report, "w") as fh:
            for row in report:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def cmd_texture(args) -> int:
    config = _resolve_config(args)
    net, backend = _load_backend(args)
    source = load_image(args.source)
    image, report = synthesize_texture(source, net, config)
    _write_outputs(args, image, report, config, backend,
                   {"source": args.source}, "texture")
    return EXIT_OK


def cmd_transfer(args) -> int:
    if (args.style_mask is None) != (args.out_mask is None):
        raise UsageError("--style-mask and --out-mask must be given together")
    config = _resolve_config(args)
    net, backend = _load_backend(args)
    content = load_image(args.content)
    style = load_image(args.style)
    style_mask = load_mask(args.style_mask) if args.style_mask else None
    out_mask = load_mask(args.out_mask) if args.out_mask else None
    image, report = style_transfer(content, style, net, config,
                                   style_mask=style_mask, out_mask=out_mask)
    inputs = {"content": args.content, "style": args.style}
    if style_mask is not None:
        inputs["style_mask"] = args.style_mask
        inputs["out_mask"] = args.out_mask
    _write_outputs(args, image, report, config, backend, inputs, "transfer")
    return EXIT_OK


def cmd_gram_lab(args) -> int:
    if args.fig3:
        mu1 = 1.0 / np.sqrt(2.0)
        mu2 = gram_lab.matched_mean_for_target_variance(mu1, 0.0, 0.5)
        print(f"input distribution:  mean {mu1:.6f}, deviation 0.000000")
        print(f"output distribution: mean {mu2:.6f}, deviation 0.500000")
        print(f"shared normalized Gram value: {mu1 ** 2:.6f}")
        if not args.out:
            return EXIT_OK
    try:
        dims = [int(d) for d in args.dims.split(",") if d]
    except ValueError:
        raise UsageError(f"bad --dims value {args.dims!r}")
    if not dims or any(d < 1 for d in dims):
        raise UsageError("dims must be positive integers")
    if any(d > 16 for d in dims) and not args.long:
        raise UsageError("dimensions above 16 require --long")
    records = gram_lab.run_experiment(dims, args.instances, args.seed)
    doc = {
        "dims": dims,
        "instances": args.instances,
        "seed": args.seed,
        "solver": {"method": "levenberg_marquardt", "restarts": 20,
                   "max_iterations": 500},
        "records": records,
    }
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    worst = max(r["residual"] for r in records)
    print(f"{len(records)} instances, worst residual {worst:.3e}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    checks = selfcheck.run_all(seeds=range(args.seeds), pairs=args.pairs,
                               fault=os.environ.get("HISTOTEX_FAULT") or None)
    if args.json:
        print(json.dumps(checks, indent=2, sort_keys=True))
    else:
        for c in checks:
            status = "ok  " if c["passed"] else "FAIL"
            print(f"[{status}] {c['name']}: max error {c['max_error']:.3e} "
                  f"(tolerance {c['tolerance']:.3e})")
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_SELFCHECK


class UsageError(Exception):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    handlers = {
        "texture": cmd_texture,
        "transfer": cmd_transfer,
        "gram-lab": cmd_gram_lab,
        "selfcheck": cmd_selfcheck,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ShapeError, WeightFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
