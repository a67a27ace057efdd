"""``ardn`` command line: train, denoise, eval, corrupt, heatmap.

Exit status: 0 success, 1 usage error, 2 runtime error.  Progress goes to
stderr; CSV and PGM artifacts go to the files named on the command line.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .corruption import GAUSSIAN, POISSON, NoiseSpec, corrupt
from .dataio import PGMError, load_manifest, read_pgm, write_pgm
from .evaluation import evaluate, export_attention_heatmaps
from .model import ModelConfig, denoise_image
from .training import CheckpointError, SchedulerState, load_checkpoint, train

USAGE_ERROR = 1
RUNTIME_ERROR = 2

_DTYPES = {"f32": np.float32, "f64": np.float64}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    return lo, hi


def _add_noise_flags(p, blind: bool = False, level: bool = True):
    p.add_argument("--noise", choices=[GAUSSIAN, POISSON], default=GAUSSIAN, help="corruption family")
    if level:
        p.add_argument("--sigma", type=float, help="gaussian sigma on the 0-255 scale")
        p.add_argument("--peak", type=float, help="poisson peak")
    if blind:
        p.add_argument("--blind", type=_range, metavar="LO:HI",
                       help="sample the level uniformly per patch (blind/FARCNN training)")


def _noise_spec(args, allow_blind: bool = False) -> NoiseSpec:
    try:
        if allow_blind and getattr(args, "blind", None) is not None:
            return NoiseSpec(args.noise, blind=args.blind)
        level = args.sigma if args.noise == GAUSSIAN else args.peak
        if level is None:
            flag = "--sigma" if args.noise == GAUSSIAN else "--peak"
            raise UsageError(f"{args.noise} noise needs {flag}" + (" or --blind" if allow_blind else ""))
        return NoiseSpec(args.noise, level=level)
    except ValueError as e:
        raise UsageError(f"ardn: error: {e}") from None


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand.  The copies on
    # each subcommand default to SUPPRESS so they never overwrite a value
    # given before it.
    def add_global(p, suppress):
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        p.add_argument("--seed", type=int, help="run / corruption / evaluation seed", **kw)
        p.add_argument("--precision", choices=sorted(_DTYPES), help="compute precision", **kw)
        p.add_argument("-v", "--verbose", action="store_true", **kw)

    common = argparse.ArgumentParser(add_help=False)
    add_global(common, suppress=True)

    parser = _Parser(prog="ardn", description="Attention-residual CNN denoiser")
    add_global(parser, suppress=False)
    parser.set_defaults(seed=0, precision="f32", verbose=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train a model on a manifest of PGM images")
    p.add_argument("--data", required=True, help="training manifest")
    p.add_argument("--val-data", help="validation manifest (default: the training manifest)")
    _add_noise_flags(p, blind=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--iters", type=int, default=2000, help="iterations per epoch")
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--layers", type=int, default=20)
    p.add_argument("--filters", type=int, default=64)
    p.add_argument("--border", type=int, default=20, help="loss mask border in pixels")
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--out", required=True, help="checkpoint / metrics directory")

    p = sub.add_parser("denoise", parents=[common], help="denoise one PGM image")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=128)
    p.add_argument("--overlap", type=int, default=20)
    p.add_argument("--pad", choices=["reflect", "zero"], default="reflect")

    p = sub.add_parser("eval", parents=[common], help="PSNR report over a manifest and noise levels")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_noise_flags(p, level=False)
    p.add_argument("--levels", type=_float_list, required=True, help="e.g. 10,30,50,70")
    p.add_argument("--report", required=True, help="output CSV")
    p.add_argument("--summary", help="also write the aligned summary table here")
    p.add_argument("--method", default="ARCNN", help="published method shown as reference column")
    p.add_argument("--tile", type=int, default=128)
    p.add_argument("--overlap", type=int, default=20)

    p = sub.add_parser("corrupt", parents=[common], help="add synthetic noise to a PGM image")
    p.add_argument("--in", dest="input", required=True)
    _add_noise_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("heatmap", parents=[common], help="export attention weights as PGM heat maps")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--layers", type=_int_list, default=[1, 8, 20])
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _load_model(path, precision):
    return load_checkpoint(path).model.astype(_DTYPES[precision])


def cmd_train(args) -> int:
    spec = _noise_spec(args, allow_blind=True)
    manifest = load_manifest(args.data, "train")
    val = load_manifest(args.val_data, "val") if args.val_data else None
    config = ModelConfig.reduced(args.layers, args.filters)
    resume = load_checkpoint(args.resume) if args.resume else None
    print(f"training {config} on {len(manifest)} images, {spec.describe()}", file=sys.stderr)
    report = train(
        config, manifest, spec, args.epochs, args.iters, args.batch, args.seed, args.out,
        lr=args.lr, dtype=_DTYPES[args.precision], border=args.border, val_manifest=val,
        scheduler=SchedulerState(patience=args.patience), resume=resume,
    )
    if report.epoch_losses:
        print(f"final loss {report.epoch_losses[-1]:.6g}, val PSNR {report.val_psnr[-1]:.3f} dB", file=sys.stderr)
    return 0


def cmd_denoise(args) -> int:
    model = _load_model(args.model, args.precision)
    image = read_pgm(args.input)
    out = denoise_image(model, image.astype(model.dtype), tile=args.tile, overlap=args.overlap, pad_mode=args.pad)
    write_pgm(out, args.out)
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.model, args.precision)
    manifest = load_manifest(args.data)
    report = evaluate(model, manifest, args.noise, args.levels, args.seed, tile=args.tile, overlap=args.overlap)
    report.write_csv(args.report)
    summary = report.summary(args.method)
    if args.summary:
        Path(args.summary).write_text(summary, encoding="utf-8")
    sys.stderr.write(summary)
    return 2 if report.failures and not report.rows else 0


def cmd_corrupt(args) -> int:
    spec = _noise_spec(args)
    image = read_pgm(args.input)
    write_pgm(corrupt(image, spec.family, spec.level, args.seed), args.out)
    return 0


def cmd_heatmap(args) -> int:
    model = _load_model(args.model, args.precision)
    image = read_pgm(args.input)
    paths, _ = export_attention_heatmaps(model, image, args.layers, args.out)
    for p in paths:
        print(f"wrote {p}", file=sys.stderr)
    return 0


COMMANDS = {
    "train": cmd_train,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "corrupt": cmd_corrupt,
    "heatmap": cmd_heatmap,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except (OSError, PGMError, CheckpointError, ValueError) as e:
        print(f"ardn: error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
