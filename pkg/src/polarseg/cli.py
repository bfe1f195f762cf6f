"""Command-line entry point: ``polarseg {synth,train,infer,eval,gradcheck}``.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import nncore, pipeline
from .config import ConfigError, load_config

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

GRADCHECK_TOLERANCE = 1e-4

log = logging.getLogger("polarseg")


def _config(args, **overrides):
    return load_config(getattr(args, "config", None), overrides)


def cmd_synth(args):
    cfg = _config(args, data_dir=args.out, data_seed=args.seed, n_train=args.n_train, n_test=args.n_test)
    manifest = pipeline.synth(cfg, cfg.data_dir)
    print(manifest)
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args, model_dir=args.out, jobs=args.jobs)
    manifest = args.manifest or str(Path(cfg.data_dir) / "manifest.tsv")
    _, curves = pipeline.train(cfg, manifest, cfg.model_dir, force=args.force, jobs=pipeline.default_jobs(cfg.jobs))
    for k, reports in enumerate(curves):
        if reports:
            print(f"level {k}: {len(reports)} epochs, final mean loss {reports[-1].mean_loss:.6f}")
    return EXIT_OK


def cmd_infer(args):
    cfg = _config(args, model_dir=args.model, out_dir=args.out, jobs=args.jobs)
    if args.image:
        inputs = [(Path(p).stem, Path(p)) for p in args.image]
    else:
        manifest = args.manifest or str(Path(cfg.data_dir) / "manifest.tsv")
        inputs = [(pipeline.entry_name(e), e.image) for e in pipeline.load_split(manifest, args.split)]
    for _, p in inputs:
        if not Path(p).exists():
            raise FileNotFoundError(f"input image not found: {p}")
    results = pipeline.infer(
        cfg.model_dir,
        inputs,
        cfg.out_dir,
        per_level=args.per_level,
        raw=args.raw,
        jobs=pipeline.default_jobs(cfg.jobs),
        asm_iters=cfg.asm_iters,
        asm_profile_len=cfg.asm_profile_len,
    )
    print(f"wrote {len(results)} predictions to {cfg.out_dir}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _config(args, out_dir=args.out)
    manifest = args.manifest or str(Path(cfg.data_dir) / "manifest.tsv")
    result = pipeline.evaluate(args.predictions, manifest, cfg.out_dir, split=args.split)
    print((Path(cfg.out_dir) / "summary.tsv").read_text(), end="")
    for name in result.unmatched:
        print(f"warning: unmatched {name}", file=sys.stderr)
    return EXIT_OK


def cmd_gradcheck(args):
    report = nncore.gradient_check(
        args.input_dim, args.hidden, args.output_dim, args.steps, args.seed, args.step, corrupt=args.corrupt
    )
    for name, err in report.errors.items():
        print(f"{name:10s} max relative error {err:.3e}")
    ok = report.max_error < GRADCHECK_TOLERANCE
    print(
        f"{'PASS' if ok else 'FAIL'}: {report.n_params} parameters, max relative error "
        f"{report.max_error:.3e} (worst block {report.worst_block}), tolerance {GRADCHECK_TOLERANCE:g}"
    )
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser():
    parser = argparse.ArgumentParser(prog="polarseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="key = value configuration file")
        return p

    p = with_config(sub.add_parser("synth", help="generate a synthetic dataset"))
    p.add_argument("--out", help="output directory (default: data_dir)")
    p.add_argument("--seed", type=int, help="master seed (default: data_seed)")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.set_defaults(func=cmd_synth)

    p = with_config(sub.add_parser("train", help="train the cascade and the shape model"))
    p.add_argument("--manifest", help="dataset manifest (default: <data_dir>/manifest.tsv)")
    p.add_argument("--out", help="model directory (default: model_dir)")
    p.add_argument("--force", action="store_true", help="overwrite an existing model directory")
    p.add_argument("--jobs", type=int, help="worker threads (default: all cores)")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("infer", help="segment images with a trained model"))
    p.add_argument("--model", help="model directory (default: model_dir)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--image", nargs="+", help="PGM image(s)")
    src.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="output directory (default: out_dir)")
    p.add_argument("--per-level", action="store_true", help="also write every level's map")
    p.add_argument("--raw", action="store_true", help="also write lossless float dumps of the maps")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_infer)

    p = with_config(sub.add_parser("eval", help="score predictions against ground truth"))
    p.add_argument("predictions", help="predictions.tsv or the directory holding it")
    p.add_argument("--manifest", help="ground-truth dataset manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="report directory (default: out_dir)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify BPTT gradients against finite differences")
    p.add_argument("--input-dim", type=int, default=3)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--output-dim", type=int, default=3)
    p.add_argument("--steps", type=int, default=5, help="sequence length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--corrupt", metavar="BLOCK", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except nncore.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
