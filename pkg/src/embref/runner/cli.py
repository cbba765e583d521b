"""Command-line entry point.

Subcommands: generate, train, eval, visualize, oracle.
Exit codes: 0 success, 1 usage error, 2 oracle failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from ..config import ConfigError, RunConfig
from ..evalmetrics import format_report
from ..fixtures import GeneratorConfig, generate_dataset

PAPER_SPLIT = (2970, 1251)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_out() -> str:
    return os.environ.get("EMBREF_OUT", "runs")


def build_parser() -> _Parser:
    parser = _Parser(prog="embref", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--root", required=True)
    gen.add_argument("--train", type=int, default=300)
    gen.add_argument("--test", type=int, default=100)
    gen.add_argument("--paper-split", action="store_true",
                     help=f"use the benchmark split sizes {PAPER_SPLIT}")
    gen.add_argument("--image-size", type=int, default=128)
    gen.add_argument("--min-objects", type=int, default=2)
    gen.add_argument("--max-objects", type=int, default=6)
    gen.add_argument("--seed", type=int, default=0)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", default=None, help="output dir (default $EMBREF_OUT/run)")
    tr.add_argument("--config", default=None, help="YAML config file")
    tr.add_argument("--paper-config", action="store_true",
                    help="full-scale defaults instead of the CI profile")
    tr.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE")
    tr.add_argument("--resume", default=None)
    tr.add_argument("--overfit-steps", type=int, default=None,
                    help="run the single-batch overfit harness instead of training")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--out", default=None)

    vis = sub.add_parser("visualize", help="dump qualitative panels")
    vis.add_argument("--checkpoint", required=True)
    vis.add_argument("--data", required=True)
    vis.add_argument("--out", default=None)
    vis.add_argument("--samples", default=None, help="comma-separated sample ids")
    vis.add_argument("--count", type=int, default=3, help="first N test samples if no ids given")
    vis.add_argument("--split", default="test")
    vis.add_argument("--dump-coords", action="store_true")
    vis.add_argument("--body-attention", action="store_true")

    orc = sub.add_parser("oracle", help="run brute-force oracle suites")
    orc.add_argument("suite", choices=["geometry", "encoders", "body", "relation",
                                       "losses", "evalmetrics", "fixtures", "all"])
    return parser


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_yaml(args.config)
    elif args.paper_config:
        cfg = RunConfig()
    else:
        cfg = RunConfig.ci()
    if args.overrides:
        cfg = cfg.with_overrides(args.overrides)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "generate":
        train_n, test_n = (PAPER_SPLIT if args.paper_split else (args.train, args.test))
        cfg = GeneratorConfig(
            image_size=args.image_size,
            min_objects=args.min_objects,
            max_objects=args.max_objects,
        )
        manifest = generate_dataset(args.root, train_n, test_n, cfg, base_seed=args.seed)
        print(f"wrote {len(manifest.splits['train'])} train / "
              f"{len(manifest.splits['test'])} test samples under {args.root}")
        return 0

    if args.command == "train":
        from .training import overfit, train

        try:
            cfg = _load_config(args)
        except ConfigError as err:
            print(f"embref train: config error: {err}", file=sys.stderr)
            return 1
        if args.overfit_steps is not None:
            result = overfit(cfg, args.data, steps=args.overfit_steps)
            print(f"overfit {result['steps']} steps: "
                  f"total {result['initial']['total']:.4f} -> {result['final']['total']:.4f}, "
                  f"attention {result['final']['loss_attn']:.4f}")
            return 0
        out = Path(args.out) if args.out else Path(_default_out()) / "run"
        result = train(cfg, args.data, out, resume=args.resume)
        print(f"checkpoint: {result.checkpoint_path}")
        print(f"metrics:    {result.metrics_path}")
        return 0

    if args.command == "eval":
        from .training import evaluate_checkpoint

        out = Path(args.out) if args.out else Path(_default_out()) / "eval"
        report = evaluate_checkpoint(args.checkpoint, args.data, split=args.split, out_dir=out)
        print(format_report(report), end="")
        return 0

    if args.command == "visualize":
        from ..fixtures import read_dataset
        from .visualize import visualize

        out = Path(args.out) if args.out else Path(_default_out()) / "panels"
        if args.samples:
            ids = [s for s in args.samples.split(",") if s]
        else:
            manifest, _ = read_dataset(args.data)
            ids = manifest.sample_ids(args.split)[: args.count]
        paths = visualize(
            args.checkpoint, args.data, ids, out,
            dump_coords=args.dump_coords,
            dump_body_attention=args.body_attention,
        )
        print(f"wrote {len(paths)} panels under {out}")
        return 0

    if args.command == "oracle":
        from .oracles import run_suite

        results = run_suite(args.suite)
        failed = [r for r in results if not r.passed]
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            detail = f"  ({r.detail})" if r.detail else ""
            print(f"[{status}] {r.name}{detail}")
        print(f"{len(results) - len(failed)}/{len(results)} oracles passed")
        return 2 if failed else 0

    return 1


if __name__ == "__main__":
    raise SystemExit(main())
