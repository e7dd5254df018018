"""Command line interface: ``run``, ``poison-preview`` and ``report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigurationError, DataError, TrainingError, UndefinedMetricError
from .experiment import preview_poison, run_experiment
from .report import load_report, render_table, write_report


def _run(args):
    config = load_config(args.config)
    out = Path(args.out) if args.out else config.output_dir
    report = run_experiment(config, out_dir=out, workers=args.workers, seed=args.seed)
    print(f"report written to {out}")
    print("accuracy (%)")
    print(render_table(report), end="")
    if report.adversary_keys():
        print("attack success rate (%)")
        print(render_table(report, "asr"), end="")


def _preview(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out = Path(args.out) if args.out else config.output_dir / "preview"
    paths = preview_poison(config, args.count, out)
    print(f"wrote {len(paths)} images to {out}")


def _report(args):
    report = load_report(args.report)
    if args.out:
        write_report(report, args.out)
    print("accuracy (%)")
    print(render_table(report), end="")
    if report.adversary_keys():
        print("attack success rate (%)")
        print(render_table(report, "asr"), end="")


def build_parser():
    parser = argparse.ArgumentParser(prog="contribaware", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train baseline and ensemble, write the report")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--workers", type=int, help="parallel ensemble members")
    run.add_argument("--seed", type=int, help="base seed override")
    run.set_defaults(func=_run)

    prev = sub.add_parser("poison-preview", help="dump clean/triggered image pairs")
    prev.add_argument("--config", required=True)
    prev.add_argument("--out")
    prev.add_argument("--count", type=int, default=4)
    prev.add_argument("--seed", type=int)
    prev.set_defaults(func=_preview)

    rep = sub.add_parser("report", help="re-render a stored report")
    rep.add_argument("--report", required=True, help="report.json or its directory")
    rep.add_argument("--out", help="also rewrite the table and grid files here")
    rep.set_defaults(func=_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if getattr(args, "workers", None) is not None and args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        args.func(args)
    except (ConfigurationError, DataError, TrainingError, UndefinedMetricError, OSError) as exc:
        msg = str(exc)
        source = getattr(args, "config", None) or getattr(args, "report", None)
        if source and not msg.startswith(str(source)):
            msg = f"{source}: {msg}"
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
