"""``heliocast`` command line.

    heliocast synth       --config cfg.json [--out DIR]
    heliocast clean       --config cfg.json [--site NAME ...]
    heliocast select-lags --config cfg.json
    heliocast train       --config cfg.json [--site NAME ...] [--seed N]
    heliocast evaluate    --config cfg.json
    heliocast cross-eval  --config cfg.json
    heliocast report      --config cfg.json

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
error. Failures print a one-line JSON object on stderr. ``HELIOCAST_LOG``
sets the log level (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline
from .config import PipelineConfig
from .errors import ConfigError, HeliocastError

COMMANDS = ("clean", "synth", "select-lags", "train", "evaluate", "cross-eval", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heliocast", description="one-hour-ahead kb forecasting")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="pipeline config JSON (defaults are used when omitted)")
        p.add_argument("--site", action="append", help="restrict to this site (repeatable)")
        p.add_argument("--seed", type=int, help="override the root seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--workers", type=int, help="override the worker pool size")
    return parser


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    d = cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out_dir"] = args.out
    if args.workers is not None:
        d["workers"] = args.workers
    cfg = PipelineConfig.from_dict(d)
    for name in args.site or []:
        cfg.site(name)
    return cfg


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def run(args) -> int:
    cfg = load_config(args)
    sites = args.site
    cmd = args.command
    if cmd != "synth" and not cfg.sites:
        raise ConfigError("config lists no sites")
    if cmd == "synth":
        path = pipeline.run_synth(cfg)
        _emit({"config": str(path)})
    elif cmd == "clean":
        reports = pipeline.run_clean(cfg, sites)
        _emit({name: rep["counts"] for name, rep in reports.items()})
    elif cmd == "select-lags":
        spec = pipeline.run_select_lags(cfg)
        _emit({"dimension": spec.dimension, "lagspec": spec.to_json()})
    elif cmd == "train":
        _emit({"artifacts": pipeline.run_train(cfg, sites)})
    elif cmd == "evaluate":
        print(pipeline.format_summary(pipeline.run_evaluate(cfg, sites)))
    elif cmd == "cross-eval":
        print(pipeline.format_summary(pipeline.run_cross_eval(cfg, sites)))
    elif cmd == "report":
        print(pipeline.format_summary(pipeline.run_report(cfg)))
    return 0


def main(argv=None) -> int:
    level = os.environ.get("HELIOCAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (HeliocastError, OSError, ValueError) as err:
        # unclassified input problems count as data errors
        code = err.exit_code if isinstance(err, HeliocastError) else 2
        print(json.dumps({"error": type(err).__name__, "message": str(err), "exit_code": code}),
              file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
