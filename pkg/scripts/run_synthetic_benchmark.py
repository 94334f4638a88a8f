"""Full pipeline on synthetic sites: synth, clean, lags, train, evaluate, report.

    python scripts/run_synthetic_benchmark.py --out bench-out --days 90 --sites 5

``--quick`` shrinks the search grids and MLP training so the run finishes
in a couple of minutes; without it the default (full) grids are used.
"""
from __future__ import annotations

import argparse
import logging
import time

from heliocast import pipeline
from heliocast.config import PipelineConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="bench-out")
    ap.add_argument("--sites", type=int, default=5)
    ap.add_argument("--days", type=int, default=90)
    ap.add_argument("--start", default="2014-11-15", help="first synthetic day (local)")
    ap.add_argument("--coupling", type=float, default=0.6)
    ap.add_argument("--stride", type=int, default=5, help="keep every n-th target minute")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--lags", choices=["preset_table3", "auto"], default="preset_table3")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    d = dict(synth={"n_sites": args.sites, "days": args.days, "start": args.start,
                    "coupling": args.coupling},
             synth_gaps={"n_row_gaps": 3, "n_value_gaps": 5},
             stride=args.stride, seed=args.seed, out_dir=args.out, workers=args.workers,
             lag_spec_source=args.lags, selection_minute_window=20_000)
    if args.quick:
        d.update(gbt_grid={"eta": [0.1], "max_depth": [4], "n_rounds": [50, 100]},
                 mlp_sizes={"instant": [5, 10], "arima": [10, 30]}, mlp_folds=3,
                 mlp_restarts=4, mlp_keep=2, mlp_training={"epochs": 20})
    t0 = time.perf_counter()
    cfg = PipelineConfig.load(pipeline.run_synth(PipelineConfig.from_dict(d)))
    pipeline.run_clean(cfg)
    pipeline.run_select_lags(cfg)
    pipeline.run_train(cfg)
    doc = pipeline.run_report(cfg)
    print(pipeline.format_summary(doc))
    print(f"\nfinished in {time.perf_counter() - t0:.0f}s; outputs under {args.out}/")


if __name__ == "__main__":
    main()
