#!/usr/bin/env python3
"""Run the shipped experiment configs and print a mean +- std table per config.

    python3 scripts/run_experiments.py                  # all ordering configs
    python3 scripts/run_experiments.py same_dist_val    # one config
    DBA_THREADS=4 python3 scripts/run_experiments.py    # parallel cells

Reports land in results/<config>/ (summary.csv, runs.json, plotdata.csv).
"""

import argparse
import json
import sys
from pathlib import Path

from dba.evaluation import ExperimentConfig, evaluate_assertion, run_experiment, write_reports

ROOT = Path(__file__).resolve().parent.parent
DEFAULT = ["known_attributes", "same_dist_val", "diff_dist_val", "misspecification"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    ap.add_argument("configs", nargs="*", default=DEFAULT)
    ap.add_argument("--results", default=str(ROOT / "results"))
    args = ap.parse_args()
    failed = 0
    for name in args.configs:
        path = ROOT / "configs" / f"{name}.json"
        cfg = ExperimentConfig.from_dict(json.loads(path.read_text()),
                                         base_dir=path.parent)
        records = run_experiment(cfg)
        summary = write_reports(records, Path(args.results) / name, config=cfg.to_dict())
        print(f"\n== {name} ({len(cfg.seeds)} seeds)")
        print(f"{'method':<14}{'average':>18}{'worst group':>18}{'sec/run':>9}")
        for r in summary:
            print(f"{r['method']:<14}{r['avg_mean']:>10.4f} +- {r['avg_std']:.4f}"
                  f"{r['worst_mean']:>10.4f} +- {r['worst_std']:.4f}{r['seconds']:>9.1f}")
        for expr in cfg.asserts:
            ok = evaluate_assertion(expr, summary)
            failed += not ok
            print(f"  [{'ok' if ok else 'FAILED'}] {expr}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
