#!/usr/bin/env python3
"""Relative error of both closed-form bracket variants against exact enumeration.

Sweeps the minority fraction p_m0 on randomized discrete specs and prints the
worst relative error per variant.  The corrected form stays at round-off; the
variant without the p(m1) factor drifts by percents for moderate p_m0.

    python3 scripts/oracle_sweep.py [--trials 50] [--seed 0]
"""

import argparse

import numpy as np

from dba.oracle import check_theorem1
from dba.synthgen import random_discrete_spec


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'p_m0':>8}{'appendix':>14}{'maintext':>14}")
    for p0 in (0.001, 0.01, 0.05, 0.2, 0.5, 0.8, 0.95, 0.999):
        worst = {"appendix": 0.0, "maintext": 0.0}
        for _ in range(args.trials):
            L = int(rng.integers(2, 6))
            spec = random_discrete_spec(rng, L, int(rng.integers(L, 65)), p_m0=p0)
            for v in worst:
                worst[v] = max(worst[v], check_theorem1(spec, np.inf, v).max_rel_err)
        print(f"{p0:>8}{worst['appendix']:>14.2e}{worst['maintext']:>14.2e}")


if __name__ == "__main__":
    main()
