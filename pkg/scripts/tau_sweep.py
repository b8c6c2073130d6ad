#!/usr/bin/env python3
"""Temperature sweep for the unknown-attribute estimators on the Gaussian spec.

The estimator models are fitted once per seed; only the mapping from their
discrepancy to rho changes with tau, so the sweep costs one weighted fit per
(tau, seed).

    python3 scripts/tau_sweep.py --regime same --taus 1 0.3 0.1
"""

import argparse
import json
from pathlib import Path

import numpy as np

from dba.core import compute_label_stats
from dba.estimators import (
    DiffDistEstimator,
    EstimatorConfig,
    SameDistEstimator,
    rho_from_delta,
    rho_from_likelihood,
)
from dba.evaluation import ExperimentConfig, accuracy_metrics, make_datasets
from dba.trainer import TrainConfig, fit_weighted, log_proba
from dba.weights import clamp_rho, theorem1_weight

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--regime", choices=("same", "diff"), default="same")
    ap.add_argument("--taus", type=float, nargs="+", default=[2.0, 1.0, 0.3, 0.1])
    ap.add_argument("--config", default=str(ROOT / "configs" / "same_dist_val.json"))
    args = ap.parse_args()
    path = Path(args.config)
    cfg = ExperimentConfig.from_dict(json.loads(path.read_text()), base_dir=path.parent)
    est_kw = {**cfg.estimator, "lr": cfg.train.lr, "batch_size": cfg.train.batch_size}
    results = {t: [] for t in args.taus}
    for seed in cfg.seeds:
        train, val, test = make_datasets(cfg, seed)
        train_u = train.without_attributes()
        ecfg = EstimatorConfig(regime=args.regime, seed=seed, **est_kw)
        if args.regime == "same":
            est = SameDistEstimator.fit(train_u, val.without_attributes(), ecfg)
            score = est.delta(train_u)
        else:
            est = DiffDistEstimator.fit(train_u, ecfg)
            score = log_proba(est.model_train, train.X)[np.arange(train.n), train.y]
        stats = compute_label_stats(train, cfg.prior_p_m0)
        for tau in args.taus:
            rho = rho_from_delta(score, tau) if args.regime == "same" else rho_from_likelihood(score, tau)
            g = theorem1_weight(clamp_rho(rho), train.y, stats)
            model = fit_weighted(train, g, TrainConfig(**{**cfg.train.to_dict(), "seed": seed})).model
            m = accuracy_metrics(model, test)
            results[tau].append((m.average_accuracy, m.worst_group))
    print(f"{'tau':>6}{'average':>10}{'worst':>10}")
    for tau, vals in results.items():
        avg, worst = np.mean(vals, axis=0)
        print(f"{tau:>6}{avg:>10.4f}{worst:>10.4f}")


if __name__ == "__main__":
    main()
