"""Accuracy metrics, the seeded experiment protocol and the misspecification study."""

from __future__ import annotations

import ast
import csv
import io
import json
import logging
import math
import os
import re
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .core import (
    ConfigError,
    Dataset,
    DatasetRole,
    PreconditionViolation,
    RunRecord,
    ZeroCountGroup,
    compute_label_stats,
    fmt_float,
)
from .estimators import EstimatorConfig, Regime, fit_estimator
from .synthgen import DiscreteGenSpec, GaussianGenSpec, generate, spec_from_dict
from .trainer import (
    SoftmaxModel,
    TrainConfig,
    fit_overfit,
    fit_unweighted,
    fit_weighted,
    log_proba,
    predict,
    resample_dataset,
    select_model,
)
from .weights import (
    WeightVector,
    class_balance_weight,
    group_balance_weight,
    group_counts,
    logit_adjust_weight,
    theorem1_weight,
)

log = logging.getLogger(__name__)

METHODS = ("erm", "dbcm-known", "dbcm-same", "dbcm-diff", "reweight", "resample", "logit-adjust")
DEFAULT_P_M0 = 0.85


@dataclass
class Metrics:
    average_accuracy: float
    worst_group: float
    per_group: dict[tuple[int, int], float]
    group_counts: dict[tuple[int, int], int]
    class_only: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "average_accuracy": self.average_accuracy,
            "worst_group": self.worst_group,
            "per_group": {f"{y},{s}": v for (y, s), v in sorted(self.per_group.items())},
            "group_counts": {f"{y},{s}": v for (y, s), v in sorted(self.group_counts.items())},
            "class_only": self.class_only,
        }


def accuracy_metrics(model: SoftmaxModel, test: Dataset) -> Metrics:
    """Average and worst-group accuracy over occupied (y, s) cells.

    Without attributes the groups fall back to classes (``s`` reported as -1)
    and ``class_only`` is set.
    """
    hit = predict(model, test.X) == test.y
    class_only = not test.has_attributes
    if class_only:
        log.warning("test set has no attributes; reporting class-level groups")
    per, counts = {}, {}
    for y in range(test.L):
        for s in ([-1] if class_only else range(test.L)):
            mask = test.y == y if class_only else (test.y == y) & (test.s == s)
            c = int(mask.sum())
            if c:
                counts[(y, s)] = c
                per[(y, s)] = float(hit[mask].mean())
    worst = min(per.values()) if per else float("nan")
    return Metrics(float(hit.mean()) if test.n else float("nan"), worst, per, counts, class_only)


# --- experiment protocol --------------------------------------------------------

@dataclass(frozen=True)
class WeightingConfig:
    """What a method needs to build its weights, independent of any generator spec."""

    p_m0: float | None = None
    val_p_m0: float | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    estimator: dict[str, Any] = field(default_factory=dict)

    @property
    def prior_p_m0(self) -> float:
        return DEFAULT_P_M0 if self.p_m0 is None else self.p_m0


@dataclass
class ExperimentConfig:
    spec: DiscreteGenSpec | GaussianGenSpec
    methods: list[str]
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    n_train: int = 20000
    n_val: int = 5000
    n_test: int = 5000
    p_m0: float | None = None       # training-composition prior fed to the weights
    val_p_m0: float | None = None   # generate validation data with this p_m0 (shifted law)
    train: TrainConfig = field(default_factory=TrainConfig)
    estimator: dict[str, Any] = field(default_factory=dict)
    selection: str = "loglik"       # loglik | accuracy | last
    asserts: list[str] = field(default_factory=list)

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if not self.methods or not self.seeds:
            raise ConfigError("need at least one method and one seed")
        if self.selection not in ("loglik", "accuracy", "last"):
            raise ConfigError(f"unknown selection criterion {self.selection!r}")
        for expr in self.asserts:
            compile_assertion(expr)

    @property
    def prior_p_m0(self) -> float:
        return self.weighting().prior_p_m0

    def weighting(self) -> WeightingConfig:
        return WeightingConfig(self.p_m0, self.val_p_m0, self.train, dict(self.estimator))

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        spec = d.pop("spec", None)
        spec_path = d.pop("spec_path", None)
        if spec is None and spec_path is not None:
            p = Path(spec_path)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            spec = json.loads(p.read_text())
        if spec is None:
            raise ConfigError("experiment config needs 'spec' or 'spec_path'")
        train = TrainConfig.from_dict(d.pop("train", {}))
        asserts = d.pop("assert", [])
        if isinstance(asserts, str):
            asserts = [asserts]
        known = set(cls.__dataclass_fields__) - {"spec", "train", "asserts"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys {sorted(unknown)}")
        try:
            return cls(spec=spec_from_dict(spec), train=train, asserts=list(asserts), **d)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {"spec": self.spec.to_dict(), "methods": list(self.methods), "seeds": list(self.seeds),
                "n_train": self.n_train, "n_val": self.n_val, "n_test": self.n_test,
                "p_m0": self.p_m0, "val_p_m0": self.val_p_m0, "train": self.train.to_dict(),
                "estimator": dict(self.estimator), "selection": self.selection,
                "assert": list(self.asserts)}


def make_datasets(cfg: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    spec = cfg.spec
    val_spec = spec if cfg.val_p_m0 is None else spec.replace(p_m0=cfg.val_p_m0)
    train = generate(spec, cfg.n_train, DatasetRole.TRAIN, seed=seed)
    val = generate(val_spec, cfg.n_val, DatasetRole.VAL, seed=seed + 1)
    test = generate(spec, cfg.n_test, DatasetRole.TEST, seed=seed)
    return train, val, test


def _estimator_config(cfg: WeightingConfig, regime: Regime, seed: int) -> EstimatorConfig:
    kw = dict(cfg.estimator)
    kw.setdefault("lr", cfg.train.lr)
    kw.setdefault("batch_size", cfg.train.batch_size)
    return EstimatorConfig(regime=regime, seed=seed, **kw)


def _joint_majority_posterior(train: Dataset, val: Dataset, cfg: WeightingConfig, seed: int):
    """Estimate p(y, s=y | x): joint (y, s) classifier when attributes are known,
    otherwise an overfit label model standing in for the majority posterior."""
    L = train.L
    ecfg = _estimator_config(cfg, Regime.DIFF_DIST_VAL, seed)
    if train.has_attributes:
        joint = Dataset(train.X, train.y * L + train.s, train.s, train.m, role=train.role, L=L * L)
        model = fit_unweighted(joint, ecfg.train_config()).model
        diag = np.arange(L) * L + np.arange(L)

        def score(data: Dataset) -> np.ndarray:
            return np.exp(log_proba(model, data.X)[:, diag][np.arange(data.n), data.y])
    else:
        model = fit_overfit(train, ecfg.train_config(), ecfg.overfit_target).model

        def score(data: Dataset) -> np.ndarray:
            return np.exp(log_proba(model, data.X)[np.arange(data.n), data.y])

    return score(train), score(val)


def method_weights(method: str, train: Dataset, val: Dataset, cfg: WeightingConfig,
                   seed: int) -> tuple[WeightVector | None, np.ndarray | None, dict[str, Any]]:
    """Training weights, validation selection weights ``z`` and diagnostics for one method.

    A ``None`` training weight means "resample, then train unweighted".
    """
    info: dict[str, Any] = {}
    if method == "erm":
        return WeightVector.ones(train.n), None, info
    if method == "reweight":
        return class_balance_weight(train), class_balance_weight(val).values, info
    if method == "resample":
        return None, None, info
    if method == "logit-adjust":
        p_tr, p_va = _joint_majority_posterior(train, val, cfg, seed)
        g = logit_adjust_weight(p_tr, train.L)
        info["n_clamped"] = g.n_clamped
        return g, logit_adjust_weight(p_va, val.L).values, info
    regime = {"dbcm-known": Regime.KNOWN_S, "dbcm-same": Regime.SAME_DIST_VAL,
              "dbcm-diff": Regime.DIFF_DIST_VAL}[method]
    if regime is not Regime.KNOWN_S:
        train, val = train.without_attributes(), val.without_attributes()
    ecfg = _estimator_config(cfg, regime, seed)
    est = fit_estimator(train, ecfg, val)
    rho_tr, rho_va = est.rho(train), est.rho(val)
    g = theorem1_weight(rho_tr, train.y, compute_label_stats(train, cfg.prior_p_m0, ecfg.tau))
    val_p_m0 = cfg.prior_p_m0 if cfg.val_p_m0 is None else cfg.val_p_m0
    z = theorem1_weight(rho_va, val.y, compute_label_stats(val, val_p_m0, ecfg.tau))
    info.update(n_clamped=g.n_clamped, g_max=float(g.values.max()), g_mean=float(g.values.mean()))
    return g, z.values, info


def _resample_weights(data: Dataset) -> WeightVector:
    if data.has_attributes and np.all(group_counts(data) > 0):
        return group_balance_weight(data)
    return class_balance_weight(data)


def train_method(method: str, train: Dataset, val: Dataset, cfg: WeightingConfig,
                 selection: str, seed: int) -> tuple[SoftmaxModel, WeightVector | None, dict[str, Any]]:
    """Build the method's weights, train, and pick a checkpoint."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {list(METHODS)}")
    tcfg = TrainConfig(**{**cfg.train.to_dict(), "seed": seed})
    g, z, info = method_weights(method, train, val, cfg, seed)
    if g is None:
        boot = resample_dataset(train, _resample_weights(train), seed)
        fit = fit_unweighted(boot, tcfg)
        try:
            z = _resample_weights(val).values
        except ZeroCountGroup:
            z = None
    else:
        fit = fit_weighted(train, g, tcfg)
    if selection == "last":
        model = fit.model
    else:
        model = select_model(fit.checkpoints, val, z, selection)
    info["selected_epoch"] = next(i for i, m in enumerate(fit.checkpoints) if m is model) + 1
    info["train"] = tcfg.to_dict()
    return model, g, info


def run_single(cfg: ExperimentConfig, method: str, seed: int, timing: bool = True) -> RunRecord:
    t0 = time.perf_counter()
    train, val, test = make_datasets(cfg, seed)
    model, _, info = train_method(method, train, val, cfg.weighting(), cfg.selection, seed)
    metrics = {role: accuracy_metrics(model, data).to_dict()
               for role, data in (("train", train), ("val", val), ("test", test))}
    seconds = time.perf_counter() - t0 if timing else 0.0
    return RunRecord(method=method, seed=seed, config=info, metrics=metrics, seconds=seconds)


def _threads() -> int:
    raw = os.environ.get("DBA_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"DBA_THREADS must be an integer, got {raw!r}") from None


def _run_cell(args):
    cfg, method, seed, timing = args
    return run_single(cfg, method, seed, timing)


def run_experiment(cfg: ExperimentConfig, timing: bool = True) -> list[RunRecord]:
    """One record per (method, seed), ordered by config order regardless of completion."""
    cells = [(cfg, m, s, timing) for m in cfg.methods for s in cfg.seeds]
    workers = min(_threads(), len(cells))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]


def _mean_std(values: list[float]) -> tuple[float, float]:
    # statistics works in exact arithmetic, so repeated identical values give std exactly 0
    vals = [float(v) for v in values]
    return statistics.fmean(vals), statistics.stdev(vals) if len(vals) > 1 else 0.0


def aggregate(records: list[RunRecord], role: str = "test") -> list[dict[str, Any]]:
    rows = []
    for method in dict.fromkeys(r.method for r in records):
        mine = [r for r in records if r.method == method]
        avg_m, avg_s = _mean_std([r.metrics[role]["average_accuracy"] for r in mine])
        worst_m, worst_s = _mean_std([r.metrics[role]["worst_group"] for r in mine])
        rows.append({"method": method, "avg_mean": avg_m, "avg_std": avg_s,
                     "worst_mean": worst_m, "worst_std": worst_s,
                     "seconds": float(np.mean([r.seconds for r in mine]))})
    return rows


# --- assertion expressions ------------------------------------------------------

_OPERAND = re.compile(r"[A-Za-z][\w-]*\.[A-Za-z_]\w*")
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Compare, ast.BoolOp, ast.Name, ast.Load,
            ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.USub, ast.UAdd, ast.Gt,
            ast.GtE, ast.Lt, ast.LtE, ast.Eq, ast.NotEq, ast.And, ast.Or)
_FIELDS = ("avg_mean", "avg_std", "worst_mean", "worst_std", "seconds")


def compile_assertion(expr: str):
    """Parse ``method.field`` arithmetic/comparison expressions; raises ConfigError."""
    names: dict[str, tuple[str, str]] = {}

    def sub(m: re.Match) -> str:
        method, fld = m.group(0).rsplit(".", 1)
        if fld not in _FIELDS:
            raise ConfigError(f"unknown summary field {fld!r} in assertion {expr!r}")
        key = f"_v{len(names)}"
        names[key] = (method, fld)
        return key

    try:
        tree = ast.parse(_OPERAND.sub(sub, expr), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"malformed assertion {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"unsupported syntax in assertion {expr!r}")
        if isinstance(node, ast.Name) and node.id not in names:
            raise ConfigError(f"unknown operand {node.id!r} in assertion {expr!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"only numeric constants allowed in assertion {expr!r}")
    if not isinstance(tree.body, (ast.Compare, ast.BoolOp)):
        raise ConfigError(f"assertion {expr!r} must be a comparison")
    return compile(tree, "<assert>", "eval"), names


def evaluate_assertion(expr: str, summary: list[dict[str, Any]]) -> bool:
    code, names = compile_assertion(expr)
    rows = {r["method"]: r for r in summary}
    env = {}
    for key, (method, fld) in names.items():
        if method not in rows:
            raise ConfigError(f"assertion {expr!r} names method {method!r} not in the experiment")
        env[key] = rows[method][fld]
    return bool(eval(code, {"__builtins__": {}}, env))


# --- report files ----------------------------------------------------------------

def _csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_reports(records: list[RunRecord], out_dir: str | Path,
                  config: dict[str, Any] | None = None) -> list[dict[str, Any]]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = aggregate(records)
    cols = ["method", "avg_mean", "avg_std", "worst_mean", "worst_std", "seconds"]
    (out / "summary.csv").write_text(_csv_text(cols, [[r[c] for c in cols] for r in summary]))
    runs = {"config": config, "runs": [r.to_dict() for r in records]}
    (out / "runs.json").write_text(json.dumps(runs, indent=1, sort_keys=True) + "\n")
    plot_rows = []
    for r in records:
        for role, m in r.metrics.items():
            plot_rows.append([r.method, r.seed, role, "average_accuracy", m["average_accuracy"]])
            plot_rows.append([r.method, r.seed, role, "worst_group", m["worst_group"]])
    (out / "plotdata.csv").write_text(
        _csv_text(["method", "seed", "role", "metric", "value"], plot_rows))
    return summary


# --- misspecification study -------------------------------------------------------

def misspecification_study(cfg: ExperimentConfig, timing: bool = True) -> dict[str, Any]:
    """ERM vs class-balanced ReWeight vs DBCM(known) on class-imbalanced test data.

    ReWeight implicitly targets a class-uniform test law; when the imbalance is
    preserved at test time that target is wrong and average accuracy drops.
    """
    p_y = np.asarray(cfg.spec.p_y)
    if np.max(np.abs(p_y - 1.0 / cfg.spec.L)) <= 1e-12:
        raise PreconditionViolation("misspecification study needs a non-uniform label prior")
    study = ExperimentConfig(spec=cfg.spec, methods=["erm", "reweight", "dbcm-known"],
                             seeds=cfg.seeds, n_train=cfg.n_train, n_val=cfg.n_val,
                             n_test=cfg.n_test, p_m0=cfg.p_m0, val_p_m0=cfg.val_p_m0,
                             train=cfg.train, estimator=cfg.estimator, selection=cfg.selection)
    records = run_experiment(study, timing)
    summary = {r["method"]: r for r in aggregate(records)}
    erm, rew, dbcm = summary["erm"], summary["reweight"], summary["dbcm-known"]
    return {
        "summary": list(summary.values()),
        "records": records,
        "reweight_below_erm": rew["avg_mean"] <= erm["avg_mean"],
        "reweight_gap": erm["avg_mean"] - rew["avg_mean"],
        "dbcm_at_least_erm": dbcm["avg_mean"] >= erm["avg_mean"],
        "dbcm_gap": dbcm["avg_mean"] - erm["avg_mean"],
        "weights_finite": all(math.isfinite(r.config.get("g_max", 1.0)) for r in records),
    }
