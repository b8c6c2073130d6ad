"""Command-line entry point: ``dba {gen,estimate,train,eval,oracle,experiment}``.

Exit codes: 0 ok, 1 I/O error, 2 configuration error, 3 failed check or assertion.
Data goes to files or stdout (JSON); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .core import (
    ConfigError,
    DatasetRole,
    DBAError,
    compute_label_stats,
    load_dataset,
    save_column,
    save_dataset,
)
from .estimators import EstimatorConfig, Regime, fit_estimator
from .evaluation import (
    METHODS,
    ExperimentConfig,
    WeightingConfig,
    accuracy_metrics,
    evaluate_assertion,
    run_experiment,
    train_method,
    write_reports,
)
from .oracle import (
    TwoGroupSpec,
    check_is_identity,
    check_theorem1,
    check_theorem2,
    check_theorem3,
    random_check,
    worked_spec,
)
from .synthgen import DiscreteGenSpec, generate, spec_from_dict
from .trainer import TrainConfig, load_model, save_model
from .weights import theorem1_weight

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3
CHECKS = ("theorem1", "theorem2", "theorem3", "is-identity")

log = logging.getLogger("dba")


class CheckFailed(Exception):
    """A requested check or assertion evaluated to false."""


def _read_json(path: str | None, what: str) -> dict[str, Any]:
    # a missing or unparsable config is a configuration problem, not an I/O one
    if path is None:
        raise ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {p} is not valid JSON: {exc}") from None


def _emit(obj: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _require_out(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    return Path(args.out)


# --- subcommands --------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = spec_from_dict(_read_json(args.spec, "spec"))
    out = _require_out(args)
    data = generate(spec, args.n, DatasetRole.parse(args.role), seed=args.seed)
    save_dataset(data, out)
    _emit({"n": data.n, "role": data.role.value, "seed": data.seed, "path": str(out)})
    return EXIT_OK


def _estimator_from_args(args, seed: int) -> EstimatorConfig:
    extra = _read_json(args.config, "config") if args.config else {}
    extra = dict(extra.get("estimator", extra))
    if args.tau is not None:
        extra["tau"] = args.tau
    extra.pop("regime", None)
    extra.pop("seed", None)
    try:
        return EstimatorConfig(regime=Regime(args.regime), seed=seed, **extra)
    except TypeError as exc:
        raise ConfigError(f"invalid estimator settings: {exc}") from None


def cmd_estimate(args) -> int:
    out = _require_out(args)
    train = load_dataset(args.train)
    val = load_dataset(args.val) if args.val else None
    ecfg = _estimator_from_args(args, args.seed)
    if ecfg.regime is not Regime.KNOWN_S:
        train = train.without_attributes()
        val = val.without_attributes() if val is not None else None
    rho = fit_estimator(train, ecfg, val).rho(train)
    save_column(rho, "rho", out)
    report = {"n": int(rho.size), "regime": ecfg.regime.value, "tau": ecfg.tau,
              "rho_min": float(rho.min()), "rho_max": float(rho.max()), "path": str(out)}
    if args.p_m0 is not None:
        g = theorem1_weight(rho, train.y, compute_label_stats(train, args.p_m0, ecfg.tau))
        report["g_max"] = float(g.values.max())
    _emit(report)
    return EXIT_OK


def cmd_train(args) -> int:
    out = _require_out(args)
    conf = _read_json(args.config, "config") if args.config else {}
    unknown = set(conf) - {"p_m0", "val_p_m0", "train", "estimator", "selection"}
    if unknown:
        raise ConfigError(f"unknown train config keys {sorted(unknown)}")
    p_m0 = args.p_m0 if args.p_m0 is not None else conf.get("p_m0")
    estimator = dict(conf.get("estimator", {}))
    if args.tau is not None:
        estimator["tau"] = args.tau
    wcfg = WeightingConfig(p_m0=p_m0, val_p_m0=conf.get("val_p_m0"),
                           train=TrainConfig.from_dict(conf.get("train", {})), estimator=estimator)
    selection = conf.get("selection", "loglik")
    if selection not in ("loglik", "accuracy", "last"):
        raise ConfigError(f"unknown selection criterion {selection!r}")
    train, val = load_dataset(args.train), load_dataset(args.val)
    model, g, info = train_method(args.method, train, val, wcfg, selection, args.seed)
    save_model(model, out)
    if args.weights_out:
        values = np.ones(train.n) if g is None else g.values
        save_column(values, "g", args.weights_out)
    _emit({"method": args.method, "seed": args.seed, "path": str(out),
           "selected_epoch": info["selected_epoch"]})
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = load_dataset(args.data)
    report = accuracy_metrics(model, data).to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    _emit(report)
    return EXIT_OK


def _oracle_report(args) -> dict[str, Any]:
    if args.random is not None:
        if args.random < 1:
            raise ConfigError("--random needs a positive trial count")
        rep = random_check(args.check, args.random, args.tol, seed=args.seed, variant=args.variant)
        return rep.to_dict()
    if args.worked:
        raw = worked_spec().to_dict()
    else:
        raw = _read_json(args.spec, "spec")
    if args.check == "theorem3":
        try:
            spec3 = TwoGroupSpec(**raw)
        except TypeError as exc:
            raise ConfigError(f"theorem3 needs a two-group spec: {exc}") from None
        return check_theorem3(spec3, args.tol).to_dict()
    spec = spec_from_dict(raw)
    if not isinstance(spec, DiscreteGenSpec):
        raise ConfigError("exact checks need a discrete spec")
    if args.check == "theorem1":
        return check_theorem1(spec, args.tol, args.variant).to_dict()
    if args.check == "theorem2":
        return check_theorem2(spec, args.tol).to_dict()
    return check_is_identity(spec, args.tol, trials=args.trials, seed=args.seed).to_dict()


def cmd_oracle(args) -> int:
    report = _oracle_report(args)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    _emit(report)
    if not report["pass"]:
        raise CheckFailed(f"{args.check} check failed (max error {report['max_rel_err']:.3g})")
    return EXIT_OK


def cmd_experiment(args) -> int:
    raw = _read_json(args.config, "config")
    cfg = ExperimentConfig.from_dict(raw, base_dir=Path(args.config).parent)
    if args.seed is not None and args.seeds_from_flag:
        cfg.seeds = [args.seed]
    out = _require_out(args)
    records = run_experiment(cfg, timing=not args.no_timing)
    summary = write_reports(records, out, config=cfg.to_dict())
    for row in summary:
        log.info("%-12s avg %.4f +- %.4f  worst %.4f +- %.4f", row["method"], row["avg_mean"],
                 row["avg_std"], row["worst_mean"], row["worst_std"])
    results = {expr: evaluate_assertion(expr, summary) for expr in cfg.asserts}
    _emit({"out": str(out), "rows": len(summary), "asserts": results})
    failed = [e for e, ok in results.items() if not ok]
    if failed:
        raise CheckFailed("assertion failed: " + "; ".join(failed))
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--quiet", action="store_true", help="only log errors")

    parser = argparse.ArgumentParser(
        prog="dba", description="Importance weighting for subpopulation shift.",
        epilog="exit codes: 0 ok, 1 I/O error, 2 config error, 3 failed check or assertion")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="sample a dataset from a generator spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--role", choices=[r.value for r in DatasetRole], default="train")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("estimate", parents=[common], help="estimate the spurious posterior rho")
    p.add_argument("--regime", choices=[r.value for r in Regime], required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--tau", type=float)
    p.add_argument("--p-m0", type=float, help="also report the largest resulting weight")
    p.add_argument("--config", help="JSON estimator settings")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("train", parents=[common], help="train one method and save the model")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--config", help="JSON with p_m0, val_p_m0, train, estimator, selection")
    p.add_argument("--tau", type=float)
    p.add_argument("--p-m0", type=float)
    p.add_argument("--weights-out", help="write the training weights as a CSV column")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="average and worst-group accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", parents=[common], help="exact-enumeration checks")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec")
    src.add_argument("--random", type=int, metavar="N")
    src.add_argument("--worked", action="store_true", help="the built-in two-class example")
    p.add_argument("--check", choices=CHECKS, required=True)
    p.add_argument("--variant", choices=("appendix", "maintext"), default="appendix")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("experiment", parents=[common], help="run a full experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--no-timing", action="store_true",
                   help="record 0 seconds so reports are byte-reproducible")
    p.description = "Run a JSON experiment config; --seed N replaces its seed list with [N]."
    p.set_defaults(func=cmd_experiment)
    return parser


def _configure_logging(quiet: bool) -> None:
    # own handler bound to the current stderr, so repeated in-process calls behave alike
    root = logging.getLogger("dba")
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.ERROR if quiet else logging.INFO)
    root.propagate = False


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.quiet)
    args.seeds_from_flag = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except CheckFailed as exc:
        log.error("%s", exc)
        return EXIT_CHECK
    except (ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DBAError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
