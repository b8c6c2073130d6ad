"""Exact enumeration over discrete generative specs.

Everything here is a finite double sum in float64; it is the ground truth the
closed forms in :mod:`dba.weights` are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import (
    ConfigError,
    DatasetRole,
    DomainError,
    PreconditionViolation,
    SupportViolation,
    TrainStats,
    ZeroDenominator,
)
from .synthgen import DiscreteGenSpec, random_discrete_spec
from .weights import augmentation_weight, decomposed_objective, theorem1_inverse, z_ratio


@dataclass(frozen=True, eq=False)
class JointTable:
    values: np.ndarray  # (K, L): p(x, y)
    role: DatasetRole

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
            raise DomainError("joint table must be nonnegative and sum to 1")


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    values: np.ndarray  # (K, L): p(s = y | y, x, train); NaN outside the support


@dataclass
class CheckReport:
    check: str
    passed: bool
    max_rel_err: float
    worst_cell: tuple[int, ...] | None = None
    trials: int = 1
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"check": self.check, "trials": self.trials, "max_rel_err": self.max_rel_err,
                "pass": self.passed, "worst_cell": self.worst_cell, **self.details}


def _group_prior(spec: DiscreteGenSpec, p_m0: float | None = None) -> np.ndarray:
    """Training p(y, s) as an (L, L) table indexed [y, s]."""
    p0 = spec.p_m0 if p_m0 is None else p_m0
    p_y = np.asarray(spec.p_y)
    L = spec.L
    return (1.0 - p0) * np.diag(p_y) + p0 * p_y[:, None] / L * np.ones((1, L))


def joint_xys(spec: DiscreteGenSpec, role) -> np.ndarray:
    """p(x, y, s) as a (K, L, L) table."""
    role = DatasetRole.parse(role)
    if role is DatasetRole.TEST:
        prior = np.asarray(spec.p_y)[:, None] / spec.L * np.ones((1, spec.L))
    else:
        prior = _group_prior(spec)
    return spec.cond_table * prior[None, :, :]


def exact_joint(spec: DiscreteGenSpec, role) -> JointTable:
    role = DatasetRole.parse(role)
    return JointTable(joint_xys(spec, role).sum(axis=2), role)


def exact_spurious_posterior(spec: DiscreteGenSpec, strict: bool = False) -> PosteriorTable:
    """rho(x, y) = p(x, y, s=y | train) / p(x, y | train).

    Cells with zero training mass are NaN, or raise ``ZeroDenominator`` if ``strict``.
    """
    xys = joint_xys(spec, DatasetRole.TRAIN)
    L = spec.L
    num = xys[:, np.arange(L), np.arange(L)]
    den = xys.sum(axis=2)
    zero = den <= 0
    if strict and zero.any():
        raise ZeroDenominator(f"p_tr(x, y) = 0 at cells {np.argwhere(zero).tolist()}")
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(zero, np.nan, num / np.where(zero, 1.0, den))
    return PosteriorTable(np.minimum(rho, 1.0))


def exact_weight(spec: DiscreteGenSpec) -> np.ndarray:
    """p_te / p_tr on each (x, y) cell; 0 outside the test support."""
    p_tr = exact_joint(spec, DatasetRole.TRAIN).values
    p_te = exact_joint(spec, DatasetRole.TEST).values
    if np.any((p_te > 0) & (p_tr <= 0)):
        raise SupportViolation("test support is not contained in training support")
    g = np.zeros_like(p_te)
    nz = p_te > 0
    g[nz] = p_te[nz] / p_tr[nz]
    return g


def _rel_err(a: np.ndarray, b: np.ndarray, mask: np.ndarray):
    err = np.zeros_like(a)
    err[mask] = np.abs(a[mask] - b[mask]) / np.abs(b[mask])
    idx = np.unravel_index(int(np.argmax(err)), err.shape)
    return float(err[idx]), tuple(int(i) for i in idx)


def theorem1_table(spec: DiscreteGenSpec, variant: str = "appendix") -> np.ndarray:
    """Closed-form g on every (x, y) cell, evaluated at the exact posterior."""
    rho = exact_spurious_posterior(spec).values
    stats = TrainStats(p_m0=spec.p_m0, p_y=spec.p_y, L=spec.L)
    p = np.broadcast_to(np.asarray(stats.p_y)[None, :], rho.shape)
    support = ~np.isnan(rho)
    g = np.zeros_like(rho)
    g[support] = 1.0 / theorem1_inverse(rho[support], p[support], stats.p_m0, stats.L, variant)
    return g


def check_theorem1(spec: DiscreteGenSpec, tol: float, variant: str = "appendix") -> CheckReport:
    exact = exact_weight(spec)
    closed = theorem1_table(spec, variant)
    support = exact > 0
    err, cell = _rel_err(closed, exact, support)
    return CheckReport("theorem1", err <= tol, err, cell,
                       details={"variant": variant, "closed_form": float(closed[cell]),
                                "exact": float(exact[cell])})


# --- theorem 2: logit adjustment ------------------------------------------------

def is_attribute_only(spec: DiscreteGenSpec, atol: float = 1e-12) -> bool:
    t = spec.cond_table
    return bool(np.all(np.abs(t - t[:, :1, :]) <= atol))


def joint_posterior_majority(spec: DiscreteGenSpec) -> np.ndarray:
    """p(y, s=y | x, train) as a (K, L) table; NaN where p(x | train) = 0."""
    xys = joint_xys(spec, DatasetRole.TRAIN)
    L = spec.L
    num = xys[:, np.arange(L), np.arange(L)]
    px = xys.sum(axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(px[:, None] > 0, num / np.where(px > 0, px, 1.0)[:, None], np.nan)


def check_theorem2(spec: DiscreteGenSpec, tol: float, q: np.ndarray | None = None,
                   identity_tol: float = 1e-12) -> CheckReport:
    """Check g = 1 / (L p(y, s=y | x)) and the decomposed objective.

    Requires a uniform label prior, a majority-only training set and an
    attribute-only conditional ``p(x | y, s) = p(x | s)``.
    """
    p_y = np.asarray(spec.p_y)
    if np.max(np.abs(p_y - 1.0 / spec.L)) > 1e-12:
        raise PreconditionViolation("label prior must be uniform")
    if spec.p_m0 != 0.0:
        raise PreconditionViolation("training set must contain only the majority group (p_m0 = 0)")
    if not is_attribute_only(spec):
        raise PreconditionViolation("conditional table must depend on the attribute only")
    exact = exact_weight(spec)
    pj = joint_posterior_majority(spec)
    support = exact > 0
    closed = np.zeros_like(exact)
    closed[support] = 1.0 / (spec.L * pj[support])
    err, cell = _rel_err(closed, exact, support)

    if q is None:
        q = np.random.default_rng(0).dirichlet(np.ones(spec.L), size=spec.K)
    logq = np.log(np.asarray(q, dtype=np.float64))
    logq_s = np.broadcast_to(logq, exact.shape)[support]
    three_term = decomposed_objective(logq_s, pj[support], spec.L)
    g = closed[support]
    identity_err = float(np.max(np.abs(three_term - g * logq_s))) if g.size else 0.0
    passed = err <= tol and identity_err <= identity_tol
    return CheckReport("theorem2", passed, err, cell, details={"identity_abs_err": identity_err})


def attribute_only_spec(s_table: np.ndarray, seed: int = 0) -> DiscreteGenSpec:
    """Uniform labels, majority-only training, ``p(x | y, s) = s_table[x, s]``."""
    s_table = np.asarray(s_table, dtype=np.float64)
    K, L = s_table.shape
    table = np.repeat(s_table[:, None, :], L, axis=1)
    return DiscreteGenSpec(L=L, K=K, p_m0=0.0, p_y=tuple(np.full(L, 1.0 / L)), cond_table=table,
                           seed=seed)


def random_attribute_only_spec(rng: np.random.Generator, L: int, K: int) -> DiscreteGenSpec:
    s_table = rng.dirichlet(np.ones(K), size=L).T
    s_table = s_table / s_table.sum(axis=0, keepdims=True)
    return attribute_only_spec(s_table, seed=int(rng.integers(2**31)))


# --- theorem 3: augmentation class ----------------------------------------------

@dataclass(frozen=True, eq=False)
class TwoGroupSpec:
    """Two-group training law with a shared marginal ``p(x | train)``.

    Train: ``p(x, y) = p_x_tr[x] * (p_m0 * cond_m0[x, y] + p_m1 * cond_m1[x, y])``.
    Test:  ``p(x, y) = p_x_te[x] * cond_m0[x, y]``.
    """

    p_m0: float
    p_x_tr: np.ndarray
    p_x_te: np.ndarray
    cond_m0: np.ndarray  # (K, L): p(y | x, m0, train) = p(y | x, test)
    cond_m1: np.ndarray  # (K, L): p(y | x, m1, train)

    def __post_init__(self):
        for name in ("p_x_tr", "p_x_te", "cond_m0", "cond_m1"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        K, L = self.cond_m0.shape
        if self.cond_m1.shape != (K, L) or self.p_x_tr.shape != (K,) or self.p_x_te.shape != (K,):
            raise ConfigError("inconsistent table shapes")
        if not 0.0 <= self.p_m0 <= 1.0:
            raise DomainError("p_m0 must lie in [0, 1]")
        for name, t, ax in (("p_x_tr", self.p_x_tr, 0), ("p_x_te", self.p_x_te, 0),
                            ("cond_m0", self.cond_m0, 1), ("cond_m1", self.cond_m1, 1)):
            if np.any(t < 0) or np.any(np.abs(t.sum(axis=ax) - 1.0) > 1e-12):
                raise PreconditionViolation(f"{name} is not a probability table")

    @property
    def K(self) -> int:
        return self.cond_m0.shape[0]

    @property
    def L(self) -> int:
        return self.cond_m0.shape[1]

    def joint_train(self) -> np.ndarray:
        mix = self.p_m0 * self.cond_m0 + (1.0 - self.p_m0) * self.cond_m1
        return self.p_x_tr[:, None] * mix

    def joint_test(self) -> np.ndarray:
        return self.p_x_te[:, None] * self.cond_m0


def random_two_group_spec(rng: np.random.Generator, L: int, K: int,
                          p_m0: float | None = None) -> TwoGroupSpec:
    def simplex(shape):
        t = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1]) if len(shape) > 1 \
            else rng.dirichlet(np.ones(shape[0]))
        return t / t.sum(axis=-1, keepdims=True)

    if p_m0 is None:
        p_m0 = float(rng.uniform(0.001, 0.999))
    return TwoGroupSpec(p_m0=p_m0, p_x_tr=simplex((K,)), p_x_te=simplex((K,)),
                        cond_m0=simplex((K, L)), cond_m1=simplex((K, L)))


def augmentation_lambdas(spec: TwoGroupSpec) -> tuple[np.ndarray, np.ndarray]:
    """Mixing coefficients (lam0 on (K,), lam1 on (K, L)); NaN outside the test support."""
    with np.errstate(invalid="ignore", divide="ignore"):
        lam0 = spec.p_m0 / spec.p_x_te
        lam1 = (1.0 - spec.p_m0) * spec.cond_m1 / (spec.cond_m0 * spec.p_x_te[:, None])
    return lam0, lam1


def check_theorem3(spec: TwoGroupSpec, tol: float) -> CheckReport:
    p_tr = spec.joint_train()
    p_te = spec.joint_test()
    if np.any((p_te > 0) & (p_tr <= 0)):
        raise SupportViolation("test support is not contained in training support")
    support = p_te > 0
    exact = np.zeros_like(p_te)
    exact[support] = p_te[support] / p_tr[support]
    lam0, lam1 = augmentation_lambdas(spec)
    lam0_full = np.broadcast_to(lam0[:, None], exact.shape)
    p_x = np.broadcast_to(spec.p_x_tr[:, None], exact.shape)
    closed = np.zeros_like(exact)
    closed[support] = augmentation_weight(lam0_full[support], lam1[support], p_x[support])
    err, cell = _rel_err(closed, exact, support)
    lam_sum = lam0_full[support] + lam1[support]
    return CheckReport("theorem3", err <= tol, err, cell, details={
        "lambda_sum_min": float(lam_sum.min()) if lam_sum.size else None,
        "lambda_sum_max": float(lam_sum.max()) if lam_sum.size else None,
        "lambda_sum_not_one": bool(np.any(np.abs(lam_sum - 1.0) > 1e-9)),
    })


# --- importance-sampling identities ---------------------------------------------

def check_is_identity(spec: DiscreteGenSpec, tol: float, trials: int = 100, seed: int = 0,
                      val_p_m0: float | None = None) -> CheckReport:
    """sum p_tr g f == sum p_te f (and the validation analogue with z) for random bounded f."""
    rng = np.random.default_rng(seed)
    p_tr = exact_joint(spec, DatasetRole.TRAIN).values
    p_te = exact_joint(spec, DatasetRole.TEST).values
    g = exact_weight(spec)
    val_spec = spec.replace(p_m0=spec.p_m0 if val_p_m0 is None else val_p_m0)
    p_va = exact_joint(val_spec, DatasetRole.VAL).values
    z = z_ratio(p_va, p_te)
    worst = 0.0
    for _ in range(trials):
        f = rng.uniform(-1.0, 1.0, size=p_tr.shape)
        target = float(np.sum(p_te * f))
        worst = max(worst, abs(float(np.sum(p_tr * g * f)) - target),
                    abs(float(np.sum(p_va * z * f)) - target))
    return CheckReport("is-identity", worst <= tol, worst, None, trials,
                       details={"metric": "max_abs_err"})


def random_check(check: str, trials: int, tol: float, seed: int = 0,
                 variant: str = "appendix") -> CheckReport:
    """Run ``check`` on ``trials`` randomized conforming specs and aggregate."""
    rng = np.random.default_rng(seed)
    worst: CheckReport | None = None
    lam_not_one = False
    for _ in range(trials):
        L = int(rng.integers(2, 6))
        K = int(rng.integers(L, 65))
        if check == "theorem1":
            rep = check_theorem1(random_discrete_spec(rng, L, K), tol, variant)
        elif check == "theorem2":
            rep = check_theorem2(random_attribute_only_spec(rng, L, K), tol)
        elif check == "theorem3":
            rep = check_theorem3(random_two_group_spec(rng, L, K), tol)
            lam_not_one |= rep.details["lambda_sum_not_one"]
        elif check == "is-identity":
            spec = random_discrete_spec(rng, L, K)
            rep = check_is_identity(spec, tol, trials=10, seed=int(rng.integers(2**31)),
                                    val_p_m0=float(rng.uniform(0.001, 0.999)))
        else:
            raise ConfigError(f"unknown check {check!r}")
        if worst is None or rep.max_rel_err > worst.max_rel_err:
            worst = rep
    assert worst is not None
    out = CheckReport(check, worst.max_rel_err <= tol, worst.max_rel_err, worst.worst_cell,
                      trials, details=dict(worst.details))
    if check == "theorem3":
        out.details["lambda_sum_not_one"] = lam_not_one
    return out


def worked_spec() -> DiscreteGenSpec:
    """L = K = 2, p(x|y,s) = 0.9 if x == s else 0.1, uniform labels, p_m0 = 0.2."""
    t = np.empty((2, 2, 2))
    for x in range(2):
        for s in range(2):
            t[x, :, s] = 0.9 if x == s else 0.1
    return DiscreteGenSpec(L=2, K=2, p_m0=0.2, p_y=(0.5, 0.5), cond_table=t)
