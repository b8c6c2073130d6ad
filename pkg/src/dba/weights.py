"""Closed-form importance weights ``g = p(x, y | test) / p(x, y | train)``.

The central function is :func:`theorem1_weight`, which turns the spurious
posterior ``rho = p(s = y | y, x, train)`` into a per-sample weight under the
two-group (majority ``s = y`` / test-like minority) model of the training set.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    DomainError,
    LengthMismatch,
    SupportViolation,
    TrainStats,
    UnknownAttributes,
    ZeroCountClass,
    ZeroCountGroup,
)

RHO_FLOOR = 1e-6
P_M0_FLOOR = 1e-12


class Provenance(str, enum.Enum):
    THEOREM1 = "theorem1"
    ONES = "ones"
    CLASS_BALANCE = "class_balance"
    GROUP_BALANCE = "group_balance"
    LOGIT_ADJUST = "logit_adjust"
    EXACT_RATIO = "exact_ratio"


@dataclass(frozen=True, eq=False)
class WeightVector:
    values: np.ndarray
    provenance: Provenance = Provenance.ONES
    n_clamped: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise DomainError("weights must be finite and strictly positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def ones(cls, n: int) -> "WeightVector":
        return cls(np.ones(n), Provenance.ONES)

    def self_normalized(self) -> "WeightVector":
        """Rescale to mean one (optional; never applied by default)."""
        return WeightVector(self.values / self.values.mean(), self.provenance, self.n_clamped)


def clamp_rho(rho, floor: float = RHO_FLOOR) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(np.isnan(rho)) or np.any(rho > 1.0 + 1e-12):
        raise DomainError("spurious posterior must lie in [0, 1]")
    return np.clip(rho, floor, 1.0)


def theorem1_inverse(rho, p_y_of_sample, p_m0: float, L: int, variant: str = "appendix") -> np.ndarray:
    """``1 / g`` from the spurious posterior, elementwise.

    ``variant="appendix"`` keeps the ``p(m1)`` factor on the majority term of
    the bracket; ``variant="maintext"`` drops it.  Only the former equals the
    true density ratio; the latter is kept for comparison.
    """
    rho = np.asarray(rho, dtype=np.float64)
    p = np.asarray(p_y_of_sample, dtype=np.float64)
    if variant not in ("appendix", "maintext"):
        raise ValueError(f"unknown variant {variant!r}")
    if p_m0 == 1.0:
        return np.ones(np.broadcast(rho, p).shape)
    p0 = max(p_m0, P_M0_FLOOR)
    p1 = 1.0 - p0
    a = (p - p0 * p) / p1  # p(y | m1, train); equals p(y | train) under the label assumption
    c = p0 * p / L
    majority = p1 * a if variant == "appendix" else a
    bracket = (c + majority) / c
    # a / (1 + B (1 - rho) / rho), rearranged so tiny rho cannot overflow
    return p0 + p1 * (L / p) * a * rho / (rho + bracket * (1.0 - rho))


def theorem1_weight(rho, y, stats: TrainStats, variant: str = "appendix",
                    clamp: bool = True) -> WeightVector:
    """Per-sample weight from the spurious posterior and training statistics."""
    y = np.asarray(y, dtype=np.int64)
    rho = np.asarray(rho, dtype=np.float64).reshape(-1)
    if rho.shape != y.shape:
        raise LengthMismatch("rho and y must have the same length")
    if clamp:
        n_clamped = int(np.sum(rho < RHO_FLOOR))
        rho = clamp_rho(rho)
    else:
        n_clamped = 0
        if np.any(rho <= 0) or np.any(rho > 1):
            raise DomainError("rho must lie in (0, 1] when clamping is disabled")
    p = np.asarray(stats.p_y)[y]
    inv = theorem1_inverse(rho, p, stats.p_m0, stats.L, variant)
    return WeightVector(1.0 / inv, Provenance.THEOREM1, n_clamped)


def z_ratio(p_va: np.ndarray, p_te: np.ndarray) -> np.ndarray:
    """Entrywise ``p_te / p_va`` on a (K, L) table; zero where ``p_te`` is zero."""
    p_va = np.asarray(getattr(p_va, "values", p_va), dtype=np.float64)
    p_te = np.asarray(getattr(p_te, "values", p_te), dtype=np.float64)
    if p_va.shape != p_te.shape:
        raise LengthMismatch("tables must have the same shape")
    if np.any((p_te > 0) & (p_va <= 0)):
        raise SupportViolation("test support is not contained in validation support")
    out = np.zeros_like(p_te)
    nz = p_te > 0
    out[nz] = p_te[nz] / p_va[nz]
    return out


def class_balance_weight(dataset: Dataset) -> WeightVector:
    """ReWeight baseline: ``1 / (L * p_hat(y))``, i.e. a uniform target class law."""
    counts = np.bincount(dataset.y, minlength=dataset.L)
    if np.any(counts == 0):
        raise ZeroCountClass(f"classes {np.flatnonzero(counts == 0).tolist()} have no samples")
    p_hat = counts / dataset.n
    return WeightVector(1.0 / (dataset.L * p_hat[dataset.y]), Provenance.CLASS_BALANCE)


def group_counts(dataset: Dataset) -> np.ndarray:
    if not dataset.has_attributes:
        raise UnknownAttributes("group statistics need known attributes")
    L = dataset.L
    return np.bincount(dataset.y * L + dataset.s, minlength=L * L).reshape(L, L)


def group_balance_weight(dataset: Dataset) -> WeightVector:
    """``1 / (L**2 * p_hat(y, s))``: a uniform target law over (y, s) cells."""
    counts = group_counts(dataset)
    if np.any(counts == 0):
        empty = [tuple(c) for c in np.argwhere(counts == 0).tolist()]
        raise ZeroCountGroup(f"(y, s) cells {empty} have no samples")
    p_hat = counts / dataset.n
    return WeightVector(1.0 / (dataset.L ** 2 * p_hat[dataset.y, dataset.s]),
                        Provenance.GROUP_BALANCE)


def logit_adjust_weight(p_joint, L: int, floor: float = RHO_FLOOR) -> WeightVector:
    """``1 / (L * p(y, s=y | x))`` for a majority-only, class-uniform training set.

    Entries below ``floor`` are clamped and counted in ``n_clamped``.
    """
    p = np.asarray(p_joint, dtype=np.float64).reshape(-1)
    if np.any(np.isnan(p)) or np.any(p <= 0) or np.any(p > 1):
        raise DomainError("joint posterior entries must lie in (0, 1]")
    n_clamped = int(np.sum(p < floor))
    p = np.maximum(p, floor)
    return WeightVector(1.0 / (L * p), Provenance.LOGIT_ADJUST, n_clamped)


def decomposed_objective(q_loglik, p_joint, L: int) -> np.ndarray:
    """Per-sample ``g (log q + log p) + g log(L g)``; equals ``g log q`` exactly in theory."""
    q_loglik = np.asarray(q_loglik, dtype=np.float64).reshape(-1)
    p = np.asarray(p_joint, dtype=np.float64).reshape(-1)
    if q_loglik.shape != p.shape:
        raise LengthMismatch("q_loglik and p_joint must have the same length")
    g = logit_adjust_weight(p, L, floor=0.0 if np.all(p > 0) else RHO_FLOOR).values
    return g * (q_loglik + np.log(p)) + g * np.log(L * g)


def augmentation_weight(lam0, lam1, p_x_tr):
    """``1 / ((lam0 + lam1) * p(x | train))``; works elementwise on arrays."""
    lam0 = np.asarray(lam0, dtype=np.float64)
    lam1 = np.asarray(lam1, dtype=np.float64)
    p_x_tr = np.asarray(p_x_tr, dtype=np.float64)
    if np.any(lam0 < 0) or np.any(lam1 < 0):
        raise DomainError("mixing coefficients must be nonnegative")
    if np.any(p_x_tr <= 0):
        raise DomainError("p(x | train) must be positive")
    if np.any(lam0 + lam1 == 0):
        raise DomainError("mixing coefficients cannot both be zero")
    g = 1.0 / ((lam0 + lam1) * p_x_tr)
    return float(g) if g.ndim == 0 else g


def weighted_loglik(loglik, weights) -> float:
    """``(1/n) sum_i w_i log q(y_i | x_i)``."""
    loglik = np.asarray(loglik, dtype=np.float64).reshape(-1)
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64).reshape(-1)
    if loglik.size == 0 or loglik.shape != w.shape:
        raise LengthMismatch("loglik and weights must be nonempty and of equal length")
    return float(np.dot(w, loglik) / loglik.size)
