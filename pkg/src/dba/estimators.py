"""Estimators of the spurious posterior ``rho = p(s = y | y, x, train)``.

Three regimes:

* ``known``: attributes observed; one attribute classifier per class stratum.
* ``same``: attributes unknown, validation drawn from the training law; two
  overfit models (train, val) and ``rho = exp(-|log p_A - log p_B| / tau)``.
* ``diff``: attributes unknown, validation law differs; one overfit model and
  ``rho = p_A(y | x) ** (1 / tau)``.

Each estimator is fitted once and can then score any dataset with the same
feature layout (needed for weighted model selection on validation data).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    Dataset,
    DimensionMismatch,
    EmptyDataset,
    StratumTooSmall,
    UnknownAttributes,
)
from .trainer import FitResult, SoftmaxModel, TrainConfig, fit_overfit, fit_unweighted, log_proba
from .weights import RHO_FLOOR


class Regime(str, enum.Enum):
    KNOWN_S = "known"
    SAME_DIST_VAL = "same"
    DIFF_DIST_VAL = "diff"


@dataclass(frozen=True)
class EstimatorConfig:
    regime: Regime = Regime.KNOWN_S
    tau: float = 1.0
    epochs: int = 500          # epoch cap for every fitted model
    lr: float = 0.1
    batch_size: int = 128
    hidden: int = 0
    seed: int = 0
    overfit_target: float = 0.99  # training accuracy that ends an overfitting run

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 < self.overfit_target <= 1:
            raise ConfigError("overfit_target must lie in (0, 1]")

    def train_config(self, seed_offset: int = 0) -> TrainConfig:
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           seed=self.seed + seed_offset, hidden=self.hidden)


def _clamp(rho: np.ndarray) -> np.ndarray:
    return np.clip(rho, RHO_FLOOR, 1.0)


def _true_class_logp(model: SoftmaxModel, data: Dataset) -> np.ndarray:
    return log_proba(model, data.X)[np.arange(data.n), data.y]


@dataclass
class KnownSEstimator:
    """Attribute classifiers ``p(s | x)`` fitted separately within each class stratum."""

    models: list[SoftmaxModel]
    tau: float = 1.0

    @classmethod
    def fit(cls, train: Dataset, cfg: EstimatorConfig) -> "KnownSEstimator":
        if not train.has_attributes:
            raise UnknownAttributes("the known-attribute estimator needs observed attributes")
        models = []
        for c in range(train.L):
            idx = np.flatnonzero(train.y == c)
            if idx.size < train.L:
                raise StratumTooSmall(f"class {c} has {idx.size} samples (< L = {train.L})")
            stratum = train.subset(idx)
            # relabel: the attribute becomes the target of the stratum classifier
            attr = Dataset(stratum.X, stratum.s, stratum.s, stratum.m, role=stratum.role,
                           L=train.L)
            models.append(fit_unweighted(attr, cfg.train_config(seed_offset=c)).model)
        return cls(models, cfg.tau)

    def rho(self, data: Dataset) -> np.ndarray:
        out = np.empty(data.n)
        for c, model in enumerate(self.models):
            idx = np.flatnonzero(data.y == c)
            if idx.size:
                out[idx] = np.exp(log_proba(model, data.X[idx])[:, c])
        return _clamp(out)


@dataclass
class SameDistEstimator:
    model_train: SoftmaxModel
    model_val: SoftmaxModel
    tau: float = 1.0
    fits: tuple[FitResult, FitResult] | None = None

    @classmethod
    def fit(cls, train: Dataset, val: Dataset, cfg: EstimatorConfig) -> "SameDistEstimator":
        if val.n == 0 or train.n == 0:
            raise EmptyDataset("train and val must be nonempty")
        if val.d != train.d or val.L != train.L:
            raise DimensionMismatch("train and val must share L and d")
        fa = fit_overfit(train, cfg.train_config(0), cfg.overfit_target)
        fb = fit_overfit(val, cfg.train_config(1), cfg.overfit_target)
        return cls(fa.model, fb.model, cfg.tau, (fa, fb))

    def delta(self, data: Dataset) -> np.ndarray:
        return np.abs(_true_class_logp(self.model_train, data) - _true_class_logp(self.model_val, data))

    def rho(self, data: Dataset) -> np.ndarray:
        return _clamp(rho_from_delta(self.delta(data), self.tau))


@dataclass
class DiffDistEstimator:
    model_train: SoftmaxModel
    tau: float = 1.0
    fit_result: FitResult | None = None

    @classmethod
    def fit(cls, train: Dataset, cfg: EstimatorConfig) -> "DiffDistEstimator":
        if train.n == 0:
            raise EmptyDataset("train must be nonempty")
        fa = fit_overfit(train, cfg.train_config(0), cfg.overfit_target)
        return cls(fa.model, cfg.tau, fa)

    def rho(self, data: Dataset) -> np.ndarray:
        return _clamp(rho_from_likelihood(_true_class_logp(self.model_train, data), self.tau))


def rho_from_delta(delta, tau: float) -> np.ndarray:
    """``exp(-delta / tau)``: identical likelihoods mean the attribute agrees with the label."""
    return np.exp(-np.asarray(delta, dtype=np.float64) / tau)


def rho_from_likelihood(log_p, tau: float) -> np.ndarray:
    """``p ** (1 / tau)`` computed from ``log p``."""
    return np.exp(np.asarray(log_p, dtype=np.float64) / tau)


def estimate_known_s(train: Dataset, cfg: EstimatorConfig) -> np.ndarray:
    return KnownSEstimator.fit(train, cfg).rho(train)


def estimate_same_dist(train: Dataset, val: Dataset, cfg: EstimatorConfig) -> np.ndarray:
    return SameDistEstimator.fit(train, val, cfg).rho(train)


def estimate_diff_dist(train: Dataset, cfg: EstimatorConfig) -> np.ndarray:
    return DiffDistEstimator.fit(train, cfg).rho(train)


def fit_estimator(train: Dataset, cfg: EstimatorConfig, val: Dataset | None = None):
    if cfg.regime is Regime.KNOWN_S:
        return KnownSEstimator.fit(train, cfg)
    if cfg.regime is Regime.SAME_DIST_VAL:
        if val is None:
            raise ConfigError("the same-distribution regime needs a validation set")
        return SameDistEstimator.fit(train, val, cfg)
    return DiffDistEstimator.fit(train, cfg)


def estimate(train: Dataset, cfg: EstimatorConfig, val: Dataset | None = None) -> np.ndarray:
    return fit_estimator(train, cfg, val).rho(train)

