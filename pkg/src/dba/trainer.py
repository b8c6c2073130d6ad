"""Weighted maximum-likelihood training of a softmax classifier.

The model is linear-softmax, optionally with one ReLU hidden layer.  Gradients
are analytic; the optimizer is plain mini-batch SGD with a seeded shuffle per
epoch, so a run is a deterministic function of (data, weights, config).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import (
    ConfigError,
    Dataset,
    DimensionMismatch,
    DomainError,
    EmptyCheckpoints,
    EmptyDataset,
    LengthMismatch,
    fmt_float,
)
from .weights import WeightVector


@dataclass(frozen=True, eq=False)
class SoftmaxModel:
    """``W`` is (L, d+1) for the linear model, or (L, h+1) on top of ``W1`` (h, d+1).

    The last column of each matrix is the bias.
    """

    W: np.ndarray
    W1: np.ndarray | None = None

    def __post_init__(self):
        for name in ("W", "W1"):
            a = getattr(self, name)
            if a is None:
                continue
            a = np.array(a, dtype=np.float64)
            if a.ndim != 2 or not np.all(np.isfinite(a)):
                raise DomainError(f"{name} must be a finite matrix")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.W1 is not None and self.W.shape[1] != self.W1.shape[0] + 1:
            raise DimensionMismatch("W must have h+1 columns when a hidden layer is present")

    @property
    def L(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return (self.W if self.W1 is None else self.W1).shape[1] - 1

    @property
    def hidden(self) -> int:
        return 0 if self.W1 is None else self.W1.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.W] if self.W1 is None else [self.W, self.W1]

    @classmethod
    def zeros(cls, L: int, d: int) -> "SoftmaxModel":
        return cls(np.zeros((L, d + 1)))

    @classmethod
    def init(cls, L: int, d: int, hidden: int = 0, seed: int = 0) -> "SoftmaxModel":
        if hidden == 0:
            return cls.zeros(L, d)
        rng = np.random.default_rng(seed)
        W1 = np.hstack([rng.normal(0.0, np.sqrt(2.0 / d), size=(hidden, d)), np.zeros((hidden, 1))])
        W = np.hstack([rng.normal(0.0, np.sqrt(1.0 / hidden), size=(L, hidden)), np.zeros((L, 1))])
        return cls(W, W1)

    def to_dict(self) -> dict:
        out = {"L": self.L, "d": self.d, "hidden": self.hidden,
               "W": {"shape": list(self.W.shape), "data": [fmt_float(v) for v in self.W.ravel()]}}
        if self.W1 is not None:
            out["W1"] = {"shape": list(self.W1.shape),
                         "data": [fmt_float(v) for v in self.W1.ravel()]}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SoftmaxModel":
        def mat(entry):
            return np.array([float(v) for v in entry["data"]]).reshape(entry["shape"])

        return cls(mat(d["W"]), mat(d["W1"]) if "W1" in d else None)


def save_model(model: SoftmaxModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_model(path) -> SoftmaxModel:
    return SoftmaxModel.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    hidden: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.hidden < 0 or self.weight_decay < 0:
            raise ConfigError("hidden width and weight decay must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _forward(model: SoftmaxModel, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.d:
        raise DimensionMismatch(f"expected {model.d} features, got {X.shape[1]}")
    Xb = _augment(X)
    if model.W1 is None:
        return Xb @ model.W.T, (Xb,)
    pre = Xb @ model.W1.T
    H = np.maximum(pre, 0.0)
    Hb = _augment(H)
    return Hb @ model.W.T, (Xb, pre, Hb)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def log_proba(model: SoftmaxModel, X: np.ndarray) -> np.ndarray:
    logits, _ = _forward(model, X)
    return log_softmax(logits)


def predict_proba(model: SoftmaxModel, X: np.ndarray) -> np.ndarray:
    """Row-wise class probabilities; a single vector gives a single row."""
    single = np.asarray(X).ndim == 1
    P = np.exp(log_proba(model, X))
    return P[0] if single else P


def predict(model: SoftmaxModel, X: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum: ties go to the smallest class index
    return np.argmax(log_proba(model, X), axis=1)


def loss_and_grad(model: SoftmaxModel, X: np.ndarray, y: np.ndarray, w,
                  weight_decay: float = 0.0) -> tuple[float, list[np.ndarray]]:
    """Negative weighted mean log-likelihood and its gradient (same layout as ``params()``)."""
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(getattr(w, "values", w), dtype=np.float64)
    n = y.size
    if n == 0:
        raise EmptyDataset("empty batch")
    if w.shape != y.shape or np.asarray(X).shape[0] != n:
        raise LengthMismatch("X, y and weights must be aligned")
    logits, cache = _forward(model, X)
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -float(np.sum(w * logp[rows, y])) / n
    G = np.exp(logp)
    G[rows, y] -= 1.0
    G *= w[:, None]
    G /= n
    if model.W1 is None:
        grads = [G.T @ cache[0]]
    else:
        Xb, pre, Hb = cache
        dW = G.T @ Hb
        dpre = (G @ model.W[:, :-1]) * (pre > 0)
        grads = [dW, dpre.T @ Xb]
    if weight_decay:
        for p, g in zip(model.params(), grads):
            loss += 0.5 * weight_decay * float(np.sum(p * p))
            g += weight_decay * p
    return loss, grads


def loss_and_grad_unweighted(model: SoftmaxModel, X: np.ndarray, y: np.ndarray,
                             weight_decay: float = 0.0) -> tuple[float, list[np.ndarray]]:
    """Plain ERM objective; reference path for the unit-weight reduction."""
    y = np.asarray(y, dtype=np.int64)
    n = y.size
    if n == 0:
        raise EmptyDataset("empty batch")
    logits, cache = _forward(model, X)
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -float(np.sum(logp[rows, y])) / n
    G = np.exp(logp)
    G[rows, y] -= 1.0
    G /= n
    if model.W1 is None:
        grads = [G.T @ cache[0]]
    else:
        Xb, pre, Hb = cache
        grads = [G.T @ Hb, ((G @ model.W[:, :-1]) * (pre > 0)).T @ Xb]
    if weight_decay:
        for p, g in zip(model.params(), grads):
            loss += 0.5 * weight_decay * float(np.sum(p * p))
            g += weight_decay * p
    return loss, grads


def _with_params(params: list[np.ndarray]) -> SoftmaxModel:
    return SoftmaxModel(params[0], params[1] if len(params) > 1 else None)


@dataclass
class FitResult:
    model: SoftmaxModel
    checkpoints: list[SoftmaxModel] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def epochs_run(self) -> int:
        return len(self.checkpoints)


def accuracy(model: SoftmaxModel, data: Dataset) -> float:
    return float(np.mean(predict(model, data.X) == data.y))


def _sgd(data: Dataset, w: np.ndarray | None, cfg: TrainConfig,
         stop: Callable[[SoftmaxModel], bool] | None = None,
         track_accuracy: bool = False) -> FitResult:
    if data.n == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    model = SoftmaxModel.init(data.L, data.d, cfg.hidden, cfg.seed)
    params = [p.copy() for p in model.params()]
    rng = np.random.default_rng(cfg.seed)
    X, y = data.X, data.y
    result = FitResult(model)
    for _ in range(cfg.epochs):
        perm = rng.permutation(data.n)
        for start in range(0, data.n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            current = _with_params(params)
            if w is None:
                _, grads = loss_and_grad_unweighted(current, X[idx], y[idx], cfg.weight_decay)
            else:
                _, grads = loss_and_grad(current, X[idx], y[idx], w[idx], cfg.weight_decay)
            for p, g in zip(params, grads):
                p -= cfg.lr * g
        model = _with_params(params)
        result.checkpoints.append(model)
        if track_accuracy or stop is not None:
            result.train_accuracy.append(accuracy(model, data))
        if stop is not None and stop(model):
            break
    result.model = model
    return result


def fit_weighted(train: Dataset, weights, cfg: TrainConfig) -> FitResult:
    """Mini-batch SGD on the weighted negative log-likelihood.

    Returns the final model plus one checkpoint per epoch.
    """
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    if w.shape != (train.n,):
        raise LengthMismatch(f"expected {train.n} weights, got {w.size}")
    return _sgd(train, w, cfg)


def fit_unweighted(train: Dataset, cfg: TrainConfig) -> FitResult:
    return _sgd(train, None, cfg)


def fit_overfit(data: Dataset, cfg: TrainConfig, target: float = 0.99) -> FitResult:
    """Train with unit weights until training accuracy reaches ``target`` or the epoch cap.

    ``converged`` is False when the cap is hit first (not an error).
    """
    result = _sgd(data, np.ones(data.n), cfg, stop=lambda m: accuracy(m, data) >= target)
    result.converged = bool(result.train_accuracy and result.train_accuracy[-1] >= target)
    return result


def resample_dataset(train: Dataset, weights, seed: int) -> Dataset:
    """Bootstrap ``n`` draws with replacement, probability proportional to the weights."""
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    if w.shape != (train.n,) or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise DomainError("resampling weights must be positive, finite and aligned")
    idx = np.random.default_rng(seed).choice(train.n, size=train.n, replace=True, p=w / w.sum())
    return train.subset(idx)


def mean_loglik(model: SoftmaxModel, dataset: Dataset, weights=None) -> float:
    logp = log_proba(model, dataset.X)[np.arange(dataset.n), dataset.y]
    if weights is None:
        return float(np.mean(logp))
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    if w.shape != logp.shape:
        raise LengthMismatch("weights must align with the dataset")
    return float(np.dot(w, logp) / dataset.n)


def select_model(checkpoints: list[SoftmaxModel], val: Dataset, z=None,
                 criterion: str = "loglik") -> SoftmaxModel:
    """Checkpoint maximizing the (z-weighted) validation criterion; earliest wins ties."""
    if not checkpoints:
        raise EmptyCheckpoints("no checkpoints to select from")
    if z is not None and isinstance(z, WeightVector):
        z = z.values
    best, best_score = checkpoints[0], -np.inf
    for model in checkpoints:
        if criterion == "loglik":
            score = mean_loglik(model, val, z)
        elif criterion == "accuracy":
            hit = (predict(model, val.X) == val.y).astype(np.float64)
            score = float(np.mean(hit if z is None else hit * np.asarray(z)))
        else:
            raise ConfigError(f"unknown selection criterion {criterion!r}")
        if score > best_score:
            best, best_score = model, score
    return best
