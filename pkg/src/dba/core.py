"""Domain data model: samples, datasets, training statistics, run records.

Datasets are stored column-wise as read-only numpy arrays.  Unknown
attribute / group values use the sentinel ``UNKNOWN = -1``.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

UNKNOWN = -1
M0 = 0  # minority group: shares the test-set statistics
M1 = 1  # majority group: s == y


class DBAError(Exception):
    """Base class for all library errors."""


class ConfigError(DBAError):
    pass


class EmptyDataset(DBAError):
    pass


class ZeroCountClass(DBAError):
    pass


class ZeroCountGroup(DBAError):
    pass


class BadFractions(DBAError):
    pass


class UnknownAttributes(DBAError):
    pass


class DimensionMismatch(DBAError):
    pass


class LengthMismatch(DBAError):
    pass


class DomainError(DBAError):
    pass


class SupportViolation(DBAError):
    pass


class ZeroDenominator(DBAError):
    pass


class PreconditionViolation(DBAError):
    pass


class StratumTooSmall(DBAError):
    pass


class EmptyCheckpoints(DBAError):
    pass


class DatasetRole(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"

    @classmethod
    def parse(cls, value: "str | DatasetRole") -> "DatasetRole":
        if isinstance(value, DatasetRole):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise ConfigError(f"unknown dataset role {value!r}") from None


@dataclass(frozen=True)
class Sample:
    x: tuple[float, ...]
    y: int
    s: int = UNKNOWN
    m: int = UNKNOWN


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """A labelled sample of ``n`` feature vectors with attribute and group tags."""

    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    m: np.ndarray
    role: DatasetRole
    L: int
    seed: int = 0
    spec_digest: str | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionMismatch(f"features must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        s = np.asarray(self.s, dtype=np.int64).reshape(-1)
        m = np.asarray(self.m, dtype=np.int64).reshape(-1)
        if not (len(y) == len(s) == len(m) == n):
            raise LengthMismatch("X, y, s, m must have equal length")
        if self.L < 2:
            raise ConfigError(f"L must be >= 2, got {self.L}")
        if not np.all(np.isfinite(X)):
            raise DomainError("feature matrix contains NaN or Inf")
        if n and (y.min() < 0 or y.max() >= self.L):
            raise DomainError("class index out of range [0, L)")
        known = s != UNKNOWN
        if known.any() and not known.all():
            raise UnknownAttributes("attribute availability must be homogeneous")
        if known.all() and n and (s.min() < 0 or s.max() >= self.L):
            raise DomainError("attribute index out of range [0, L)")
        if np.any((m != UNKNOWN) & (m != M0) & (m != M1)):
            raise DomainError("group tag must be m0 (0), m1 (1) or unknown (-1)")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "s", _readonly(s))
        object.__setattr__(self, "m", _readonly(m))
        object.__setattr__(self, "role", DatasetRole.parse(self.role))
        object.__setattr__(self, "L", int(self.L))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def has_attributes(self) -> bool:
        return self.n > 0 and bool(self.s[0] != UNKNOWN)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.role == other.role
            and self.L == other.L
            and self.seed == other.seed
            and self.spec_digest == other.spec_digest
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.m, other.m)
        )

    __hash__ = None  # type: ignore[assignment]

    def samples(self) -> Iterator[Sample]:
        for i in range(self.n):
            yield Sample(tuple(self.X[i].tolist()), int(self.y[i]), int(self.s[i]), int(self.m[i]))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], role, L: int, seed: int = 0,
                     spec_digest: str | None = None) -> "Dataset":
        if not samples:
            raise EmptyDataset("no samples given")
        dims = {len(smp.x) for smp in samples}
        if len(dims) != 1:
            raise DimensionMismatch(f"samples have differing dimensions {sorted(dims)}")
        return cls(
            X=np.array([smp.x for smp in samples], dtype=np.float64),
            y=[smp.y for smp in samples],
            s=[smp.s for smp in samples],
            m=[smp.m for smp in samples],
            role=role, L=L, seed=seed, spec_digest=spec_digest,
        )

    def subset(self, idx: np.ndarray, role=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.s[idx], self.m[idx],
                       role=self.role if role is None else role, L=self.L,
                       seed=self.seed, spec_digest=self.spec_digest)

    def without_attributes(self) -> "Dataset":
        unk = np.full(self.n, UNKNOWN)
        return Dataset(self.X, self.y, unk, unk, role=self.role, L=self.L,
                       seed=self.seed, spec_digest=self.spec_digest)


@dataclass(frozen=True)
class TrainStats:
    """Training-set composition used by the closed-form weight."""

    p_m0: float
    p_y: tuple[float, ...]
    L: int
    tau: float = 1.0

    def __post_init__(self):
        p_y = tuple(float(v) for v in np.asarray(self.p_y, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "p_y", p_y)
        if self.L < 2 or len(p_y) != self.L:
            raise ConfigError(f"p_y must have length L={self.L} >= 2")
        if abs(sum(p_y) - 1.0) > 1e-12 or min(p_y) <= 0.0:
            raise DomainError("p_y must be a strictly positive simplex")
        if not 0.0 <= self.p_m0 <= 1.0:
            raise DomainError(f"p_m0 must lie in [0, 1], got {self.p_m0}")
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")

    @property
    def p_m1(self) -> float:
        return 1.0 - self.p_m0


def compute_label_stats(dataset: Dataset, p_m0: float, tau: float = 1.0) -> TrainStats:
    """Exact empirical class frequencies (no smoothing) plus the given priors."""
    if dataset.n == 0:
        raise EmptyDataset("cannot compute label statistics of an empty dataset")
    counts = np.bincount(dataset.y, minlength=dataset.L)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ZeroCountClass(f"classes {missing} have no samples")
    return TrainStats(p_m0=float(p_m0), p_y=tuple(counts / dataset.n), L=dataset.L, tau=float(tau))


def split_dataset(dataset: Dataset, fractions: Sequence[float], seed: int) -> list[Dataset]:
    """Disjoint split by a seeded permutation; part sizes are within 1 of n*fraction."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or fr.size == 0 or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be positive and sum to 1, got {list(fractions)}")
    n = dataset.n
    # largest-remainder rounding keeps every size within 1 of n*fraction
    raw = fr * n
    sizes = np.floor(raw).astype(np.int64)
    short = n - sizes.sum()
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:short]] += 1
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [dataset.subset(np.sort(perm[a:b])) for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass
class RunRecord:
    method: str
    seed: int
    config: dict[str, Any]
    metrics: dict[str, dict[str, Any]] = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"method": self.method, "seed": self.seed, "config": self.config,
                "metrics": self.metrics, "seconds": self.seconds}


# --- serialization -----------------------------------------------------------

def fmt_float(v: float) -> str:
    return format(float(v), ".17g")


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write ``path`` (CSV) and ``path.json`` (metadata).  Returns the sidecar path."""
    path = Path(path)
    header = [f"x{j}" for j in range(dataset.d)] + ["y", "s", "m"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            w.writerow([fmt_float(v) for v in dataset.X[i]]
                       + [int(dataset.y[i]), int(dataset.s[i]), int(dataset.m[i])])
    meta = {"L": dataset.L, "d": dataset.d, "role": dataset.role.value, "seed": dataset.seed,
            "n": dataset.n, "spec_digest": dataset.spec_digest}
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    meta = json.loads(sidecar_path(path).read_text())
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = int(meta["d"])
    if len(header) != d + 3 or header[-3:] != ["y", "s", "m"]:
        raise DimensionMismatch(f"{path}: header does not match d={d}")
    if len(body) != int(meta["n"]):
        raise LengthMismatch(f"{path}: expected {meta['n']} rows, found {len(body)}")
    arr = np.array(body, dtype=object).reshape(len(body), d + 3)
    X = arr[:, :d].astype(np.float64) if body else np.zeros((0, d))
    ints = arr[:, d:].astype(np.int64) if body else np.zeros((0, 3), dtype=np.int64)
    return Dataset(X, ints[:, 0], ints[:, 1], ints[:, 2], role=meta["role"], L=int(meta["L"]),
                   seed=int(meta["seed"]), spec_digest=meta.get("spec_digest"))


def save_column(values: np.ndarray, name: str, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(name + "\n")
        for v in np.asarray(values, dtype=np.float64):
            fh.write(fmt_float(v) + "\n")


def load_column(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().split()
    return np.array([float(v) for v in lines[1:]], dtype=np.float64)
