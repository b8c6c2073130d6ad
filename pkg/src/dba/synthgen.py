"""Synthetic subpopulation-shift generators.

Two families share one (m, y, s) law:

* train / val: ``m = m0`` with probability ``p_m0``; ``y ~ p_y``; ``s = y`` in the
  majority group m1 and ``s ~ Uniform(L)`` in the minority group m0.
* test: every sample is m0, i.e. ``y ~ p_y`` and ``s ~ Uniform(L)``.

The discrete family draws ``x`` from a finite alphabet through a shared table
``p(x | y, s)`` and emits it one-hot; the Gaussian family concatenates a core
block centred on ``y`` and a spurious block centred on ``s``.

Randomness is drawn per block of ``BLOCK`` samples from a Philox stream keyed
by ``(seed, role, block index)``.  Every block draws a full ``BLOCK`` worth of
randomness and truncates, so row ``i`` depends only on ``(seed, role, i)``: any
partition of the blocks across workers, and any shorter draw, reproduces the
same rows.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import M0, M1, ConfigError, Dataset, DatasetRole, DomainError

BLOCK = 4096
_ROLE_KEY = {DatasetRole.TRAIN: 0, DatasetRole.VAL: 1, DatasetRole.TEST: 2}


def _check_simplex(p: np.ndarray, what: str, axis: int = -1) -> None:
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=axis) - 1.0) > 1e-12):
        raise DomainError(f"{what} must be a probability simplex (tol 1e-12)")


def spec_digest(spec_dict: dict[str, Any]) -> str:
    payload = json.dumps(spec_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class DiscreteGenSpec:
    """Fully enumerable generative model over a finite x alphabet of size K.

    ``cond_table[x, y, s] = p(x | y, s)``, shared by every dataset role.
    """

    L: int
    K: int
    p_m0: float
    p_y: tuple[float, ...]
    cond_table: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.L < 2 or self.K < 1:
            raise ConfigError("need L >= 2 and K >= 1")
        p_y = np.asarray(self.p_y, dtype=np.float64)
        if p_y.shape != (self.L,):
            raise ConfigError(f"p_y must have length {self.L}")
        _check_simplex(p_y, "p_y")
        if not 0.0 <= self.p_m0 <= 1.0:
            raise DomainError("p_m0 must lie in [0, 1]")
        table = np.array(self.cond_table, dtype=np.float64)
        if table.shape != (self.K, self.L, self.L):
            raise ConfigError(f"cond_table must have shape (K, L, L) = {(self.K, self.L, self.L)}")
        _check_simplex(table, "each (y, s) column of cond_table", axis=0)
        table.setflags(write=False)
        object.__setattr__(self, "p_y", tuple(p_y.tolist()))
        object.__setattr__(self, "cond_table", table)
        object.__setattr__(self, "p_m0", float(self.p_m0))

    def replace(self, **changes) -> "DiscreteGenSpec":
        kw = dict(L=self.L, K=self.K, p_m0=self.p_m0, p_y=self.p_y,
                  cond_table=self.cond_table, seed=self.seed)
        kw.update(changes)
        return DiscreteGenSpec(**kw)

    def to_dict(self) -> dict[str, Any]:
        return {"family": "discrete", "L": self.L, "K": self.K, "p_m0": self.p_m0,
                "p_y": list(self.p_y), "cond_table": self.cond_table.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DiscreteGenSpec":
        return cls(L=int(d["L"]), K=int(d["K"]), p_m0=float(d["p_m0"]), p_y=tuple(d["p_y"]),
                   cond_table=np.asarray(d["cond_table"], dtype=np.float64),
                   seed=int(d.get("seed", 0)))

    @property
    def digest(self) -> str:
        return spec_digest(self.to_dict())


@dataclass(frozen=True, eq=False)
class GaussianGenSpec:
    """Continuous analogue of a coloured-digit benchmark.

    A small ``sigma_spur`` makes the spurious block more separable than the
    core block, which is what drives ERM towards the shortcut.
    """

    L: int
    d_core: int
    d_spur: int
    core_means: np.ndarray
    spur_means: np.ndarray
    sigma_core: float
    sigma_spur: float
    p_m0: float
    p_y: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        core = np.array(self.core_means, dtype=np.float64)
        spur = np.array(self.spur_means, dtype=np.float64)
        if core.shape != (self.L, self.d_core) or spur.shape != (self.L, self.d_spur):
            raise ConfigError("means must have shapes (L, d_core) and (L, d_spur)")
        if not (np.all(np.isfinite(core)) and np.all(np.isfinite(spur))):
            raise DomainError("means must be finite")
        if self.sigma_core < 0 or self.sigma_spur < 0:
            raise DomainError("noise scales must be nonnegative")
        p_y = np.asarray(self.p_y, dtype=np.float64)
        if p_y.shape != (self.L,):
            raise ConfigError(f"p_y must have length {self.L}")
        _check_simplex(p_y, "p_y")
        if not 0.0 <= self.p_m0 <= 1.0:
            raise DomainError("p_m0 must lie in [0, 1]")
        core.setflags(write=False)
        spur.setflags(write=False)
        object.__setattr__(self, "core_means", core)
        object.__setattr__(self, "spur_means", spur)
        object.__setattr__(self, "p_y", tuple(p_y.tolist()))
        object.__setattr__(self, "p_m0", float(self.p_m0))

    @property
    def d(self) -> int:
        return self.d_core + self.d_spur

    def replace(self, **changes) -> "GaussianGenSpec":
        kw = dict(L=self.L, d_core=self.d_core, d_spur=self.d_spur, core_means=self.core_means,
                  spur_means=self.spur_means, sigma_core=self.sigma_core,
                  sigma_spur=self.sigma_spur, p_m0=self.p_m0, p_y=self.p_y, seed=self.seed)
        kw.update(changes)
        return GaussianGenSpec(**kw)

    def to_dict(self) -> dict[str, Any]:
        return {"family": "gaussian", "L": self.L, "d_core": self.d_core, "d_spur": self.d_spur,
                "core_means": self.core_means.tolist(), "spur_means": self.spur_means.tolist(),
                "sigma_core": self.sigma_core, "sigma_spur": self.sigma_spur,
                "p_m0": self.p_m0, "p_y": list(self.p_y), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GaussianGenSpec":
        return cls(L=int(d["L"]), d_core=int(d["d_core"]), d_spur=int(d["d_spur"]),
                   core_means=np.asarray(d["core_means"], dtype=np.float64),
                   spur_means=np.asarray(d["spur_means"], dtype=np.float64),
                   sigma_core=float(d["sigma_core"]), sigma_spur=float(d["sigma_spur"]),
                   p_m0=float(d["p_m0"]), p_y=tuple(d["p_y"]), seed=int(d.get("seed", 0)))

    @property
    def digest(self) -> str:
        return spec_digest(self.to_dict())


def spec_from_dict(d: dict[str, Any]) -> DiscreteGenSpec | GaussianGenSpec:
    family = d.get("family", "discrete" if "cond_table" in d else "gaussian")
    if family == "discrete":
        return DiscreteGenSpec.from_dict(d)
    if family == "gaussian":
        return GaussianGenSpec.from_dict(d)
    raise ConfigError(f"unknown spec family {family!r}")


def default_gaussian_spec(L: int = 5, d_core: int = 5, d_spur: int = 5, p_m0: float = 0.005,
                          p_y=None, core_scale: float = 5.0, pair_offset: float | None = 3.0,
                          spur_scale: float = 3.0, sigma_core: float = 1.0,
                          sigma_spur: float = 0.25, seed: int = 0) -> GaussianGenSpec:
    """Axis-aligned class means with one core-confusable class pair.

    Class ``c`` sits at ``core_scale * e_c`` in the core block, except the last
    class, which sits ``pair_offset`` away from class ``L-2`` (``None`` keeps it
    axis-aligned).  The spurious block uses ``spur_scale * e_s``.  ERM then
    leans on the spurious block exactly where the core block is ambiguous.
    """
    if d_core < L or d_spur < L:
        raise ConfigError("default layout needs d_core >= L and d_spur >= L")
    core = np.zeros((L, d_core))
    core[np.arange(L), np.arange(L)] = core_scale
    if pair_offset is not None:
        core[L - 1] = core[L - 2]
        core[L - 1, L - 1] = pair_offset
    spur = np.zeros((L, d_spur))
    spur[np.arange(L), np.arange(L)] = spur_scale
    p_y = tuple(np.full(L, 1.0 / L)) if p_y is None else tuple(p_y)
    return GaussianGenSpec(L=L, d_core=d_core, d_spur=d_spur, core_means=core, spur_means=spur,
                           sigma_core=sigma_core, sigma_spur=sigma_spur, p_m0=p_m0, p_y=p_y,
                           seed=seed)


def random_discrete_spec(rng: np.random.Generator, L: int, K: int, p_m0: float | None = None,
                         p_y=None, concentration: float = 1.0) -> DiscreteGenSpec:
    """Random conforming spec: Dirichlet columns, Dirichlet label prior."""
    table = rng.dirichlet(np.full(K, concentration), size=(L, L))  # [y, s, x]
    table = np.moveaxis(table, -1, 0)
    # re-normalise so every column sums to 1 at machine precision
    table = table / table.sum(axis=0, keepdims=True)
    if p_y is None:
        p_y = rng.dirichlet(np.full(L, 2.0))
        p_y = p_y / p_y.sum()
    if p_m0 is None:
        p_m0 = float(rng.uniform(0.001, 0.999))
    return DiscreteGenSpec(L=L, K=K, p_m0=p_m0, p_y=tuple(p_y), cond_table=table,
                           seed=int(rng.integers(2**31)))


# --- sampling -------------------------------------------------------------------

def _block_rng(seed: int, role: DatasetRole, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _ROLE_KEY[role], block])
    return np.random.Generator(np.random.Philox(ss))


def _draw_groups(rng: np.random.Generator, b: int, L: int, p_y: np.ndarray, p_m0: float,
                 role: DatasetRole):
    u_m = rng.random(b)
    u_y = rng.random(b)
    s_free = rng.integers(0, L, size=b)
    cdf = np.cumsum(p_y)
    cdf[-1] = 1.0
    y = np.searchsorted(cdf, u_y, side="right")
    if role is DatasetRole.TEST:
        m = np.full(b, M0)
    else:
        m = np.where(u_m < p_m0, M0, M1)
    s = np.where(m == M1, y, s_free)
    return y.astype(np.int64), s.astype(np.int64), m.astype(np.int64)


def _blocks(n: int):
    for b, start in enumerate(range(0, n, BLOCK)):
        yield b, start, min(BLOCK, n - start)


def gen_discrete(spec: DiscreteGenSpec, n: int, role, seed: int | None = None) -> Dataset:
    """Draw ``n`` samples; x is emitted as a length-K one-hot vector."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    role = DatasetRole.parse(role)
    seed = spec.seed if seed is None else seed
    p_y = np.asarray(spec.p_y)
    cdf_x = np.cumsum(spec.cond_table, axis=0)  # [x, y, s]
    cdf_x[-1] = 1.0
    ys, ss, ms, xs = [], [], [], []
    for b, _, size in _blocks(n):
        rng = _block_rng(seed, role, b)
        y, s, m = _draw_groups(rng, BLOCK, spec.L, p_y, spec.p_m0, role)
        u_x = rng.random(BLOCK)
        y, s, m, u_x = y[:size], s[:size], m[:size], u_x[:size]
        cols = cdf_x[:, y, s]  # K x size
        x = (cols <= u_x[None, :]).sum(axis=0)
        ys.append(y)
        ss.append(s)
        ms.append(m)
        xs.append(np.minimum(x, spec.K - 1))
    x = np.concatenate(xs)
    X = np.zeros((n, spec.K))
    X[np.arange(n), x] = 1.0
    return Dataset(X, np.concatenate(ys), np.concatenate(ss), np.concatenate(ms), role=role,
                   L=spec.L, seed=seed, spec_digest=spec.digest)


def gen_gaussian(spec: GaussianGenSpec, n: int, role, seed: int | None = None) -> Dataset:
    if n < 1:
        raise ConfigError("n must be >= 1")
    role = DatasetRole.parse(role)
    seed = spec.seed if seed is None else seed
    p_y = np.asarray(spec.p_y)
    parts = []
    for b, _, size in _blocks(n):
        rng = _block_rng(seed, role, b)
        y, s, m = _draw_groups(rng, BLOCK, spec.L, p_y, spec.p_m0, role)
        noise = rng.standard_normal((BLOCK, spec.d))[:size]
        y, s, m = y[:size], s[:size], m[:size]
        core = spec.core_means[y] + spec.sigma_core * noise[:, :spec.d_core]
        spur = spec.spur_means[s] + spec.sigma_spur * noise[:, spec.d_core:]
        parts.append((np.hstack([core, spur]), y, s, m))
    X, y, s, m = (np.concatenate(p) for p in zip(*parts))
    return Dataset(X, y, s, m, role=role, L=spec.L, seed=seed, spec_digest=spec.digest)


def generate(spec, n: int, role, seed: int | None = None) -> Dataset:
    if isinstance(spec, DiscreteGenSpec):
        return gen_discrete(spec, n, role, seed)
    if isinstance(spec, GaussianGenSpec):
        return gen_gaussian(spec, n, role, seed)
    raise ConfigError(f"unsupported spec type {type(spec).__name__}")
