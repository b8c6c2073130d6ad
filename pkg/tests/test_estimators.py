import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dba.core import ConfigError, DimensionMismatch, StratumTooSmall, UnknownAttributes
from dba.estimators import (
    DiffDistEstimator,
    EstimatorConfig,
    KnownSEstimator,
    Regime,
    SameDistEstimator,
    estimate,
    fit_estimator,
    rho_from_delta,
    rho_from_likelihood,
)
from dba.weights import RHO_FLOOR

FAST = dict(epochs=20, lr=0.1)


@given(d=st.floats(0, 50), tau=st.floats(0.01, 10))
def test_rho_from_delta_range(d, tau):
    r = rho_from_delta(d, tau)
    assert 0 <= r <= 1
    assert rho_from_delta(0.0, tau) == 1.0


@given(tau=st.floats(0.05, 10), a=st.floats(0, 5), b=st.floats(0, 5))
def test_rho_monotone_in_discrepancy(tau, a, b):
    lo, hi = sorted((a, b))
    assert rho_from_delta(lo, tau) >= rho_from_delta(hi, tau)
    assert rho_from_likelihood(-hi, tau) <= rho_from_likelihood(-lo, tau)


def test_tau_sharpens():
    assert rho_from_likelihood(np.log(0.5), 0.5) == pytest.approx(0.25)
    assert rho_from_delta(1.0, 0.5) == pytest.approx(np.exp(-2))


def test_known_s_separates_groups(small_split):
    train, _, _ = small_split
    rho = KnownSEstimator.fit(train, EstimatorConfig(**FAST)).rho(train)
    assert rho.shape == (train.n,)
    assert np.all((rho >= RHO_FLOOR) & (rho <= 1))
    maj = train.s == train.y
    assert rho[maj].mean() > rho[~maj].mean() + 0.5


def test_known_s_requires_attributes(small_split):
    train, _, _ = small_split
    with pytest.raises(UnknownAttributes):
        KnownSEstimator.fit(train.without_attributes(), EstimatorConfig(**FAST))


def test_known_s_small_stratum(small_split):
    train, _, _ = small_split
    idx = np.concatenate([np.flatnonzero(train.y != 0), np.flatnonzero(train.y == 0)[:1]])
    with pytest.raises(StratumTooSmall):
        KnownSEstimator.fit(train.subset(idx), EstimatorConfig(**FAST))


def test_same_dist_estimator(small_split):
    train, val, _ = small_split
    cfg = EstimatorConfig(regime="same", overfit_target=0.95, **FAST)
    est = SameDistEstimator.fit(train.without_attributes(), val.without_attributes(), cfg)
    rho = est.rho(train)
    assert np.all((rho >= RHO_FLOOR) & (rho <= 1))
    assert np.allclose(rho, np.clip(np.exp(-est.delta(train)), RHO_FLOOR, 1))
    # identical models give rho = 1 everywhere
    twin = SameDistEstimator(est.model_train, est.model_train)
    assert np.all(twin.rho(train) == 1.0)


def test_same_dist_shape_checks(small_split):
    train, val, _ = small_split
    narrow = type(val)(val.X[:, :3], val.y, val.s, val.m, role="val", L=val.L)
    with pytest.raises(DimensionMismatch):
        SameDistEstimator.fit(train, narrow, EstimatorConfig(regime="same", **FAST))


def test_diff_dist_estimator(small_split):
    train, _, _ = small_split
    cfg = EstimatorConfig(regime="diff", overfit_target=0.95, **FAST)
    est = DiffDistEstimator.fit(train.without_attributes(), cfg)
    rho = est.rho(train)
    maj = train.s == train.y
    assert rho[maj].mean() > rho[~maj].mean()


def test_dispatch(small_split):
    train, val, _ = small_split
    assert isinstance(fit_estimator(train, EstimatorConfig(**FAST)), KnownSEstimator)
    with pytest.raises(ConfigError):
        fit_estimator(train, EstimatorConfig(regime="same", **FAST))
    a = estimate(train, EstimatorConfig(regime="diff", **FAST))
    b = estimate(train, EstimatorConfig(regime="diff", **FAST))
    assert np.array_equal(a, b)


def test_config_validation():
    assert EstimatorConfig(regime="known").regime is Regime.KNOWN_S
    with pytest.raises(ConfigError):
        EstimatorConfig(tau=0)
    with pytest.raises(ValueError):
        EstimatorConfig(regime="psychic")
    with pytest.raises(ConfigError):
        EstimatorConfig(overfit_target=1.5)
