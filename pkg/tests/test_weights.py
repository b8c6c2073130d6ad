import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from dba.core import (
    Dataset,
    DomainError,
    LengthMismatch,
    SupportViolation,
    TrainStats,
    ZeroCountClass,
    ZeroCountGroup,
)
from dba.weights import (
    RHO_FLOOR,
    Provenance,
    WeightVector,
    augmentation_weight,
    class_balance_weight,
    clamp_rho,
    decomposed_objective,
    group_balance_weight,
    logit_adjust_weight,
    theorem1_inverse,
    theorem1_weight,
    weighted_loglik,
    z_ratio,
)

probs = st.floats(0.01, 0.99)


@st.composite
def train_stats(draw, min_p0=0.0, max_p0=1.0):
    L = draw(st.integers(2, 6))
    raw = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=L, max_size=L)))
    p_y = raw / raw.sum()
    p_y[-1] = 1.0 - p_y[:-1].sum()
    assume(np.all(p_y > 0))
    p0 = draw(st.floats(min_p0, max_p0))
    return TrainStats(p_m0=p0, p_y=tuple(p_y), L=L)


def test_worked_values_by_hand():
    # L = 2, p_y uniform, p_m0 = 0.2, rho = 0.405 / 0.41 on the (0, 0) cell
    stats = TrainStats(p_m0=0.2, p_y=(0.5, 0.5), L=2)
    rho = np.array([0.405 / 0.41])
    g = theorem1_weight(rho, [0], stats).values[0]
    assert g == pytest.approx(0.25 / 0.41, rel=1e-13)
    g_main = theorem1_weight(rho, [0], stats, variant="maintext").values[0]
    assert g_main == pytest.approx(1.0 / (0.2 + 1.6 * 81 / 92), rel=1e-13)
    assert abs(g_main - g) / g > 1e-2


@given(stats=train_stats(), rho=st.floats(1e-6, 1.0))
def test_weight_positive_and_finite(stats, rho):
    for y in range(stats.L):
        g = theorem1_weight([rho], [y], stats).values[0]
        assert np.isfinite(g) and g > 0


@given(stats=train_stats(min_p0=1e-4, max_p0=0.9999))
def test_weight_bounds(stats):
    # g lies between its rho = 1 value and 1 / p_m0
    rho = np.linspace(1e-6, 1.0, 50)
    for y in range(stats.L):
        g = theorem1_weight(rho, np.full(50, y), stats).values
        assert np.all(g <= 1.0 / stats.p_m0 * (1 + 1e-12))
        assert np.all(g >= g[-1] * (1 - 1e-12))


@given(stats=train_stats())
def test_p_m0_one_gives_unit_weights(stats):
    stats = TrainStats(p_m0=1.0, p_y=stats.p_y, L=stats.L)
    g = theorem1_weight(np.linspace(1e-6, 1, 7), np.zeros(7, dtype=int), stats).values
    assert np.array_equal(g, np.ones(7))


def test_p_m0_zero_is_floored():
    stats = TrainStats(p_m0=0.0, p_y=(0.5, 0.5), L=2)
    g = theorem1_weight([1e-6, 0.5, 1.0], [0, 1, 0], stats).values
    assert np.all(np.isfinite(g)) and np.all(g > 0)


def test_clamping_counts():
    stats = TrainStats(p_m0=0.1, p_y=(0.5, 0.5), L=2)
    w = theorem1_weight([0.0, 1e-9, 0.5], [0, 0, 1], stats)
    assert w.n_clamped == 2
    assert w.values[0] == w.values[1]
    with pytest.raises(DomainError):
        theorem1_weight([0.0], [0], stats, clamp=False)
    with pytest.raises(DomainError):
        clamp_rho([1.5])
    with pytest.raises(DomainError):
        clamp_rho([np.nan])
    with pytest.raises(LengthMismatch):
        theorem1_weight([0.5, 0.5], [0], stats)
    with pytest.raises(ValueError):
        theorem1_inverse(0.5, 0.5, 0.1, 2, variant="other")
    assert clamp_rho([0.0])[0] == RHO_FLOOR


def test_weight_vector_invariants():
    with pytest.raises(DomainError):
        WeightVector(np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        WeightVector(np.array([1.0, np.inf]))
    w = WeightVector(np.array([1.0, 3.0]), Provenance.THEOREM1)
    assert w.self_normalized().values.mean() == pytest.approx(1.0)
    assert np.array_equal(WeightVector.ones(3).values, np.ones(3))


def _ds(y, s, L):
    n = len(y)
    return Dataset(np.zeros((n, 1)), y, s, np.zeros(n, dtype=int), role="train", L=L)


def test_class_balance_weights():
    ds = _ds([0, 0, 0, 1], [0, 0, 0, 1], 2)
    w = class_balance_weight(ds).values
    assert np.allclose(w, [2 / 3, 2 / 3, 2 / 3, 2.0])
    # equalizes class mass
    assert w[:3].sum() == pytest.approx(w[3:].sum())
    with pytest.raises(ZeroCountClass):
        class_balance_weight(_ds([0, 0], [0, 0], 2))


def test_group_balance_weights():
    ds = _ds([0, 0, 0, 1, 1, 0, 1], [0, 0, 1, 1, 0, 0, 1], 2)
    w = group_balance_weight(ds).values
    mass = {}
    for yi, si, wi in zip(ds.y, ds.s, w):
        mass[(yi, si)] = mass.get((yi, si), 0) + wi
    assert all(v == pytest.approx(ds.n / 4) for v in mass.values())
    with pytest.raises(ZeroCountGroup):
        group_balance_weight(_ds([0, 1], [0, 1], 2))


def test_z_ratio():
    p_va = np.array([[0.25, 0.25], [0.5, 0.0]])
    p_te = np.array([[0.5, 0.0], [0.5, 0.0]])
    assert np.array_equal(z_ratio(p_va, p_te), [[2.0, 0.0], [1.0, 0.0]])
    with pytest.raises(SupportViolation):
        z_ratio(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))


@given(p=st.lists(probs, min_size=1, max_size=20), L=st.integers(2, 6), seed=st.integers(0, 99))
def test_decomposition_equals_weighted_loglik(p, L, seed):
    p = np.array(p) / L  # p(y, s=y | x) cannot exceed 1 / L under uniform labels
    q = np.log(np.random.default_rng(seed).uniform(0.01, 1.0, size=p.size))
    g = logit_adjust_weight(p, L).values
    assert np.allclose(decomposed_objective(q, p, L), g * q, rtol=0, atol=1e-12 * max(1, g.max()))


def test_logit_adjust_errors():
    with pytest.raises(DomainError):
        logit_adjust_weight([0.0], 2)
    w = logit_adjust_weight([1e-9, 0.5], 2)
    assert w.n_clamped == 1
    assert w.values[0] == pytest.approx(1 / (2 * RHO_FLOOR))


def test_augmentation_weight():
    assert augmentation_weight(0.5, 1.5, 0.25) == pytest.approx(2.0)
    assert np.allclose(augmentation_weight([0.5, 1.0], [0.5, 1.0], [1.0, 0.5]), [1.0, 1.0])
    with pytest.raises(DomainError):
        augmentation_weight(-0.1, 1.0, 0.5)
    with pytest.raises(DomainError):
        augmentation_weight(0.0, 0.0, 0.5)
    with pytest.raises(DomainError):
        augmentation_weight(1.0, 1.0, 0.0)


def test_weighted_loglik():
    assert weighted_loglik([-1.0, -3.0], [1.0, 0.0]) == -0.5
    assert weighted_loglik([-1.0, -3.0], WeightVector.ones(2)) == -2.0
    with pytest.raises(LengthMismatch):
        weighted_loglik([], [])
