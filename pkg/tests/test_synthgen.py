import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dba.core import M0, M1, ConfigError, DatasetRole, DomainError
from dba.oracle import exact_joint
from dba.synthgen import (
    BLOCK,
    DiscreteGenSpec,
    GaussianGenSpec,
    default_gaussian_spec,
    gen_discrete,
    generate,
    random_discrete_spec,
    spec_from_dict,
)


def small_spec(p_m0=0.3, L=3, K=5, seed=1):
    return random_discrete_spec(np.random.default_rng(seed), L, K, p_m0=p_m0)


def test_generation_is_deterministic():
    spec = small_spec()
    a = gen_discrete(spec, 1000, "train", seed=9)
    b = gen_discrete(spec, 1000, "train", seed=9)
    c = gen_discrete(spec, 1000, "train", seed=10)
    assert a == b
    assert not np.array_equal(a.X, c.X)


def test_prefix_stability_across_blocks(gaussian_spec):
    # rows of a shorter draw coincide with the head of a longer one
    short = generate(gaussian_spec, BLOCK + 10, "train", seed=2)
    long = generate(gaussian_spec, 3 * BLOCK, "train", seed=2)
    assert np.array_equal(long.X[: short.n], short.X)
    assert np.array_equal(long.y[: short.n], short.y)


def test_roles_use_distinct_streams(gaussian_spec):
    tr = generate(gaussian_spec, 200, "train", seed=0)
    va = generate(gaussian_spec, 200, "val", seed=0)
    assert not np.array_equal(tr.X, va.X)


def test_group_structure(gaussian_spec):
    tr = generate(gaussian_spec.replace(p_m0=0.3), 5000, "train", seed=0)
    assert np.all(tr.s[tr.m == M1] == tr.y[tr.m == M1])
    te = generate(gaussian_spec, 2000, "test", seed=0)
    assert np.all(te.m == M0)


def test_p_m0_extremes(gaussian_spec):
    assert np.all(generate(gaussian_spec.replace(p_m0=0.0), 500, "train").m == M1)
    assert np.all(generate(gaussian_spec.replace(p_m0=1.0), 500, "train").m == M0)


@pytest.mark.parametrize("role", ["train", "test"])
def test_discrete_frequencies_match_enumeration(role):
    # chi-square goodness of fit of sampled (x, y) cells against the exact joint
    spec = small_spec(p_m0=0.4, L=2, K=4, seed=5)
    n = 40000
    data = gen_discrete(spec, n, role, seed=11)
    x = data.X.argmax(axis=1)
    obs = np.bincount(x * spec.L + data.y, minlength=spec.K * spec.L)
    exp = exact_joint(spec, role).values.reshape(-1) * n
    keep = exp > 0
    assert obs[~keep].sum() == 0
    _, p = stats.chisquare(obs[keep], exp[keep])
    assert p > 1e-3


def test_gaussian_moments(gaussian_spec):
    data = generate(gaussian_spec, 20000, "test", seed=4)
    for c in range(gaussian_spec.L):
        core = data.X[data.y == c, : gaussian_spec.d_core]
        se = gaussian_spec.sigma_core / np.sqrt(core.shape[0])
        assert np.all(np.abs(core.mean(axis=0) - gaussian_spec.core_means[c]) < 5 * se)


def test_default_layout():
    spec = default_gaussian_spec()
    assert spec.L == 5 and spec.d_core == 5 and spec.d_spur == 5 and spec.p_m0 == 0.005
    with pytest.raises(ConfigError):
        default_gaussian_spec(L=6, d_core=5)


@given(seed=st.integers(0, 2**31), L=st.integers(2, 4), K=st.integers(4, 12))
def test_spec_dict_round_trip(seed, L, K):
    spec = random_discrete_spec(np.random.default_rng(seed), L, K)
    back = spec_from_dict(spec.to_dict())
    assert back.digest == spec.digest
    assert np.array_equal(back.cond_table, spec.cond_table)


def test_gaussian_dict_round_trip(gaussian_spec):
    back = spec_from_dict(gaussian_spec.to_dict())
    assert isinstance(back, GaussianGenSpec) and back.digest == gaussian_spec.digest


def test_spec_validation():
    t = np.full((2, 2, 2), 0.5)
    with pytest.raises(DomainError):
        DiscreteGenSpec(L=2, K=2, p_m0=1.5, p_y=(0.5, 0.5), cond_table=t)
    with pytest.raises(ConfigError):
        DiscreteGenSpec(L=2, K=3, p_m0=0.5, p_y=(0.5, 0.5), cond_table=t)
    bad = t.copy()
    bad[0, 0, 0] = 0.9
    with pytest.raises((DomainError, ConfigError)):
        DiscreteGenSpec(L=2, K=2, p_m0=0.5, p_y=(0.5, 0.5), cond_table=bad)
    with pytest.raises(ConfigError):
        spec_from_dict({"family": "mystery"})


def test_bad_n(gaussian_spec):
    with pytest.raises(ConfigError):
        generate(gaussian_spec, 0, DatasetRole.TRAIN)
