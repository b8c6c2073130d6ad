import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dba.core import ConfigError, Dataset, DimensionMismatch, DomainError, EmptyCheckpoints
from dba.trainer import (
    SoftmaxModel,
    TrainConfig,
    accuracy,
    fit_overfit,
    fit_unweighted,
    fit_weighted,
    load_model,
    log_proba,
    loss_and_grad,
    loss_and_grad_unweighted,
    mean_loglik,
    predict,
    predict_proba,
    resample_dataset,
    save_model,
    select_model,
)


def random_problem(rng, n=7, d=4, L=3, hidden=0):
    model = SoftmaxModel.init(L, d, hidden=hidden, seed=int(rng.integers(1 << 30)))
    # perturb so linear models do not start at the zero point
    params = [p + rng.normal(0, 0.5, p.shape) for p in model.params()]
    model = SoftmaxModel(*params)
    return model, rng.normal(size=(n, d)), rng.integers(0, L, n), rng.uniform(0.1, 5.0, n)


def central_difference(model, X, y, w, h=1e-5, wd=0.0):
    out = []
    params = [p.copy() for p in model.params()]
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            fp = loss_and_grad(SoftmaxModel(*plus), X, y, w, wd)[0]
            fm = loss_and_grad(SoftmaxModel(*minus), X, y, w, wd)[0]
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("hidden", [0, 5])
@pytest.mark.parametrize("seed", range(4))
def test_gradient_matches_finite_difference(hidden, seed):
    rng = np.random.default_rng(seed)
    model, X, y, w = random_problem(rng, hidden=hidden)
    _, grads = loss_and_grad(model, X, y, w, weight_decay=0.01)
    for ga, gn in zip(grads, central_difference(model, X, y, w, wd=0.01)):
        scale = np.maximum(np.abs(gn), 1e-3)
        assert np.max(np.abs(ga - gn) / scale) < 1e-5


def test_unit_weights_reduce_to_erm_bitwise(small_split):
    train, _, _ = small_split
    cfg = TrainConfig(lr=0.1, epochs=3, seed=5)
    a = fit_weighted(train, np.ones(train.n), cfg)
    b = fit_unweighted(train, cfg)
    for ma, mb in zip(a.checkpoints, b.checkpoints):
        assert np.array_equal(ma.W, mb.W)
    rng = np.random.default_rng(0)
    model, X, y, _ = random_problem(rng, hidden=3)
    la, ga = loss_and_grad(model, X, y, np.ones(len(y)))
    lb, gb = loss_and_grad_unweighted(model, X, y)
    assert la == lb and all(np.array_equal(p, q) for p, q in zip(ga, gb))


def test_training_is_deterministic(small_split):
    train, _, _ = small_split
    cfg = TrainConfig(epochs=2, hidden=8, seed=1)
    a = fit_unweighted(train, cfg).model
    b = fit_unweighted(train, cfg).model
    assert np.array_equal(a.W, b.W) and np.array_equal(a.W1, b.W1)


def test_checkpoint_per_epoch(small_split):
    train, _, _ = small_split
    fit = fit_unweighted(train, TrainConfig(epochs=4))
    assert fit.epochs_run == 4 and fit.model is fit.checkpoints[-1]


def test_zero_weight_samples_do_not_move_parameters():
    rng = np.random.default_rng(3)
    model, X, y, _ = random_problem(rng)
    w = np.zeros(len(y))
    _, grads = loss_and_grad(model, X, y, w)
    assert all(np.all(g == 0) for g in grads)


@given(c=st.floats(0.1, 10.0))
def test_weight_scaling_scales_gradient(c):
    rng = np.random.default_rng(7)
    model, X, y, w = random_problem(rng)
    _, g1 = loss_and_grad(model, X, y, w)
    _, gc = loss_and_grad(model, X, y, c * w)
    assert np.allclose(gc[0], c * g1[0], rtol=1e-12, atol=1e-15)


def test_probabilities_are_normalized():
    rng = np.random.default_rng(1)
    model, X, _, _ = random_problem(rng, hidden=4)
    p = predict_proba(model, X)
    assert np.allclose(p.sum(axis=1), 1.0) and np.all(p > 0)
    assert predict_proba(model, X[0]).shape == (model.L,)


def test_ties_go_to_smallest_index():
    model = SoftmaxModel.zeros(4, 2)
    assert np.all(predict(model, np.ones((3, 2))) == 0)


def test_model_serialization_exact(tmp_path):
    rng = np.random.default_rng(2)
    model, *_ = random_problem(rng, hidden=3)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.W, model.W) and np.array_equal(back.W1, model.W1)


def test_model_validation():
    with pytest.raises(DomainError):
        SoftmaxModel(np.array([[np.nan, 0.0]]))
    with pytest.raises(DimensionMismatch):
        SoftmaxModel(np.zeros((2, 3)), np.zeros((4, 3)))
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"momentum": 0.9})


def test_weighting_shifts_decision_toward_upweighted_class():
    # overlapping 1-D classes: upweighting class 1 moves the boundary left
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(-1, 1, 400), rng.normal(1, 1, 400)])[:, None]
    y = np.repeat([0, 1], 400)
    data = Dataset(X, y, y, np.ones(800, dtype=int), role="train", L=2)
    cfg = TrainConfig(lr=0.2, epochs=30)
    plain = fit_unweighted(data, cfg).model
    heavy = fit_weighted(data, np.where(y == 1, 5.0, 1.0), cfg).model
    grid = np.linspace(-2, 2, 401)[:, None]
    assert predict(heavy, grid).sum() > predict(plain, grid).sum()


def test_overfit_reaches_target(small_split):
    train, _, _ = small_split
    fit = fit_overfit(train, TrainConfig(epochs=50), target=0.9)
    assert fit.converged and accuracy(fit.model, train) >= 0.9
    capped = fit_overfit(train, TrainConfig(epochs=1), target=1.0 + 0.0)
    assert capped.epochs_run == 1


def test_select_model(small_split):
    train, val, _ = small_split
    fit = fit_unweighted(train, TrainConfig(epochs=5))
    best = select_model(fit.checkpoints, val)
    scores = [mean_loglik(m, val) for m in fit.checkpoints]
    assert mean_loglik(best, val) == max(scores)
    # all-equal z reproduces the unweighted choice
    assert select_model(fit.checkpoints, val, np.ones(val.n)) is best
    same = [fit.checkpoints[0]] * 3
    assert select_model(same, val) is same[0]
    with pytest.raises(EmptyCheckpoints):
        select_model([], val)
    with pytest.raises(ConfigError):
        select_model(fit.checkpoints, val, criterion="auc")


def test_resample_is_seeded(small_split):
    train, _, _ = small_split
    w = np.where(train.s == train.y, 1.0, 50.0)
    a = resample_dataset(train, w, 3)
    assert a == resample_dataset(train, w, 3) and a.n == train.n
    assert np.mean(a.s != a.y) > np.mean(train.s != train.y)
    with pytest.raises(DomainError):
        resample_dataset(train, np.zeros(train.n), 0)


def test_log_proba_stable_for_large_logits():
    model = SoftmaxModel(np.array([[1e4, 0.0], [-1e4, 0.0]]))
    lp = log_proba(model, np.array([[1.0], [-1.0]]))
    assert np.all(np.isfinite(lp))
