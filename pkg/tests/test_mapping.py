import json

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entmap.core import PointCloud, cost_matrix
from entmap.errors import InvalidArgumentError, ParseError
from entmap.mapping import (
    EntropicMapModel,
    brenier_residual,
    eval_batch,
    evaluate,
    f_potential,
    fd_gradient,
    fit,
    softmax_weights,
)


def _random_model(seed, m=20, d=2, eps=0.5):
    rng = np.random.default_rng(seed)
    return EntropicMapModel(rng.normal(size=(m, d)), rng.normal(scale=0.3, size=m), eps)


def test_single_target_is_constant():
    model = EntropicMapModel([[1.5, -2.0]], [0.7], 0.01)
    for x in ([0.0, 0.0], [100.0, -40.0], [1.5, -2.0]):
        np.testing.assert_array_equal(evaluate(model, x), [1.5, -2.0])


def test_fit_single_point():
    model, report = fit([[0.2]], [[3.0]], 0.1)
    assert report.converged
    assert evaluate(model, [-7.0])[0] == 3.0


def test_huge_eps_gives_target_mean():
    model = _random_model(0, m=30, d=3)
    model = EntropicMapModel(model.targets, model.gvals, 1e9)
    mean = model.targets.points.mean(axis=0)
    for x in np.random.default_rng(1).normal(size=(5, 3)):
        np.testing.assert_allclose(evaluate(model, x), mean, atol=1e-6)


def test_symmetric_two_targets():
    model = EntropicMapModel([[0.0], [1.0]], [0.0, 0.0], 0.3)
    assert evaluate(model, [0.5])[0] == pytest.approx(0.5, abs=1e-15)


def test_identity_fit_maps_points_to_themselves():
    X = np.random.default_rng(2).uniform(-1, 1, (15, 2))
    C = cost_matrix(X, X)
    eps = C[~np.eye(15, dtype=bool)].min() / 25
    model, report = fit(X, X, eps, tol=1e-10)
    assert report.converged
    np.testing.assert_allclose(eval_batch(model, X), X, atol=1e-3)


def test_max_iter_one_still_normalizes():
    rng = np.random.default_rng(3)
    X, Y = rng.uniform(-1, 1, (25, 2)), rng.uniform(-1, 1, (25, 2))
    model, report = fit(X, Y, 0.05, max_iter=1)
    assert report.iterations == 1
    w = softmax_weights(model, rng.normal(size=(10, 2)))
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_batch_equals_single_bitwise():
    model = _random_model(4, m=37, d=3, eps=0.2)
    Q = np.random.default_rng(5).normal(size=(1000, 3))
    batch = eval_batch(model, Q)
    single = np.array([evaluate(model, q) for q in Q])
    assert np.array_equal(batch, single)
    assert np.array_equal(eval_batch(model, Q[:1]), single[:1])


def test_batch_permutation():
    model = _random_model(6)
    Q = np.random.default_rng(7).normal(size=(50, 2))
    perm = np.random.default_rng(8).permutation(50)
    assert np.array_equal(eval_batch(model, Q[perm]), eval_batch(model, Q)[perm])


def test_eval_dimension_errors():
    model = _random_model(9)
    with pytest.raises(InvalidArgumentError):
        evaluate(model, [1.0, 2.0, 3.0])
    with pytest.raises(InvalidArgumentError):
        eval_batch(model, np.zeros((4, 3)))
    with pytest.raises(InvalidArgumentError):
        evaluate(model, [np.nan, 0.0])


def test_far_queries_snap_to_nearest_target():
    model = EntropicMapModel([[0.0, 0.0], [1.0, 0.0]], [0.0, 0.0], 0.01)
    np.testing.assert_allclose(evaluate(model, [1e4, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(evaluate(model, [-1e4, 3.0]), [0.0, 0.0])


def test_f_potential_single_target():
    model = EntropicMapModel([[0.0, 0.0]], [0.0], 0.37)
    x = np.array([0.3, -1.1])
    assert f_potential(model, x) == pytest.approx(0.5 * x @ x, rel=1e-14)


def test_f_potential_high_precision():
    model = EntropicMapModel([[-0.3], [0.8]], [0.25, -0.4], 0.35)
    # value of -eps log((1/2) sum_j exp((g_j - (x - y_j)^2/2)/eps)) at x = 0.1, 50 digits
    assert f_potential(model, [0.1]) == pytest.approx(0.040060090569528770351830893650859589, rel=1e-14)
    mp.mp.dps = 40
    x = mp.mpf("0.1")
    ref = -mp.mpf("0.35") * mp.log(
        (mp.e ** ((mp.mpf("0.25") - (x + mp.mpf("0.3")) ** 2 / 2) / mp.mpf("0.35"))
         + mp.e ** ((mp.mpf("-0.4") - (x - mp.mpf("0.8")) ** 2 / 2) / mp.mpf("0.35"))) / 2)
    assert f_potential(model, [0.1]) == pytest.approx(float(ref), rel=1e-14)


def test_f_potential_permutation_invariant():
    model = _random_model(10)
    perm = np.random.default_rng(11).permutation(20)
    shuffled = EntropicMapModel(model.targets.points[perm], model.gvals[perm], model.eps)
    x = [0.2, -0.9]
    assert f_potential(shuffled, x) == pytest.approx(f_potential(model, x), rel=1e-13)


def test_brenier_single_target_closed_form():
    model = EntropicMapModel([[0.0, 0.0]], [0.0], 0.5)
    assert brenier_residual(model, [0.3, -0.2]) <= 1e-8


def test_brenier_random_model():
    model = _random_model(12)
    for x in np.random.default_rng(13).uniform(-1.5, 1.5, (10, 2)):
        assert brenier_residual(model, x) <= 1e-6


def test_brenier_residual_second_order():
    model = _random_model(14, eps=0.4)
    x = np.array([0.3, 0.1])
    r1 = brenier_residual(model, x, h=2e-3)
    r2 = brenier_residual(model, x, h=1e-3)
    assert 3.5 <= r1 / r2 <= 4.5


def test_fd_gradient_rejects_bad_step():
    with pytest.raises(InvalidArgumentError):
        fd_gradient(_random_model(0), [0.0, 0.0], h=0.0)


def test_json_roundtrip(tmp_path):
    model = _random_model(15, m=9, d=3, eps=1 / 3)
    path = tmp_path / "model.json"
    model.save(path)
    obj = json.loads(path.read_text())
    assert set(obj) == {"eps", "d", "targets", "g"}
    assert obj["d"] == 3
    loaded = EntropicMapModel.load(path)
    assert loaded.eps == model.eps
    assert np.array_equal(loaded.gvals, model.gvals)
    assert np.array_equal(loaded.targets.points, model.targets.points)


def test_json_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"eps": 1.0, "d": 2}')
    with pytest.raises(ParseError):
        EntropicMapModel.load(path)
    path.write_text('{"eps": 1.0, "d": 3, "targets": [[0, 1]], "g": [0]}')
    with pytest.raises(ParseError):
        EntropicMapModel.load(path)
    path.write_text("{not json")
    with pytest.raises(ParseError):
        EntropicMapModel.load(path)


def test_model_validation():
    with pytest.raises(InvalidArgumentError):
        EntropicMapModel([[0.0], [1.0]], [0.0], 1.0)
    with pytest.raises(InvalidArgumentError):
        EntropicMapModel([[0.0]], [np.inf], 1.0)
    with pytest.raises(InvalidArgumentError):
        EntropicMapModel([[0.0]], [0.0], 0.0)


def test_translation_equivariance():
    rng = np.random.default_rng(16)
    X, Y = rng.uniform(-1, 1, (30, 2)), np.exp(rng.uniform(-1, 1, (30, 2)))
    a = np.array([2.5, -1.0])
    model, _ = fit(X, Y, 0.2, tol=1e-10)
    shifted, _ = fit(X + a, Y + a, 0.2, tol=1e-10)
    Q = rng.uniform(-1, 1, (20, 2))
    np.testing.assert_allclose(eval_batch(shifted, Q + a), eval_batch(model, Q) + a, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 12),
    st.integers(1, 4),
    st.floats(1e-3, 10.0),
    st.integers(0, 2**32 - 1),
)
def test_convex_hull_and_normalization(m, d, eps, seed):
    rng = np.random.default_rng(seed)
    model = EntropicMapModel(rng.normal(size=(m, d)) * 3, rng.normal(size=m), eps)
    Q = rng.normal(size=(8, d)) * 5
    w = softmax_weights(model, Q)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    out = eval_batch(model, Q)
    lo, hi = model.targets.points.min(axis=0), model.targets.points.max(axis=0)
    slack = 1e-12 * (1 + np.abs(model.targets.points).max())
    assert np.all(out >= lo - slack) and np.all(out <= hi + slack)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_brenier_identity_property(seed, eps):
    rng = np.random.default_rng(seed)
    model = EntropicMapModel(rng.uniform(-1, 1, (15, 2)), rng.normal(scale=0.2, size=15), eps)
    assert brenier_residual(model, rng.uniform(-1, 1, 2)) <= 1e-6


def test_empty_batch():
    assert eval_batch(_random_model(0), np.zeros((0, 2))).shape == (0, 2)


def test_accepts_point_cloud():
    model = _random_model(17)
    Q = PointCloud(np.random.default_rng(18).normal(size=(4, 2)))
    assert np.array_equal(eval_batch(model, Q), eval_batch(model, Q.points))
