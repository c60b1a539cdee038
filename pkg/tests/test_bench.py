import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from entmap.bench import (
    EpsRule,
    ExperimentConfig,
    ExperimentResult,
    GroundTruth,
    aggregate,
    compare_grid,
    d_prime,
    epsilon_rule,
    ground_truth_map,
    make_target,
    mse_monte_carlo,
    results_to_csv_text,
    run_experiment,
    sample_uniform_cube,
    write_aggregate,
)
from entmap.errors import InvalidArgumentError


def test_cube_range_and_determinism():
    a = sample_uniform_cube(500, 3, 42).points
    assert a.min() >= -1 and a.max() <= 1
    assert np.array_equal(a, sample_uniform_cube(500, 3, 42).points)
    assert not np.array_equal(a, sample_uniform_cube(500, 3, 43).points)


def test_cube_moments():
    x = sample_uniform_cube(100_000, 1, 7).points[:, 0]
    assert abs(x.mean()) <= 0.02
    assert abs(x.var() - 1 / 3) <= 0.02


def test_cube_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        sample_uniform_cube(0, 2, 0)


def test_ground_truth_examples():
    x = np.array([0.3, -1.7])
    np.testing.assert_array_equal(ground_truth_map("identity", x), x)
    np.testing.assert_array_equal(ground_truth_map("exp", [0.0, 0.0]), [1.0, 1.0])
    np.testing.assert_array_equal(ground_truth_map("cubic", [-0.5]), [-0.75])
    np.testing.assert_array_equal(ground_truth_map("affine:2:1", [0.5, -1.0]), [2.0, -1.0])
    assert GroundTruth.parse("affine:2,1") == GroundTruth("affine", 2.0, 1.0)
    assert GroundTruth.parse("affine:2,1").label == "affine:2.0:1.0"


@pytest.mark.parametrize("text", ["sin", "exp:2", "affine:0:1", "affine:x:1", "affine:-1:0"])
def test_ground_truth_rejects(text):
    with pytest.raises(InvalidArgumentError):
        GroundTruth.parse(text)


def test_ground_truth_rejects_nonfinite():
    with pytest.raises(InvalidArgumentError):
        ground_truth_map("exp", [np.nan])


@pytest.mark.parametrize("kind", ["exp", "cubic", "identity", "affine:0.5:-2"])
def test_ground_truth_monotone_and_self_mse_zero(kind):
    gt = GroundTruth.parse(kind)
    t = np.linspace(-1, 1, 201)[:, None]
    assert np.all(np.diff(gt(t)[:, 0]) > 0)
    assert mse_monte_carlo(gt, gt, 3, 1000, 5) == 0.0


def test_make_target():
    X = sample_uniform_cube(10, 2, 1)
    np.testing.assert_array_equal(make_target(X, "identity").points, X.points)
    assert make_target([[0.2, 0.4]], "exp").n == 1
    img = make_target(sample_uniform_cube(100_000, 1, 2), "exp").points
    assert abs(img.mean() - (math.e - 1 / math.e) / 2) <= 0.02


def test_epsilon_rule_examples():
    assert epsilon_rule(64, 2, 3, 1) == 0.5
    assert epsilon_rule(1000, 3, 3, 1) == 1000 ** (-1 / 8)
    assert epsilon_rule(500, 4, 2.5, 3) == 2 * epsilon_rule(500, 4, 2.5, 1.5)
    assert [d_prime(d) for d in range(1, 6)] == [2, 2, 4, 4, 6]


@pytest.mark.parametrize("args", [(64, 2, 1.0, 1), (64, 2, 3.5, 1), (64, 2, 3, 0), (1, 2, 3, 1), (64, 0, 3, 1)])
def test_epsilon_rule_domain(args):
    with pytest.raises(InvalidArgumentError):
        epsilon_rule(*args)


@given(st.integers(2, 10**6), st.integers(1, 10), st.floats(1.01, 3.0), st.floats(0.01, 10))
def test_epsilon_rule_range_and_monotone(n, d, alpha_bar, c):
    e = epsilon_rule(n, d, alpha_bar, c)
    assert 0 < e <= c
    assert epsilon_rule(n + 1, d, alpha_bar, c) < e


def test_eps_rule_parse():
    assert EpsRule.parse("auto") == EpsRule()
    assert EpsRule.parse("auto:2.5,0.3") == EpsRule(True, 2.5, 0.3)
    assert EpsRule.parse("0.125").resolve(10, 2) == 0.125
    for bad in ["auto:4,1", "auto:3", "-1", "abc", "0"]:
        with pytest.raises(InvalidArgumentError):
            EpsRule.parse(bad)


def test_mse_examples():
    ident = lambda Q: Q  # noqa: E731
    offset = lambda Q: Q + np.eye(1, Q.shape[1])  # noqa: E731
    assert mse_monte_carlo(offset, ident, 3, 257, 0) == 1.0
    doubled = lambda Q: 2 * Q  # noqa: E731
    assert abs(mse_monte_carlo(doubled, ident, 1, 100_000, 1) - 1 / 3) <= 0.01
    with pytest.raises(InvalidArgumentError):
        mse_monte_carlo(ident, ident, 1, 0, 0)


@pytest.mark.parametrize("kwargs", [dict(n=1), dict(d=0), dict(mc_samples=0), dict(repeats=0),
                                    dict(estimator="knn"), dict(seed=-1), dict(seed=2**64)])
def test_config_rejects(kwargs):
    with pytest.raises(InvalidArgumentError):
        ExperimentConfig(**kwargs)


def test_onenn_n1_rejected():
    with pytest.raises(InvalidArgumentError):
        ExperimentConfig(n=1, estimator="onenn")


def test_identity_sanity_run():
    cfg = ExperimentConfig(d=2, n=400, map_kind="identity", eps_rule=EpsRule.fixed(0.005),
                           seed=3, mc_samples=2000)
    (res,) = run_experiment(cfg)
    assert res.ok
    assert res.mse < 0.05
    assert res.iters > 0 and res.runtime_ms >= 0


def test_run_experiment_deterministic_and_seeded():
    cfg = ExperimentConfig(d=2, n=60, seed=11, repeats=3, mc_samples=500)
    a, b = run_experiment(cfg), run_experiment(cfg)
    strip = lambda rs: [(r.eps, r.mse, r.iters, r.seed, r.repeat) for r in rs]  # noqa: E731
    assert strip(a) == strip(b)
    assert [r.seed for r in a] == [11, 10, 9]
    assert len({r.mse for r in a}) == 3
    assert a[0].eps == epsilon_rule(60, 2)


def test_onenn_rows():
    cfg = ExperimentConfig(d=1, n=30, estimator="onenn", repeats=2, mc_samples=300)
    rows = run_experiment(cfg)
    assert all(r.eps == 0.0 and r.iters == 0 and r.ok and r.mse >= 0 for r in rows)


def test_failed_repeat_is_recorded():
    cfg = ExperimentConfig(d=1, n=10, eps_rule=EpsRule.fixed(1e-320), mc_samples=10, repeats=2)
    rows = run_experiment(cfg)
    assert len(rows) == 2
    for r in rows:
        assert not r.ok
        assert r.status.startswith("failed: ")
        assert math.isnan(r.mse)
    cell = aggregate(rows)
    assert cell["failures"] == 2 and math.isnan(cell["mean_mse"])


def test_single_cell_grid_matches_aggregate():
    base = ExperimentConfig(mc_samples=400, repeats=4, seed=5)
    grid = compare_grid([50], [2], ["exp"], ["entropic"], base)
    direct = run_experiment(ExperimentConfig(n=50, d=2, mc_samples=400, repeats=4, seed=5))
    assert [r.mse for r in grid.rows] == [r.mse for r in direct]
    expected = aggregate(direct)
    got = grid.cells[0]
    for key in ("mean_mse", "std_mse", "eps", "repeats", "failures"):
        assert got[key] == expected[key]
    assert got["std_mse"] == float(np.std([r.mse for r in direct], ddof=1))
    assert grid.all_ok


def test_grid_sort_order_and_worker_independence():
    base = ExperimentConfig(mc_samples=200, repeats=2, seed=9)
    args = ([40, 20], [2, 1], ["identity", "exp"], ["onenn", "entropic"], base)
    serial = compare_grid(*args, workers=1)
    pooled = compare_grid(*args, workers=6)
    keys = [(r.estimator, r.d, r.n) for r in serial.rows]
    assert keys == sorted(keys)
    assert [r.map_kind for r in serial.rows[:4]] == ["identity", "identity", "exp", "exp"]
    drop = lambda rows: [(r.estimator, r.d, r.n, r.map_kind, r.repeat, r.mse, r.iters, r.seed)  # noqa: E731
                         for r in rows]
    assert drop(serial.rows) == drop(pooled.rows)
    assert len(serial.rows) == 2 * 2 * 2 * 2 * 2
    assert len(serial.cells) == 16


def test_grid_rejects_bad_workers():
    with pytest.raises(InvalidArgumentError):
        compare_grid([10], [1], ["exp"], ["entropic"], ExperimentConfig(mc_samples=10), workers=0)


def test_csv_and_json_output(tmp_path):
    rows = [
        ExperimentResult("entropic", 10, 2, 0.1, 0, 1 / 3, 1.5, 7, 4),
        ExperimentResult("entropic", 10, 2, 0.1, 1, math.nan, math.nan, 0, 5, status="failed: X: y"),
    ]
    text = results_to_csv_text(rows)
    lines = text.splitlines()
    assert lines[0] == "estimator,d,n,eps,repeat,mse,runtime_ms,iters,seed,status"
    assert lines[1] == "entropic,2,10,0.1,0,0.3333333333333333,1.5,7,4,ok"
    assert lines[2].endswith(",nan,nan,0,5,failed: X: y")
    assert float(lines[1].split(",")[5]) == 1 / 3
    path = tmp_path / "agg.json"
    write_aggregate([aggregate(rows)], path)
    (cell,) = json.loads(path.read_text())
    assert cell["failures"] == 1 and cell["mean_mse"] == 1 / 3 and cell["std_mse"] == 0.0
