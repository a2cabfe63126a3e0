"""Hold-out tuning tests: splits, grids, coupling, reproducibility."""
import math

import numpy as np
import pytest

from posid.errors import ConfigError
from posid.estimator import PositiveIdConfig, identify
from posid.kernels import decay_compatible
from posid.qp import SolveOptions
from posid.signals import TimeSeriesData
from posid.tuning import (HyperparamSpace, SplitSpec, ThetaPoint,
                          default_split, tune, validation_score)


def _prbs(rng, n):
    return rng.choice([-1.0, 1.0], size=n)


def _single_mode_data(rng, n, rho=0.9, noise=0.01):
    u = _prbs(rng, n)
    g = rho ** np.arange(n, dtype=float)
    y = np.convolve(u, g)[:n] + noise * rng.standard_normal(n)
    return TimeSeriesData.at_rest(u, y)


def test_default_split_is_temporal():
    split = default_split(10, train_fraction=0.7)
    np.testing.assert_array_equal(split.train_indices, np.arange(7))
    np.testing.assert_array_equal(split.validation_indices, np.arange(7, 10))
    # extreme fractions still leave both parts nonempty
    tiny = default_split(5, train_fraction=0.01)
    assert tiny.train_indices.size == 1
    assert tiny.validation_indices.size == 4


def test_split_validation():
    with pytest.raises(ConfigError, match="nonempty"):
        SplitSpec(np.array([], dtype=int), np.array([1]))
    with pytest.raises(ConfigError, match="disjoint"):
        SplitSpec(np.array([0, 1]), np.array([1, 2]))
    with pytest.raises(ConfigError, match="train fraction"):
        default_split(10, train_fraction=1.0)


def test_budget_one_evaluates_single_candidate():
    rng = np.random.default_rng(0)
    data = _single_mode_data(rng, 40)
    space = HyperparamSpace(kind="tc", rho_range=(0.9, 0.9),
                            lam_range=(1e-2, 1e-2), beta_range=(0.5, 0.5))
    result = tune(space, data, budget=1)
    assert len(result.trace) == 1
    assert result.theta == ThetaPoint(rho=0.9, lam=1e-2, beta=0.5)
    assert math.isfinite(result.score)


def test_grid_picks_trace_argmin():
    rng = np.random.default_rng(1)
    data = _single_mode_data(rng, 50)
    space = HyperparamSpace(kind="tc", rho_range=(0.85, 0.95),
                            lam_range=(1e-4, 1e0), beta_range=(0.5, 0.5))
    result = tune(space, data, budget=4)
    assert len(result.trace) == 4, "two free axes, two points each"
    scores = [score for _, score in result.trace]
    assert result.score == min(scores)
    best = min(range(4), key=lambda i: scores[i])
    assert result.theta == result.trace[best][0]


def test_tuned_pole_lands_near_truth():
    rng = np.random.default_rng(2)
    data = _single_mode_data(rng, 60, rho=0.9)
    space = HyperparamSpace(kind="tc", rho_range=(0.7, 0.99),
                            lam_range=(1e-4, 1e-4), beta_range=(0.45, 0.45))
    result = tune(space, data, budget=20)
    assert abs(result.theta.rho - 0.9) <= 0.05, (
        f"tuned rho {result.theta.rho} too far from 0.9")


def test_coupling_never_violated():
    rng = np.random.default_rng(3)
    data = _single_mode_data(rng, 40)
    space = HyperparamSpace(kind="tc", rho_range=(0.5, 0.99),
                            lam_range=(1e-2, 1e-2), beta_range=(0.1, 0.9))
    for strategy in ("grid", "random"):
        result = tune(space, data, budget=12, strategy=strategy, seed=7)
        assert result.trace, "search must evaluate something"
        for theta, _ in result.trace:
            assert decay_compatible(theta.kernel("tc"), theta.rho)


def test_random_search_is_reproducible():
    rng = np.random.default_rng(4)
    data = _single_mode_data(rng, 40)
    space = HyperparamSpace(kind="tc", rho_range=(0.8, 0.99),
                            lam_range=(1e-3, 1e1), beta_range=(0.2, 0.6))
    first = tune(space, data, budget=6, strategy="random", seed=11)
    second = tune(space, data, budget=6, strategy="random", seed=11)
    assert first.trace == second.trace
    assert first.theta == second.theta
    other = tune(space, data, budget=6, strategy="random", seed=12)
    assert other.trace != first.trace


def test_validation_score_matches_convolution_loop():
    rng = np.random.default_rng(5)
    data = _single_mode_data(rng, 40)
    split = default_split(40)
    theta = ThetaPoint(rho=0.9, lam=1e-3, beta=0.5)
    score = validation_score(theta, data, split, "tc")
    config = PositiveIdConfig(kernel=theta.kernel("tc"), rho=theta.rho,
                              lam=theta.lam)
    model = identify(config, data.restrict(split.train_indices))
    times = data.sample_times[split.validation_indices]
    g = model.reconstruct(int(times.max()) + 1).values
    errors = []
    for t in times:
        pred = sum(g[s] * data.inputs[t - s] for s in range(t + 1))
        errors.append(data.outputs[t] - pred)
    oracle = float(np.mean(np.square(errors)))
    assert score == pytest.approx(oracle, abs=1e-10)


def test_validation_score_zero_on_exact_reproduction():
    rng = np.random.default_rng(5)
    data = _single_mode_data(rng, 40, noise=0.0)
    split = default_split(40)
    theta = ThetaPoint(rho=0.9, lam=1e-10, beta=0.5)
    score = validation_score(theta, data, split, "tc",
                             solve_options=SolveOptions(1e-12, 1e-12))
    assert 0.0 <= score <= 1e-12


def test_validation_score_amplitude_floor_formula():
    # zero outputs with a huge lambda pin the model at (a_min, h = 0),
    # so the score is the mean squared floor prediction
    rng = np.random.default_rng(5)
    n = 40
    u = _prbs(rng, n)
    data = TimeSeriesData.at_rest(u, np.zeros(n))
    split = default_split(n)
    theta = ThetaPoint(rho=0.9, lam=1e8, beta=0.5)
    a_min = 0.01
    score = validation_score(theta, data, split, "tc", a_min=a_min,
                             solve_options=SolveOptions(1e-12, 1e-12))
    b_full = np.convolve(0.9 ** np.arange(n, dtype=float), u)[:n]
    oracle = np.mean((a_min * b_full[split.validation_indices]) ** 2)
    assert score == pytest.approx(oracle, rel=1e-5)


def test_validation_score_inf_on_failure():
    rng = np.random.default_rng(6)
    data = _single_mode_data(rng, 30)
    split = default_split(30)
    # beta 0.9 decays at 0.949, slower than the 0.9 pole: invalid config
    bad = ThetaPoint(rho=0.9, lam=1e-2, beta=0.9)
    assert validation_score(bad, data, split, "tc") == math.inf


def test_no_feasible_grid_candidate_raises():
    rng = np.random.default_rng(7)
    data = _single_mode_data(rng, 30)
    space = HyperparamSpace(kind="tc", rho_range=(0.5, 0.5),
                            lam_range=(1e-2, 1e-2), beta_range=(0.9, 0.9))
    with pytest.raises(ConfigError, match="coupling"):
        tune(space, data, budget=4)


def test_space_and_strategy_validation():
    with pytest.raises(ConfigError, match="gamma range"):
        HyperparamSpace(kind="dc")
    with pytest.raises(ConfigError, match="takes no gamma"):
        HyperparamSpace(kind="tc", gamma_range=(0.1, 0.9))
    with pytest.raises(ConfigError, match="cannot tune"):
        HyperparamSpace(kind="finite")
    with pytest.raises(ConfigError, match="bad rho range"):
        HyperparamSpace(kind="tc", rho_range=(0.9, 0.5))
    rng = np.random.default_rng(8)
    data = _single_mode_data(rng, 30)
    space = HyperparamSpace(kind="tc")
    with pytest.raises(ConfigError, match="strategy"):
        tune(space, data, budget=2, strategy="anneal")
    with pytest.raises(ConfigError, match="budget"):
        tune(space, data, budget=0)
