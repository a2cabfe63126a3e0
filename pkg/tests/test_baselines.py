"""Baseline estimator tests against closed-form least-squares oracles."""
import numpy as np
import pytest
import scipy.linalg

from posid.baselines import (BaselineKind, ls_clip, nonneg_ls,
                             regression_matrix, ridge_clip, ridge_pre_clip,
                             run_baseline)
from posid.errors import ConfigError
from posid.extensions import FiniteResponseConfig, identify_finite_response
from posid.kernels import KernelSpec, gram, window_kernel
from posid.signals import TimeSeriesData


def _prbs(rng, n):
    return rng.choice([-1.0, 1.0], size=n)


def _fir_data(rng, n, g, noise=0.0):
    u = _prbs(rng, n)
    y = np.convolve(u, g)[:n]
    if noise:
        y = y + noise * rng.standard_normal(n)
    return TimeSeriesData.at_rest(u, y)


def test_regression_matrix_is_input_toeplitz():
    rng = np.random.default_rng(0)
    u = rng.standard_normal(12)
    data = TimeSeriesData.at_rest(u, np.zeros(12))
    U = regression_matrix(data, 5)
    np.testing.assert_allclose(U, scipy.linalg.toeplitz(u, np.zeros(5)))


def test_noiseless_ls_recovers_truth_and_matches_constrained():
    # strictly positive truth: the unconstrained optimum is feasible, so
    # clipping does nothing and the constrained solve lands on the same g
    rng = np.random.default_rng(1)
    g_true = np.array([1.0, 0.6, 0.3, 0.15, 0.05])
    data = _fir_data(rng, 60, g_true)
    b = ls_clip(data, 5)
    c = nonneg_ls(data, 5)
    np.testing.assert_allclose(b.values, g_true, atol=1e-9)
    np.testing.assert_allclose(b.values, c.values, atol=1e-7)


def test_nonneg_ls_objective_never_worse_than_clipping():
    rng = np.random.default_rng(2)
    g_true = np.array([0.8, 0.0, 0.4, 0.0, 0.1, 0.0])
    data = _fir_data(rng, 50, g_true, noise=0.5)
    U = regression_matrix(data, 6)
    raw, *_ = np.linalg.lstsq(U, data.outputs, rcond=None)
    assert raw.min() < 0.0, "noise should push some taps negative"
    b = ls_clip(data, 6)
    c = nonneg_ls(data, 6)
    obj_b = np.sum((U @ b.values - data.outputs) ** 2)
    obj_c = np.sum((U @ c.values - data.outputs) ** 2)
    assert obj_c <= obj_b + 1e-10
    assert c.values.min() >= -1e-12


def test_ridge_matches_normal_equations():
    rng = np.random.default_rng(3)
    g_true = 0.7 ** np.arange(8)
    data = _fir_data(rng, 60, g_true, noise=0.2)
    kernel = KernelSpec.tc(0.7)
    lam = 0.5
    pre = ridge_pre_clip(data, 8, lam, kernel)
    U = regression_matrix(data, 8)
    K = gram(kernel, np.arange(8), np.arange(8))
    oracle = np.linalg.solve(U.T @ U + lam * np.linalg.inv(K),
                             U.T @ data.outputs)
    np.testing.assert_allclose(pre.values, oracle, atol=1e-9)
    clipped = ridge_clip(data, 8, lam, kernel)
    np.testing.assert_allclose(clipped.values, np.maximum(pre.values, 0.0))


def test_ridge_approaches_ls_as_lambda_vanishes():
    rng = np.random.default_rng(4)
    g_true = np.array([1.0, 0.5, 0.25, 0.1])
    data = _fir_data(rng, 80, g_true)
    U = regression_matrix(data, 4)
    ls, *_ = np.linalg.lstsq(U, data.outputs, rcond=None)
    pre = ridge_pre_clip(data, 4, 1e-10, KernelSpec.tc(0.6))
    np.testing.assert_allclose(pre.values, ls, atol=1e-4)


def test_run_baseline_dispatch():
    rng = np.random.default_rng(5)
    g_true = 0.8 ** np.arange(10)
    data = _fir_data(rng, 60, g_true, noise=0.3)
    kernel = KernelSpec.tc(0.7)
    for kind in ("b", "c", "d", "e"):
        spec = BaselineKind(kind=kind, fir_length=10, lam=0.2, kernel=kernel)
        est = run_baseline(spec, data)
        assert est.horizon == 10
        assert est.values.min() >= -1e-8, f"baseline {kind} went negative"
    # e is the finite-response estimator on the windowed kernel
    e = run_baseline(BaselineKind(kind="e", fir_length=10, lam=0.2,
                                  kernel=kernel), data)
    direct = identify_finite_response(
        FiniteResponseConfig(kernel=window_kernel(kernel, 10), lam=0.2), data)
    np.testing.assert_allclose(e.values, direct.values, atol=1e-12)


def test_baseline_kind_validation():
    with pytest.raises(ConfigError, match="kind"):
        BaselineKind(kind="z")
    with pytest.raises(ConfigError, match="fir_length"):
        BaselineKind(kind="b", fir_length=0)
    with pytest.raises(ConfigError, match="needs a kernel"):
        BaselineKind(kind="d", lam=1.0)
    with pytest.raises(ConfigError, match="lambda"):
        BaselineKind(kind="e", lam=0.0, kernel=KernelSpec.tc(0.5))
