"""Estimator variants for richer dominant-pole structure.

Three variants share the machinery of the base estimator:

* repeated pole: dominant part ``rho**t`` times a degree ``n - 1``
  polynomial whose top coefficient is bounded below;
* oscillating poles: ``n`` simple poles of modulus ``rho`` at the complex
  roots of unity, parameterised by real/imaginary phase coefficients;
* finite response: zero spectral radius, i.e. the response is supported
  on ``[0, n_g)`` and estimated with a finite-support kernel alone.

Each solves one convex QP per constraint horizon, growing the horizon
with the base method's certified bound as a heuristic cap.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .assembly import (assemble_core, assemble_oscillation_blocks,
                       assemble_polynomial_blocks, oscillation_tables,
                       polynomial_modes)
from .errors import ConfigError
from .estimator import (PositiveIdConfig, IdentifyDiagnostics,
                        _best_single_mode_misfit, _identify_options,
                        _m0_from_constants, _solve_or_raise, default_horizon,
                        initial_constraint_horizon, reconstruct_h)
from .kernels import KernelSpec, KIND_FINITE, domination_bound
from .signals import ImpulseResponse, TimeSeriesData

logger = logging.getLogger(__name__)

_NEG_TOL_SCALE = 1e-8
_MAX_LOOPS = 1000
# Default mode-coefficient penalty as a fraction of lambda.
_EPSILON_FRACTION = 1e-4


def _resolved_epsilon(epsilon: float | None, lam: float) -> float:
    if epsilon is None:
        return _EPSILON_FRACTION * lam
    if epsilon <= 0.0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    return float(epsilon)


@dataclass(frozen=True)
class RepeatedPoleConfig:
    """Dominant pole of multiplicity ``n``.

    ``base`` carries the kernel, pole, regularisation and loop controls;
    ``epsilon`` penalises the lower-degree mode coefficients and defaults
    to ``1e-4 * lam``.
    """

    base: PositiveIdConfig
    n: int
    epsilon: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"pole multiplicity must be >= 1, got {self.n}")
        _resolved_epsilon(self.epsilon, self.base.lam)


@dataclass(frozen=True)
class OscillatingPoleConfig:
    """``n`` simple dominant poles ``rho * omega**k`` at unit-root phases."""

    base: PositiveIdConfig
    n: int
    epsilon: float | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"pole count must be >= 1, got {self.n}")
        _resolved_epsilon(self.epsilon, self.base.lam)


@dataclass(frozen=True)
class FiniteResponseConfig:
    """Finitely supported response (zero spectral radius).

    The kernel must be finite-support: its support length is the response
    length ``n_g``.
    """

    kernel: KernelSpec
    lam: float
    solve_options: qp.SolveOptions | None = None

    def __post_init__(self) -> None:
        if self.kernel.kind != KIND_FINITE:
            raise ConfigError(
                "finite-response estimation needs a finite-support kernel; "
                "window a decaying kernel first")
        if self.lam <= 0.0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")

    @property
    def n_g(self) -> int:
        return int(self.kernel.support)


@dataclass
class RepeatedPoleModel:
    """Identified model ``g[t] = rho**t (a t**(n-1) + sum_j a_poly[j] t**j) + h[t]``."""

    a: float
    a_poly: np.ndarray = field(repr=False)
    rho: float
    n: int
    x: np.ndarray = field(repr=False)
    m: int
    h: ImpulseResponse
    g: ImpulseResponse
    diagnostics: IdentifyDiagnostics
    config: RepeatedPoleConfig = field(repr=False)
    data: TimeSeriesData = field(repr=False)

    def dominant_values(self, horizon: int) -> np.ndarray:
        modes = polynomial_modes(self.rho, self.n, horizon)
        coeffs = np.concatenate([self.a_poly, [self.a]])
        return modes @ coeffs

    def reconstruct(self, horizon: int) -> ImpulseResponse:
        h = reconstruct_h(self.x, self.config.base.kernel, self.data,
                          self.m, horizon)
        return ImpulseResponse(h.values + self.dominant_values(horizon))


@dataclass
class OscillatingPoleModel:
    """Identified model with oscillating dominant part of period ``n``.

    ``g[t] = rho**t * sum_k (a_r[k] cos(2 pi k t / n)
    - a_i[k] sin(2 pi k t / n)) + h[t]``; the phase equality constraint
    keeps the implied imaginary part identically zero, with its residual
    reported in ``equality_residual``.
    """

    a_r: np.ndarray = field(repr=False)
    a_i: np.ndarray = field(repr=False)
    rho: float
    n: int
    x: np.ndarray = field(repr=False)
    m: int
    h: ImpulseResponse
    g: ImpulseResponse
    diagnostics: IdentifyDiagnostics
    equality_residual: float
    config: OscillatingPoleConfig = field(repr=False)
    data: TimeSeriesData = field(repr=False)

    def dominant_values(self, horizon: int) -> np.ndarray:
        vr, vi, _, _ = oscillation_tables(self.rho, self.n, horizon)
        decay = self.rho ** np.arange(horizon, dtype=float)
        return decay * (vr @ self.a_r - vi @ self.a_i)

    def dominant_imag_values(self, horizon: int) -> np.ndarray:
        vr, vi, _, _ = oscillation_tables(self.rho, self.n, horizon)
        decay = self.rho ** np.arange(horizon, dtype=float)
        return decay * (vr @ self.a_i + vi @ self.a_r)

    def reconstruct(self, horizon: int) -> ImpulseResponse:
        h = reconstruct_h(self.x, self.config.base.kernel, self.data,
                          self.m, horizon)
        return ImpulseResponse(h.values + self.dominant_values(horizon))


def identify_repeated_pole(config: RepeatedPoleConfig,
                           data: TimeSeriesData) -> RepeatedPoleModel:
    """Identification with a dominant pole of multiplicity ``n``.

    Variables are the mode coefficients ``(a_poly, a)`` followed by the
    representer coefficients; nonnegativity couples them through the
    sampled modes on the constraint rows.
    """
    base = config.base
    n = config.n
    eps = _resolved_epsilon(config.epsilon, base.lam)
    options = _identify_options(base)
    horizon = base.horizon or default_horizon(data)
    m = initial_constraint_horizon(data)
    m0 = _heuristic_cap(base, data, None)
    iterations = 0
    while True:
        iterations += 1
        if iterations > _MAX_LOOPS:
            raise ConfigError("constraint-horizon loop failed to terminate")
        mats = assemble_core(base.kernel, data, base.rho, m)
        ext = assemble_polynomial_blocks(data, base.rho, n, m)
        if iterations == 1:
            m0 = _heuristic_cap(base, data, ext.B[:, n - 1])
        n_x = data.n_samples + m + 1
        M = np.hstack([ext.B, mats.O, mats.L])
        P = 2.0 * (M.T @ M)
        P[n:, n:] += 2.0 * base.lam * mats.gamma()
        if n > 1:
            P[:n - 1, :n - 1] += 2.0 * eps * np.eye(n - 1)
        q = -2.0 * (M.T @ mats.y)
        G = np.zeros((m + 2, n + n_x))
        G[:m + 1, :n] = ext.C
        G[:m + 1, n:] = np.hstack([mats.L.T, mats.K])
        G[m + 1, n - 1] = 1.0
        l = np.zeros(m + 2)
        l[m + 1] = base.a_min
        sol = _solve_or_raise(qp.ConvexQP(P=P, q=q, G=G, l=l), options)
        coeffs = sol.z[:n]
        x = sol.z[n:]
        a = float(coeffs[-1])
        check_len = max(m0, horizon, m + 1)
        h = reconstruct_h(x, base.kernel, data, m, check_len)
        modes = polynomial_modes(base.rho, n, check_len)
        g_vals = h.values + modes @ coeffs
        neg_tol = _NEG_TOL_SCALE * (1.0 + float(np.max(np.abs(coeffs))))
        min_head = float(g_vals[:m0].min(initial=0.0))
        accepted = min_head >= -neg_tol
        forced = not accepted and m >= m0
        if accepted or forced:
            if forced:
                logger.warning(
                    "repeated-pole loop accepting at heuristic cap m=%d "
                    "with residual negativity %.3e", m, min_head)
            diag = _diagnostics(sol, mats, x, m0, iterations, g_vals,
                                neg_tol, forced, base.a_min)
            return RepeatedPoleModel(
                a=a, a_poly=coeffs[:-1].copy(), rho=base.rho, n=n, x=x, m=m,
                h=ImpulseResponse(h.values[:horizon]),
                g=ImpulseResponse(g_vals[:horizon]),
                diagnostics=diag, config=config, data=data)
        m = min(m + base.delta_m, m0)


def identify_oscillating_poles(config: OscillatingPoleConfig,
                               data: TimeSeriesData) -> OscillatingPoleModel:
    """Identification with ``n`` simple dominant poles at unit-root phases.

    Variables are the real phase coefficients, the imaginary ones, then
    the representer coefficients.  The phase tables tie the three blocks
    together: sampled nonnegativity on the constraint rows, a zero
    imaginary part (equality over one period) and the amplitude floor on
    the phase values.
    """
    base = config.base
    n = config.n
    eps = _resolved_epsilon(config.epsilon, base.lam)
    options = _identify_options(base)
    horizon = base.horizon or default_horizon(data)
    m = initial_constraint_horizon(data)
    m0 = 0
    iterations = 0
    while True:
        iterations += 1
        if iterations > _MAX_LOOPS:
            raise ConfigError("constraint-horizon loop failed to terminate")
        mats = assemble_core(base.kernel, data, base.rho, m)
        ext = assemble_oscillation_blocks(data, base.rho, n, m)
        if iterations == 1:
            m0 = _heuristic_cap(base, data, ext.Br[:, 0])
        n_x = data.n_samples + m + 1
        M = np.hstack([ext.Br, ext.Bi, mats.O, mats.L])
        P = 2.0 * (M.T @ M)
        P[2 * n:, 2 * n:] += 2.0 * base.lam * mats.gamma()
        P[:n, :n] += 2.0 * eps * ext.E
        P[n:2 * n, n:2 * n] += 2.0 * eps * ext.E
        q = -2.0 * (M.T @ mats.y)
        vr_n, vi_n, _, _ = oscillation_tables(base.rho, n, n)
        G = np.zeros((m + 1 + n, 2 * n + n_x))
        G[:m + 1, :n] = ext.D @ ext.Vr
        G[:m + 1, n:2 * n] = -(ext.D @ ext.Vi)
        G[:m + 1, 2 * n:] = np.hstack([mats.L.T, mats.K])
        G[m + 1:, :n] = vr_n
        G[m + 1:, n:2 * n] = vi_n
        l = np.zeros(m + 1 + n)
        l[m + 1:] = base.a_min
        A = np.zeros((n, 2 * n + n_x))
        A[:, :n] = vi_n
        A[:, n:2 * n] = vr_n
        r = np.zeros(n)
        sol = _solve_or_raise(qp.ConvexQP(P=P, q=q, G=G, l=l, A=A, r=r),
                              options)
        a_r = sol.z[:n]
        a_i = sol.z[n:2 * n]
        x = sol.z[2 * n:]
        check_len = max(m0, horizon, m + 1)
        h = reconstruct_h(x, base.kernel, data, m, check_len)
        vr, vi, _, _ = oscillation_tables(base.rho, n, check_len)
        decay = base.rho ** np.arange(check_len, dtype=float)
        g_vals = h.values + decay * (vr @ a_r - vi @ a_i)
        scale = float(np.max(np.abs(np.concatenate([a_r, a_i])), initial=0.0))
        neg_tol = _NEG_TOL_SCALE * (1.0 + scale)
        min_head = float(g_vals[:m0].min(initial=0.0))
        accepted = min_head >= -neg_tol
        forced = not accepted and m >= m0
        if accepted or forced:
            if forced:
                logger.warning(
                    "oscillating-pole loop accepting at heuristic cap m=%d "
                    "with residual negativity %.3e", m, min_head)
            eq_res = float(np.max(np.abs(vi_n @ a_r + vr_n @ a_i),
                                  initial=0.0))
            diag = _diagnostics(sol, mats, x, m0, iterations, g_vals,
                                neg_tol, forced, base.a_min)
            return OscillatingPoleModel(
                a_r=a_r.copy(), a_i=a_i.copy(), rho=base.rho, n=n, x=x, m=m,
                h=ImpulseResponse(h.values[:horizon]),
                g=ImpulseResponse(g_vals[:horizon]),
                diagnostics=diag, equality_residual=eq_res,
                config=config, data=data)
        m = min(m + base.delta_m, m0)


def identify_finite_response(config: FiniteResponseConfig,
                             data: TimeSeriesData) -> ImpulseResponse:
    """Nonnegative finitely supported response estimate.

    One QP with nonnegativity on every lag of the support; the response
    is identically zero beyond it, so no horizon loop is needed.

    The representer coefficients on the sampled functionals are
    redundant here: every term factors through the section coefficients
    w with g = K w on the support, so the problem is solved over w
    alone.  That keeps the cost matrix full rank; the raw coefficient
    space is rank-deficient by construction and stalls the solver.
    """
    n_g = config.n_g
    m = n_g - 1
    mats = assemble_core(config.kernel, data, 0.5, m)
    # L = (input weights) @ K, so L w is the predicted output and
    # w' K w the squared kernel norm.
    P = 2.0 * (mats.L.T @ mats.L + config.lam * mats.K)
    q = -2.0 * (mats.L.T @ mats.y)
    G = mats.K.copy()
    l = np.zeros(n_g)
    options = config.solve_options or qp.SolveOptions(tol_feas=1e-10,
                                                      tol_gap=1e-9)
    sol = _solve_or_raise(qp.ConvexQP(P=P, q=q, G=G, l=l), options)
    x = np.concatenate([np.zeros(mats.n_samples), sol.z])
    g = reconstruct_h(x, config.kernel, data, m, n_g)
    return g


def _heuristic_cap(base: PositiveIdConfig, data: TimeSeriesData,
                   b_eff: np.ndarray | None) -> int:
    """Base-method certified bound reused as a heuristic horizon cap."""
    support = base.kernel.support
    if support is not None:
        return int(support)
    if b_eff is None:
        return 0
    c0 = _best_single_mode_misfit(data.outputs, b_eff, base.a_min)
    bound = domination_bound(base.kernel)
    return _m0_from_constants(c0, bound.c, bound.rho_d, base.rho,
                              base.a_min, base.lam)


def _diagnostics(sol, mats, x, m0, iterations, g_vals, neg_tol, forced,
                 a_min) -> IdentifyDiagnostics:
    gamma = mats.gamma()
    h_norm = float(np.sqrt(max(x @ gamma @ x, 0.0)))
    return IdentifyDiagnostics(
        m0=m0, iterations=iterations, qp_status=sol.status,
        qp_primal=sol.primal_residual, qp_dual=sol.dual_residual,
        qp_gap=sol.gap, objective=sol.objective + float(mats.y @ mats.y),
        c0=float("nan"), h_norm=h_norm,
        min_g=float(g_vals.min(initial=0.0)), neg_tol=neg_tol,
        forced_accept=forced)
