"""Finite-dimensional matrix assembly for the constrained estimator.

Everything here reduces kernel convolutions against the input to exact
finite sums: the input vanishes before its declared support start, so the
convolution weight of lag ``s`` at time ``t`` is ``u[t - s]`` and is zero
for ``s > t - t_start``.  The internal horizon is always taken large
enough to cover every nonzero weight, with one extra step of headroom, so
no truncation error enters any entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .kernels import KernelSpec, gram
from .signals import ImpulseResponse, TimeSeriesData, convolve

# Extra horizon steps beyond the last nonzero convolution weight.
_HEADROOM = 1


@dataclass(frozen=True)
class QPDataMatrices:
    """Data matrices of the finite-dimensional problem at horizon ``m``.

    ``O[i, j]`` is the kernel convolved with the input in both arguments
    at times ``(t_i, t_j)``; ``L[i, s]`` convolves only the first argument
    (lag ``s = 0 .. m``); ``K`` is the plain kernel Gram on ``[0, m]^2``;
    ``b`` is the input-convolved dominant mode and ``c`` its samples
    ``rho**s``.
    """

    O: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    m: int

    @property
    def n_samples(self) -> int:
        return int(self.O.shape[0])

    def gamma(self) -> np.ndarray:
        """Joint Gram ``[[O, L], [L', K]]`` of the representer basis."""
        top = np.hstack([self.O, self.L])
        bottom = np.hstack([self.L.T, self.K])
        return np.vstack([top, bottom])


@dataclass(frozen=True)
class ExtensionMatrices:
    """Mode blocks for the multiple-pole and oscillating variants.

    Polynomial variant fills ``B`` (input-convolved modes) and ``C``
    (mode samples on the constraint rows).  Oscillating variant fills
    ``Br``/``Bi`` (input-convolved cosine/sine modes) plus the phase
    tables ``Vr``/``Vi``, decay diagonal ``D`` and penalty selector ``E``.
    """

    B: np.ndarray | None = field(default=None, repr=False)
    C: np.ndarray | None = field(default=None, repr=False)
    Br: np.ndarray | None = field(default=None, repr=False)
    Bi: np.ndarray | None = field(default=None, repr=False)
    Vr: np.ndarray | None = field(default=None, repr=False)
    Vi: np.ndarray | None = field(default=None, repr=False)
    D: np.ndarray | None = field(default=None, repr=False)
    E: np.ndarray | None = field(default=None, repr=False)
    n: int = 1


def input_weight_matrix(data: TimeSeriesData, width: int) -> np.ndarray:
    """Convolution weights ``W[i, s] = u[t_i - s]`` for lags ``s < width``.

    Rows follow the sample times; entries with ``t_i - s`` before the
    input support are zero.  For at-rest data and ``width = n`` this is
    the lower-triangular Toeplitz operator of the input.
    """
    if width <= 0:
        raise ConfigError(f"weight width must be positive, got {width}")
    times = data.sample_times
    w = np.zeros((times.size, width))
    for i, t in enumerate(times):
        window = data.input_window(int(t))
        n = min(window.size, width)
        w[i, :n] = window[:n]
    return w


def required_width(data: TimeSeriesData) -> int:
    """Number of lags with possibly nonzero convolution weight."""
    return data.t_last - data.t_start + 1


def assemble_core(kernel: KernelSpec, data: TimeSeriesData, rho: float,
                  m: int) -> QPDataMatrices:
    """Assemble all data matrices for constraint horizon ``m``.

    The joint Gram is formed as ``W K_N W'`` with ``W`` stacking the input
    weights over the section selectors, which keeps it symmetric positive
    semidefinite up to roundoff.
    """
    if m < 0:
        raise ConfigError(f"constraint horizon must be nonnegative, got {m}")
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"rho must lie in (0, 1), got {rho}")
    width = required_width(data)
    n_big = max(width, m + 1) + _HEADROOM
    phi = input_weight_matrix(data, n_big)
    k_big = gram(kernel, np.arange(n_big), np.arange(n_big))
    half = phi @ k_big
    O = half @ phi.T
    O = 0.5 * (O + O.T)
    L = half[:, :m + 1]
    K = k_big[:m + 1, :m + 1]
    b = phi @ (rho ** np.arange(n_big, dtype=float))
    c = rho ** np.arange(m + 1, dtype=float)
    return QPDataMatrices(O=O, L=L, K=K, y=data.outputs.copy(), b=b, c=c,
                          m=int(m))


def assemble_core_definitional(kernel: KernelSpec, data: TimeSeriesData,
                               rho: float, m: int) -> QPDataMatrices:
    """Entry-by-entry assembly through explicit convolution calls.

    Slow reference path used to validate :func:`assemble_core`.
    """
    if m < 0:
        raise ConfigError(f"constraint horizon must be nonnegative, got {m}")
    width = required_width(data)
    times = data.sample_times
    n = times.size
    O = np.zeros((n, n))
    L = np.zeros((n, m + 1))
    b = np.zeros(n)
    mode = ImpulseResponse(rho ** np.arange(width, dtype=float))
    # Kernel convolved once per sample time: row i holds the function
    # s -> sum_r u[t_i - r] k(r, s), enough to build both O and L.
    section = gram(kernel, np.arange(width), np.arange(max(width, m + 1)))
    half_rows = []
    for i, t in enumerate(times):
        window = data.input_window(int(t))
        row = window @ section[:window.size]
        half_rows.append(row)
        L[i] = row[:m + 1]
        b[i] = convolve(mode, data, int(t))
    for i in range(n):
        half_fn = ImpulseResponse(half_rows[i][:width])
        for j, t2 in enumerate(times):
            O[i, j] = convolve(half_fn, data, int(t2))
    K = gram(kernel, np.arange(m + 1), np.arange(m + 1))
    c = rho ** np.arange(m + 1, dtype=float)
    return QPDataMatrices(O=O, L=L, K=K, y=data.outputs.copy(), b=b, c=c,
                          m=int(m))


def polynomial_modes(rho: float, degrees: int, horizon: int) -> np.ndarray:
    """Columns ``t**j * rho**t`` for ``j < degrees`` on ``t < horizon``.

    The ``t = 0, j = 0`` entry is 1 (zero to the zeroth power taken as
    one), so the constant mode reaches time zero.
    """
    t = np.arange(horizon, dtype=float)
    # np.power(0.0, 0) is 1, which is the convention needed at t = 0.
    cols = [np.power(t, j) * rho ** t for j in range(degrees)]
    return np.stack(cols, axis=1)


def assemble_polynomial_blocks(data: TimeSeriesData, rho: float, n: int,
                               m: int) -> ExtensionMatrices:
    """Mode blocks for a dominant pole of multiplicity ``n``.

    ``B[i, j]`` convolves mode ``t**j * rho**t`` with the input at time
    ``t_i``; ``C[t, j]`` samples the same modes on ``t = 0 .. m``.
    """
    if n < 1:
        raise ConfigError(f"pole multiplicity must be >= 1, got {n}")
    if m < 0:
        raise ConfigError(f"constraint horizon must be nonnegative, got {m}")
    width = required_width(data)
    phi = input_weight_matrix(data, width)
    B = phi @ polynomial_modes(rho, n, width)
    C = polynomial_modes(rho, n, m + 1)
    return ExtensionMatrices(B=B, C=C, n=int(n))


def oscillation_tables(rho: float, n: int, rows: int):
    """Root-of-unity phase tables for period ``n``.

    Returns ``(Vr, Vi, D, E)``: the real and imaginary parts of
    ``omega**(t * k)`` with ``omega = exp(2 pi i / n)`` on
    ``t < rows, k < n``; ``D = diag(rho**t)`` over the same rows; and the
    selector ``E = diag(0, 1, ..., 1)`` of size ``n`` that excludes the
    constant phase from penalties.
    """
    if n < 1:
        raise ConfigError(f"period must be >= 1, got {n}")
    if rows < 1:
        raise ConfigError(f"need at least one row, got {rows}")
    t = np.arange(rows)
    k = np.arange(n)
    angles = 2.0 * np.pi * np.outer(t, k) / n
    Vr = np.cos(angles)
    Vi = np.sin(angles)
    D = np.diag(rho ** np.arange(rows, dtype=float))
    E = np.diag(np.concatenate([[0.0], np.ones(n - 1)]))
    return Vr, Vi, D, E


def assemble_oscillation_blocks(data: TimeSeriesData, rho: float, n: int,
                                m: int) -> ExtensionMatrices:
    """Mode blocks for an oscillating dominant part of period ``n``.

    ``Br``/``Bi`` stack the input-convolved cosine and sine modes
    ``rho**t cos(2 pi k t / n)`` and ``rho**t sin(2 pi k t / n)``; the
    phase tables over the constraint rows come from
    :func:`oscillation_tables` with ``rows = m + 1``.
    """
    width = required_width(data)
    phi = input_weight_matrix(data, width)
    vr_w, vi_w, _, _ = oscillation_tables(rho, n, width)
    decay = (rho ** np.arange(width, dtype=float))[:, None]
    Br = phi @ (decay * vr_w)
    Bi = phi @ (decay * vi_w)
    Vr, Vi, D, E = oscillation_tables(rho, n, m + 1)
    return ExtensionMatrices(Br=Br, Bi=Bi, Vr=Vr, Vi=Vi, D=D, E=E, n=int(n))
