"""Time-domain containers and discrete convolution utilities.

A :class:`TimeSeriesData` couples output samples taken at integer times
with the full input history.  Inputs are declared on a contiguous window
``[t_start, ...]`` with ``t_start <= 0`` and are implicitly zero before
``t_start``, so every convolution against them is a finite, exact sum.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class TimeSeriesData:
    """Sampled outputs of one experiment plus the driving input.

    Parameters
    ----------
    sample_times : ndarray of int
        Strictly increasing times at which the output was measured.
    outputs : ndarray of float
        Output samples, aligned with ``sample_times``.
    inputs : ndarray of float
        Input values on the contiguous window starting at ``t_start``.
        The input is zero for ``t < t_start``.  The window must cover at
        least ``[t_start, sample_times[-1]]``; it may extend further (for
        prediction beyond the last measurement).
    t_start : int
        First time with possibly nonzero input; must satisfy
        ``t_start <= 0`` and ``t_start <= sample_times[0]``.
    """

    sample_times: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    t_start: int = 0

    def __post_init__(self) -> None:
        times = np.asarray(self.sample_times, dtype=np.int64)
        outs = np.asarray(self.outputs, dtype=float)
        ins = np.asarray(self.inputs, dtype=float)
        if times.ndim != 1 or outs.ndim != 1 or ins.ndim != 1:
            raise DataError("sample_times, outputs and inputs must be 1-d")
        if times.size == 0:
            raise DataError("need at least one output sample")
        if times.size != outs.size:
            raise DataError(
                f"{times.size} sample times but {outs.size} outputs")
        if np.any(np.diff(times) <= 0):
            raise DataError("sample times must be strictly increasing")
        if self.t_start > 0:
            raise DataError(
                f"input support must start at or before 0, got {self.t_start}")
        if times[0] < self.t_start:
            raise DataError("first sample time precedes the input support")
        needed = int(times[-1]) - self.t_start + 1
        if ins.size < needed:
            raise DataError(
                f"inputs cover {ins.size} steps but the last sample time "
                f"needs {needed}")
        if not (np.all(np.isfinite(outs)) and np.all(np.isfinite(ins))):
            raise DataError("outputs and inputs must be finite")
        object.__setattr__(self, "sample_times", times)
        object.__setattr__(self, "outputs", outs)
        object.__setattr__(self, "inputs", ins)

    @classmethod
    def at_rest(cls, inputs, outputs) -> "TimeSeriesData":
        """Dense experiment started at rest: samples at 0, 1, ..., n-1."""
        outputs = np.asarray(outputs, dtype=float)
        return cls(np.arange(outputs.size), outputs, inputs, t_start=0)

    @property
    def n_samples(self) -> int:
        return int(self.sample_times.size)

    @property
    def t_last(self) -> int:
        return int(self.sample_times[-1])

    @property
    def is_at_rest(self) -> bool:
        """True when sampled densely from time zero with no pre-history."""
        return (self.t_start == 0
                and self.sample_times[0] == 0
                and self.n_samples == self.t_last + 1)

    def input_at(self, t: int) -> float:
        """u_t, with the zero extension before ``t_start``."""
        if t < self.t_start:
            return 0.0
        idx = int(t) - self.t_start
        if idx >= self.inputs.size:
            raise DataError(f"input not available at time {t}")
        return float(self.inputs[idx])

    def input_window(self, t: int) -> np.ndarray:
        """Weights ``u[t - s]`` for lags ``s = 0 .. t - t_start``.

        These are exactly the nonzero convolution weights at time ``t``.
        """
        if t < self.t_start:
            raise DataError(
                f"time {t} precedes the input support start {self.t_start}")
        idx = int(t) - self.t_start
        if idx >= self.inputs.size:
            raise DataError(f"input not available at time {t}")
        return np.ascontiguousarray(self.inputs[idx::-1])

    def restrict(self, indices) -> "TimeSeriesData":
        """Keep only the output samples at the given positions.

        The input history is unchanged, so restricted data remain valid
        for identification and the discarded times for validation.
        """
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise DataError("restriction must keep at least one sample")
        return TimeSeriesData(self.sample_times[idx], self.outputs[idx],
                              self.inputs, self.t_start)


@dataclass(frozen=True)
class ImpulseResponse:
    """Impulse response truncated to a finite horizon.

    ``values[s]`` is the response at lag ``s``; the horizon is the number
    of stored lags.
    """

    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise DataError("impulse response must be a nonempty vector")
        object.__setattr__(self, "values", vals)

    @property
    def horizon(self) -> int:
        return int(self.values.size)


def convolve(g: ImpulseResponse, data: TimeSeriesData, t: int) -> float:
    """Output of ``g`` driven by the data's input, evaluated at time ``t``.

    Computes ``sum_s g[s] * u[t - s]`` with ``s`` ascending.  The sum is
    finite because the input vanishes before ``t_start``.
    """
    w = data.input_window(t)
    n = min(g.horizon, w.size)
    return float(np.dot(g.values[:n], w[:n]))


def toeplitz_operator(data: TimeSeriesData, n: int) -> np.ndarray:
    """Lower-triangular convolution matrix ``[u[i - j]]`` of order ``n``.

    Only defined for at-rest data, where output ``i`` of an impulse
    response ``g`` is row ``i`` of this matrix times ``g[:n]``.
    """
    if not data.is_at_rest:
        raise DataError("toeplitz operator requires at-rest data")
    if n <= 0:
        raise ConfigError(f"toeplitz order must be positive, got {n}")
    if n > data.inputs.size:
        raise DataError(
            f"toeplitz order {n} exceeds the {data.inputs.size} known inputs")
    return scipy.linalg.toeplitz(data.inputs[:n], np.zeros(n))


def dominant_mode(rho: float, horizon: int) -> ImpulseResponse:
    """Geometric mode ``rho**t`` on ``t = 0 .. horizon - 1``."""
    if not 0.0 < rho < 1.0:
        raise ConfigError(f"rho must lie in (0, 1), got {rho}")
    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    return ImpulseResponse(rho ** np.arange(horizon, dtype=float))


def hankel_numerical_rank(g: ImpulseResponse, size: int,
                          tol: float = 1e-8) -> int:
    """Numerical rank of the leading ``size x size`` Hankel window of ``g``.

    Counts singular values above ``tol`` times the largest one.  Requires
    ``2 * size - 1 <= horizon`` so the window is fully populated.
    """
    if size <= 0:
        raise ConfigError(f"window size must be positive, got {size}")
    if 2 * size - 1 > g.horizon:
        raise ConfigError(
            f"window size {size} needs horizon >= {2 * size - 1}, "
            f"got {g.horizon}")
    h = scipy.linalg.hankel(g.values[:size], g.values[size - 1:2 * size - 1])
    svals = np.linalg.svd(h, compute_uv=False)
    if svals.size == 0 or svals[0] <= 0.0:
        return 0
    return int(np.sum(svals > tol * svals[0]))


def read_timeseries_csv(path) -> TimeSeriesData:
    """Load an experiment from a ``t,u,y`` CSV file.

    One row per integer time step, times contiguous and ascending.  The
    ``y`` field may be empty on input-only rows (pre-history before the
    first measurement).
    """
    times: list[int] = []
    inputs: list[float] = []
    out_times: list[int] = []
    outputs: list[float] = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open data file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["t", "u", "y"]:
            raise DataError(f"{path}: expected header 't,u,y', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: expected t,u[,y] fields")
            try:
                t = int(row[0])
                u = float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad t or u field") from exc
            if times and t != times[-1] + 1:
                raise DataError(
                    f"{path}:{lineno}: time {t} breaks the contiguous grid")
            times.append(t)
            inputs.append(u)
            if len(row) >= 3 and row[2].strip() != "":
                try:
                    outputs.append(float(row[2]))
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: bad y field") from exc
                out_times.append(t)
    if not times:
        raise DataError(f"{path}: no data rows")
    if not out_times:
        raise DataError(f"{path}: no output samples")
    return TimeSeriesData(np.asarray(out_times), np.asarray(outputs),
                          np.asarray(inputs), t_start=times[0])


def write_impulse_csv(path, g: ImpulseResponse) -> None:
    """Write an impulse response as an ``s,g`` CSV file."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["s", "g"])
        for s, value in enumerate(g.values):
            writer.writerow([s, repr(float(value))])


def read_impulse_csv(path) -> ImpulseResponse:
    """Load an impulse response written by :func:`write_impulse_csv`."""
    values: list[float] = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open impulse file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["s", "g"]:
            raise DataError(f"{path}: expected header 's,g', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                s = int(row[0])
                value = float(row[1])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: bad impulse row") from exc
            if s != len(values):
                raise DataError(f"{path}:{lineno}: lag {s} out of order")
            values.append(value)
    if not values:
        raise DataError(f"{path}: no impulse samples")
    return ImpulseResponse(np.asarray(values))
