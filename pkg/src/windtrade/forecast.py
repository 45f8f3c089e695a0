"""Martingale forecast model for normalized production.

The stylized wind ``X_t`` is a unit-mean exponential martingale whose
remaining log-variance until delivery is ``theta(t)``; the forecast is
``F_t = E[f_prod(X_T) | F_t] = g(X_t, theta(t))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import LatentParams, PowerCurve, f_prod, norm_cdf, second_moment_fprod
from .quad import normal_nodes, piecewise_normal_rule

THETA_EPS = 1e-14

# purpose tag for per-path random substreams
STREAM_FORECAST = 0x46435354


def g(curve: PowerCurve, x, theta):
    """Conditional expectation ``E[f_prod(x * exp(sqrt(theta) N - theta / 2))]``."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    x, theta = np.broadcast_arrays(x, theta)
    small = theta < THETA_EPS
    th = np.where(small, 1.0, theta)
    sq = np.sqrt(th)
    lx = np.log(x)
    lmin, lmax = math.log(curve.x_min), math.log(curve.x_max)
    dp_min = (lx - lmin + 0.5 * th) / sq
    dp_max = (lx - lmax + 0.5 * th) / sq
    dm_min = dp_min - sq
    dm_max = dp_max - sq
    val = (x * (norm_cdf(dp_min) - norm_cdf(dp_max))
           - curve.x_min * norm_cdf(dm_min)
           + curve.x_max * norm_cdf(dm_max)) / curve.width
    val = np.clip(val, 0.0, 1.0)
    if np.any(small):
        val = np.where(small, f_prod(curve, x), val)
    return val if val.ndim else float(val)


# -- remaining-variance schedules ---------------------------------------------

class ThetaSchedule:
    """Remaining log-variance ``theta(t)`` on ``[0, T]``, capped at ``nu_X**2``."""

    T: float
    cap: float

    def theta(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.theta(t)

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        tol = 1e-12 * max(1.0, abs(self.T))
        if np.any((t < -tol) | (t > self.T + tol)):
            raise ValueError(f"t must lie in [0, {self.T}]")
        return np.clip(t, 0.0, self.T)

    def sigma_sq(self, t0, t1):
        """Average instantaneous variance ``-(dtheta/dt)`` over ``[t0, t1]``."""
        return (np.asarray(self.theta(t0)) - np.asarray(self.theta(t1))) / (
            np.asarray(t1) - np.asarray(t0))


@dataclass(frozen=True)
class ParametricTheta(ThetaSchedule):
    """``sigma_t = sigma0 * exp(eta (T - t))`` for ``T - t < tau_star``, plus jump ``b``."""

    sigma0: float
    eta: float
    b: float
    T: float
    cap: float
    tau_star: float = math.inf

    def __post_init__(self):
        if self.sigma0 < 0 or self.b < 0 or self.cap <= 0 or self.tau_star <= 0:
            raise ValueError("invalid parametric theta schedule")

    def theta_of_horizon(self, h):
        h = np.asarray(h, dtype=float)
        if abs(self.eta) < 1e-14:
            growth = h * (1.0 + self.eta * h)
        else:
            growth = np.expm1(2.0 * self.eta * h) / (2.0 * self.eta)
        val = np.minimum(self.b ** 2 + self.sigma0 ** 2 * growth, self.cap)
        val = np.where(h >= self.tau_star, self.cap, val)
        return val if val.ndim else float(val)

    def theta(self, t):
        t = self._check(t)
        return self.theta_of_horizon(self.T - t)


@dataclass(frozen=True)
class TabulatedTheta(ThetaSchedule):
    """Piecewise-linear ``theta`` through knots; no extrapolation."""

    times: tuple
    values: tuple
    T: float
    cap: float
    floor: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("times and values must be 1-D of equal length >= 2")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly ascending")
        if np.any(v < 0):
            raise ValueError("theta values must be nonnegative")
        if np.any(np.diff(v) > 1e-12):
            raise ValueError("theta must be nonincreasing in t")

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        knots = np.asarray(self.times)
        tol = 1e-12 * max(1.0, abs(self.T))
        if np.any((t < knots[0] - tol) | (t > knots[-1] + tol)):
            raise ValueError(f"t outside tabulated range [{knots[0]}, {knots[-1]}]")
        val = np.interp(t, knots, np.asarray(self.values))
        val = np.clip(val, self.floor, self.cap)
        return val if val.ndim else float(val)


def theta_at(s: ThetaSchedule, t):
    return s.theta(t)


def constant_vol_schedule(sigma: float, T: float, b: float = 0.0) -> ParametricTheta:
    """Constant volatility ``sigma`` per unit time; ``nu_X**2 = b**2 + sigma**2 T``."""
    return ParametricTheta(sigma0=sigma, eta=0.0, b=b, T=T, cap=b * b + sigma * sigma * T)


# -- forecast error variance ----------------------------------------------------

def mean_fprod(lat: LatentParams) -> float:
    return float(g(lat.curve, 1.0, lat.nu_X ** 2))


def production_variance(lat: LatentParams) -> float:
    return second_moment_fprod(lat) - mean_fprod(lat) ** 2


_KINK_OFFSETS = np.array([-16.0, -8.0, -4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])


def forecast_second_moment(curve, lat: LatentParams, theta, n_nodes: int | None = None):
    """``E[g(X_t, theta)^2]`` where ``X_t`` carries log-variance ``nu_X**2 - theta``.

    Default rule is composite Gauss-Legendre with panels graded around the two
    z-locations where ``X_t`` crosses a knot of the power curve; ``g`` has a
    transition layer of width ``sqrt(theta)`` there, which a global Hermite rule
    cannot resolve for small ``theta``.  Pass ``n_nodes`` to use a plain
    Gauss-Hermite rule instead.
    """
    theta = np.asarray(theta, dtype=float)
    s2 = np.maximum(lat.nu_X ** 2 - theta, 0.0)[..., None]
    if n_nodes is not None:
        z, w = normal_nodes(n_nodes)
        x = np.exp(np.sqrt(s2) * z - 0.5 * s2)
        return (g(curve, x, theta[..., None]) ** 2) @ w
    s = np.sqrt(np.maximum(s2, 1e-300))
    knots = np.log([curve.x_min, curve.x_max])
    centers = (knots + 0.5 * s2) / s
    width = np.sqrt(np.maximum(theta, 0.0))[..., None] / s
    breaks = (centers[..., :, None] + width[..., None] * _KINK_OFFSETS).reshape(theta.shape + (-1,))
    z, w = piecewise_normal_rule(breaks, n_panel=10)
    x = np.exp(s * z - 0.5 * s2)
    vals = g(curve, x, theta[..., None]) ** 2
    return np.sum(vals * w, axis=-1)


def error_variance(curve, lat: LatentParams, theta, n_nodes: int | None = None):
    """Forecast-error variance ``phi(theta) = E[(F_t - F_T)^2]``.

    ``theta`` is clamped to ``[0, nu_X**2]``.  The endpoints are exact:
    ``phi(0) = 0`` and ``phi(nu_X**2) = Var[f_prod(X_T)]``.
    """
    nu2 = lat.nu_X ** 2
    theta = np.clip(np.asarray(theta, dtype=float), 0.0, nu2)
    m2 = second_moment_fprod(lat)
    out = m2 - forecast_second_moment(curve, lat, theta, n_nodes)
    out = np.where(theta <= 0.0, 0.0, out)
    out = np.where(theta >= nu2, m2 - mean_fprod(lat) ** 2, out)
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


class ErrorVarianceTable:
    """Cubic-spline surrogate of ``error_variance`` on ``[0, nu_X**2]``.

    Nodes are uniform in ``sqrt(theta)``; with 801 nodes the interpolation error
    is ~1e-14 on the reference parameters.
    """

    def __init__(self, curve, lat: LatentParams, n: int = 801):
        from scipy.interpolate import CubicSpline

        self.nu2 = lat.nu_X ** 2
        u = np.linspace(0.0, 1.0, n)
        self._spline = CubicSpline(u, error_variance(curve, lat, self.nu2 * u * u))

    def __call__(self, theta):
        theta = np.clip(np.asarray(theta, dtype=float), 0.0, self.nu2)
        return self._spline(np.sqrt(theta / self.nu2))


# -- path simulation -------------------------------------------------------------

@dataclass(frozen=True)
class ForecastPath:
    times: np.ndarray
    x_values: np.ndarray
    f_values: np.ndarray

    @property
    def realized(self) -> float:
        return float(self.f_values[-1])


@dataclass(frozen=True)
class ForecastPaths:
    """A batch of simulated forecast paths sharing one time grid.

    ``x`` and ``f`` have shape ``(n_paths, len(times))``.  Indexing yields
    :class:`ForecastPath` views.
    """

    times: np.ndarray
    x: np.ndarray
    f: np.ndarray
    theta: np.ndarray = field(repr=False)

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i) -> ForecastPath:
        return ForecastPath(self.times, self.x[i], self.f[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def realized(self) -> np.ndarray:
        return self.f[:, -1]


def log_increment_variances(s: ThetaSchedule, grid, nu_X_sq: float) -> np.ndarray:
    """Per-step log-variances of ``X`` along ``grid`` (first entry: variance at ``grid[0]``)."""
    grid = np.asarray(grid, dtype=float)
    th = np.asarray(s.theta(grid), dtype=float)
    if np.any(np.diff(th[:-1]) > 1e-12):
        raise ValueError("theta must be nonincreasing along the grid")
    steps = np.empty(grid.size)
    steps[0] = max(nu_X_sq - th[0], 0.0)
    steps[1:-1] = th[:-2] - th[1:-1]
    # last step to T carries the remaining variance, including the terminal jump
    steps[-1] = th[-2]
    return np.maximum(steps, 0.0)


def path_normals(seed: int, n_paths: int, n_steps: int, tag: int = STREAM_FORECAST,
                 start: int = 0) -> np.ndarray:
    """Standard normals, one independent substream per path keyed by ``(seed, tag, index)``."""
    out = np.empty((n_paths, n_steps))
    for i in range(n_paths):
        out[i] = np.random.default_rng([seed, tag, start + i]).standard_normal(n_steps)
    return out


def simulate_paths(curve: PowerCurve, lat: LatentParams, s: ThetaSchedule, grid,
                   n_paths: int, seed: int, normals: np.ndarray | None = None) -> ForecastPaths:
    """Exact simulation of ``(X_t, F_t)`` on ``grid`` (last point must be ``T``).

    ``X`` starts at 1 at time 0; if ``grid[0] > 0`` the first node carries the
    variance accumulated since 0.  ``normals`` may be passed to reuse common
    random numbers; otherwise per-path substreams are drawn from ``seed``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly ascending with at least two points")
    if abs(grid[-1] - s.T) > 1e-9 * max(1.0, s.T):
        raise ValueError("last grid point must equal the horizon T")
    var = log_increment_variances(s, grid, lat.nu_X ** 2)
    if normals is None:
        normals = path_normals(seed, n_paths, grid.size)
    elif normals.shape != (n_paths, grid.size):
        raise ValueError("normals must have shape (n_paths, len(grid))")
    log_x = np.cumsum(np.sqrt(var) * normals - 0.5 * var, axis=1)
    x = np.exp(log_x)
    th = np.asarray(s.theta(grid), dtype=float)
    f = np.empty_like(x)
    f[:, :-1] = g(curve, x[:, :-1], th[:-1])
    f[:, -1] = f_prod(curve, x[:, -1])
    return ForecastPaths(times=grid, x=x, f=f, theta=th)
