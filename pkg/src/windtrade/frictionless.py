"""Optimal selling of uncertain production without market impact.

A producer sells a cumulative quantity ``phi_t`` forward at a price with
deterministic drift ``mu_t`` and pays ``u(F_T - phi_T)`` at delivery.  With a
perfect forecast the optimum is a single block; with no forecast it is a block
plus a terminal lump; with forecasts revised at discrete times it is the running
maximum of thresholds ``xi_k(X_k)`` obtained by backward induction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .dist import LatentParams, PowerCurve, f_prod
from .forecast import ForecastPath, ThetaSchedule, log_increment_variances
from .quad import normal_nodes, piecewise_normal_rule


# -- penalties ----------------------------------------------------------------

class PenaltyFunction:
    """Convex penalty ``u`` with ``u'(0) = 0``; subclasses supply ``u``, ``du``, ``inv_du``.

    ``ubar``/``dubar`` are the clipped versions ``u(min(x, 0))`` used when any
    production surplus at delivery can be sold at no cost.
    """

    def u(self, x):
        raise NotImplementedError

    def du(self, x):
        raise NotImplementedError

    def inv_du(self, y):
        raise NotImplementedError

    def fenchel(self, y):
        """``v(y) = sup_x (x y - u(x)) = y I(y) - u(I(y))``."""
        x = self.inv_du(y)
        return y * x - self.u(x)

    def ubar(self, x):
        return self.u(np.minimum(x, 0.0))

    def dubar(self, x):
        return self.du(np.minimum(x, 0.0))


@dataclass(frozen=True)
class QuadraticPenalty(PenaltyFunction):
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    def u(self, x):
        return 0.5 * self.kappa * np.square(x)

    def du(self, x):
        return self.kappa * np.asarray(x, dtype=float)

    def inv_du(self, y):
        return np.asarray(y, dtype=float) / self.kappa

    def fenchel(self, y):
        return np.square(y) / (2.0 * self.kappa)


class CustomPenalty(PenaltyFunction):
    """Penalty from user callables.  ``du`` must be strictly increasing.

    The callables should accept numpy arrays; if ``inv_du`` is omitted it is
    computed by bisection on ``du``.
    """

    def __init__(self, u: Callable, du: Callable, inv_du: Callable | None = None):
        self._u = u
        self._du = du
        self._inv = inv_du

    def u(self, x):
        return self._u(x)

    def du(self, x):
        return self._du(x)

    def inv_du(self, y):
        if self._inv is not None:
            return self._inv(y)
        return _invert_increasing(self._du, y)


def _invert_increasing(func, y, tol: float = 1e-13, max_iter: int = 400):
    """Solve ``func(x) = y`` for a nondecreasing scalar ``func`` by bracketing + bisection."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty_like(y_arr)
    for i, target in enumerate(y_arr):
        lo, hi = -1.0, 1.0
        for _ in range(200):
            if func(lo) <= target:
                break
            lo *= 2.0
        else:
            raise ValueError(f"cannot bracket inverse at {target}")
        for _ in range(200):
            if func(hi) >= target:
                break
            hi *= 2.0
        else:
            raise ValueError(f"cannot bracket inverse at {target}")
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if func(mid) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol * max(1.0, abs(mid)):
                break
        out[i] = 0.5 * (lo + hi)
    return out if np.ndim(y) else float(out[0])


class AveragePenalty:
    """Penalty averaged over centred production: ``x -> E[pen(F - E[F] + x)]``.

    ``law`` needs ``mean()`` and ``expect(func, points)``.  With ``clip=True``
    the clipped penalty ``ubar`` is averaged, giving the function ``u~`` of the
    no-forecast problem; with ``clip=False`` the plain ``u`` is averaged.
    """

    def __init__(self, penalty: PenaltyFunction, law, clip: bool = True):
        self.penalty = penalty
        self.law = law
        self.clip = clip
        self.mean = float(law.mean())

    def _kink(self, x):
        # F at which the clipped argument crosses zero
        return (self.mean - x,) if self.clip else ()

    def value(self, x) -> float:
        pen = self.penalty.ubar if self.clip else self.penalty.u
        return float(self.law.expect(lambda f: float(pen(f - self.mean + x)), self._kink(x)))

    def __call__(self, x) -> float:
        return self.value(x)

    def du(self, x) -> float:
        dpen = self.penalty.dubar if self.clip else self.penalty.du
        return float(self.law.expect(lambda f: float(dpen(f - self.mean + x)), self._kink(x)))

    def inv_du(self, z) -> float:
        """``I~(z)``: smallest ``x`` with ``u~'(x) >= z``."""
        z = float(z)
        if self.clip and z >= 0.0:
            if z > 0.0:
                raise ValueError("the clipped average penalty has nonpositive slope")
            # u~' vanishes once F - E[F] + x >= 0 almost surely (F >= 0)
            return self.mean
        return float(_invert_increasing(self.du, z, tol=1e-12))

    def fenchel(self, z) -> float:
        x = self.inv_du(z)
        return z * x - self.value(x)


def average_penalty(p: PenaltyFunction, law, x) -> float:
    """``u~(x) = E[ubar(F - E[F] + x)]``."""
    return AveragePenalty(p, law, clip=True).value(x)


# -- drift --------------------------------------------------------------------

_GL_T, _GL_W = leggauss(8)


@dataclass(frozen=True)
class DriftCurve:
    """Deterministic price drift ``mu(t)`` on ``[0, T]``.

    ``antiderivative`` (any primitive of ``mu``) is used for exact integrals
    when given; otherwise integrals use 8-point Gauss-Legendre per grid cell.
    """

    mu: Callable
    T: float
    antiderivative: Callable | None = None

    @classmethod
    def constant(cls, value: float, T: float) -> "DriftCurve":
        value = float(value)
        return cls(mu=lambda t: np.full(np.shape(t), value) if np.ndim(t) else value,
                   T=float(T), antiderivative=lambda t: value * np.asarray(t, dtype=float))

    def integral(self, a, b):
        """``int_a^b mu`` (vectorized over ``a``, ``b``)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.antiderivative is not None:
            out = np.asarray(self.antiderivative(b) - self.antiderivative(a), dtype=float)
        else:
            half = 0.5 * (b - a)
            mid = 0.5 * (b + a)
            nodes = mid[..., None] + half[..., None] * _GL_T
            vals = np.asarray(self.mu(nodes), dtype=float)
            out = half * (vals @ _GL_W)
        return out if out.ndim else float(out)

    def remaining(self, grid):
        """``R(t) = int_t^T mu`` on an ascending grid ending at ``T``."""
        grid = np.asarray(grid, dtype=float)
        cells = np.asarray(self.integral(grid[:-1], grid[1:]), dtype=float)
        out = np.zeros(grid.size)
        out[:-1] = np.cumsum(cells[::-1])[::-1]
        return out

    def max_value(self, n: int = 2001) -> float:
        return float(np.max(self.mu(np.linspace(0.0, self.T, n))))


def drift_minimum(d: DriftCurve, n_grid: int = 2001, tol: float = 1e-12) -> tuple[float, float]:
    """``(t*, m*)`` with ``m* = min_t int_t^T mu`` over a uniform grid.

    Ties (within ``tol`` relative to the integral scale) go to the earliest
    time; if the minimum is zero the producer waits, ``t* = T``.
    """
    if n_grid < 2:
        raise ValueError("grid needs at least 2 points")
    grid = np.linspace(0.0, d.T, n_grid)
    rem = d.remaining(grid)
    scale = max(1.0, float(np.max(np.abs(rem))))
    m_star = float(np.min(rem))
    if m_star >= -tol * scale:
        return float(d.T), 0.0
    k = int(np.flatnonzero(rem <= m_star + tol * scale)[0])
    return float(grid[k]), float(rem[k])


# -- plans --------------------------------------------------------------------

@dataclass(frozen=True)
class TradePlan:
    """Cumulative sold quantity: ``positions[k]`` holds from ``times[k]`` on.

    Before ``times[0]`` the position is 0.  ``terminal_lump`` is sold at ``T``
    on top of the last position.  ``signed=True`` allows buy-backs (decreasing
    positions).
    """

    times: np.ndarray
    positions: np.ndarray
    terminal_lump: float = 0.0
    signed: bool = False

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        if t.shape != p.shape or t.ndim != 1:
            raise ValueError("times and positions must be 1-D of equal length")
        if np.any(np.diff(t) < 0):
            raise ValueError("times must be ascending")
        if not self.signed and p.size and (p[0] < -1e-12 or np.any(np.diff(p) < -1e-12)):
            raise ValueError("positions must be nonnegative and nondecreasing")
        if self.terminal_lump < -1e-12:
            raise ValueError("terminal lump must be nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)

    @property
    def final_position(self) -> float:
        last = float(self.positions[-1]) if self.positions.size else 0.0
        return last + float(self.terminal_lump)

    def trades(self) -> np.ndarray:
        """Quantity sold at each of ``times``."""
        return np.diff(self.positions, prepend=0.0)

    def objective(self, d: DriftCurve, p: PenaltyFunction, F_T: float, clip: bool = True) -> float:
        """``int phi mu dt + pen(F_T - phi_T)`` with ``pen = ubar`` (or ``u``)."""
        rem = np.asarray(d.remaining(np.append(self.times, d.T))[:-1]) if self.times.size else []
        drift = float(np.dot(self.trades(), rem)) if self.times.size else 0.0
        pen = p.ubar if clip else p.u
        return drift + float(pen(F_T - self.final_position))


def exact_forecast_plan(p: PenaltyFunction, d: DriftCurve, F_T: float,
                        n_grid: int = 2001) -> tuple[TradePlan, float]:
    """Single block ``F_T - I(m*)`` at ``t*``; value ``F_T m* - v(m*)``."""
    if not 0.0 <= F_T <= 1.0:
        raise ValueError("F_T must lie in [0, 1]")
    t_star, m_star = drift_minimum(d, n_grid)
    if m_star == 0.0:
        return TradePlan(np.array([d.T]), np.array([F_T])), float(p.u(0.0))
    qty = F_T - float(p.inv_du(m_star))
    value = F_T * m_star - float(p.fenchel(m_star))
    return TradePlan(np.array([t_star]), np.array([qty])), value


@dataclass(frozen=True)
class NoForecastRule:
    """Block sold at ``t_block``; the rest of realized production at ``T``."""

    t_block: float
    block: float
    T: float

    def plan(self, F_T: float) -> TradePlan:
        lump = max(F_T - self.block, 0.0)
        if self.t_block >= self.T:
            return TradePlan(np.array([self.T]), np.array([self.block]), lump)
        return TradePlan(np.array([self.t_block]), np.array([self.block]), lump)


def no_forecast_plan(p: PenaltyFunction, law, d: DriftCurve,
                     n_grid: int = 2001) -> tuple[NoForecastRule, float]:
    """Block ``E[F] - I~(m*)`` at ``t*``; value ``E[F] m* - v~(m*)``."""
    t_star, m_star = drift_minimum(d, n_grid)
    avg = AveragePenalty(p, law, clip=True)
    if m_star == 0.0:
        return NoForecastRule(d.T, 0.0, d.T), float(p.u(0.0))
    block = avg.mean - avg.inv_du(m_star)
    value = avg.mean * m_star - avg.fenchel(m_star)
    return NoForecastRule(t_star, block, d.T), value


# -- discrete forecast updates ------------------------------------------------

@dataclass(frozen=True)
class ThresholdConfig:
    n_x: int = 201
    n_m: int = 801
    n_gh: int = 64
    c: float = 1.0
    xi_max: float | None = None
    max_doublings: int = 6
    tol: float = 1e-10
    quantile_z: float = 4.264890793922825  # standard normal 1 - 1e-5 quantile
    min_log_width: float = 1e-3


@dataclass(frozen=True)
class ThresholdTables:
    """Thresholds ``xi_k`` tabulated on log-spaced x grids, one per decision time.

    ``targets[k] = sum_{i >= k} m_i``; ``h`` holds the auxiliary tables
    ``h_k(x_i, m_j)`` on ``m_grid`` (kept for diagnostics and refinement).
    """

    times: np.ndarray
    log_x: list
    xi: list
    targets: np.ndarray
    increments: np.ndarray
    m_grid: np.ndarray
    h: list = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.xi)

    def xi_at(self, k: int, x):
        """Linear interpolation of ``xi_k`` in ``log x`` (flat outside the grid)."""
        return np.interp(np.log(x), self.log_x[k], self.xi[k])


def _interp_weights(grid, values):
    """Left index and weight for linear interpolation on a uniform grid, clamped."""
    n = grid.size
    if n == 1:
        return np.zeros(values.shape, dtype=np.intp), np.zeros(values.shape)
    step = grid[1] - grid[0]
    pos = np.clip((values - grid[0]) / step, 0.0, n - 1.0)
    idx = np.minimum(pos.astype(np.intp), n - 2)
    return idx, pos - idx


def _terminal_h(curve: PowerCurve, p: PenaltyFunction, log_x, var, m):
    """``E[ubar'(f_prod(x e^{sqrt(var) Z - var/2}) - m)]`` for arrays ``log_x`` and ``m``.

    Uses panels split at the z-locations of the power-curve knots and of the
    kink ``f_prod = m``, so the piecewise-smooth integrand is integrated exactly
    to rule precision.
    """
    log_x, m = np.broadcast_arrays(np.asarray(log_x, float), np.asarray(m, float))
    if var <= 0.0:
        return p.dubar(f_prod(curve, np.exp(log_x)) - m)
    sd = math.sqrt(var)
    x_kink = curve.x_min + np.clip(m, 0.0, 1.0) * curve.width

    def z_of(level):
        return (np.log(level) - log_x + 0.5 * var) / sd

    breaks = np.stack([z_of(curve.x_min), z_of(curve.x_max), z_of(x_kink)], axis=-1)
    z, w = piecewise_normal_rule(breaks)
    x_T = np.exp(log_x[..., None] + sd * z - 0.5 * var)
    vals = p.dubar(f_prod(curve, x_T) - m[..., None])
    return np.sum(w * vals, axis=-1)


def _stage_log_grid(var: float, cfg: ThresholdConfig) -> np.ndarray:
    half = max(cfg.quantile_z * math.sqrt(max(var, 0.0)), cfg.min_log_width)
    return -0.5 * var + half * np.linspace(-1.0, 1.0, cfg.n_x)


class _NextStage:
    """``G_{k+1}(x', m) = h_{k+1}(x', max(m, xi_{k+1}(x')))`` by interpolation.

    Linear in ``log x'`` between grid nodes.  Along ``m`` the interpolant uses
    the kink point ``(xi, h(xi))`` so the flat part and the decreasing part are
    both represented without smearing.
    """

    def __init__(self, log_x, m_grid, h, xi, kink_value):
        self.log_x = log_x
        self.m_grid = m_grid
        self.h = h
        self.xi = xi
        self.kink_value = kink_value
        # G on the tensor grid
        self.table = np.where(m_grid[None, :] <= xi[:, None], kink_value[:, None], h)

    def on_grid(self, log_xp):
        """``G(x', m_j)`` for all grid ``m_j``; ``log_xp`` has shape ``(N,)``."""
        idx, w = _interp_weights(self.log_x, log_xp)
        return (1.0 - w)[:, None] * self.table[idx] + w[:, None] * self.table[idx + 1]

    def _node_value(self, i, m):
        """``G(x_i, m)`` at arbitrary ``m`` (arrays of equal shape)."""
        xi = self.xi[i]
        j, wm = _interp_weights(self.m_grid, np.maximum(m, xi))
        m_lo = self.m_grid[j]
        m_hi = self.m_grid[j + 1]
        h_hi = self.h[i, j + 1]
        left_is_kink = m_lo < xi
        m_left = np.where(left_is_kink, xi, m_lo)
        h_left = np.where(left_is_kink, self.kink_value[i], self.h[i, j])
        span = m_hi - m_left
        frac = np.where(span > 0, (np.maximum(m, xi) - m_left) / np.where(span > 0, span, 1.0), 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        val = h_left + frac * (h_hi - h_left)
        return np.where(m <= xi, self.kink_value[i], val)

    def at(self, log_xp, m):
        """``G(x', m)`` for arrays of equal shape."""
        idx, w = _interp_weights(self.log_x, log_xp)
        return (1.0 - w) * self._node_value(idx, m) + w * self._node_value(idx + 1, m)


def _bisect_decreasing(func, target, hi, tol, max_iter=200):
    """Largest-root bisection of nonincreasing ``func(xi) = target`` on ``[0, hi]``."""
    lo = np.zeros_like(target)
    hi = np.full_like(target, hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        above = func(mid) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(hi - lo < tol):
            break
    return 0.5 * (lo + hi)


def _check_drift(d: DriftCurve, times):
    grid = np.unique(np.concatenate([np.linspace(0.0, d.T, 4001), times]))
    mu = np.asarray(d.mu(grid), dtype=float)
    if np.any(mu > 1e-12 * max(1.0, float(np.max(np.abs(mu))))):
        raise ValueError("positive drift segment: the threshold solver requires mu <= 0")


def solve_xi_thresholds(p: PenaltyFunction, curve: PowerCurve, lat: LatentParams,
                        s: ThetaSchedule, update_times, d: DriftCurve,
                        config: ThresholdConfig | None = None) -> ThresholdTables:
    """Backward induction for the thresholds ``xi_k`` at ``update_times[:-1]``.

    ``update_times`` is ``t_0 < ... < t_n = T``.  At stage ``k`` the threshold
    solves ``h_k(x, xi) = sum_{i >= k} m_i`` where ``h_k(x, m)`` is the
    conditional expectation of ``u'(F_n - max(m, xi_{k+1}, ..., xi_n))``.
    """
    cfg = config or ThresholdConfig()
    times = np.asarray(update_times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("update_times must be strictly ascending with at least 2 points")
    if abs(times[-1] - d.T) > 1e-9 * max(1.0, d.T) or abs(s.T - d.T) > 1e-9 * max(1.0, d.T):
        raise ValueError("update_times must end at the common horizon T")
    _check_drift(d, times)
    incr = np.asarray(d.integral(times[:-1], times[1:]), dtype=float)
    targets = np.cumsum(incr[::-1])[::-1]
    target_scale = np.abs(targets).max() if targets.size else 0.0

    if cfg.xi_max is not None:
        xi_max = float(cfg.xi_max)
    else:
        # a priori bound: xi <= c F - I(sum m) with F <= 1
        xi_max = cfg.c - min(float(p.inv_du(-target_scale)), 0.0)
    for _ in range(cfg.max_doublings + 1):
        try:
            return _solve_xi(p, curve, lat, s, times, incr, targets, xi_max, cfg)
        except _BracketError:
            xi_max *= 2.0
    raise RuntimeError("threshold bracket failure: xi_max too small after doubling")


class _BracketError(Exception):
    pass


def _solve_xi(p, curve, lat, s, times, incr, targets, xi_max, cfg):
    n = times.size - 1
    nu_sq = lat.nu_X ** 2
    # log-variance of X at each decision time, and of each transition
    steps = log_increment_variances(s, times, nu_sq)
    state_var = np.cumsum(steps)[:-1]
    m_grid = np.linspace(0.0, xi_max, cfg.n_m)
    z_gh, w_gh = normal_nodes(cfg.n_gh)

    log_x = [None] * n
    xi = [None] * n
    h_tab = [None] * n
    nxt = None
    for k in range(n - 1, -1, -1):
        lx = _stage_log_grid(state_var[k], cfg)
        var = steps[k + 1]
        target = np.full(lx.size, targets[k])
        if k == n - 1:
            h = np.stack([_terminal_h(curve, p, np.full(m_grid.size, v), var, m_grid) for v in lx])

            def h_at(m, lx=lx, var=var):
                return _terminal_h(curve, p, lx, var, m)
        else:
            if var > 0.0:
                shifts, wq = math.sqrt(var) * z_gh - 0.5 * var, w_gh
            else:
                shifts, wq = np.zeros(1), np.ones(1)
            h = np.zeros((lx.size, m_grid.size))
            for zq, wgt in zip(shifts, wq):
                h += wgt * nxt.on_grid(lx + zq)
            lxq = lx[:, None] + shifts[None, :]

            def h_at(m, lxq=lxq, wq=wq, nxt=nxt):
                mm = np.broadcast_to(m[:, None], lxq.shape)
                return nxt.at(lxq, mm) @ wq
        if np.any(h_at(np.full(lx.size, xi_max)) > target + cfg.tol):
            raise _BracketError
        h0 = h[:, 0]
        root = _bisect_decreasing(h_at, target, xi_max, cfg.tol)
        # tie rule: if h(x, 0) does not exceed the target, sell nothing new
        sell = h0 > target
        xi_k = np.where(sell, root, 0.0)
        kink = np.where(sell, target, h0)
        log_x[k], xi[k], h_tab[k] = lx, xi_k, h
        nxt = _NextStage(lx, m_grid, h, xi_k, kink)
    return ThresholdTables(times=times, log_x=log_x, xi=xi, targets=targets,
                           increments=incr, m_grid=m_grid, h=h_tab)


def threshold_positions(tables: ThresholdTables, x) -> np.ndarray:
    """Running-maximum positions ``phi_k = max_{i <= k} xi_i(X_i)^+`` for a batch.

    ``x`` has shape ``(n_paths, n + 1)`` (values of ``X`` at the update times);
    returns shape ``(n_paths, n)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    vals = np.column_stack([np.maximum(tables.xi_at(k, x[:, k]), 0.0) for k in range(tables.n)])
    return np.maximum.accumulate(vals, axis=1)


def threshold_objective(tables: ThresholdTables, p: PenaltyFunction, x, f_T) -> np.ndarray:
    """Per-path objective ``sum_k phi_k m_k + ubar(F_T - phi_{n-1})`` for a batch."""
    phi = threshold_positions(tables, x)
    return phi @ tables.increments + p.ubar(np.asarray(f_T) - phi[:, -1])


def apply_threshold_policy(tables: ThresholdTables, path: ForecastPath) -> TradePlan:
    """Running-maximum plan along one path; the surplus is sold at ``T``."""
    times = np.asarray(path.times, dtype=float)
    if times.shape != tables.times.shape or not np.allclose(times, tables.times, rtol=0, atol=1e-9):
        raise ValueError("path times must equal the update times of the thresholds")
    phi = threshold_positions(tables, np.asarray(path.x_values)[None, :])[0]
    lump = max(float(path.f_values[-1]) - phi[-1], 0.0)
    return TradePlan(times[:-1], phi, lump)
