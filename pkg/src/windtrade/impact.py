"""Optimal selling with quadratic market impact.

The producer chooses a selling rate ``psi_t`` (cumulative position
``phi_t``) and minimizes

    E[ int_0^T (phi_t mu_t + gamma/2 psi_t^2) dt + u(F_T - phi_T) ].

With a known ``F_T`` the problem is deterministic and solved by a scalar
fixed point.  With a forecast that is revised continuously the value
function solves an HJB equation, integrated here by an explicit monotone
finite-difference scheme.  Allowing buy-backs and a quadratic penalty gives
a linear feedback rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import trapezoid

from . import kernels
from .dist import PowerCurve, f_prod
from .forecast import ForecastPath, ForecastPaths, ThetaSchedule
from .frictionless import DriftCurve, PenaltyFunction, QuadraticPenalty, TradePlan
from .quad import piecewise_normal_rule


class CFLError(RuntimeError):
    """Explicit scheme would need more sub-steps than allowed."""

    def __init__(self, message, suggestion=None):
        super().__init__(message)
        self.suggestion = suggestion or {}


@dataclass(frozen=True)
class ImpactParams:
    gamma: float
    drift: DriftCurve
    penalty: PenaltyFunction

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def T(self) -> float:
        return self.drift.T


# -- deterministic (Pontryagin) solution --------------------------------------

def _positive_part_integral(t, v):
    """Exact integral of ``max(v, 0)`` for ``v`` piecewise linear on nodes ``t``."""
    v0, v1 = v[:-1], v[1:]
    h = np.diff(t)
    both = (v0 >= 0) & (v1 >= 0)
    cross = (v0 > 0) != (v1 > 0)
    out = np.where(both, 0.5 * (v0 + v1) * h, 0.0)
    vp = np.where(v0 > 0, v0, v1)
    span = np.abs(v1 - v0)
    frac = np.where(cross, vp / np.where(span > 0, span, 1.0), 0.0)
    out = out + np.where(cross & ~both, 0.5 * vp * frac * h, 0.0)
    return float(out.sum())


@dataclass(frozen=True)
class PontryaginPlan:
    """Deterministic optimum: rate ``psi`` on ``times``, terminal position, objective."""

    times: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    phi_T: float
    value: float
    marginal: float  # u'(F_T - phi_T)

    def rate(self, t):
        return np.interp(t, self.times, self.psi)


def pontryagin_plan(ip: ImpactParams, F_T: float, n_grid: int = 4001,
                    tol: float = 1e-12) -> PontryaginPlan:
    """Solve ``phi = (1/gamma) int_0^T (u'(F_T - phi) - R(t))^+ dt`` by bisection.

    ``R(t) = int_t^T mu``.  The rate is ``psi_t = (u'(F_T - phi_T) - R(t))^+ / gamma``.
    ``ip.penalty`` may be any object with ``u`` and ``du`` (e.g. an
    :class:`~windtrade.frictionless.AveragePenalty` for the no-forecast case).
    """
    d, gamma, pen = ip.drift, ip.gamma, ip.penalty
    t = np.linspace(0.0, d.T, n_grid)
    rem = d.remaining(t)

    def rhs(phi):
        return _positive_part_integral(t, float(pen.du(F_T - phi)) - rem) / gamma

    lo, hi = 0.0, max(1.0, abs(F_T))
    while hi - rhs(hi) <= 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("cannot bracket the terminal position")
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if mid - rhs(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    phi_T = 0.5 * (lo + hi)
    marginal = float(pen.du(F_T - phi_T))
    psi = np.maximum(marginal - rem, 0.0) / gamma
    phi = np.concatenate([[0.0], np.cumsum(0.5 * (psi[1:] + psi[:-1]) * np.diff(t))])
    mu = np.asarray(d.mu(t), dtype=float)
    value = (trapezoid(phi * mu, t) + 0.5 * gamma * trapezoid(psi ** 2, t)
             + float(pen.u(F_T - phi_T)))
    return PontryaginPlan(t, psi, phi, phi_T, float(value), marginal)


def quadratic_terminal_position(kappa, mu, gamma, T, F_T):
    """Closed-form ``phi_T`` for constant ``mu < 0`` and ``u = kappa x^2 / 2``.

    Returns ``(phi_T, t_stop)``; ``t_stop = T`` when selling lasts to the end.
    """
    c = mu * T ** 2 / 2.0 + gamma * F_T
    if c >= 0:
        return F_T - c / (kappa * T + gamma), T
    a = mu / kappa ** 2 * (gamma + kappa * T)
    phi = F_T - a - math.sqrt(a ** 2 - 2.0 * mu / kappa ** 2 * c)
    s = T + gamma / kappa
    t_stop = T - s + math.sqrt(s ** 2 - 2.0 / mu * c)
    return phi, t_stop


# -- HJB solver ----------------------------------------------------------------

@dataclass(frozen=True)
class HJBConfig:
    n_t: int = 121
    n_phi: int = 151
    n_y: int = 151
    phi_max: float = 1.5
    quantile_z: float = 4.264890793922825
    cfl: float = 0.9
    max_substeps: int = 5_000_000


@dataclass(frozen=True)
class HJBSolution:
    """Value ``w[t, phi, y]`` and selling rate ``psi[t, phi, y]`` with ``y = log x``."""

    t_grid: np.ndarray
    phi_grid: np.ndarray
    y_grid: np.ndarray
    w: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    gamma: float
    substeps: int = 0

    @property
    def x_grid(self) -> np.ndarray:
        return np.exp(self.y_grid)

    def _interp(self, arr, t, phi, x):
        t, phi, y = np.broadcast_arrays(np.asarray(t, float), np.asarray(phi, float),
                                        np.log(np.asarray(x, float)))
        out = np.zeros(t.shape)
        parts = []
        for grid, v in ((self.t_grid, t), (self.phi_grid, phi), (self.y_grid, y)):
            pos = np.clip((v - grid[0]) / (grid[1] - grid[0]), 0.0, grid.size - 1.0)
            i = np.minimum(pos.astype(np.intp), grid.size - 2)
            parts.append((i, pos - i))
        (a, wa), (b, wb), (c, wc) = parts
        for da in (0, 1):
            fa = wa if da else 1.0 - wa
            for db in (0, 1):
                fb = wb if db else 1.0 - wb
                for dc in (0, 1):
                    fc = wc if dc else 1.0 - wc
                    out = out + fa * fb * fc * arr[a + da, b + db, c + dc]
        return out if out.ndim else float(out)

    def value(self, t, phi, x):
        return self._interp(self.w, t, phi, x)

    def rate(self, t, phi, x):
        return self._interp(self.psi, t, phi, x)


def terminal_values(curve: PowerCurve, pen: PenaltyFunction, phi, y, jump_var: float = 0.0):
    """``u(f_prod(x) - phi)`` on the tensor grid, averaged over a final log-normal jump."""
    phi = np.asarray(phi, float)[:, None]
    y = np.asarray(y, float)[None, :]
    if jump_var <= 0.0:
        return pen.u(f_prod(curve, np.exp(y)) - phi)
    sd = math.sqrt(jump_var)
    yy = np.broadcast_to(y, (phi.shape[0], y.shape[1]))
    pp = np.broadcast_to(phi, yy.shape)
    breaks = np.stack([(math.log(curve.x_min) - yy + 0.5 * jump_var) / sd,
                       (math.log(curve.x_max) - yy + 0.5 * jump_var) / sd], axis=-1)
    z, w = piecewise_normal_rule(breaks)
    x_T = np.exp(yy[..., None] + sd * z - 0.5 * jump_var)
    return np.sum(w * pen.u(f_prod(curve, x_T) - pp[..., None]), axis=-1)


def hjb_y_grid(nu_X_sq: float, n_y: int, z: float = 4.264890793922825) -> np.ndarray:
    half = z * math.sqrt(nu_X_sq)
    return -0.5 * nu_X_sq + half * np.linspace(-1.0, 1.0, n_y)


def solve_hjb(ip: ImpactParams, curve: PowerCurve, s: ThetaSchedule,
              config: HJBConfig | None = None, nu_X_sq: float | None = None) -> HJBSolution:
    """Backward explicit monotone scheme for the sell-only HJB equation.

    ``sigma_t^2`` is taken as ``-dtheta/dt`` averaged over each time cell; the
    drift enters through its cell average.  If ``theta(T) > 0`` the terminal
    condition is averaged over the remaining jump.  ``nu_X_sq`` (default
    ``s.cap``) fixes the log-range of the x grid.
    """
    cfg = config or HJBConfig()
    if abs(s.T - ip.T) > 1e-9 * max(1.0, ip.T):
        raise ValueError("schedule and drift horizons differ")
    nu_sq = s.cap if nu_X_sq is None else nu_X_sq
    t_grid = np.linspace(0.0, ip.T, cfg.n_t)
    phi_grid = np.linspace(0.0, cfg.phi_max, cfg.n_phi)
    y_grid = hjb_y_grid(nu_sq, cfg.n_y, cfg.quantile_z)
    dphi = phi_grid[1] - phi_grid[0]
    dy = y_grid[1] - y_grid[0]
    theta = np.asarray(s.theta(t_grid), float)
    sigma2 = np.maximum(-np.diff(theta), 0.0) / np.diff(t_grid)
    mu_avg = np.asarray(ip.drift.integral(t_grid[:-1], t_grid[1:]), float) / np.diff(t_grid)

    w = np.empty((cfg.n_t, cfg.n_phi, cfg.n_y))
    psi = np.zeros_like(w)
    cur = np.ascontiguousarray(terminal_values(curve, ip.penalty, phi_grid, y_grid, float(theta[-1])))
    w[-1] = cur
    psi[-1] = _rate(cur, dphi, ip.gamma)
    total = 0
    for k in range(cfg.n_t - 2, -1, -1):
        tau = t_grid[k + 1] - t_grid[k]
        n = kernels.hjb_interval(cur, tau, float(sigma2[k]), float(mu_avg[k]), ip.gamma,
                                 dphi, dy, phi_grid, cfg.cfl, cfg.max_substeps - total)
        if n < 0:
            raise CFLError(
                f"explicit scheme needs more than {cfg.max_substeps} sub-steps",
                suggestion={"n_phi": max(cfg.n_phi // 2, 11), "n_y": max(cfg.n_y // 2, 11)})
        if not np.all(np.isfinite(cur)):
            bad = np.argwhere(~np.isfinite(cur))[0]
            raise FloatingPointError(f"non-finite value at t={t_grid[k]:.6g}, "
                                     f"phi={phi_grid[bad[0]]:.6g}, y={y_grid[bad[1]]:.6g}")
        total += n
        w[k] = cur
        psi[k] = _rate(cur, dphi, ip.gamma)
    return HJBSolution(t_grid, phi_grid, y_grid, w, psi, ip.gamma, total)


def _rate(w, dphi, gamma):
    out = np.zeros_like(w)
    out[:-1] = np.maximum(-(w[1:] - w[:-1]) / dphi, 0.0) / gamma
    return out


# -- forward simulation ---------------------------------------------------------

@dataclass(frozen=True)
class ImpactOutcome:
    """Per-path results of an impact policy; ``penalty = drift + impact + volume``."""

    phi_T: np.ndarray
    drift: np.ndarray
    impact: np.ndarray
    volume: np.ndarray
    f_T: np.ndarray
    hits_phi_max: int = 0

    @property
    def penalty(self) -> np.ndarray:
        return self.drift + self.impact + self.volume


def _substeps(times, max_dt):
    """Shared sub-step nodes within each path interval, and their interval index.

    ``max_dt`` is a scalar or one bound per path interval.
    """
    bound = np.broadcast_to(np.asarray(max_dt, float), (times.size - 1,))
    nodes, owner = [], []
    for k in range(times.size - 1):
        m = max(1, int(math.ceil((times[k + 1] - times[k]) / bound[k] - 1e-12)))
        nodes.append(np.linspace(times[k], times[k + 1], m + 1)[:-1])
        owner.append(np.full(m, k, dtype=np.intp))
    return np.append(np.concatenate(nodes), times[-1]), np.concatenate(owner)


def simulate_policy(sol: HJBSolution, paths: ForecastPaths, ip: ImpactParams,
                    max_dt: float | None = None) -> ImpactOutcome:
    """Follow the tabulated rate along forecast paths (forward Euler in sub-steps).

    Within a path interval the latest ``X`` is used; sub-steps are short enough
    that one step moves ``phi`` by at most half a grid cell.  Drift loss uses
    the trapezoidal rule on the sub-step nodes.
    """
    times = np.asarray(paths.times, float)
    if abs(times[-1] - sol.t_grid[-1]) > 1e-9 or abs(times[0] - sol.t_grid[0]) > 1e-9:
        raise ValueError("paths must span the HJB time grid")
    if np.max(np.diff(times)) > np.diff(sol.t_grid).max() * (1 + 1e-9):
        raise ValueError("path grid is coarser than the HJB time grid")
    dphi = sol.phi_grid[1] - sol.phi_grid[0]
    if max_dt is None:
        # largest tabulated rate over the HJB slices touching each path interval
        slab = sol.psi.reshape(sol.psi.shape[0], -1).max(axis=1)
        lo = np.searchsorted(sol.t_grid, times[:-1], side="right") - 1
        hi = np.searchsorted(sol.t_grid, times[1:], side="left")
        psi_k = np.array([slab[a:b + 1].max() for a, b in zip(lo, hi)])
        max_dt = np.where(psi_k > 0, 0.5 * dphi / np.where(psi_k > 0, psi_k, 1.0), np.inf)
        max_dt = np.minimum(max_dt, np.diff(sol.t_grid).min())
    sub_t, sub_k = _substeps(times, max_dt)
    sub_mu = np.asarray(ip.drift.mu(sub_t), float)
    log_x = np.ascontiguousarray(np.log(paths.x))
    phi, drift, impact, hits = kernels.simulate_impact(
        np.ascontiguousarray(sol.psi), float(sol.t_grid[0]), float(sol.t_grid[1] - sol.t_grid[0]),
        float(sol.phi_grid[0]), float(dphi), float(sol.y_grid[0]),
        float(sol.y_grid[1] - sol.y_grid[0]), sub_t, sub_mu, sub_k, log_x, ip.gamma)
    f_T = np.asarray(paths.realized, float)
    volume = np.asarray(ip.penalty.u(f_T - phi), float)
    return ImpactOutcome(np.asarray(phi), np.asarray(drift), np.asarray(impact), volume, f_T, hits)


def static_rate_outcome(plan: PontryaginPlan, paths: ForecastPaths, ip: ImpactParams) -> ImpactOutcome:
    """A deterministic rate schedule applied blindly to every path."""
    t = plan.times
    mu = np.asarray(ip.drift.mu(t), float)
    drift = float(trapezoid(plan.phi * mu, t))
    impact = 0.5 * ip.gamma * float(trapezoid(plan.psi ** 2, t))
    n = len(paths)
    f_T = np.asarray(paths.realized, float)
    phi = np.full(n, plan.phi[-1])
    return ImpactOutcome(phi, np.full(n, drift), np.full(n, impact),
                         np.asarray(ip.penalty.u(f_T - phi), float), f_T)


def never_trade_outcome(paths: ForecastPaths, ip: ImpactParams) -> ImpactOutcome:
    f_T = np.asarray(paths.realized, float)
    z = np.zeros(f_T.size)
    return ImpactOutcome(z, z.copy(), z.copy(), np.asarray(ip.penalty.u(f_T), float), f_T)


# -- buy/sell linear feedback -------------------------------------------------

_GL_X, _GL_W = leggauss(8)


@dataclass(frozen=True)
class BuySellPrecomp:
    """Path-independent pieces of the buy/sell rule on a time grid.

    In rescaled units (``gamma' = gamma/kappa``, ``mu' = mu/kappa``),
    ``tau(t) = gamma' + T - t`` and
    ``A(t) = (1/gamma') int_t^T (gamma' + T - s) mu'_s ds``; the rate is
    ``psi = (F_t - phi - A(t)) / tau(t)``.
    """

    times: np.ndarray
    gamma_s: float
    A_nodes: np.ndarray
    nodes: np.ndarray      # Gauss-Legendre nodes per interval, shape (n, 8)
    weights: np.ndarray
    A_q: np.ndarray
    J_q: np.ndarray        # int_{t_k}^{node} A / tau^2
    J_end: np.ndarray      # int_{t_k}^{t_k+1} A / tau^2
    mu_q: np.ndarray


def _A(d: DriftCurve, kappa, gamma_s, t):
    """``A(t)`` by composite Gauss-Legendre (4 panels) on ``[t, T]``, vectorized."""
    t = np.asarray(t, float)
    edges = t[..., None] + (d.T - t)[..., None] * np.linspace(0.0, 1.0, 5)
    lo, hi = edges[..., :-1], edges[..., 1:]
    s = 0.5 * (lo + hi)[..., None] + 0.5 * (hi - lo)[..., None] * _GL_X
    vals = (gamma_s + d.T - s) * np.asarray(d.mu(s), float) / kappa
    return np.sum(0.5 * (hi - lo)[..., None] * vals * _GL_W, axis=(-1, -2)) / gamma_s


def buy_sell_precompute(gamma: float, d: DriftCurve, kappa: float, times) -> BuySellPrecomp:
    times = np.asarray(times, float)
    g = gamma / kappa
    A_nodes = _A(d, kappa, g, times)
    lo, hi = times[:-1], times[1:]
    nodes = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * _GL_X
    weights = 0.5 * (hi - lo)[:, None] * _GL_W
    A_q = _A(d, kappa, g, nodes)

    def integrand(s):
        return _A(d, kappa, g, s) / (g + d.T - s) ** 2

    # J from t_k to each node: nested Gauss-Legendre
    sub = lo[:, None, None] + (nodes - lo[:, None])[..., None] * 0.5 * (1 + _GL_X)
    J_q = np.sum(integrand(sub) * (0.5 * (nodes - lo[:, None]))[..., None] * _GL_W, axis=-1)
    J_end = np.sum(integrand(nodes) * weights, axis=-1)
    mu_q = np.asarray(d.mu(nodes), float)
    return BuySellPrecomp(times, g, A_nodes, nodes, weights, A_q, J_q, J_end, mu_q)


def _buy_sell_batch(pre: BuySellPrecomp, f, T):
    """Exact positions for forecasts held constant on each interval."""
    tau = pre.gamma_s + T - pre.times
    n_paths = f.shape[0]
    phi = np.zeros((n_paths, pre.times.size))
    drift = np.zeros(n_paths)
    sq = np.zeros(n_paths)
    tau_q = pre.gamma_s + T - pre.nodes
    for k in range(pre.times.size - 1):
        fk = f[:, k:k + 1]
        base = phi[:, k:k + 1] / tau[k] - fk / tau[k]
        phi_q = tau_q[k] * (base + fk / tau_q[k] - pre.J_q[k])
        psi_q = (fk - pre.A_q[k] - phi_q) / tau_q[k]
        drift += (phi_q * pre.mu_q[k]) @ pre.weights[k]
        sq += (psi_q ** 2) @ pre.weights[k]
        phi[:, k + 1] = tau[k + 1] * (base[:, 0] + fk[:, 0] / tau[k + 1] - pre.J_end[k])
    return phi, drift, sq


def buy_sell_rates(pre: BuySellPrecomp, f, phi, T):
    """Rate at the grid nodes (left limits of each interval)."""
    tau = pre.gamma_s + T - pre.times
    return (f - phi - pre.A_nodes) / tau


def buy_sell_plan(gamma: float, d: DriftCurve, path: ForecastPath, kappa: float = 1.0) -> TradePlan:
    """Linear feedback ``psi_t = (F_t - phi_t - A(t)) / (gamma' + T - t)``, buys allowed.

    The forecast is held constant between path nodes and the linear ODE is
    integrated exactly on each interval.  The returned plan lists positions at
    the path nodes (``signed=True``: they may decrease).
    """
    pre = buy_sell_precompute(gamma, d, kappa, path.times)
    phi, _, _ = _buy_sell_batch(pre, np.asarray(path.f_values, float)[None, :], d.T)
    return TradePlan(pre.times, phi[0], 0.0, signed=True)


def buy_sell_outcome(gamma: float, d: DriftCurve, pen: QuadraticPenalty,
                     paths: ForecastPaths) -> tuple[ImpactOutcome, np.ndarray]:
    """Per-path penalty of the buy/sell rule and node rates ``psi`` (original units)."""
    pre = buy_sell_precompute(gamma, d, pen.kappa, paths.times)
    phi, drift, sq = _buy_sell_batch(pre, np.asarray(paths.f, float), d.T)
    f_T = np.asarray(paths.realized, float)
    out = ImpactOutcome(phi[:, -1], drift, 0.5 * gamma * sq,
                        np.asarray(pen.u(f_T - phi[:, -1]), float), f_T)
    rates = buy_sell_rates(pre, np.asarray(paths.f, float), phi, d.T)
    return out, rates
