"""Calibration of the production law and of the remaining-variance schedule."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression, minimize

from .dist import LatentParams, TruncatedLogNormal, atoms, quantile
from .forecast import (ErrorVarianceTable, ParametricTheta, TabulatedTheta, error_variance,
                       production_variance)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProductionSample:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0:
            raise ValueError("empty production sample")
        if v[0] < 0.0 or v[-1] > 1.0 or np.any(np.isnan(v)):
            raise ValueError("production values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class VarianceTargets:
    horizons: np.ndarray
    variances: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        h = np.asarray(self.horizons, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if h.shape != v.shape or h.ndim != 1:
            raise ValueError("horizons and variances must be 1-D of equal length")
        if np.any(np.diff(h) <= 0):
            raise ValueError("horizons must be strictly ascending")
        if np.any(v < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "horizons", h)
        object.__setattr__(self, "variances", v)


@dataclass(frozen=True)
class FitReport:
    objective: float
    n_evals: int
    converged: bool
    message: str = ""


# -- production law ------------------------------------------------------------------

def _order_index(alpha, n):
    # 1-based k with k/n <= alpha; tiny slack absorbs rounding in alpha * n
    return np.floor(np.asarray(alpha) * n * (1.0 + 1e-12) + 1e-12).astype(np.int64)


def empirical_quantile(s: ProductionSample, alpha):
    """Largest order statistic ``F^(k)`` with ``k / N <= alpha``."""
    n = len(s)
    k = _order_index(alpha, n)
    if np.any(k < 1):
        raise ValueError(f"alpha must be at least 1/N = {1.0 / n:.3g}")
    out = s.values[np.minimum(k, n) - 1]
    return out if np.ndim(out) else float(out)


def quantile_levels(d: TruncatedLogNormal, n_levels: int = 100) -> np.ndarray:
    p0, p1 = atoms(d)
    return p0 + np.arange(n_levels) / n_levels * (1.0 - p1 - p0)


def production_objective(d: TruncatedLogNormal, s: ProductionSample, n_levels: int = 100) -> float:
    """Sum of squared gaps between empirical and model quantiles at model-dependent levels."""
    alpha = quantile_levels(d, n_levels)
    n = len(s)
    k = np.clip(_order_index(alpha, n), 1, n)
    q_emp = s.values[k - 1]
    q_mod = quantile(d, alpha, check=False)
    return float(np.sum((q_emp - q_mod) ** 2))


def _initial_guess(s: ProductionSample, zeta0: float = -0.25) -> TruncatedLogNormal:
    inner = s.values[(s.values > 0.0) & (s.values < 1.0)]
    logs = np.log(inner - zeta0)
    return TruncatedLogNormal(mu=float(logs.mean()), nu=float(max(logs.std(), 1e-3)), zeta=zeta0)


def _unpack(p) -> TruncatedLogNormal:
    return TruncatedLogNormal(mu=float(p[0]), nu=float(math.exp(p[1])), zeta=-float(math.exp(p[2])))


def fit_production(s: ProductionSample, n_levels: int = 100,
                   init: TruncatedLogNormal | None = None, max_restarts: int = 6,
                   maxiter: int = 4000) -> tuple[TruncatedLogNormal, FitReport]:
    """Quantile-distance fit of ``(mu, nu, zeta)`` by restarted Nelder-Mead."""
    if len(s) < 100:
        warnings.warn(f"small production sample (N={len(s)}); fit may be unreliable")
    inner = np.count_nonzero((s.values > 0.0) & (s.values < 1.0))
    if inner < 2:
        raise CalibrationError("degenerate sample: fewer than two values strictly inside (0, 1)")
    if init is None:
        init = _initial_guess(s)
    x0 = np.array([init.mu, math.log(init.nu), math.log(-init.zeta)])

    def obj(p):
        if not np.all(np.isfinite(p)) or abs(p[1]) > 20 or abs(p[2]) > 20:
            return 1e6
        return production_objective(_unpack(p), s, n_levels)

    best_x, best_f, n_evals, converged, msg = x0, obj(x0), 0, False, ""
    for _ in range(max_restarts):
        res = minimize(obj, best_x, method="Nelder-Mead",
                       options={"xatol": 1e-7, "fatol": 1e-14, "maxiter": maxiter,
                                "initial_simplex": _simplex(best_x)})
        n_evals += res.nfev
        converged, msg = bool(res.success), str(res.message)
        improved = res.fun < best_f - 1e-14 * max(1.0, best_f)
        if res.fun <= best_f:
            best_x, best_f = res.x, float(res.fun)
        if not improved:
            break
    if not converged:
        warnings.warn(f"production fit did not converge: {msg}")
    return _unpack(best_x), FitReport(best_f, n_evals, converged, msg)


def _simplex(x, step=0.1):
    pts = [np.asarray(x, dtype=float)]
    for i in range(len(x)):
        p = pts[0].copy()
        p[i] += step
        pts.append(p)
    return np.array(pts)


# -- forecast error variances --------------------------------------------------------

def error_variances_from_data(pairs, bucket: float = 0.25, min_count: int = 30) -> VarianceTargets:
    """Per-horizon unbiased variance of ``forecast - realized``.

    ``pairs`` is an ``(n, 3)`` array of ``(forecast, realized, horizon)``.  Horizons
    are rounded to the nearest multiple of ``bucket``; buckets with fewer than
    ``min_count`` pairs are dropped with a warning.
    """
    arr = np.asarray(pairs, dtype=float).reshape(-1, 3)
    err = arr[:, 0] - arr[:, 1]
    idx = np.rint(arr[:, 2] / bucket).astype(np.int64)
    keys, inverse, counts = np.unique(idx, return_inverse=True, return_counts=True)
    horizons, variances, kept = [], [], []
    dropped = 0
    for j, key in enumerate(keys):
        if counts[j] < max(min_count, 2):
            dropped += 1
            continue
        horizons.append(key * bucket)
        variances.append(np.var(err[inverse == j], ddof=1))
        kept.append(counts[j])
    if dropped:
        warnings.warn(f"{dropped} horizon bucket(s) with fewer than {min_count} pairs excluded")
    if not horizons:
        raise CalibrationError("no horizon bucket has enough pairs")
    return VarianceTargets(np.array(horizons), np.array(variances), np.array(kept))


def invert_error_variance(curve, lat: LatentParams, v, tol: float = 1e-10, max_iter: int = 200):
    """Solve ``phi(theta) = v`` for ``theta`` in ``[0, nu_X**2]`` (vectorized bisection)."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("variance targets must be nonnegative")
    nu2 = lat.nu_X ** 2
    var_max = production_variance(lat)
    lo = np.zeros_like(v)
    hi = np.full_like(v, nu2)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = error_variance(curve, lat, mid) - v
        lo = np.where(f < 0, mid, lo)
        hi = np.where(f < 0, hi, mid)
        if np.all((np.abs(f) < tol) | (hi - lo < 1e-15)) and np.all(hi - lo < 1e-12):
            break
    theta = 0.5 * (lo + hi)
    theta = np.where(v <= 0.0, 0.0, theta)
    theta = np.where(v >= var_max, nu2, theta)
    return theta


def fit_theta_nonparametric(curve, lat: LatentParams, targets: VarianceTargets,
                            T: float | None = None) -> TabulatedTheta:
    """Tabulated schedule from per-horizon inversion of the error-variance map.

    Raw inverted values are made monotone in the horizon by isotonic regression.
    The horizon axis becomes time via ``t = T - h`` (``T`` defaults to the
    largest horizon); a knot at ``t = T`` repeats the shortest-horizon value.
    """
    h = targets.horizons
    v = targets.variances
    var_max = production_variance(lat)
    if np.any(v >= var_max):
        warnings.warn("some target variances reach Var[f_prod]; theta capped at nu_X^2")
    raw = invert_error_variance(curve, lat, v)
    mono = isotonic_regression(raw, increasing=True).x
    if T is None:
        T = float(h[-1])
    if h[-1] > T + 1e-12:
        raise ValueError("horizon beyond T")
    hh, vals = h, mono
    if hh[0] > 0.0:
        hh = np.concatenate([[0.0], hh])
        vals = np.concatenate([[vals[0]], vals])
    times = T - hh[::-1]
    return TabulatedTheta(times=tuple(times), values=tuple(vals[::-1]), T=T, cap=lat.nu_X ** 2)


def parametric_objective(curve, lat, targets: VarianceTargets, sigma0, eta, b, tau_star,
                         phi=None) -> float:
    sched = ParametricTheta(sigma0=abs(sigma0), eta=eta, b=abs(b), T=float(targets.horizons[-1]),
                            cap=lat.nu_X ** 2, tau_star=tau_star)
    theta = sched.theta_of_horizon(targets.horizons)
    model = error_variance(curve, lat, theta) if phi is None else phi(theta)
    return float(np.sum((model - targets.variances) ** 2))


def fit_theta_parametric(curve, lat: LatentParams, targets: VarianceTargets, n_starts: int = 8,
                         seed: int = 0, tau_star_default: float = 120.0,
                         T: float | None = None) -> tuple[ParametricTheta, FitReport]:
    """Least-squares fit of ``(sigma0, eta, b)`` with multi-start Nelder-Mead."""
    h, v = targets.horizons, targets.variances
    if h.size < 3:
        raise ValueError("need at least 3 horizons")
    var_max = production_variance(lat)
    reached = np.nonzero(v >= var_max * (1.0 - 1e-9))[0]
    tau_star = float(h[reached[0]]) if reached.size else tau_star_default
    nu2 = lat.nu_X ** 2
    h_scale = float(h[-1])

    # starting points from the nonparametric inversion
    theta_np = invert_error_variance(curve, lat, np.minimum(v, var_max))
    b0 = math.sqrt(max(theta_np[0], 1e-8))
    usable = (theta_np < nu2 * 0.999) & (h < tau_star)
    h_mid = float(np.median(h[usable])) if usable.any() else float(np.median(h))
    th_mid = float(np.interp(h_mid, h, theta_np))
    rng = np.random.default_rng(seed)
    phi = ErrorVarianceTable(curve, lat)

    def unpack(p):
        return math.exp(p[0]), p[1] / h_scale, math.exp(p[2])

    def obj(p):
        if not np.all(np.isfinite(p)) or abs(p[1]) > 50 or p[0] > 10 or p[2] > 10:
            return 1e6
        s0, eta, b = unpack(p)
        return parametric_objective(curve, lat, targets, s0, eta, b, tau_star, phi)

    starts = []
    for i, eh in enumerate(np.linspace(-1.0, 3.0, n_starts)):
        eh = eh + (rng.uniform(-0.2, 0.2) if i else 0.0)
        eta = eh / h_scale
        growth = h_mid if abs(eta) < 1e-12 else math.expm1(2 * eta * h_mid) / (2 * eta)
        s0 = math.sqrt(max(th_mid - b0 ** 2, 1e-6) / max(growth, 1e-12))
        starts.append(np.array([math.log(s0), eh, math.log(b0 * rng.uniform(0.8, 1.2))]))

    best, n_evals, converged, msg = None, 0, False, ""
    for x0 in starts:
        res = minimize(obj, x0, method="Nelder-Mead",
                       options={"xatol": 1e-9, "fatol": 1e-20, "maxiter": 6000, "maxfev": 12000})
        # polish from the optimum to escape simplex collapse
        res2 = minimize(obj, res.x, method="Nelder-Mead",
                        options={"xatol": 1e-9, "fatol": max(1e-22, 1e-12 * res.fun),
                                 "maxiter": 8000})
        n_evals += res.nfev + res2.nfev
        r = res2 if res2.fun <= res.fun else res
        if best is None or r.fun < best.fun:
            best, converged, msg = r, bool(res2.success), str(res2.message)
    s0, eta, b = unpack(best.x)
    sched = ParametricTheta(sigma0=s0, eta=eta, b=b, T=float(h[-1] if T is None else T),
                            cap=nu2, tau_star=tau_star)
    if not converged:
        warnings.warn(f"parametric theta fit did not converge: {msg}")
    return sched, FitReport(float(best.fun), n_evals, converged, msg)
