"""Synthetic production and forecast records with a known generating model."""
from __future__ import annotations

import numpy as np

from .dist import LatentParams, f_prod
from .forecast import ParametricTheta, g, log_increment_variances

EPOCH_2020 = 1577836800.0  # 2020-01-01T00:00:00Z


def production_series(lat: LatentParams, n: int, seed: int, rated_kw: float = 1000.0,
                      step_s: float = 600.0, start_s: float = EPOCH_2020):
    """Independent draws of ``f_prod(X)`` on a regular time grid, in kW."""
    rng = np.random.default_rng(seed)
    x = np.exp(lat.mu_X + lat.nu_X * rng.standard_normal(n))
    return start_s + step_s * np.arange(n), rated_kw * f_prod(lat.curve, x)


def forecast_records(lat: LatentParams, sched_hours: ParametricTheta, horizons_h, n_targets: int,
                     seed: int, rated_kw: float = 1000.0, target_step_s: float = 900.0,
                     start_s: float = EPOCH_2020 + 10 * 86400.0):
    """Martingale forecasts of independent targets at the given horizons (hours).

    Each target gets its own wind path on the grid ``T - h``; returns
    ``(issue_s, target_s, forecast_kw, prod_times_s, prod_kw)``.
    """
    h = np.sort(np.asarray(horizons_h, float))[::-1]
    H = sched_hours.T
    if h[0] > H or h[-1] <= 0:
        raise ValueError("horizons must lie in (0, T]")
    grid = np.append(H - h, H)
    var = log_increment_variances(sched_hours, grid, lat.nu_X ** 2)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_targets, grid.size))
    x = np.exp(np.cumsum(np.sqrt(var) * z - 0.5 * var, axis=1))
    theta = np.asarray(sched_hours.theta(grid))
    f = np.empty_like(x)
    f[:, :-1] = g(lat.curve, x[:, :-1], theta[:-1])
    f[:, -1] = f_prod(lat.curve, x[:, -1])
    targets = start_s + target_step_s * np.arange(n_targets)
    n_h = h.size
    issue = (targets[:, None] - 3600.0 * h[None, :]).ravel()
    target = np.repeat(targets, n_h)
    fc = rated_kw * f[:, :n_h].ravel()
    return issue, target, fc, targets, rated_kw * f[:, -1]
