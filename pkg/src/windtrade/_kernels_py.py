"""Pure numpy versions of the hot loops (reference and fallback)."""
from __future__ import annotations

import numpy as np


def hjb_interval(w, tau, sigma2, mu, gamma, dphi, dy, phi, cfl, max_sub):
    """Advance ``w[j, i]`` (phi x y) backward by ``tau`` with explicit monotone sub-steps.

    Each sub-step satisfies ``dt * (sigma2 (1/dy^2 + 1/(2 dy)) + psi_max/dphi) <= cfl``.
    Returns the number of sub-steps, or -1 if ``max_sub`` was exceeded.
    """
    n_y = w.shape[1]
    diff_rate = sigma2 * (1.0 / dy ** 2 + 0.5 / dy)
    source = phi[:, None] * mu
    remaining = tau
    n = 0
    dp = np.zeros_like(w)
    lap = np.zeros_like(w)
    while remaining > 0.0:
        if n >= max_sub:
            return -1
        dp[:-1] = np.minimum((w[1:] - w[:-1]) / dphi, 0.0)
        psi_max = -dp.min() / gamma
        rate = diff_rate + psi_max / dphi
        if rate * remaining <= cfl:
            dt = remaining
        else:
            dt = cfl / rate
        if n_y > 2:
            lap[:, 1:-1] = ((w[:, 2:] - 2.0 * w[:, 1:-1] + w[:, :-2]) / dy ** 2
                            - (w[:, 1:-1] - w[:, :-2]) / dy)
        # upper end: zero curvature, upwind slope; lower end frozen
        lap[:, -1] = -(w[:, -1] - w[:, -2]) / dy
        lap[:, 0] = 0.0
        w += dt * (0.5 * sigma2 * lap - dp ** 2 / (2.0 * gamma) + source)
        remaining -= dt
        n += 1
        if remaining <= 1e-15 * tau:
            break
    return n


def _trilinear(psi, t_idx, t_w, phi, phi0, dphi, y, y0, dy):
    n_phi, n_y = psi.shape[1], psi.shape[2]
    pj = np.clip((phi - phi0) / dphi, 0.0, n_phi - 1.0)
    j = np.minimum(pj.astype(np.intp), n_phi - 2)
    wj = pj - j
    pi = np.clip((y - y0) / dy, 0.0, n_y - 1.0)
    i = np.minimum(pi.astype(np.intp), n_y - 2)
    wi = pi - i
    out = 0.0
    for dt_, a in ((0, 1.0 - t_w), (1, t_w)):
        if a == 0.0:
            continue
        s = psi[t_idx + dt_]
        v = ((1 - wj) * ((1 - wi) * s[j, i] + wi * s[j, i + 1])
             + wj * ((1 - wi) * s[j + 1, i] + wi * s[j + 1, i + 1]))
        out = out + a * v
    return out


def simulate_impact(psi, t0, dt_grid, phi0, dphi, y0, dy, sub_t, sub_mu, sub_k, log_x, gamma):
    """Forward Euler for ``dphi = psi(t, phi, y) dt`` along many paths.

    ``sub_t`` (M+1 nodes) and ``sub_mu`` are the shared sub-step times and
    drift values; ``sub_k[s]`` is the path-grid column whose ``log_x`` is used
    on sub-step ``s``.  Returns final positions, drift loss, impact cost and
    the number of paths that reached the top of the phi grid.
    """
    n_paths = log_x.shape[0]
    n_t = psi.shape[0]
    phi_top = phi0 + dphi * (psi.shape[1] - 1)
    phi = np.zeros(n_paths)
    drift = np.zeros(n_paths)
    impact = np.zeros(n_paths)
    hit = np.zeros(n_paths, dtype=bool)
    for s in range(sub_t.size - 1):
        t, dt = sub_t[s], sub_t[s + 1] - sub_t[s]
        pt = min(max((t - t0) / dt_grid, 0.0), n_t - 1.0)
        ti = min(int(pt), n_t - 2)
        rate = np.maximum(_trilinear(psi, ti, pt - ti, phi, phi0, dphi,
                                     log_x[:, sub_k[s]], y0, dy), 0.0)
        new = phi + rate * dt
        drift += 0.5 * (phi * sub_mu[s] + new * sub_mu[s + 1]) * dt
        impact += 0.5 * gamma * rate ** 2 * dt
        phi = new
        hit |= phi >= phi_top
    return phi, drift, impact, int(hit.sum())
