# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops; same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fmin, fmax

cnp.import_array()


def hjb_interval(double[:, ::1] w, double tau, double sigma2, double mu, double gamma,
                 double dphi, double dy, double[::1] phi, double cfl, long max_sub):
    cdef Py_ssize_t n_phi = w.shape[0], n_y = w.shape[1]
    cdef Py_ssize_t i, j
    cdef double diff_rate = sigma2 * (1.0 / (dy * dy) + 0.5 / dy)
    cdef double remaining = tau, dt, rate, psi_max, q, lap, dmin
    cdef double inv_dy2 = 1.0 / (dy * dy), inv_dy = 1.0 / dy, inv_dphi = 1.0 / dphi
    cdef double half_s2 = 0.5 * sigma2, inv_2g = 0.5 / gamma
    cdef long n = 0
    cdef double[:, ::1] old = np.empty((n_phi, n_y))
    while remaining > 0.0:
        if n >= max_sub:
            return -1
        dmin = 0.0
        for j in range(n_phi - 1):
            for i in range(n_y):
                q = (w[j + 1, i] - w[j, i]) * inv_dphi
                if q < dmin:
                    dmin = q
        psi_max = -dmin / gamma
        rate = diff_rate + psi_max * inv_dphi
        if rate * remaining <= cfl:
            dt = remaining
        else:
            dt = cfl / rate
        old[:, :] = w
        for j in range(n_phi):
            for i in range(n_y):
                if j < n_phi - 1:
                    q = fmin((old[j + 1, i] - old[j, i]) * inv_dphi, 0.0)
                else:
                    q = 0.0
                if i == 0:
                    lap = 0.0
                elif i == n_y - 1:
                    lap = -(old[j, i] - old[j, i - 1]) * inv_dy
                else:
                    lap = ((old[j, i + 1] - 2.0 * old[j, i] + old[j, i - 1]) * inv_dy2
                           - (old[j, i] - old[j, i - 1]) * inv_dy)
                w[j, i] = old[j, i] + dt * (half_s2 * lap - q * q * inv_2g + phi[j] * mu)
        remaining -= dt
        n += 1
        if remaining <= 1e-15 * tau:
            break
    return n


cdef inline double _interp(double[:, :, ::1] psi, Py_ssize_t ti, double tw,
                           Py_ssize_t j, double wj, Py_ssize_t i, double wi) nogil:
    cdef double a = ((1 - wj) * ((1 - wi) * psi[ti, j, i] + wi * psi[ti, j, i + 1])
                     + wj * ((1 - wi) * psi[ti, j + 1, i] + wi * psi[ti, j + 1, i + 1]))
    cdef double b
    if tw == 0.0:
        return a
    b = ((1 - wj) * ((1 - wi) * psi[ti + 1, j, i] + wi * psi[ti + 1, j, i + 1])
         + wj * ((1 - wi) * psi[ti + 1, j + 1, i] + wi * psi[ti + 1, j + 1, i + 1]))
    return (1 - tw) * a + tw * b


def simulate_impact(double[:, :, ::1] psi, double t0, double dt_grid, double phi0, double dphi,
                    double y0, double dy, double[::1] sub_t, double[::1] sub_mu,
                    cnp.intp_t[::1] sub_k, double[:, ::1] log_x, double gamma):
    cdef Py_ssize_t n_paths = log_x.shape[0]
    cdef Py_ssize_t n_t = psi.shape[0], n_phi = psi.shape[1], n_y = psi.shape[2]
    cdef Py_ssize_t n_sub = sub_t.shape[0] - 1
    cdef Py_ssize_t p, s, ti, j, i
    cdef double phi_top = phi0 + dphi * (n_phi - 1)
    cdef double t, dt, pt, tw, pj, wj, pi, wi, rate, ph, new, dr, im
    cdef long hits = 0
    out_phi = np.zeros(n_paths)
    out_drift = np.zeros(n_paths)
    out_impact = np.zeros(n_paths)
    cdef double[::1] o_phi = out_phi, o_drift = out_drift, o_impact = out_impact
    cdef bint hit
    with nogil:
        for p in range(n_paths):
            ph = 0.0
            dr = 0.0
            im = 0.0
            hit = False
            for s in range(n_sub):
                t = sub_t[s]
                dt = sub_t[s + 1] - t
                pt = fmin(fmax((t - t0) / dt_grid, 0.0), n_t - 1.0)
                ti = <Py_ssize_t> pt
                if ti > n_t - 2:
                    ti = n_t - 2
                tw = pt - ti
                pj = fmin(fmax((ph - phi0) / dphi, 0.0), n_phi - 1.0)
                j = <Py_ssize_t> pj
                if j > n_phi - 2:
                    j = n_phi - 2
                wj = pj - j
                pi = fmin(fmax((log_x[p, sub_k[s]] - y0) / dy, 0.0), n_y - 1.0)
                i = <Py_ssize_t> pi
                if i > n_y - 2:
                    i = n_y - 2
                wi = pi - i
                rate = fmax(_interp(psi, ti, tw, j, wj, i, wi), 0.0)
                new = ph + rate * dt
                dr += 0.5 * (ph * sub_mu[s] + new * sub_mu[s + 1]) * dt
                im += 0.5 * gamma * rate * rate * dt
                ph = new
                if ph >= phi_top:
                    hit = True
            o_phi[p] = ph
            o_drift[p] = dr
            o_impact[p] = im
            if hit:
                hits += 1
    return out_phi, out_drift, out_impact, hits
