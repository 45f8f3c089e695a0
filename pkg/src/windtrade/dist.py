"""Truncated log-normal law of normalized wind production.

Normalized production is modelled as ``F = f_prod(X)`` where ``X`` is a
log-normal "stylized wind" with ``E[X] = 1`` and ``f_prod`` is a
piecewise-linear power curve with knots ``x_min < x_max``.  The law of ``F``
has a density on ``(0, 1)`` and atoms at 0 and 1; it is fully described by
three parameters ``(mu, nu, zeta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

SQRT_2PI = math.sqrt(2.0 * math.pi)


def norm_cdf(z):
    return ndtr(z)


def norm_ppf(p):
    return ndtri(p)


@dataclass(frozen=True)
class PowerCurve:
    """Stylized power curve: 0 below ``x_min``, 1 above ``x_max``, affine between."""

    x_min: float
    x_max: float

    def __post_init__(self):
        if not (0.0 < self.x_min < self.x_max):
            raise ValueError(f"need 0 < x_min < x_max, got {self.x_min}, {self.x_max}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    def __call__(self, x):
        return f_prod(self, x)


def f_prod(curve: PowerCurve, x):
    x = np.asarray(x, dtype=float)
    out = (np.maximum(x - curve.x_min, 0.0) - np.maximum(x - curve.x_max, 0.0)) / curve.width
    # exact clamp so the knots map to 0 and 1 bit-for-bit
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LatentParams:
    """Latent wind parameters. ``mu_X`` is fixed to ``-nu_X**2 / 2`` (unit mean)."""

    nu_X: float
    x_min: float
    x_max: float

    def __post_init__(self):
        if self.nu_X < 0:
            raise ValueError("nu_X must be nonnegative")
        if not (0.0 < self.x_min < self.x_max):
            raise ValueError(f"need 0 < x_min < x_max, got {self.x_min}, {self.x_max}")

    @property
    def mu_X(self) -> float:
        return -0.5 * self.nu_X ** 2

    @property
    def curve(self) -> PowerCurve:
        return PowerCurve(self.x_min, self.x_max)


@dataclass(frozen=True)
class TruncatedLogNormal:
    mu: float
    nu: float
    zeta: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.zeta < 0:
            raise ValueError("zeta must be negative")

    # -- distribution functions ------------------------------------------------
    def density(self, y):
        return density(self, y)

    def cdf(self, y):
        return cdf(self, y)

    def atoms(self) -> tuple[float, float]:
        return atoms(self)

    def quantile(self, alpha):
        return quantile(self, alpha)

    def mean(self) -> float:
        lat = to_latent(self)
        from .forecast import g  # local import: forecast depends on this module

        return float(g(lat.curve, 1.0, lat.nu_X ** 2))

    def second_moment(self) -> float:
        return second_moment_fprod(to_latent(self))

    def sample(self, rng: np.random.Generator, size=None):
        return sample(self, rng, size)

    def expect(self, func, points=()) -> float:
        """``E[func(F)]``: atoms plus adaptive quadrature of the continuous part.

        ``points`` are optional interior breakpoints (kinks of ``func``).
        """
        p0, p1 = self.atoms()
        pts = sorted(p for p in points if 0.0 < p < 1.0)
        val, _ = integrate.quad(
            lambda y: func(y) * _density_scalar(self, y), 0.0, 1.0,
            points=pts or None, limit=200, epsabs=1e-13, epsrel=1e-12,
        )
        return p0 * func(0.0) + p1 * func(1.0) + val


def from_latent(lat: LatentParams) -> TruncatedLogNormal:
    width = lat.x_max - lat.x_min
    return TruncatedLogNormal(
        mu=lat.mu_X - math.log(width),
        nu=lat.nu_X,
        zeta=-lat.x_min / width,
    )


def to_latent(d: TruncatedLogNormal) -> LatentParams:
    if d.zeta >= 0:
        raise ValueError("zeta >= 0 implies x_min <= 0")
    nu_X = d.nu
    width = math.exp(-0.5 * nu_X ** 2 - d.mu)
    x_min = -d.zeta * width
    return LatentParams(nu_X=nu_X, x_min=x_min, x_max=x_min + width)


def _density_scalar(d: TruncatedLogNormal, y: float) -> float:
    s = y - d.zeta
    z = (math.log(s) - d.mu) / d.nu
    return math.exp(-0.5 * z * z) / (s * d.nu * SQRT_2PI)


def density(d: TruncatedLogNormal, y):
    y = np.asarray(y, dtype=float)
    if np.any((y <= 0.0) | (y >= 1.0)):
        raise ValueError("density is defined on the open interval (0, 1)")
    s = y - d.zeta
    z = (np.log(s) - d.mu) / d.nu
    out = np.exp(-0.5 * z * z) / (s * d.nu * SQRT_2PI)
    return out if out.ndim else float(out)


def cdf(d: TruncatedLogNormal, y):
    """Right-continuous CDF of F on the real line (atoms included)."""
    y = np.asarray(y, dtype=float)
    inner = np.clip(y, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        val = norm_cdf((np.log(inner - d.zeta) - d.mu) / d.nu)
    out = np.where(y < 0.0, 0.0, np.where(y >= 1.0, 1.0, val))
    return out if out.ndim else float(out)


def atoms(d: TruncatedLogNormal) -> tuple[float, float]:
    p0 = float(norm_cdf((math.log(-d.zeta) - d.mu) / d.nu))
    p1 = float(1.0 - norm_cdf((math.log(1.0 - d.zeta) - d.mu) / d.nu))
    return p0, p1


def quantile(d: TruncatedLogNormal, alpha, *, check: bool = True):
    alpha = np.asarray(alpha, dtype=float)
    if check:
        p0, p1 = atoms(d)
        tol = 1e-12
        if np.any((alpha < p0 - tol) | (alpha > 1.0 - p1 + tol)):
            raise ValueError(f"alpha must lie in [P0, 1 - P1] = [{p0:.6g}, {1 - p1:.6g}]")
    q = d.zeta + np.exp(d.mu + d.nu * norm_ppf(np.clip(alpha, 0.0, 1.0)))
    out = np.clip(q, 0.0, 1.0)
    return out if out.ndim else float(out)


def sample(d: TruncatedLogNormal, rng: np.random.Generator, size=None):
    lat = to_latent(d)
    x = np.exp(lat.mu_X + lat.nu_X * rng.standard_normal(size))
    return f_prod(lat.curve, x)


def second_moment_fprod(lat: LatentParams) -> float:
    """Closed form of ``E[f_prod(X)^2]`` for unit-mean log-normal ``X``."""
    nu = lat.nu_X
    if nu == 0.0:
        return float(f_prod(lat.curve, 1.0)) ** 2
    v = nu * nu
    lmin, lmax = math.log(lat.x_min), math.log(lat.x_max)

    def d(logk, shift):
        return (-logk + shift) / nu

    w2 = (lat.x_max - lat.x_min) ** 2
    term_top = norm_cdf(d(lmax, -v / 2))
    term_sq = math.exp(v) / w2 * (norm_cdf(d(lmin, 1.5 * v)) - norm_cdf(d(lmax, 1.5 * v)))
    term_lin = 2 * lat.x_min / w2 * (norm_cdf(d(lmin, v / 2)) - norm_cdf(d(lmax, v / 2)))
    term_const = lat.x_min ** 2 / w2 * (norm_cdf(d(lmin, -v / 2)) - norm_cdf(d(lmax, -v / 2)))
    return float(term_top + term_sq - term_lin + term_const)


# -- simple reference laws ----------------------------------------------------

@dataclass(frozen=True)
class UniformLaw:
    """Production uniformly distributed on [0, 1]."""

    def mean(self) -> float:
        return 0.5

    def expect(self, func, points=()) -> float:
        pts = sorted(p for p in points if 0.0 < p < 1.0)
        val, _ = integrate.quad(func, 0.0, 1.0, points=pts or None, limit=200,
                                epsabs=1e-14, epsrel=1e-13)
        return val


@dataclass(frozen=True)
class PointMass:
    value: float

    def mean(self) -> float:
        return self.value

    def expect(self, func, points=()) -> float:
        return float(func(self.value))
