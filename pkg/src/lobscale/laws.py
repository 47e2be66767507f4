"""Return-size laws: the uniform mixture for U and the two-branch truncated
power law for V.

Quantile functions are numba-compiled scalars so the path kernels can draw
from plain uniforms; the array helpers wrap them for Python callers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import ConfigError, as_generator


@dataclass(frozen=True)
class ULaw:
    """``U = 0`` with probability ``1 - r``, else Uniform(0, xi]."""

    r: float
    xi: float

    def __post_init__(self) -> None:
        if not (0 < self.r <= 1):
            raise ConfigError(f"r must lie in (0, 1], got {self.r}")
        if not self.xi > 0:
            raise ConfigError(f"xi must be positive, got {self.xi}")

    @property
    def mean(self) -> float:
        return self.r * self.xi / 2.0

    @property
    def second_moment(self) -> float:
        return self.r * self.xi**2 / 3.0

    def quantile(self, w):
        return _apply_flat(u_quantile_array, w, self.r, self.xi)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.0, (1 - self.r) + self.r * np.clip(x / self.xi, 0.0, 1.0))

    def sample(self, rng, size=None):
        return self.quantile(as_generator(rng).random(size))


@dataclass(frozen=True)
class VLaw:
    """Density ``(u-1)(rho+|x|)^-u`` normalised to mass 1/2 on each of
    ``(-1, 0)`` and ``(0, c)``."""

    u: float
    rho: float
    c: float = 1.0

    def __post_init__(self) -> None:
        if not (1 < self.u <= 3):
            raise ConfigError(f"tail exponent u must lie in (1, 3], got {self.u}")
        if not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if not self.c > 0:
            raise ConfigError(f"cap c must be positive, got {self.c}")

    def quantile(self, w):
        return _apply_flat(v_quantile_array, w, self.u, self.rho, self.c)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        neg = 0.5 * (1.0 - _branch_cdf(np.clip(-x, 0.0, 1.0), self.u, self.rho, 1.0))
        pos = 0.5 + 0.5 * _branch_cdf(np.clip(x, 0.0, self.c), self.u, self.rho, self.c)
        return np.where(x < 0, np.where(x <= -1, 0.0, neg), pos)

    def sample(self, rng, size=None):
        return self.quantile(as_generator(rng).random(size))

    def mean(self) -> float:
        return 0.5 * (_branch_mean(self.u, self.rho, self.c) - _branch_mean(self.u, self.rho, 1.0))


def _apply_flat(kernel, w, *args):
    w = np.asarray(w, dtype=float)
    out = kernel(np.ascontiguousarray(w.ravel()), *args).reshape(w.shape)
    return float(out) if out.ndim == 0 else out


def _branch_cdf(y, u, rho, cap):
    a = rho ** (1 - u)
    return (a - (rho + y) ** (1 - u)) / (a - (rho + cap) ** (1 - u))


def _branch_mean(u: float, rho: float, cap: float) -> float:
    """Mean of the distance on one branch (a truncated shifted Pareto)."""
    from scipy.integrate import quad

    norm = rho ** (1 - u) - (rho + cap) ** (1 - u)
    val, _ = quad(lambda y: y * (u - 1) * (rho + y) ** (-u), 0.0, cap, epsabs=1e-13, epsrel=1e-12)
    return val / norm


@numba.njit(cache=True)
def u_quantile(w, r, xi):
    z = 1.0 - r
    if w < z:
        return 0.0
    x = xi * (w - z) / r
    return x if x > 0.0 else xi * 1e-300


@numba.njit(cache=True)
def _branch_quantile(g, u, rho, cap):
    a = rho ** (1.0 - u)
    d = a - (rho + cap) ** (1.0 - u)
    y = (a - g * d) ** (1.0 / (1.0 - u)) - rho
    if y < 0.0:
        return 0.0
    return y if y < cap else cap


@numba.njit(cache=True)
def v_quantile(w, u, rho, c):
    if w < 0.5:
        return -_branch_quantile(1.0 - 2.0 * w, u, rho, 1.0)
    return _branch_quantile(2.0 * w - 1.0, u, rho, c)


@numba.njit(cache=True)
def u_quantile_array(w, r, xi):
    out = np.empty_like(w)
    for k in range(w.size):
        out[k] = u_quantile(w[k], r, xi)
    return out


@numba.njit(cache=True)
def v_quantile_array(w, u, rho, c):
    out = np.empty_like(w)
    for k in range(w.size):
        out[k] = v_quantile(w[k], u, rho, c)
    return out


@numba.njit(cache=True)
def lattice_floor_scalar(x, delta):
    """Scalar twin of :func:`lobscale.core.lattice_floor` for kernels."""
    y = x / delta
    k = math.floor(y)
    if abs(y - (k + 1.0)) <= 1e-9:
        k += 1.0
    return k * delta
