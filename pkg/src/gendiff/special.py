"""Modified Bessel functions I_0, I_1 and the inverse-local-time kernels."""
from __future__ import annotations

import math

import numpy as np

# below this argument the power series is used, above it the asymptotic expansion
CROSSOVER = 20.0
_SERIES_TERMS = 80
_ASYM_TERMS = 40


def _series_scaled(nu: int, x: np.ndarray) -> np.ndarray:
    """e^{-x} * sum (x/2)^{nu+2n} / (n! (n+nu)!), term ratio recurrence."""
    half = 0.5 * x
    q = half * half
    term = np.power(half, nu) / math.factorial(nu)
    total = term.copy()
    for n in range(1, _SERIES_TERMS):
        term = term * q / (n * (n + nu))
        total += term
        if np.all(term <= 1e-17 * total):
            break
    return total * np.exp(-x)


def _asym_scaled(nu: int, x: np.ndarray) -> np.ndarray:
    """e^{-x} I_nu(x) ~ (2 pi x)^{-1/2} sum_k (-1)^k a_k(nu) / x^k, truncated at the smallest term."""
    mu = 4.0 * nu * nu
    total = np.ones_like(x)
    term = np.ones_like(x)
    done = np.zeros(x.shape, dtype=bool)
    for k in range(1, _ASYM_TERMS):
        new = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        grow = np.abs(new) >= np.abs(term)
        done |= grow
        term = np.where(done, 0.0, new)
        total += term
        if np.all(done | (np.abs(term) < 1e-17 * np.abs(total))):
            break
    return total / np.sqrt(2.0 * math.pi * x)


def bessel_i_scaled(nu: int, x):
    """e^{-x} I_nu(x) for nu in {0, 1} and x >= 0."""
    if nu not in (0, 1):
        raise ValueError("only orders 0 and 1 are supported")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise ValueError("argument must be nonnegative")
    flat = xa.ravel()
    out = np.empty_like(flat)
    lo = flat < CROSSOVER
    if lo.any():
        out[lo] = _series_scaled(nu, flat[lo])
    if (~lo).any():
        out[~lo] = _asym_scaled(nu, flat[~lo])
    out = out.reshape(xa.shape)
    return out if xa.ndim else float(out)


def bessel_i(nu: int, x):
    """Modified Bessel function of the first kind I_nu(x), nu in {0, 1}."""
    xa = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        out = bessel_i_scaled(nu, xa) * np.exp(xa)
    return out


def bessel_i_series(nu: int, x, branch: str):
    """Evaluate one branch only (used for the crossover check)."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    f = _series_scaled if branch == "series" else _asym_scaled
    return f(nu, xa) * np.exp(xa)


def fit_bound_constant(n: int = 4000) -> float:
    """Smallest C with I_nu(z) <= C z^nu on (0, 1] and I_nu(z) <= C e^z on [1, inf), nu = 0, 1."""
    z_lo = np.linspace(1e-6, 1.0, n)
    z_hi = np.geomspace(1.0, 1e4, n)
    c = 0.0
    for nu in (0, 1):
        c = max(c, float(np.max(bessel_i(nu, z_lo) / z_lo ** nu)))
        c = max(c, float(np.max(bessel_i_scaled(nu, z_hi))))
    return c


def _kernel_args(a, u, y):
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(a <= 0) or np.any(u < 0) or np.any(y <= 0):
        raise ValueError("need a > 0, u >= 0, y > 0")
    z = 2.0 * np.sqrt(u * y) / a
    # e^{-(u+y)/a} e^{z} = e^{-(sqrt u - sqrt y)^2 / a}
    damp = np.exp(-(np.sqrt(u) - np.sqrt(y)) ** 2 / a)
    return a, u, y, z, damp


def rho_density(a, u, y):
    """Density e^{-(u+y)/a} sqrt(u/y)/a I_1(2 sqrt(uy)/a) of L at the inverse local time, y > 0."""
    a, u, y, z, damp = _kernel_args(a, u, y)
    out = damp * np.sqrt(u / y) / a * bessel_i_scaled(1, z)
    return out if np.ndim(out) else float(out)


def rho_tilde_density(a, u, y):
    """Kernel e^{-(u+y)/a} I_0(2 sqrt(uy)/a)."""
    a, u, y, z, damp = _kernel_args(a, u, y)
    out = damp * bessel_i_scaled(0, z)
    return out if np.ndim(out) else float(out)
