"""Weights, clocks and the closed-form laws of the local time at 0."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .eigen import EigenSolution, h_q
from .measure import BoundaryClass, DiffusionSpec, h0
from .special import rho_density, rho_tilde_density


class DegenerateClockWarning(UserWarning):
    pass


# ---------------------------------------------------------------- weights

def _e0(lam, h):
    """int_0^h e^{-lam w} dw."""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam * h) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, h - 0.5 * lam * h * h, -np.expm1(-lam * h) / lam)
    return out


def _e1(lam, h):
    """int_0^h w e^{-lam w} dw."""
    lam = np.asarray(lam, dtype=float)
    z = lam * h
    small = np.abs(z) < 1e-3
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        big = (-np.expm1(-z) - z * np.exp(-z)) / lam ** 2
    series = h * h * (0.5 - z / 3.0 + z * z / 8.0 - z ** 3 / 30.0)
    return np.where(small, series, big)


@dataclass(frozen=True)
class Weight:
    """Nonnegative integrable weight f on [0, inf).

    kinds: ``exponential`` (f = amp e^{-c u}), ``indicator_at_zero``
    (f = 1{u = 0}, zero integral) and ``tabulated`` (piecewise linear through
    the knots, then either zero or an exponential tail of rate ``tail_rate``).
    """

    kind: str
    c: float = 1.0
    amp: float = 1.0
    knots: tuple = ()
    values: tuple = ()
    tail_rate: float | None = None

    def __post_init__(self):
        if self.kind == "exponential":
            if not (self.c > 0 and self.amp > 0):
                raise ValueError("exponential weight needs c > 0 and amp > 0")
        elif self.kind == "tabulated":
            k = np.asarray(self.knots, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if len(k) < 2 or len(k) != len(v) or k[0] != 0 or np.any(np.diff(k) <= 0):
                raise ValueError("tabulated weight needs increasing knots starting at 0")
            if np.any(v < 0):
                raise ValueError("weight must be nonnegative")
            if v[-1] > 0 and self.tail_rate is None:
                raise ValueError("tabulated weight must end at 0 or declare an integrable tail_rate")
            if self.tail_rate is not None and not self.tail_rate > 0:
                raise ValueError("tail_rate must be positive")
        elif self.kind != "indicator_at_zero":
            raise ValueError(f"unknown weight kind {self.kind!r}")

    # constructors
    @classmethod
    def exponential(cls, c: float = 1.0, amp: float = 1.0) -> "Weight":
        return cls("exponential", c=float(c), amp=float(amp))

    @classmethod
    def indicator_at_zero(cls) -> "Weight":
        return cls("indicator_at_zero")

    @classmethod
    def tabulated(cls, knots, values, tail_rate: float | None = None) -> "Weight":
        return cls("tabulated", knots=tuple(map(float, knots)), values=tuple(map(float, values)),
                   tail_rate=None if tail_rate is None else float(tail_rate))

    @classmethod
    def parse(cls, text: str) -> "Weight":
        """``exp:c`` | ``exp:c,amp`` | ``ind0`` | ``tab:FILE`` (two columns u, f)."""
        if text == "ind0":
            return cls.indicator_at_zero()
        kind, _, arg = text.partition(":")
        if kind == "exp":
            parts = [float(p) for p in arg.split(",")] if arg else [1.0]
            return cls.exponential(*parts)
        if kind == "tab":
            data = np.loadtxt(arg, delimiter="," if arg.endswith(".csv") else None, ndmin=2)
            return cls.tabulated(data[:, 0], data[:, 1])
        raise ValueError(f"cannot parse weight {text!r}")

    def to_config(self) -> dict:
        if self.kind == "exponential":
            return {"kind": "exponential", "c": self.c, "amp": self.amp}
        if self.kind == "tabulated":
            return {"kind": "tabulated", "knots": list(self.knots), "values": list(self.values),
                    "tail_rate": self.tail_rate}
        return {"kind": self.kind}

    @classmethod
    def from_config(cls, cfg: dict) -> "Weight":
        kind = cfg["kind"]
        if kind == "exponential":
            return cls.exponential(cfg.get("c", 1.0), cfg.get("amp", 1.0))
        if kind == "tabulated":
            return cls.tabulated(cfg["knots"], cfg["values"], cfg.get("tail_rate"))
        return cls.indicator_at_zero()

    # evaluation
    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "exponential":
            out = self.amp * np.exp(-self.c * u)
        elif self.kind == "indicator_at_zero":
            out = (u == 0).astype(float)
        else:
            k = np.asarray(self.knots)
            v = np.asarray(self.values)
            out = np.interp(u, k, v, right=0.0)
            if self.tail_rate is not None:
                out = np.where(u > k[-1], v[-1] * np.exp(-self.tail_rate * (u - k[-1])), out)
        return out if out.ndim else float(out)

    @property
    def f0(self) -> float:
        return float(self(0.0))

    def integral(self) -> float:
        return float(self.tail_integral(0.0))

    def tail_integral(self, u):
        """int_u^inf f."""
        return self.laplace_shifted(0.0, u)

    def laplace(self, lam: float) -> float:
        """int_0^inf e^{-lam v} f(v) dv."""
        return float(self.laplace_shifted(lam, 0.0))

    def laplace_shifted(self, lam: float, shift):
        """int_0^inf e^{-lam v} f(shift + v) dv, vectorized over ``shift``."""
        s = np.asarray(shift, dtype=float)
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.kind == "indicator_at_zero":
            out = np.zeros_like(s)
        elif self.kind == "exponential":
            out = self.amp * np.exp(-self.c * s) / (self.c + lam)
        else:
            out = self._tab_laplace(lam, s)
        return out if out.ndim else float(out)

    def _tab_laplace(self, lam: float, s: np.ndarray) -> np.ndarray:
        k = np.asarray(self.knots)
        v = np.asarray(self.values)
        out = np.zeros_like(s)
        for i in range(len(k) - 1):
            a, b = k[i], k[i + 1]
            slope = (v[i + 1] - v[i]) / (b - a)
            # start of the integration inside this segment
            lo = np.clip(s, a, b)
            h = b - lo
            val0 = v[i] + slope * (lo - a)
            seg = val0 * _e0(lam, h) + slope * _e1(lam, h)
            out += np.exp(-lam * (lo - s)) * seg
        if self.tail_rate is not None:
            lo = np.maximum(s, k[-1])
            out += v[-1] * np.exp(-self.tail_rate * (lo - k[-1])) * np.exp(-lam * (lo - s)) \
                / (lam + self.tail_rate)
        return out


# ---------------------------------------------------------------- clocks

@dataclass(frozen=True)
class ClockSpec:
    """Exponential(q), hitting(a) or inverse_local_time(a, u)."""

    kind: str
    q: float = math.nan
    a: float = math.nan
    u: float = math.nan

    def __post_init__(self):
        if self.kind == "exponential":
            if not self.q > 0:
                raise ValueError("exponential clock needs q > 0")
        elif self.kind == "hitting":
            if not self.a > 0:
                raise ValueError("hitting clock needs a > 0")
        elif self.kind == "inverse_local_time":
            if not (self.a >= 0 and self.u > 0):
                raise ValueError("inverse local time clock needs a >= 0 and u > 0")
        else:
            raise ValueError(f"unknown clock {self.kind!r}")

    @classmethod
    def exponential(cls, q: float) -> "ClockSpec":
        return cls("exponential", q=float(q))

    @classmethod
    def hitting(cls, a: float) -> "ClockSpec":
        return cls("hitting", a=float(a))

    @classmethod
    def inverse_local_time(cls, a: float, u: float) -> "ClockSpec":
        return cls("inverse_local_time", a=float(a), u=float(u))

    @classmethod
    def parse(cls, text: str) -> "ClockSpec":
        """``exp:q`` | ``hit:a`` | ``ilt:a,u``."""
        kind, _, arg = text.partition(":")
        vals = [float(p) for p in arg.split(",") if p]
        if kind == "exp" and len(vals) == 1:
            return cls.exponential(vals[0])
        if kind == "hit" and len(vals) == 1:
            return cls.hitting(vals[0])
        if kind == "ilt" and len(vals) == 2:
            return cls.inverse_local_time(*vals)
        raise ValueError(f"cannot parse clock {text!r}")

    def __str__(self):
        if self.kind == "exponential":
            return f"exp:{self.q:g}"
        if self.kind == "hitting":
            return f"hit:{self.a:g}"
        return f"ilt:{self.a:g},{self.u:g}"


# ---------------------------------------------------------------- laws

@dataclass(frozen=True)
class LocalTimeLaw:
    """Atom at 0 plus a density on (0, inf); ``mass_at_infinity`` for degenerate laws."""

    atom_at_zero: float
    density: Callable | None = field(default=None, repr=False)
    mass_at_infinity: float = 0.0
    scale: float = 1.0   # typical size of the support, a quadrature hint

    @property
    def degenerate_infinite(self) -> bool:
        return self.mass_at_infinity > 0

    def _quad(self, g):
        if self.density is None:
            return 0.0
        fn = lambda y: g(y) * self.density(y)
        s = self.scale
        pieces = [(0.0, s), (s, 10 * s), (10 * s, 100 * s), (100 * s, np.inf)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            return sum(integrate.quad(fn, a, b, epsabs=1e-13, epsrel=1e-11, limit=500)[0]
                       for a, b in pieces)

    def total_mass(self) -> float:
        return self.atom_at_zero + self._quad(lambda y: 1.0) + self.mass_at_infinity

    def expect(self, f: Callable) -> float:
        if self.degenerate_infinite:
            raise ValueError("law puts mass at infinity")
        return float(self.atom_at_zero * f(0.0) + self._quad(f))

    def laplace(self, beta: float) -> float:
        return self.atom_at_zero + self._quad(lambda y: math.exp(-beta * y))

    def survival(self, u: float) -> float:
        """P(L >= u) for u > 0."""
        if u <= 0:
            return 1.0
        inner = integrate.quad(self.density, 0.0, u, epsabs=1e-13, epsrel=1e-11, limit=500)[0] \
            if self.density is not None else 0.0
        return 1.0 - self.atom_at_zero - inner

    def cdf(self, y):
        """P(L <= y) on an array (used by KS tests)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        order = np.argsort(y)
        ys = y[order]
        out = np.empty_like(ys)
        acc, prev = self.atom_at_zero, 0.0
        for i, v in enumerate(ys):
            if v > prev and self.density is not None:
                acc += integrate.quad(self.density, prev, v, epsabs=1e-14, epsrel=1e-11, limit=200)[0]
                prev = v
            out[i] = acc if v >= 0 else 0.0
        res = np.empty_like(out)
        res[order] = out
        return res


def law_exp_clock(spec: DiffusionSpec, sol: EigenSolution, f: Weight, x) -> float:
    """E_x f(L_{e_q}) = (1/H) {h_q(x) f(0) + rho(x) int e^{-u/H} f(u) du}."""
    H = sol.H
    return (h_q(sol, x) * f.f0 + sol.rho_at(x) * f.laplace(1.0 / H)) / H


def law_L_infty(spec: DiffusionSpec, f: Weight, x) -> float:
    """E_x f(L_inf) when 0 is transient (l < inf)."""
    ell = spec.ell
    if not math.isfinite(ell):
        raise ValueError("L_inf law needs a transient spec (l < inf)")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > ell):
        raise ValueError("need 0 <= x <= l")
    out = (x * f.f0 + (1.0 - x / ell) * f.laplace(1.0 / ell)) / ell
    return out if out.ndim else float(out)


def green_occupation(spec: DiffusionSpec, f: Weight, x) -> float:
    """E_x int_0^inf f(L_t) dt when 0 is positive recurrent."""
    if not spec.pi0 > 0:
        raise ValueError("occupation formula needs pi0 > 0")
    out = (h0(spec, x) * f.f0 + f.integral()) / spec.pi0
    return out if np.ndim(out) else float(out)


def law_hitting_clock(spec: DiffusionSpec, f: Weight, x: float, a: float) -> float:
    """E_x f(L_{T_a}) = (1/a) {x f(0) + (1 - x/a) int e^{-u/a} f(u) du}."""
    if not a < spec.ell:
        raise ValueError("need a < l")
    if x < 0:
        raise ValueError("need x >= 0")
    if a <= x:
        warnings.warn("a <= x: T_a is reached before any local time, L = 0", DegenerateClockWarning)
        return f.f0
    return (x * f.f0 + (1.0 - x / a) * f.laplace(1.0 / a)) / a


def law_inverse_lt_clock(a: float, u: float) -> LocalTimeLaw:
    """Law of L_{eta^a_u} under P_a: atom e^{-u/a} plus the I_1 density."""
    if not (a > 0 and u > 0):
        raise ValueError("need a, u > 0")
    return LocalTimeLaw(math.exp(-u / a), lambda y: rho_density(a, u, y),
                        scale=max(a, u, a * a / u if u > 0 else a))


def _rho_tilde_integral(f: Weight, a: float, u: float) -> float:
    if f.kind == "exponential":
        # int e^{-c y} e^{-(u+y)/a} I_0(2 sqrt(uy)/a) dy = e^{-u/a} e^{u/(a^2 p)} / p
        p = f.c + 1.0 / a
        return f.amp * math.exp(-u / a + u / (a * a * p)) / p
    if f.kind == "indicator_at_zero":
        return 0.0
    fn = lambda y: f(y) * rho_tilde_density(a, u, y)
    edges = [0.0, *[k for k in f.knots if k > 0]]
    tot = sum(integrate.quad(fn, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=300)[0]
              for lo, hi in zip(edges[:-1], edges[1:]))
    if f.tail_rate is not None:
        tot += integrate.quad(fn, edges[-1], np.inf, epsabs=1e-13, epsrel=1e-11, limit=300)[0]
    return tot


def _ilt_expect_at_a(f: Weight, a: float, u: float) -> float:
    if f.kind == "exponential":
        return f.amp * math.exp(-u * f.c / (1.0 + f.c * a))
    law = law_inverse_lt_clock(a, u)
    if f.kind == "indicator_at_zero":
        return law.atom_at_zero
    return law.atom_at_zero * f.f0 + law._quad(f)


def law_inverse_lt_clock_from_x(spec: DiffusionSpec, x: float, a: float, u: float, f: Weight) -> float:
    """E_x f(L_{eta^a_u}) for l = inf."""
    if math.isfinite(spec.ell):
        raise ValueError("inverse local time clock law needs l = inf")
    if not (x >= 0 and a > 0 and u > 0):
        raise ValueError("need x >= 0, a > 0, u > 0")
    first = min(x, a) / a * _ilt_expect_at_a(f, a, u)
    w = max(0.0, 1.0 - x / a)
    second = w / a * _rho_tilde_integral(f, a, u) if w > 0 else 0.0
    return first + second


def q_total_local_time(h: str, spec: DiffusionSpec, f: Weight | None = None,
                       beta_a: tuple | None = None) -> LocalTimeLaw:
    """Law of L_inf under the penalized measure started at 0.

    ``h`` is ``"s"``, ``"h0"`` or ``"beta_a"``.
    """
    if h == "beta_a":
        if beta_a is None:
            raise ValueError("need (beta, a)")
        return LocalTimeLaw(0.0, None, mass_at_infinity=1.0)
    if f is None:
        raise ValueError("need a weight")
    if f.kind == "indicator_at_zero" or abs(f.integral() - 1.0) > 1e-9:
        raise ValueError("weight must be normalized: int f = 1")
    if h == "s":
        scale = 1.0 / f.c if f.kind == "exponential" else max(f.knots[-1], 1.0)
        return LocalTimeLaw(0.0, lambda y: f(y), scale=scale)
    if h == "h0":
        if spec.pi0 > 0:
            return LocalTimeLaw(0.0, None, mass_at_infinity=1.0)
        scale = 1.0 / f.c if f.kind == "exponential" else max(f.knots[-1], 1.0)
        return LocalTimeLaw(0.0, lambda y: f(y), scale=scale)
    raise ValueError(f"unknown h {h!r}")
