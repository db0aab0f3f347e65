"""The limit (super)martingales and Monte-Carlo checks of the penalization limits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import interpolate

from .eigen import solve_eigen
from .laws import ClockSpec, Weight, law_exp_clock
from .measure import BoundaryClass, DiffusionSpec, h0
from .pathsim import K, MCEstimate, PathBatch, Simulator


class ScopeError(ValueError):
    """Martingale requested outside the boundary classes where it is defined."""


_MSF_CLASSES = {BoundaryClass.ENTRANCE, BoundaryClass.TYPE1_NATURAL,
                BoundaryClass.TYPE2_NATURAL, BoundaryClass.TYPE3_NATURAL}


# ---------------------------------------------------------------- h0 on arrays

@lru_cache(maxsize=32)
def _h0_table(spec: DiffusionSpec, x_hi: float):
    xs = np.linspace(0.0, x_hi, 801)
    return interpolate.CubicSpline(xs, h0(spec, xs))


def h0_fast(spec: DiffusionSpec, x) -> np.ndarray:
    """h0 on large arrays: closed forms where known, else a cached spline."""
    x = np.asarray(x, dtype=float)
    m = spec.measure
    if spec.pi0 == 0.0 or (m.name == "exp_decay" and not m.atoms):
        return np.asarray(h0(spec, x))
    if x.size < 64:
        return np.asarray(h0(spec, x))
    hi = float(np.nanmax(x)) if x.size else 1.0
    x_hi = 2.0 ** math.ceil(math.log2(max(hi, 1e-3)))
    if math.isfinite(spec.ell):
        x_hi = min(x_hi, spec.ell * (1 - 1e-9))
    return _h0_table(spec, x_hi)(x)


def _tail_term(spec: DiffusionSpec, f: Weight, X, L):
    """(1 - X/l) int_0^inf e^{-u/l} f(L + u) du."""
    ell = spec.ell
    lam = 0.0 if math.isinf(ell) else 1.0 / ell
    fac = 1.0 - np.asarray(X) * lam
    return fac * f.laplace_shifted(lam, L)


# ---------------------------------------------------------------- evaluators

def eval_N_h0f(spec: DiffusionSpec, f: Weight, X, L):
    """h0(X) f(L) + (1 - X/l) int e^{-u/l} f(L+u) du."""
    out = h0_fast(spec, X) * f(L) + _tail_term(spec, f, X, L)
    return out if np.ndim(out) else float(out)


def eval_M_h0f(spec: DiffusionSpec, f: Weight, X, L, comp):
    """N^{h0,f} plus the compensator pi0 * int_0^t f(L_u) du."""
    out = eval_N_h0f(spec, f, X, L) + spec.pi0 * np.asarray(comp)
    return out if np.ndim(out) else float(out)


def eval_M_sf(spec: DiffusionSpec, f: Weight, X, L):
    """X f(L) + (1 - X/l) int e^{-u/l} f(L+u) du."""
    if spec.boundary_class not in _MSF_CLASSES:
        raise ScopeError(f"M^(s,f) needs an entrance or natural boundary, got {spec.boundary_class.value}")
    out = np.asarray(X) * f(L) + _tail_term(spec, f, X, L)
    return out if np.ndim(out) else float(out)


def eval_M_beta_a(beta: float, a: float, X, L, La):
    """((1 + beta (X ^ a)) / (1 + beta a)) exp(-beta L + beta L^a / (1 + beta a))."""
    if La is None:
        raise KeyError(f"level {a} is not tracked")
    X, L, La = (np.asarray(v, dtype=float) for v in (X, L, La))
    out = (1.0 + beta * np.minimum(X, a)) / (1.0 + beta * a) * np.exp(-beta * L + beta * La / (1.0 + beta * a))
    return out if out.ndim else float(out)


def eval_M_inf_a(a: float, X, La, alive):
    """((X ^ a)/a) exp(L^a / a) 1{t < T0}; starting at 0 counts as T0 = 0."""
    if La is None:
        raise KeyError(f"level {a} is not tracked")
    X, La = np.asarray(X, dtype=float), np.asarray(La, dtype=float)
    out = np.where(np.asarray(alive), np.minimum(X, a) / a * np.exp(La / a), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MartingaleKind:
    """One of N_h0f, M_h0f, M_sf, M_beta_a, M_inf_a with its parameters."""

    kind: str
    weight: Weight | None = None
    beta: float = math.nan
    a: float = math.nan

    KINDS = ("N_h0f", "M_h0f", "M_sf", "M_beta_a", "M_inf_a")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown martingale {self.kind!r}")
        if self.kind in ("N_h0f", "M_h0f", "M_sf") and self.weight is None:
            raise ValueError(f"{self.kind} needs a weight")
        if self.kind == "M_beta_a" and not (self.beta > 0 and self.a > 0):
            raise ValueError("M_beta_a needs beta > 0 and a > 0")
        if self.kind == "M_inf_a" and not self.a > 0:
            raise ValueError("M_inf_a needs a > 0")

    def check_scope(self, spec: DiffusionSpec):
        if self.kind == "M_sf" and spec.boundary_class not in _MSF_CLASSES:
            raise ScopeError(f"M^(s,f) needs an entrance or natural boundary, got {spec.boundary_class.value}")

    @property
    def levels(self) -> tuple:
        return (self.a,) if self.kind in ("M_beta_a", "M_inf_a") else ()

    @property
    def needs_compensator(self) -> bool:
        return self.kind == "M_h0f"

    def at_start(self, spec: DiffusionSpec, x: float) -> float:
        x = float(x)
        if self.kind in ("N_h0f", "M_h0f"):
            return eval_N_h0f(spec, self.weight, x, 0.0)
        if self.kind == "M_sf":
            return eval_M_sf(spec, self.weight, x, 0.0)
        if self.kind == "M_beta_a":
            return eval_M_beta_a(self.beta, self.a, x, 0.0, 0.0)
        return eval_M_inf_a(self.a, x, 0.0, x > 0)

    def evaluate(self, spec: DiffusionSpec, pb: PathBatch, t: float) -> np.ndarray:
        i = pb.cp(t)
        X, L = pb.X[:, i], pb.L0[:, i]
        if self.kind == "N_h0f":
            return eval_N_h0f(spec, self.weight, X, L)
        if self.kind == "M_h0f":
            return eval_M_h0f(spec, self.weight, X, L, pb.comp[:, i])
        if self.kind == "M_sf":
            return eval_M_sf(spec, self.weight, X, L)
        La = pb.La[:, i, pb.level(self.a)]
        if self.kind == "M_beta_a":
            return eval_M_beta_a(self.beta, self.a, X, L, La)
        return eval_M_inf_a(self.a, X, La, pb.T0 > t)


@dataclass
class ConstancyRow:
    t: float
    mean: float
    std_error: float
    target: float
    passed: bool


def check_martingale(spec: DiffusionSpec, kind: MartingaleKind, x: float, times: Sequence[float],
                     n: int, seed: int, dt: float = 1e-4, simulator: Simulator | None = None,
                     k_se: float = 3.0) -> list[ConstancyRow]:
    """|E[M_t] - M_0| <= k SE at each t, all times on common paths."""
    kind.check_scope(spec)
    sim = simulator or Simulator(spec, dt=dt)
    pb = sim.run(x, n, times, kind.levels, seed,
                 weight=kind.weight if kind.needs_compensator else None)
    target = kind.at_start(spec, x)
    rows = []
    ok = pb.status == K.ST_OK
    if np.sum(~ok) > 1e-3 * n:
        raise RuntimeError(f"{np.sum(~ok)} of {n} paths failed")
    for t in times:
        v = kind.evaluate(spec, pb, t)[ok]
        est = MCEstimate.from_values(v, seed)
        rows.append(ConstancyRow(float(t), est.mean, est.std_error, target,
                                 abs(est.mean - target) <= k_se * est.std_error))
    return rows


def supermartingale_means(spec: DiffusionSpec, f: Weight, x: float, times: Sequence[float], n: int,
                          seed: int, dt: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """E[N_t] at each t on common paths, and the SE of successive differences."""
    sim = Simulator(spec, dt=dt)
    times = sorted(times)
    pb = sim.run(x, n, times, (), seed)
    vals = np.stack([eval_N_h0f(spec, f, pb.X[:, pb.cp(t)], pb.L0[:, pb.cp(t)]) for t in times])
    means = vals.mean(axis=1)
    d = np.diff(vals, axis=0)
    se = d.std(axis=1, ddof=1) / math.sqrt(n) if len(times) > 1 else np.zeros(0)
    return means, se


# ---------------------------------------------------------------- functionals

@dataclass(frozen=True)
class Functional:
    """Bounded functional F_t of (X_t, L_t) from a fixed library."""

    name: str
    fn: Callable = field(compare=False, repr=False)
    bound: float = 1.0

    def __call__(self, X, L):
        return np.asarray(self.fn(np.asarray(X, dtype=float), np.asarray(L, dtype=float)), dtype=float)

    @classmethod
    def one(cls) -> "Functional":
        return cls("one", lambda X, L: np.ones_like(X))

    @classmethod
    def constant(cls, c: float) -> "Functional":
        return cls(f"const({c:g})", lambda X, L: np.full_like(X, c), abs(c))

    @classmethod
    def of_X(cls, g: Callable, bound: float, name: str = "g(X)") -> "Functional":
        return cls(name, lambda X, L: np.clip(g(X), -bound, bound), bound)

    @classmethod
    def of_L(cls, g: Callable, bound: float, name: str = "g(L)") -> "Functional":
        return cls(name, lambda X, L: np.clip(g(L), -bound, bound), bound)

    @classmethod
    def X_below(cls, b: float) -> "Functional":
        return cls(f"1{{X<{b:g}}}", lambda X, L: (X < b).astype(float))

    @classmethod
    def L_below(cls, b: float) -> "Functional":
        return cls(f"1{{L<{b:g}}}", lambda X, L: (L < b).astype(float))

    @classmethod
    def parse(cls, text: str) -> "Functional":
        if text in ("1", "one"):
            return cls.one()
        kind, _, arg = text.partition(":")
        if kind == "const":
            return cls.constant(float(arg))
        if kind == "xlt":
            return cls.X_below(float(arg))
        if kind == "llt":
            return cls.L_below(float(arg))
        raise ValueError(f"unknown functional {text!r}")


# ---------------------------------------------------------------- limit theorems

FAMILIES = ("exp", "hit", "ilt", "ilt_u")


@dataclass
class LimitRow:
    param: float
    estimate: float
    std_error: float
    target: float
    target_se: float
    gap: float
    gap_se: float
    passed: bool


@dataclass
class ConvergenceReport:
    family: str
    rows: list
    monotone: bool
    final_ok: bool
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.monotone and self.final_ok

    def to_csv(self) -> str:
        lines = ["param,estimate,std_error,target,target_se,gap,gap_se,pass"]
        for r in self.rows:
            lines.append(f"{r.param:.10g},{r.estimate:.10g},{r.std_error:.6g},{r.target:.10g},"
                         f"{r.target_se:.6g},{r.gap:.6g},{r.gap_se:.6g},{int(r.passed)}")
        return "\n".join(lines) + "\n"


def _shrinking(gaps, ses, strict: bool) -> bool:
    for i in range(1, len(gaps)):
        if strict:
            if not gaps[i] < gaps[i - 1]:
                return False
        elif gaps[i] > gaps[i - 1] + 3.0 * math.hypot(ses[i], ses[i - 1]):
            return False
    return True


def _ilt_cond(f: Weight, X, L, v, a: float, u: float):
    """E[f(L_t + L') ] where L' is the further local time at 0 until L^a gains u - v, from X."""
    if f.kind != "exponential":
        raise ValueError("the inverse-local-time route needs an exponential weight")
    c, amp = f.c, f.amp
    r = np.maximum(u - v, 0.0)
    p = c + 1.0 / a
    first = np.minimum(X, a) / a * np.exp(-r * c / (1.0 + c * a))
    second = np.maximum(1.0 - X / a, 0.0) / a * np.exp(-r / a + r / (a * a * p)) / p
    return amp * np.exp(-c * L) * (first + second)


def verify_penalization_limit(spec: DiffusionSpec, family: str, f: Weight, t: float,
                              schedule: Sequence[float], x: float = 0.0,
                              functional: Functional | None = None, n: int = 100_000,
                              seed: int = 0, dt: float = 1e-4, u: float = 1.0, a: float = 1.0,
                              beta: float = 1.0, closed_form: bool | None = None,
                              tol: float | None = None) -> ConvergenceReport:
    """Weighted clock expectations along ``schedule`` against the limit martingale.

    family ``exp``: H(q) E_x[F_t f(L_{e_q})], q decreasing, limit E[F_t M^{h0,f}_t].
    family ``hit``: a E_x[F_t f(L_{T_a})], a increasing, limit E[F_t M^{s,f}_t].
    family ``ilt``: a E_x[F_t f(L_{eta^a_u})] at fixed u, a increasing, limit E[F_t M^{s,f}_t].
    family ``ilt_u``: e^{u beta/(1+beta a)} E_x[F_t e^{-beta L_{eta^a_u}}], u increasing,
    limit E[F_t M^{beta,a}_t].

    Monte-Carlo estimates condition on the path up to t and use the closed-form
    law of the remaining local time, which is unbiased for the clock expectation.
    ``closed_form`` (exp family with F = 1) uses the exact law only; ``tol``
    then bounds the final gap.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    sched = [float(s) for s in schedule]
    if len(sched) < 1:
        raise ValueError("empty schedule")
    d = np.diff(sched)
    if family == "exp" and np.any(d >= 0) or family != "exp" and np.any(d <= 0):
        raise ValueError("schedule must be monotone toward the limit")
    F = functional or Functional.one()
    if closed_form is None:
        closed_form = family == "exp" and F.name == "one" and tol is not None
    rows: list[LimitRow] = []

    if closed_form:
        if family != "exp" or F.name != "one":
            raise ValueError("the closed-form route covers the exponential clock with F = 1")
        if tol is None:
            raise ValueError("the closed-form route needs a tolerance")
        target = MartingaleKind("M_h0f", f).at_start(spec, x)
        for q in sched:
            sol = solve_eigen(spec, q)
            est = sol.H * law_exp_clock(spec, sol, f, x)
            gap = abs(est - target)
            rows.append(LimitRow(q, est, 0.0, target, 0.0, gap, 0.0, gap <= tol))
        gaps = [r.gap for r in rows]
        return ConvergenceReport(family, rows, _shrinking(gaps, [0] * len(gaps), True),
                                 rows[-1].passed, f"closed form, tol {tol:g}")

    sim = Simulator(spec, dt=dt)
    if family in ("hit", "ilt"):
        kind = MartingaleKind("M_sf", f)
    elif family == "exp":
        kind = MartingaleKind("M_h0f", f)
    else:
        kind = MartingaleKind("M_beta_a", beta=beta, a=a)
        f = Weight.exponential(beta)
    kind.check_scope(spec)
    for k, par in enumerate(sched):
        sd = seed + 7919 * k
        if family == "exp":
            clock = ClockSpec.exponential(par)
        elif family == "hit":
            clock = ClockSpec.hitting(par)
        elif family == "ilt":
            clock = ClockSpec.inverse_local_time(par, u)
        else:
            clock = ClockSpec.inverse_local_time(a, par)
        pb = sim.run(x, n, [t], kind.levels, sd, clock=clock, clock_stop=t,
                     weight=f if kind.needs_compensator else None)
        i = pb.cp(t)
        X, L = pb.X[:, i], pb.L0[:, i]
        if family == "exp":
            sol = solve_eigen(spec, par)
            hq, rho = _hq_rho(sol, X)
            nq = hq * f(L) + rho * f.laplace_shifted(1.0 / sol.H, L)
            fired = pb.exp_time <= t
            vals = np.where(fired, sol.H * f(np.nan_to_num(pb.exp_L)), math.exp(par * t) * nq)
        elif family == "hit":
            fired = pb.hit_time <= t
            cond = X * f(L) + (1.0 - X / par) * f.laplace_shifted(1.0 / par, L)
            vals = np.where(fired, par * f(np.nan_to_num(pb.hit_L)), cond)
        else:
            ca, cu = clock.a, clock.u
            La = pb.La[:, i, pb.level(ca)]
            norm = ca if family == "ilt" else math.exp(cu * beta / (1.0 + beta * ca))
            fired = pb.ilt_time <= t
            vals = norm * np.where(fired, f(np.nan_to_num(pb.ilt_L)), _ilt_cond(f, X, L, La, ca, cu))
        Ft = F(X, L)
        vals = Ft * vals
        tgt = Ft * kind.evaluate(spec, pb, t)
        ok = (pb.status == K.ST_OK) & np.isfinite(vals) & np.isfinite(tgt)
        if np.sum(~ok) > 1e-3 * n:
            raise RuntimeError(f"{np.sum(~ok)} of {n} paths failed")
        e = MCEstimate.from_values(vals[ok], sd)
        g = MCEstimate.from_values(tgt[ok], sd)
        gap = abs(e.mean - g.mean)
        gse = math.hypot(e.std_error, g.std_error)
        rows.append(LimitRow(par, e.mean, e.std_error, g.mean, g.std_error, gap, gse, gap <= 3.0 * gse))
    gaps = [r.gap for r in rows]
    ses = [r.gap_se for r in rows]
    return ConvergenceReport(family, rows, _shrinking(gaps, ses, False), rows[-1].passed,
                             "conditional Monte Carlo at t")


def _hq_rho(sol, X):
    """h_q and rho on an array; beyond the solved range rho is negligible."""
    X = np.asarray(X, dtype=float)
    inside = X <= sol.R
    rho = np.zeros_like(X)
    rho[inside] = sol.rho_at(X[inside])
    return sol.H * (1.0 - rho), rho


# ---------------------------------------------------------------- total local time

@dataclass
class TotalLocalTimeSample:
    L: np.ndarray
    ess: float
    pool: int


def penalized_total_local_time(spec: DiffusionSpec, f: Weight, n: int, seed: int,
                               horizon: float = 4.0, x: float = 0.0, pool_factor: int = 10,
                               dt: float = 1e-4) -> TotalLocalTimeSample:
    """Samples of L_inf under the M^{s,f}-weighted measure.

    A pool of plain paths is run to ``horizon`` and resampled with weights M^{s,f}_T;
    each draw is then completed from its conditional law given F_T, which keeps
    L_inf = L_T with probability X_T f(L_T) / M_T (the path never returns to 0) and
    otherwise adds an independent overshoot with density f(L_T + .) on (0, inf).
    Only l = inf is handled.
    """
    if math.isfinite(spec.ell):
        raise ScopeError("total local time sampling is implemented for l = inf")
    m = n * pool_factor
    pb = Simulator(spec, dt=dt).run(x, m, [horizon], (), seed)
    ok = pb.status == K.ST_OK
    X, L = pb.X[ok, 0], pb.L0[ok, 0]
    w = eval_M_sf(spec, f, X, L)
    ess = float(w.sum() ** 2 / np.sum(w ** 2))
    rng = np.random.Generator(np.random.Philox(key=seed))
    idx = rng.choice(len(w), size=n, p=w / w.sum())
    Xs, Ls, ws = X[idx], L[idx], w[idx]
    stay = rng.random(n) < Xs * f(Ls) / ws
    extra = _overshoot(f, Ls, rng)
    return TotalLocalTimeSample(np.where(stay, Ls, Ls + extra), ess, int(ok.sum()))


def _overshoot(f: Weight, L: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draws from the density f(L + .) / int_L^inf f on (0, inf), one per entry of L."""
    if f.kind == "exponential":
        return rng.exponential(1.0 / f.c, len(L))
    u = rng.random(len(L))
    tail0 = np.asarray(f.tail_integral(L))
    target = tail0 * (1.0 - u)
    # invert the tail integral by bisection on each entry
    lo = np.zeros_like(L)
    hi = np.ones_like(L)
    while True:
        more = np.asarray(f.tail_integral(L + hi)) > target
        if not more.any():
            break
        hi = np.where(more, 2.0 * hi, hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = np.asarray(f.tail_integral(L + mid)) > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)
