"""Exponential-weight penalization as a new diffusion, and the path decomposition
of the M^{s,f}-weighted reflected Brownian motion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .eigen import _GL_W, _GL_X, EigenSolution, _bracket_and_rho, _cells, volterra_solve
from .laws import ClockSpec, Weight
from .martingales import eval_M_sf, h0_fast
from .measure import BoundaryClass, Chart, DiffusionSpec, SpeedMeasure, build_spec, builtin_measure, h0
from .pathsim import K, MCEstimate, Path, Simulator

MIN_C = 1e-6
MIN_ESS = 500


class DecompositionError(ValueError):
    pass


# ---------------------------------------------------------------- h-transform

@dataclass(frozen=True)
class HTransformKind:
    """h in {h0, s} with exponential rate c; h^c = h + (1 - x/l)/(c + 1/l)."""

    h: str
    c: float

    def __post_init__(self):
        if self.h not in ("h0", "s"):
            raise ValueError("h must be 'h0' or 's'")
        if not self.c >= MIN_C:
            raise ValueError(f"c must be at least {MIN_C:g}: h^c(0) = 1/(c + 1/l) degenerates")

    def base(self, spec: DiffusionSpec, x):
        x = np.asarray(x, dtype=float)
        return h0_fast(spec, x) if self.h == "h0" else x

    def hc(self, spec: DiffusionSpec, x):
        x = np.asarray(x, dtype=float)
        lam = 0.0 if math.isinf(spec.ell) else 1.0 / spec.ell
        out = self.base(spec, x) + (1.0 - x * lam) / (self.c + lam)
        return out if out.ndim else float(out)

    def hc0(self, spec: DiffusionSpec) -> float:
        lam = 0.0 if math.isinf(spec.ell) else 1.0 / spec.ell
        return 1.0 / (self.c + lam)


class _XMap:
    """Position x(t) at arbitrary chart points: node values plus a Gauss rule inside each cell."""

    def __init__(self, chart: Chart, t_nodes: np.ndarray):
        self.chart = chart
        self.t = np.asarray(t_nodes, dtype=float)
        if chart._x is None:
            self.x = _cells(chart, self.t).x

    def __call__(self, t):
        ch = self.chart
        t = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            if ch._x is not None:
                return np.asarray(ch.x(t), dtype=float)
            j = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 1)
            t0 = self.t[j]
            sub = (t - t0)[..., None]
            ts = t0[..., None] + 0.5 * sub * (1.0 + _GL_X)
            return self.x[j] + np.sum(0.5 * sub * _GL_W * ch.dxdt(ts), axis=-1)


@dataclass
class TransformedSpec:
    """Speed measure h^c(y)^2 m(dy), scale int dy/h^c(y)^2 and killing pi0/h^c."""

    spec: DiffusionSpec
    kind: HTransformKind
    sol: EigenSolution | None = None
    _xmap: _XMap | None = field(default=None, repr=False)
    _chart: Chart | None = field(default=None, repr=False)

    def __post_init__(self):
        ch = self.spec.measure.chart
        if self.spec.measure.atoms:
            raise ValueError("the exponential-weight transform is implemented for atomless measures")
        if self.sol is not None:
            x = _cells(ch, self.sol.t).x
            if len(x) != len(self.sol.grid) or not np.allclose(x, self.sol.grid, rtol=1e-9, atol=1e-12):
                raise ValueError("grid misalignment: eigen solution was not computed for this spec")
            bounded = self.kind.h == "h0" and self.spec.pi0 > 0
            t_nodes = _extend(self.sol.t, ch, 1e300 if bounded else 1e120)
        else:
            t_nodes = np.linspace(0.0, min(ch.t_end, 64.0 * ch.t_scale), 4097)
        self._t = t_nodes
        self._xmap = _XMap(ch, t_nodes)
        self._h0_tab = None
        m = self.spec.measure
        if self.kind.h == "h0" and self.spec.pi0 > 0 and m.name != "exp_decay":
            # h0 = pi0 (x m((x, inf)) + int_0^x y dm) with both pieces accumulated in t
            c = _cells(ch, t_nodes)
            with np.errstate(all="ignore"):
                cm = c.b_w.sum(axis=1)
                cy = (c.xg * c.b_w).sum(axis=1)
            tN = t_nodes[-1]
            tail = integrate.quad(lambda s: float(ch.dmdt(s)), tN, ch.t_end, limit=400)[0] if tN < ch.t_end else 0.0
            mtail = tail + np.concatenate([np.cumsum(cm[::-1])[::-1], [0.0]])
            ycum = np.concatenate([[0.0], np.cumsum(cy)])
            self._h0_tab = (mtail, ycum)

    @property
    def hc0(self) -> float:
        return self.kind.hc0(self.spec)

    def hc(self, x):
        return self.kind.hc(self.spec, x)

    def _h0_t(self, t):
        x = np.maximum(self._xmap(t), 0.0)
        if self._h0_tab is None:
            return np.asarray(h0(self.spec, x)) if self.spec.pi0 > 0 else x
        ch = self.spec.measure.chart
        mtail, ycum = self._h0_tab
        j = np.clip(np.searchsorted(self._t, t, side="right") - 1, 0, len(self._t) - 1)
        t0 = self._t[j]
        sub = (t - t0)[..., None]
        ts = t0[..., None] + 0.5 * sub * (1.0 + _GL_X)
        w = 0.5 * sub * _GL_W
        with np.errstate(all="ignore"):
            dm = w * ch.dmdt(ts)
            dy = np.sum(dm * self._xmap(ts), axis=-1)
        dmass = np.sum(dm, axis=-1)
        return self.spec.pi0 * (x * (mtail[j] - dmass) + ycum[j] + dy)

    def hc_t(self, t):
        """h^c at chart points t; avoids the x -> t inversion and stays accurate on wide grids."""
        t = np.asarray(t, dtype=float)
        lam = 0.0 if math.isinf(self.spec.ell) else 1.0 / self.spec.ell
        x = np.maximum(self._xmap(t), 0.0)
        base = self._h0_t(t) if self.kind.h == "h0" else x
        return base + (1.0 - x * lam) / (self.kind.c + lam)

    def m_density(self, x):
        """Density of m^{h,c} with respect to dx: h^c(x)^2 m'(x)."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.hc(x)) ** 2 * self.spec.measure.density(x)
        return out if out.ndim else float(out)

    def m_hc(self, x: float) -> float:
        """m^{h,c}((0, x])."""
        if x <= 0:
            return 0.0
        t = float(self.spec.measure.chart.t_of_x(x))
        return self.chart.mass(t)

    def s_hc(self, x):
        """int_0^x dy / h^c(y)^2."""
        x = np.asarray(x, dtype=float)
        if self.kind.h == "s" and math.isinf(self.spec.ell):
            # h^c = y + 1/c
            c = self.kind.c
            out = c - 1.0 / (x + 1.0 / c)
        else:
            out = np.array([integrate.quad(lambda y: 1.0 / self.hc(y) ** 2, 0.0, v,
                                           epsabs=1e-13, epsrel=1e-12, limit=200)[0]
                            for v in np.atleast_1d(x)]).reshape(x.shape)
        return out if out.ndim else float(out)

    def killing_rate(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind.h == "s" or self.spec.pi0 == 0.0:
            out = np.zeros_like(x)
        else:
            out = self.spec.pi0 / np.asarray(self.hc(x))
        return out if out.ndim else float(out)

    @property
    def chart(self) -> Chart:
        """Chart in the original coordinate t for the transformed scale and speed."""
        if self._chart is None:
            ch = self.spec.measure.chart

            def hc2(t):
                return self.hc_t(t) ** 2

            self._chart = Chart(dxdt=lambda t: ch.dxdt(t) / hc2(t), dmdt=lambda t: ch.dmdt(t) * hc2(t),
                                t_end=ch.t_end, t_scale=ch.t_scale)
        return self._chart

    def speed_measure(self) -> SpeedMeasure:
        """m^{h,c} as a SpeedMeasure on the transformed scale s^{h,c}."""
        ch = self.chart
        sp = self.spec.measure
        if math.isfinite(sp.ell_prime):
            s_end = float(self.s_hc(sp.ell_prime))
        elif self.kind.h == "s" and math.isinf(sp.ell):
            s_end = self.kind.c
        else:
            s_end = math.inf

        def dens(z):
            t = np.asarray(ch.t_of_x(z), dtype=float)
            return np.asarray(ch.dmdt(t)) / np.asarray(ch.dxdt(t))

        return SpeedMeasure(dens, (), s_end, s_end, f"{sp.name}^({self.kind.h},c={self.kind.c:g})", (), ch)

    # eigenfunctions by direct division
    def _need_sol(self) -> EigenSolution:
        if self.sol is None:
            raise ValueError("no eigen solution attached; use transform_spec(spec, kind, sol)")
        return self.sol

    def phi_hc(self, x):
        sol = self._need_sol()
        out = self.hc0 * (sol.phi_at(x) + self.kind.c * sol.psi_at(x)) / np.asarray(self.hc(x))
        return out if np.ndim(out) else float(out)

    def rho_hc(self, x):
        sol = self._need_sol()
        out = self.hc0 * sol.rho_at(x) / np.asarray(self.hc(x))
        return out if np.ndim(out) else float(out)

    @property
    def H_hc(self) -> float:
        """int_0^inf (phi^{h,c})^-2 ds^{h,c} = H / (h^c(0)^2 (cH + 1))."""
        H = self._need_sol().H
        return H / (self.hc0 ** 2 * (self.kind.c * H + 1.0))

    def grid_values(self):
        """(x, phi^{h,c}, rho^{h,c}) at the eigen grid nodes by direct division."""
        sol = self._need_sol()
        hcg = self.hc_t(sol.t)
        return (sol.grid, self.hc0 * (sol.phi + self.kind.c * sol.psi) / hcg,
                self.hc0 * sol.rho / hcg)

    def solve_transformed(self):
        """(x, phi, rho, H) from the transformed generator, killing term included.

        Solved on the eigen grid continued beyond its end, so that the decreasing
        solution is insensitive to the truncation; values are returned on the eigen grid.
        """
        sol = self._need_sol()
        t = self._t
        c = _cells(self.chart, t)
        tg = _gauss_t(t)
        kill = self.spec.pi0 / self.hc_t(tg) if self.kind.h == "h0" else 0.0
        mu = (sol.q + kill) * c.b_w
        zero = np.zeros(len(t))
        phi, vpp, vpm, _ = volterra_solve(c, mu, zero, 1.0, 0.0)
        psi, vsp, _, _ = volterra_solve(c, mu, zero, 0.0, 1.0)
        if self.transformed_end_absorbing:
            # regular or exit end at finite transformed scale: the h-transform dies there,
            # so rho vanishes at the end
            gap = self.s_end - c.x[-1]
            # int_R^end phi^-2 for phi linear in scale past R
            tail = gap / (phi[-1] * (phi[-1] + vpp[-1] * gap))
            H, _, rho, _, _ = _bracket_and_rho(c, phi, vpp, vpm, psi, vsp, "limit", tail=tail)
        else:
            # psi'/phi' at the end: exact for asymptotically linear phi, negligibly off
            # when phi grows fast
            H, _, rho, _, _ = _bracket_and_rho(c, phi, vpp, vpm, psi, vsp, "limit", upper=True)
        n = len(sol.t)
        # nodes where the transformed scale is still resolved in double precision
        with np.errstate(all="ignore"):
            ok = np.concatenate([[True], c.dx[: n - 1] > 1e-10 * np.abs(c.x[1:n])])
        ok = np.logical_and.accumulate(ok)
        return TransformedSolution(sol.grid, phi[:n], rho[:n], H, ok)

    @property
    def transformed_end_absorbing(self) -> bool:
        """True when the right end sits at finite transformed scale with int m^{h,c} ds^{h,c} finite.

        With h^c ~ x this integral equals int y dm(y) up to constants, so it happens
        exactly for an entrance boundary of the original process.
        """
        linear = self.kind.h == "s" or self.spec.pi0 == 0.0
        return (linear and math.isinf(self.spec.ell)
                and self.spec.boundary_class == BoundaryClass.ENTRANCE)

    @property
    def s_end(self) -> float:
        """s^{h,c} at the right end."""
        if self.kind.h == "s" and math.isinf(self.spec.ell):
            return self.kind.c
        ch = self.chart
        t = self._t
        head = float(np.sum(_cells(ch, t).a_w))
        tail = 0.0
        if t[-1] < ch.t_end:
            tail = integrate.quad(lambda v: float(ch.dxdt(v)), t[-1], ch.t_end, limit=400)[0]
        return head + tail

    def route_gap(self, floor: float = 1e-12, exclude_tail: int = 64) -> tuple[float, float]:
        """Largest differences (phi, rho) between direct division and the transformed solve.

        Relative, with an absolute floor against the normalization at 0 (both are 1 there).
        The last ``exclude_tail`` eigen nodes are left out: rho there carries the
        truncation of the eigen grid, whose tail estimate is only asymptotically exact.
        """
        x, phi, rho = self.grid_values()
        ts = self.solve_transformed()
        m = ts.resolved.copy()
        m[max(len(m) - exclude_tail, 1):] = False
        gp = np.abs(ts.phi[m] - phi[m]) / np.maximum(np.abs(phi[m]), floor)
        gr = np.abs(ts.rho[m] - rho[m]) / np.maximum(np.abs(rho[m]), floor)
        return float(np.max(gp)), float(np.max(gr))


@dataclass
class TransformedSolution:
    grid: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    H: float
    resolved: np.ndarray


def _extend(t: np.ndarray, chart: Chart, x_cap: float, n: int = 1024) -> np.ndarray:
    tN, t_end = t[-1], chart.t_end
    if tN >= t_end:
        return t
    if math.isinf(t_end):
        ext = np.geomspace(tN, 2.0 * tN, n + 1)[1:]
    else:
        d = t_end - tN
        ext = t_end - np.geomspace(d, d * 1e-3, n + 1)[1:]
    # stop before h^c squared or the scale itself overflows
    with np.errstate(all="ignore"):
        x = _cells(chart, np.concatenate([t, ext])).x[len(t):]
    ok = np.logical_and.accumulate(np.isfinite(x) & (x < x_cap))
    return np.concatenate([t, ext[ok]])


def _gauss_t(t):
    h = np.diff(t)
    return t[:-1, None] + 0.5 * h[:, None] * (1.0 + _GL_X[None, :])


def transform_spec(spec: DiffusionSpec, kind: HTransformKind, sol: EigenSolution | None = None
                   ) -> TransformedSpec:
    if kind.h == "s" and spec.boundary_class.value in ("regular-reflecting", "regular-absorbing",
                                                       "regular-elastic", "exit"):
        raise ValueError("h = s needs an entrance or natural boundary")
    return TransformedSpec(spec, kind, sol)


def resolvent_hc(ts: TransformedSpec, q: float, x: float, y: float) -> float:
    """H/(h^c(0)^2 (cH + 1)) phi^{h,c}(x ^ y) rho^{h,c}(x v y)."""
    sol = ts._need_sol()
    if abs(sol.q - q) > 1e-14 * q:
        raise ValueError("eigen solution was computed at a different q")
    H = sol.H
    lo, hi = min(x, y), max(x, y)
    return float(H / (ts.hc0 ** 2 * (ts.kind.c * H + 1.0)) * ts.phi_hc(lo) * ts.rho_hc(hi))


def resolvent_hc_integral(ts: TransformedSpec, q: float, x: float, g: Callable,
                          support: tuple[float, float]) -> float:
    """int r^{h,c}_q(x, y) g(y) dm^{h,c}(y) over the support of g."""
    a, b = support
    pts = [p for p in (x,) if a < p < b]
    fn = lambda y: resolvent_hc(ts, q, x, y) * g(y) * ts.m_density(y)
    return integrate.quad(fn, a, b, points=pts or None, epsabs=1e-12, epsrel=1e-10, limit=200)[0]


def resolvent_hc_mc(ts: TransformedSpec, q: float, x: float, g: Callable, n: int, seed: int,
                    dt: float = 1e-4) -> MCEstimate:
    """E_x[int e^{-qt} g(X_t) h^c(X_t)/h^c(x) e^{-c L_t} dt] through an independent exp(q) time."""
    sim = Simulator(ts.spec, dt=dt)
    pb = sim.run(x, n, (), (), seed, clock=ClockSpec.exponential(q))
    X, L = pb.exp_X, pb.exp_L
    vals = g(X) * np.asarray(ts.hc(X)) / ts.hc(x) * np.exp(-ts.kind.c * L) / q
    ok = pb.status == K.ST_OK
    return MCEstimate.from_values(vals[ok], seed)


# ---------------------------------------------------------------- decomposition

def _require_bm(spec: DiffusionSpec | None):
    if spec is not None and (spec.measure.name != "reflected_bm" or math.isfinite(spec.ell_prime)):
        raise DecompositionError("the path decomposition is implemented for reflected Brownian motion only")


def _sample_weight(f: Weight, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from the density f / int f."""
    if f.kind == "exponential":
        return rng.exponential(1.0 / f.c, n)
    if f.kind == "indicator_at_zero":
        raise DecompositionError("indicator weight has no mass on (0, inf)")
    total = f.integral()
    if not total > 0:
        raise DecompositionError("weight has zero integral")
    k = np.asarray(f.knots)
    hi = k[-1] if f.tail_rate is None else k[-1] + 40.0 / f.tail_rate
    grid = np.union1d(k, np.linspace(0.0, hi, 20001))
    cdf = 1.0 - np.asarray(f.tail_integral(grid)) / total
    return np.interp(rng.random(n), cdf, grid)


def _bessel3(x0: np.ndarray, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """|x0 e1 + sqrt(s) Z| for 3-d standard normal Z: Bessel-3 at time s from x0."""
    z = rng.standard_normal((len(s), 3)) * np.sqrt(s)[:, None]
    z[:, 0] += x0
    return np.linalg.norm(z, axis=1)


def bessel3_from_zero(t: float, n: int, seed: int) -> np.ndarray:
    """n samples of a three-dimensional Bessel process from 0 at time t (the h = s transform of BM)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    return _bessel3(np.zeros(n), np.full(n, float(t)), rng)


@dataclass
class DecompositionSample:
    X: np.ndarray
    L: np.ndarray
    g: np.ndarray           # last zero before t (0 for the direct branch)
    bridge_first: np.ndarray
    post_g_min: np.ndarray  # minimum of the post-g segment on a grid (nan if g >= t)

    @property
    def n(self) -> int:
        return len(self.X)


def decomposition_marginals(x: float, f: Weight, t: float, n: int, seed: int,
                            dt: float = 1e-4, check_grid: int = 32,
                            spec: DiffusionSpec | None = None) -> DecompositionSample:
    """(X_t, L_t) under the f-weighted h-transform measure with h = s, reflected BM.

    With probability x f(0) / M_0 the path is a Bessel-3 process from x (it never
    returns to 0); otherwise L_inf = l has density f / int f, the path runs as
    reflected BM until its local time reaches l and then as Bessel-3 from 0.
    """
    _require_bm(spec)
    if t < 0 or x < 0:
        raise ValueError("need t >= 0 and x >= 0")
    rng = np.random.Generator(np.random.Philox(key=seed))
    total = f.integral()
    m0 = x * f.f0 + total
    if not (m0 > 0 and math.isfinite(m0)):
        raise DecompositionError("weight mixture is not normalizable")
    direct = rng.random(n) < x * f.f0 / m0
    nb = int(np.sum(~direct))
    X = np.empty(n)
    L = np.zeros(n)
    g = np.zeros(n)
    post_min = np.full(n, np.nan)
    nd = int(direct.sum())
    if nd:
        X[direct] = _bessel3(np.full(nd, x), np.full(nd, t), rng)
    if nb:
        ell = _sample_weight(f, nb, rng)
        bm = _bm_spec()
        pb = Simulator(bm, dt=dt).run(x, nb, [t], (), seed, ilt_targets=ell, clock_stop=t)
        eta = pb.ilt_time
        before = ~(eta <= t)
        Xb = np.where(before, pb.X[:, 0], 0.0)
        Lb = np.where(before, pb.L0[:, 0], ell)
        after = ~before
        na = int(after.sum())
        if na:
            rem = t - eta[after]
            Xb[after] = _bessel3(np.zeros(na), rem, rng)
            # coarse post-g paths: Bessel-3 from 0 sampled on a grid, excluding its start
            inc = rng.standard_normal((na, check_grid, 3)) * np.sqrt(rem / check_grid)[:, None, None]
            mins = np.linalg.norm(np.cumsum(inc, axis=1), axis=2).min(axis=1)
            # an event on the last step leaves a zero-length segment with nothing to check
            post_min[np.nonzero(~direct)[0][after]] = np.where(rem > 0, mins, np.nan)
        g[~direct] = np.where(after, eta, 0.0)
        X[~direct], L[~direct] = Xb, Lb
    return DecompositionSample(X, L, g, ~direct, post_min)


@lru_cache(maxsize=1)
def _bm_spec() -> DiffusionSpec:
    return build_spec(builtin_measure("reflected_bm"))


def sample_decomposition(x: float, f: Weight, horizon: float, seed: int, dt: float = 1e-3,
                         spec: DiffusionSpec | None = None) -> tuple[Path, float, bool]:
    """One concatenated path on the grid 0, dt, ..., horizon; returns (path, g, bridge_first)."""
    _require_bm(spec)
    rng = np.random.Generator(np.random.Philox(key=seed))
    n_steps = int(round(horizon / dt))
    times = np.linspace(0.0, n_steps * dt, n_steps + 1)
    m0 = x * f.f0 + f.integral()
    if rng.random() < x * f.f0 / m0:
        inc = rng.standard_normal((n_steps, 3)) * math.sqrt(dt)
        pos = np.vstack([[x, 0.0, 0.0], np.array([x, 0.0, 0.0]) + np.cumsum(inc, axis=0)])
        return Path(times, np.linalg.norm(pos, axis=1), np.zeros(n_steps + 1), {}, seed), 0.0, False
    ell = float(_sample_weight(f, 1, rng)[0])
    pb = Simulator(_bm_spec(), dt=min(dt, 1e-4), jmax=0).run(
        x, 1, times, (), seed, ilt_targets=[ell], clock_stop=horizon)
    eta = float(pb.ilt_time[0])
    X = pb.X[0].copy()
    L = np.minimum(pb.L0[0].copy(), ell)
    if eta <= horizon:
        k0 = int(np.searchsorted(times, eta))
        m = n_steps + 1 - k0
        inc = rng.standard_normal((m, 3)) * math.sqrt(dt)
        inc[0] *= math.sqrt(max(times[k0] - eta, 0.0) / dt)
        X[k0:] = np.linalg.norm(np.cumsum(inc, axis=0), axis=1)
        L[k0:] = ell
    return Path(times, X, L, {}, seed), min(eta, horizon), True


@dataclass
class KSResult:
    statistic: float
    pvalue: float
    n_eff: float


@dataclass
class DecompositionReport:
    t: float
    x: float
    ks_X: KSResult
    ks_L: KSResult
    mean_A: MCEstimate
    mean_B: MCEstimate
    ess: float
    post_g_positive: bool

    @property
    def passed(self) -> bool:
        return (self.ks_X.pvalue > 0.01 and self.ks_L.pvalue > 0.01 and self.post_g_positive
                and abs(self.mean_A.mean - self.mean_B.mean)
                <= 3.0 * math.hypot(self.mean_A.std_error, self.mean_B.std_error))


def weighted_ks(a: np.ndarray, b: np.ndarray, wb: np.ndarray) -> KSResult:
    """Two-sample KS between an unweighted sample and a weighted one (Kish effective size)."""
    wb = np.asarray(wb, dtype=float)
    wb = wb / wb.sum()
    n_eff = 1.0 / np.sum(wb ** 2)
    grid = np.union1d(a, b)
    fa = np.searchsorted(np.sort(a), grid, side="right") / len(a)
    order = np.argsort(b)
    cw = np.concatenate([[0.0], np.cumsum(wb[order])])
    fb = cw[np.searchsorted(b[order], grid, side="right")]
    d = float(np.max(np.abs(fa - fb)))
    en = math.sqrt(len(a) * n_eff / (len(a) + n_eff))
    return KSResult(d, float(stats.kstwobign.sf(en * d)), float(n_eff))


def compare_decomposition_vs_reweighting(t: float, f: Weight, n: int, seed: int, x: float = 0.5,
                                         dt: float = 1e-4, spec: DiffusionSpec | None = None
                                         ) -> DecompositionReport:
    """KS distance between the decomposition sampler and M^{s,f}-reweighted reflected BM."""
    _require_bm(spec)
    A = decomposition_marginals(x, f, t, n, seed, dt)
    bm = _bm_spec()
    pb = Simulator(bm, dt=dt).run(x, n, [t], (), seed + 1_000_003)
    XB, LB = pb.X[:, 0], pb.L0[:, 0]
    w = eval_M_sf(bm, f, XB, LB)
    ess = float(w.sum() ** 2 / np.sum(w ** 2))
    if ess < MIN_ESS:
        raise DecompositionError(f"effective sample size {ess:.0f} below {MIN_ESS}")
    m0 = x * f.f0 + f.integral()
    meanA = MCEstimate.from_values(A.X, seed)
    wv = w / m0 * XB
    meanB = MCEstimate.from_values(wv, seed + 1_000_003)
    pos = A.post_g_min[np.isfinite(A.post_g_min)]
    return DecompositionReport(t, x, weighted_ks(A.X, XB, w), weighted_ks(A.L, LB, w),
                               meanA, meanB, ess, bool(np.all(pos > 0)))
