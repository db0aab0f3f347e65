"""Path simulation with local-time tracking, clock sampling and Monte-Carlo means.

The natural-scale diffusion dX = sqrt(2/m'(X)) dW is simulated in the
coordinate Y = F(X), F' = sqrt(m'/2), where it has unit diffusion and drift
(1/4) d/dy log m'.  Reflection at 0 is by folding.  Local time at a level is
taken from the Brownian-bridge law of each step (exact for Brownian motion),
or optionally from the occupation time of a band of half-width eps0*sqrt(dt).
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .laws import ClockSpec, Weight
from .measure import DiffusionSpec, MeasureError

DEFAULT_DT = 1e-4
HORIZON_CAP_FACTOR = 2 ** 12
MAX_ERROR_FRACTION = 1e-3
_TABLE_POINTS = 2 ** 16 + 1
_Y_SPAN = 40.0
_B_MAX = 1e4
_BATCH_FLOATS = 4_000_000


class SimulationError(RuntimeError):
    pass


class ClockBudgetError(SimulationError):
    """A clock did not fire before the horizon budget ran out."""


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("GENDIFF_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- model tables

@dataclass
class SimModel:
    spec: DiffusionSpec
    code: int                      # 0 Brownian, 1 tabulated drift
    b_tab: np.ndarray
    inv_dy: float
    y_end: float
    top_mode: int
    ell_tr: np.ndarray
    y_grid: np.ndarray | None = None
    x_grid: np.ndarray | None = None
    fac_grid: np.ndarray | None = None
    fac0: float = 0.5

    def y_of_x(self, x):
        if self.code == 0:
            return np.asarray(x, dtype=float)
        return np.interp(x, self.x_grid, self.y_grid)

    def x_of_y(self, y):
        if self.code == 0:
            return np.asarray(y, dtype=float)
        return np.interp(y, self.y_grid, self.x_grid)

    def lt_factor(self, x):
        """1/sqrt(2 m'(x)): converts semimartingale local time of Y into the dm-normalized one."""
        if self.code == 0:
            return np.full_like(np.asarray(x, dtype=float), 0.5)
        return np.interp(x, self.x_grid, self.fac_grid)


def _chart_arrays(spec: DiffusionSpec, ts: np.ndarray):
    ch = spec.measure.chart
    with np.errstate(all="ignore"):
        dxdt = np.asarray(ch.dxdt(ts), dtype=float)
        dmdt = np.asarray(ch.dmdt(ts), dtype=float)
    return dxdt, dmdt


def _grid(t_hi: float, n: int = 2 ** 17) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n)
    return t_hi * s * s


def _y_of_t(spec, ts):
    mid = 0.5 * (ts[1:] + ts[:-1])
    dxdt, dmdt = _chart_arrays(spec, mid)
    g = np.sqrt(0.5 * dxdt * dmdt)
    return np.concatenate([[0.0], np.cumsum(g * np.diff(ts))])


def _x_of_t(spec, ts):
    ch = spec.measure.chart
    if ch._x is not None:
        with np.errstate(all="ignore"):
            return np.asarray(ch.x(ts), dtype=float)
    mid = 0.5 * (ts[1:] + ts[:-1])
    dxdt, _ = _chart_arrays(spec, mid)
    return np.concatenate([[0.0], np.cumsum(dxdt * np.diff(ts))])


def build_model(spec: DiffusionSpec, x_need: float = 1.0) -> SimModel:
    """Simulation tables for ``spec``, valid at least up to position ``x_need``."""
    m = spec.measure
    if m.atoms:
        raise MeasureError("speed measures with atoms (sticky points) are not simulated")
    if m.ell_prime < m.ell and math.isfinite(m.ell):
        raise MeasureError("elastic boundary at l' < l < inf is not simulated")
    reflect_top = m.ell_prime < m.ell
    if m.name == "reflected_bm":
        y_end = m.ell_prime if reflect_top else math.inf
        return SimModel(spec, 0, np.zeros(2), 1.0, y_end,
                        K.TOP_REFLECT if reflect_top else K.TOP_NONE, np.array([math.inf, 0.0]))
    ch = m.chart
    if reflect_top:
        ts = _grid(ch.t_end)
        ys = _y_of_t(spec, ts)
        if not np.isfinite(ys[-1]):
            raise MeasureError("upper boundary is not reachable in finite scale")
    else:
        t_hi = ch.t_scale
        while True:
            if math.isfinite(ch.t_end):
                t_hi = min(t_hi, ch.t_end * (1 - 1e-12))
            ts = _grid(t_hi)
            ys = _y_of_t(spec, ts)
            xs = _x_of_t(spec, ts)
            ok = np.isfinite(ys) & np.isfinite(xs)
            y_need = float(np.interp(x_need, xs[ok], ys[ok])) + _Y_SPAN
            if not ok.all() or ys[-1] >= y_need or t_hi > 1e6 * ch.t_scale:
                break
            if math.isfinite(ch.t_end):
                t_hi = ch.t_end - 0.5 * (ch.t_end - t_hi)
                if ch.t_end - t_hi < 1e-12 * ch.t_end:
                    break
            else:
                t_hi *= 2.0
    xs = _x_of_t(spec, ts)
    dxdt, dmdt = _chart_arrays(spec, ts)
    with np.errstate(all="ignore"):
        logm = np.log(dmdt) - np.log(dxdt)
        dlog = np.gradient(logm, ts)
        dydt = np.sqrt(0.5 * dxdt * dmdt)
        b = 0.25 * dlog / dydt
        fac = np.sqrt(dxdt / (2.0 * dmdt))
    good = np.isfinite(b) & np.isfinite(ys) & np.isfinite(xs) & (np.abs(b) < _B_MAX)
    good[0] = True
    b[0] = b[1] if not np.isfinite(b[0]) else b[0]
    bad = np.nonzero(~good)[0]
    stop = bad[0] if len(bad) else len(ts)
    ts, ys, xs, b, fac = ts[:stop], ys[:stop], xs[:stop], b[:stop], fac[:stop]
    y_grid = np.linspace(0.0, ys[-1], _TABLE_POINTS)
    b_y = np.interp(y_grid, ys, b)
    x_y = np.interp(y_grid, ys, xs)
    fac_y = np.interp(y_grid, ys, np.where(np.isfinite(fac), fac, 0.0))
    fac0 = float(fac[0]) if np.isfinite(fac[0]) and fac[0] > 0 else math.nan
    if reflect_top:
        top, ell_tr = K.TOP_REFLECT, np.array([math.inf, 0.0])
    elif math.isfinite(m.ell):
        top = K.TOP_ESCAPE
        ell_tr = np.array([m.ell, max(0.0, 1.0 - x_y[-1] / m.ell)])
    else:
        top, ell_tr = K.TOP_NONE, np.array([math.inf, 0.0])
    return SimModel(spec, 1, b_y, (len(y_grid) - 1) / y_grid[-1], float(y_grid[-1]), top, ell_tr,
                    y_grid, x_y, fac_y, fac0)


# ---------------------------------------------------------------- results

@dataclass(frozen=True)
class Path:
    """One simulated path on a regular time grid."""

    times: np.ndarray
    positions: np.ndarray
    lt_zero: np.ndarray
    lt_levels: dict
    seed: int

    def __post_init__(self):
        for a in (self.times, self.positions, self.lt_zero, *self.lt_levels.values()):
            a.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_samples: int
    seed: int

    @classmethod
    def from_values(cls, values, seed: int) -> "MCEstimate":
        v = np.asarray(values, dtype=float)
        n = len(v)
        if n < 2:
            raise ValueError("need at least two samples")
        return cls(float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(n)), n, seed)

    def gap_ok(self, target: float, k: float = 3.0, extra_se: float = 0.0) -> bool:
        return abs(self.mean - target) <= k * math.hypot(self.std_error, extra_se)


@dataclass
class PathBatch:
    """States of n paths at the checkpoints plus clock and event records."""

    checkpoints: np.ndarray
    levels: np.ndarray
    x0: np.ndarray
    X: np.ndarray           # (n, m)
    L0: np.ndarray          # (n, m)
    La: np.ndarray          # (n, m, k)
    comp: np.ndarray        # (n, m) running int_0^t f(L_u) du
    T0: np.ndarray
    disc_lt: np.ndarray     # int_0^horizon e^{-q t} dL_t
    exp_time: np.ndarray
    exp_L: np.ndarray
    exp_X: np.ndarray
    hit_time: np.ndarray
    hit_L: np.ndarray
    ilt_time: np.ndarray
    ilt_L: np.ndarray
    lt_tail: np.ndarray     # extra local time after escaping a transient spec
    status: np.ndarray
    seed: int
    offset: int = 0

    @property
    def n(self) -> int:
        return len(self.x0)

    def cp(self, t: float) -> int:
        i = int(np.searchsorted(self.checkpoints, t - 1e-12))
        if i >= len(self.checkpoints) or abs(self.checkpoints[i] - t) > 1e-9:
            raise KeyError(f"time {t} is not a checkpoint")
        return i

    def level(self, a: float) -> int:
        idx = np.nonzero(np.abs(self.levels - a) <= 1e-12 * max(1.0, a))[0]
        if len(idx) == 0:
            raise KeyError(f"level {a} is not tracked")
        return int(idx[0])

    def ok(self) -> np.ndarray:
        return self.status == K.ST_OK


@dataclass
class Simulator:
    """Batch simulator for a spec; all randomness is keyed by (seed, path index)."""

    spec: DiffusionSpec
    dt: float = DEFAULT_DT
    band: bool = False
    eps0: float = 1.0
    jmax: int | None = None
    threads: int | None = None
    cap_factor: int = HORIZON_CAP_FACTOR
    localize: bool = False
    loc_steps: int = 16
    _model: SimModel | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.threads is None:
            self.threads = default_threads()

    def model(self, x_need: float) -> SimModel:
        if self._model is None or (self._model.code == 1 and self._model.x_grid[-1] < x_need
                                   and self._model.top_mode == K.TOP_NONE):
            self._model = build_model(self.spec, x_need)
        return self._model

    def run(self, x0, n: int, checkpoints: Sequence[float] = (), levels: Sequence[float] = (),
            seed: int = 0, clock: ClockSpec | None = None, weight: Weight | None = None,
            q_disc: float = 0.0, ilt_targets=None, offset: int = 0,
            horizon: float | None = None, clock_stop: float = math.inf) -> PathBatch:
        """Simulate paths ``offset .. offset+n-1``; ``x0`` scalar or length-n array."""
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n,)).copy()
        if np.any(x0 < 0):
            raise ValueError("x0 must be nonnegative")
        if math.isfinite(self.spec.ell) and np.any(x0 >= self.spec.ell):
            raise ValueError("x0 must lie below l")
        cps = np.asarray(sorted(checkpoints), dtype=float)
        levels = list(map(float, levels))
        hit_idx, ilt_idx, exp_q = -1, -2, 0.0
        ilt_u = np.full(n, np.nan)
        if clock is not None:
            if clock.kind == "exponential":
                exp_q = clock.q
            elif clock.kind == "hitting":
                if clock.a not in levels:
                    levels.append(clock.a)
                hit_idx = levels.index(clock.a)
            else:
                if clock.a == 0:
                    ilt_idx = -1
                else:
                    if clock.a not in levels:
                        levels.append(clock.a)
                    ilt_idx = levels.index(clock.a)
                    hit_idx = ilt_idx   # T_a is recorded alongside for the ordering check
                ilt_u[:] = clock.u
        if ilt_targets is not None:
            ilt_idx = -1 if ilt_idx == -2 else ilt_idx
            ilt_u = np.broadcast_to(np.asarray(ilt_targets, dtype=float), (n,)).copy()
        lev = np.asarray(levels, dtype=float)
        x_need = max([float(x0.max()) if n else 0.0, *levels, 1.0])
        mdl = self.model(x_need)
        band = self.band
        fac0 = mdl.fac0
        if not band and not (math.isfinite(fac0) and fac0 > 0):
            warnings.warn("density degenerates at 0: using the occupation-band estimator", RuntimeWarning)
            band = True
        lev_y = mdl.y_of_x(lev) if len(lev) else np.zeros(0)
        lev_fac = mdl.lt_factor(lev) if len(lev) else np.zeros(0)
        eps = self.eps0 * math.sqrt(self.dt)
        b0_hi, b0_mass = 0.0, 1.0
        lev_lo = np.zeros(len(lev))
        lev_hi = np.zeros(len(lev))
        lev_mass = np.ones(len(lev))
        if band:
            meas = self.spec.measure
            b0_hi = float(mdl.y_of_x(eps))
            b0_mass = meas.mass(eps)
            for i, a in enumerate(lev):
                lo, hi = max(a - eps, 0.0), a + eps
                lev_lo[i], lev_hi[i] = mdl.y_of_x(lo), mdl.y_of_x(hi)
                lev_mass[i] = meas.mass(hi) - meas.mass(lo)
        jmax = self.jmax if self.jmax is not None else (10 if mdl.code == 0 else 3)
        base = horizon if horizon is not None else (cps[-1] if len(cps) else 1.0)
        if clock is not None:
            base = max(base, clock_time_scale(clock))
        t_cap = max(base, self.dt) * self.cap_factor
        t_run = float(horizon) if horizon is not None else 0.0
        # time placement of local-time increments matters for these outputs
        localize = bool(q_disc > 0 or weight is not None or hit_idx >= 0 or ilt_idx >= -1
                        or self.localize)
        loc_h = self.loc_steps * self.dt if localize else math.inf
        f = weight or Weight.exponential(1.0)
        fk = {"exponential": 0, "indicator_at_zero": 1, "tabulated": 2}[f.kind]
        fkn = np.asarray(f.knots if f.kind == "tabulated" else (0.0, 1.0), dtype=float)
        fvl = np.asarray(f.values if f.kind == "tabulated" else (0.0, 0.0), dtype=float)
        ftail = f.tail_rate or 0.0
        y0 = mdl.y_of_x(x0)

        m, k = len(cps), len(lev)
        per_path = max(1, m * (3 + k))
        bs = int(min(8192, max(256, _BATCH_FLOATS // per_path)))
        out = dict(
            X=np.full((n, m), np.nan), L0=np.full((n, m), np.nan), La=np.full((n, m, k), np.nan),
            comp=np.full((n, m), np.nan), T0=np.full(n, np.inf), disc=np.zeros(n),
            exp_t=np.full(n, np.nan), exp_l=np.full(n, np.nan), exp_y=np.full(n, np.nan), hit_t=np.full(n, np.inf),
            hit_l=np.full(n, np.nan), ilt_t=np.full(n, np.inf), ilt_l=np.full(n, np.nan),
            tail=np.zeros(n), status=np.zeros(n, dtype=np.int64))

        def job(lo):
            hi = min(n, lo + bs)
            s = slice(lo, hi)
            K.run_paths(mdl.code, mdl.b_tab, mdl.inv_dy, mdl.y_end, mdl.top_mode, mdl.ell_tr,
                        y0[s], np.uint64(seed), np.uint64(offset + lo), self.dt, jmax,
                        cps, lev_y, lev_fac, fac0 if not band else 0.0,
                        band, b0_hi, b0_mass, lev_lo, lev_hi, lev_mass,
                        q_disc, exp_q, clock_stop, hit_idx, ilt_idx, ilt_u[s], loc_h,
                        fk, f.c, f.amp, fkn, fvl, ftail, t_cap, t_run,
                        out["X"][s], out["L0"][s], out["La"][s], out["comp"][s],
                        out["T0"][s], out["disc"][s], out["exp_t"][s], out["exp_l"][s], out["exp_y"][s],
                        out["hit_t"][s], out["hit_l"][s], out["ilt_t"][s], out["ilt_l"][s],
                        out["tail"][s], out["status"][s])

        starts = range(0, n, bs)
        if self.threads > 1 and n > bs:
            with ThreadPoolExecutor(self.threads) as ex:
                list(ex.map(job, starts))
        else:
            for lo in starts:
                job(lo)
        X = mdl.x_of_y(out["X"]) if mdl.code else out["X"]
        return PathBatch(cps, lev, x0, X, out["L0"], out["La"], out["comp"], out["T0"],
                         out["disc"], out["exp_t"], out["exp_l"],
                         mdl.x_of_y(out["exp_y"]) if mdl.code else out["exp_y"], out["hit_t"], out["hit_l"],
                         out["ilt_t"], out["ilt_l"], out["tail"], out["status"], seed, offset)


def clock_time_scale(clock: ClockSpec) -> float:
    """Initial horizon for a clock; the budget is HORIZON_CAP_FACTOR times this."""
    if clock.kind == "exponential":
        return 1.0 / clock.q
    if clock.kind == "hitting":
        return clock.a ** 2
    return (clock.a + 2.0 * clock.u) ** 2


def simulate(spec: DiffusionSpec, x0: float, horizon: float, dt: float = 1e-3,
             tracked_levels: Sequence[float] = (), seed: int = 0, band: bool = False,
             eps0: float = 1.0) -> Path:
    """A single path recorded on the grid 0, dt, 2dt, ..., horizon."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    n_steps = int(round(horizon / dt))
    times = np.linspace(0.0, n_steps * dt, n_steps + 1)
    sim = Simulator(spec, dt=dt, band=band, eps0=eps0, jmax=0, threads=1)
    pb = sim.run(x0, 1, times, tracked_levels, seed)
    if pb.status[0] != K.ST_OK:
        raise SimulationError(f"path failed with status {int(pb.status[0])}")
    levels = {float(a): pb.La[0, :, i].copy() for i, a in enumerate(pb.levels)}
    return Path(times, pb.X[0].copy(), pb.L0[0].copy(), levels, seed)


@dataclass(frozen=True)
class ClockSample:
    clock: ClockSpec
    times: np.ndarray
    L: np.ndarray
    status: np.ndarray
    hit_times: np.ndarray

    @property
    def n_budget(self) -> int:
        return int(np.sum(self.status == K.ST_BUDGET))


def sample_clock(spec: DiffusionSpec, clock: ClockSpec, x0: float, n: int, seed: int = 0,
                 dt: float = DEFAULT_DT, threads: int | None = None, **kw) -> ClockSample:
    """Realizations of the clock and of L_0 at the clock along n independent paths."""
    sim = Simulator(spec, dt=dt, threads=threads or default_threads(), **kw)
    pb = sim.run(x0, n, (), (), seed, clock=clock)
    if clock.kind == "exponential":
        t, L = pb.exp_time, pb.exp_L
    elif clock.kind == "hitting":
        t, L = pb.hit_time, pb.hit_L
    else:
        t, L = pb.ilt_time, pb.ilt_L
    nb = int(np.sum(pb.status == K.ST_BUDGET))
    if nb:
        warnings.warn(f"{nb} of {n} paths exhausted the horizon budget before {clock} fired",
                      RuntimeWarning)
    if clock.kind == "inverse_local_time" and clock.a > 0:
        fired = np.isfinite(t)
        if np.any(t[fired] < pb.hit_time[fired]):
            raise SimulationError("inverse local time fired before the first passage at a")
    return ClockSample(clock, t, L, pb.status, pb.hit_time)


def mc_expect(functional: Callable[[PathBatch], np.ndarray], n: int, seed: int,
              simulator: Simulator | None = None, spec: DiffusionSpec | None = None,
              x0: float = 0.0, checkpoints: Sequence[float] = (), levels: Sequence[float] = (),
              allow_escaped: bool = False, **run_kw) -> MCEstimate:
    """Mean and standard error of ``functional`` over n seeded paths.

    ``functional`` maps a PathBatch to one value per path.
    """
    if simulator is None:
        if spec is None:
            raise ValueError("need a simulator or a spec")
        simulator = Simulator(spec)
    pb = simulator.run(x0, n, checkpoints, levels, seed, **run_kw)
    vals = np.asarray(functional(pb), dtype=float)
    good = pb.status == K.ST_OK
    if allow_escaped:
        good |= pb.status == K.ST_ESCAPED
    good &= np.isfinite(vals)
    n_bad = int(n - good.sum())
    if n_bad > MAX_ERROR_FRACTION * n:
        raise SimulationError(f"{n_bad} of {n} paths failed (status counts "
                              f"{np.bincount(pb.status, minlength=4).tolist()})")
    return MCEstimate.from_values(vals[good], seed)
