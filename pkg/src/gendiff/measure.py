"""Speed measures on natural scale, boundary classification and derived constants.

A measure is stored through a *chart*: a computational coordinate ``t`` with
scale position ``x(t)``, scale rate ``dx/dt`` and speed rate ``dm/dt``.  For
measures given directly on natural scale the chart is the identity; for the
power-drift and Bessel families the chart is the original coordinate, which
keeps the tails well conditioned (the pulled-back densities vary on a
logarithmic scale in ``x``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import integrate, optimize

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8
WINDOW_CAP = 2 ** 20

INF = math.inf


class BoundaryClass(str, Enum):
    REGULAR_REFLECTING = "regular-reflecting"
    REGULAR_ELASTIC = "regular-elastic"
    REGULAR_ABSORBING = "regular-absorbing"
    EXIT = "exit"
    ENTRANCE = "entrance"
    TYPE1_NATURAL = "type-1-natural"
    TYPE2_NATURAL = "type-2-natural"
    TYPE3_NATURAL = "type-3-natural"
    UNDETERMINED = "undetermined"

    @property
    def inaccessible(self) -> bool:
        return self in (BoundaryClass.ENTRANCE, BoundaryClass.TYPE1_NATURAL,
                        BoundaryClass.TYPE2_NATURAL, BoundaryClass.TYPE3_NATURAL,
                        BoundaryClass.EXIT)


class MeasureError(ValueError):
    """Invalid speed measure or inconsistent boundary data."""


def _quad(fn, a, b, **kw):
    kw.setdefault("limit", 400)
    val, _ = integrate.quad(fn, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, **kw)
    return val


# ---------------------------------------------------------------- charts

class Chart:
    """Coordinate system ``t`` on ``[0, t_end)`` for a speed measure.

    ``dxdt`` and ``dmdt`` must accept numpy arrays.  ``x`` and ``t_of_x`` are
    optional closed forms; otherwise they are obtained by quadrature and
    root finding.  ``x_dmdt`` may override the product ``x(t) * dmdt(t)``
    when the naive product overflows.
    """

    def __init__(self, dxdt: Callable, dmdt: Callable, t_end: float = INF,
                 x: Callable | None = None, t_of_x: Callable | None = None,
                 mass: Callable | None = None, x_dmdt: Callable | None = None,
                 t_scale: float = 1.0, identity: bool = False):
        self.dxdt = dxdt
        self.dmdt = dmdt
        self.t_end = float(t_end)
        self._x = x
        self._t_of_x = t_of_x
        self._mass = mass
        self._x_dmdt = x_dmdt
        self.t_scale = float(t_scale)
        self.identity = identity

    def x(self, t):
        if self._x is not None:
            return self._x(t)
        t = np.asarray(t, dtype=float)
        out = np.array([_quad(lambda s: float(self.dxdt(s)), 0.0, float(ti)) if ti > 0 else 0.0
                        for ti in t.ravel()])
        return out.reshape(t.shape) if t.ndim else float(out[0])

    def t_of_x(self, x):
        if self._t_of_x is not None:
            return self._t_of_x(x)
        x = np.asarray(x, dtype=float)

        def one(xv):
            if xv <= 0:
                return 0.0
            hi = self.t_scale
            while self.x(hi) < xv:
                hi *= 2.0
                if hi > 1e12:
                    raise MeasureError(f"position {xv} outside chart")
            return optimize.brentq(lambda s: self.x(s) - xv, 0.0, hi, xtol=1e-14, rtol=1e-14)

        out = np.array([one(v) for v in x.ravel()])
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def mass(self, t: float) -> float:
        """Absolutely continuous part of m on (0, x(t)]."""
        if self._mass is not None:
            return float(self._mass(t))
        if t <= 0:
            return 0.0
        return _quad(lambda s: float(self.dmdt(s)), 0.0, t)

    def x_dmdt(self, t):
        if self._x_dmdt is not None:
            return self._x_dmdt(t)
        return self.x(t) * self.dmdt(t)


def _identity_chart(density: Callable, ell_prime: float, t_scale: float = 1.0) -> Chart:
    def dmdt(t):
        t = np.asarray(t, dtype=float)
        v = np.where(t < ell_prime, density(t), 0.0)
        return v if v.ndim else float(v)

    return Chart(dxdt=lambda t: np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else 1.0,
                 dmdt=dmdt, t_end=ell_prime, x=lambda t: t, t_of_x=lambda x: x,
                 t_scale=t_scale, identity=True)


def _power_drift_chart(c: float, nu: float) -> Chart:
    # original coordinate: s' = exp(c t^nu), m' = 2 exp(-c t^nu)
    def dxdt(t):
        return np.exp(c * np.power(t, nu))

    def dmdt(t):
        return 2.0 * np.exp(-c * np.power(t, nu))

    def x_dmdt_one(t):
        if t <= 0:
            return 0.0
        tn = t ** nu
        fn = lambda w: math.exp(c * tn * math.expm1(nu * math.log1p(-w / t)))
        # integrand decreases in w with width ~ 1/(c nu t^(nu-1)); doubling chunks
        w0 = min(t, 1.0 / (c * nu * t ** (nu - 1.0)))
        total = _quad(fn, 0.0, w0)
        a = w0
        while a < t:
            b = min(t, 2.0 * a)
            part = _quad(fn, a, b)
            total += part
            if part <= 1e-17 * total:
                break
            a = b
        return 2.0 * total

    def x_dmdt(t):
        t = np.asarray(t, dtype=float)
        out = np.array([x_dmdt_one(float(v)) for v in t.ravel()])
        return out.reshape(t.shape) if t.ndim else float(out[0])

    if nu == 1.0:
        return Chart(dxdt, dmdt, x=lambda t: np.expm1(c * np.asarray(t, dtype=float)) / c,
                     t_of_x=lambda x: np.log1p(c * np.asarray(x, dtype=float)) / c,
                     mass=lambda t: 2.0 * (-math.expm1(-c * t)) / c,
                     x_dmdt=lambda t: 2.0 * (-np.expm1(-c * np.asarray(t, dtype=float))) / c,
                     t_scale=1.0)
    return Chart(dxdt, dmdt, x_dmdt=x_dmdt, t_scale=1.0)


def _bessel_chart(alpha: float) -> Chart:
    # reflecting Bessel of index alpha: m~ = x^{2-2a}/(1-a), s~ = x^{2a}/(2a)
    a2 = 2.0 * alpha
    return Chart(dxdt=lambda t: np.power(t, a2 - 1.0),
                 dmdt=lambda t: 2.0 * np.power(t, 1.0 - a2),
                 x=lambda t: np.power(t, a2) / a2,
                 t_of_x=lambda x: np.power(a2 * np.asarray(x, dtype=float), 1.0 / a2),
                 mass=lambda t: t ** (2.0 - a2) / (1.0 - alpha),
                 x_dmdt=lambda t: (2.0 / a2) * np.power(t, 1.0),
                 t_scale=1.0)


# ---------------------------------------------------------------- measures

def _as_inf(v) -> float:
    if v is None:
        return INF
    if isinstance(v, str):
        if v.lower() in ("inf", "infinity", "+inf"):
            return INF
        return float(v)
    return float(v)


def _emit_inf(v: float):
    return "inf" if math.isinf(v) else float(v)


@dataclass(frozen=True)
class SpeedMeasure:
    """Speed measure m on natural scale: density, atoms and the points l', l."""

    density: Callable = field(compare=False, repr=False)
    atoms: tuple = ()
    ell_prime: float = INF
    ell: float = INF
    name: str = "custom"
    params: tuple = ()
    chart: Chart | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.chart is None:
            object.__setattr__(self, "chart", _identity_chart(self.density, self.ell_prime))
        atoms = tuple(sorted((float(p), float(w)) for p, w in self.atoms))
        object.__setattr__(self, "atoms", atoms)
        if not self.ell_prime > 0:
            raise MeasureError("ell_prime must be positive")
        if self.ell < self.ell_prime:
            raise MeasureError("ell must be >= ell_prime")
        for p, w in atoms:
            if w <= 0 or not 0 < p <= self.ell_prime or p >= self.ell:
                raise MeasureError(f"bad atom ({p}, {w})")

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    def mass(self, x: float) -> float:
        """m((0, x]) including atoms; inf for x >= ell."""
        if x >= self.ell:
            return INF
        if x <= 0:
            return 0.0
        ch = self.chart
        t = min(float(ch.t_of_x(min(x, self.ell_prime))), ch.t_end)
        return ch.mass(t) + sum(w for p, w in self.atoms if p <= x)

    def to_config(self) -> dict:
        cfg = {"density": self.name, **self.param_dict}
        cfg["atoms"] = [list(a) for a in self.atoms]
        cfg["ell_prime"] = _emit_inf(self.ell_prime)
        cfg["ell"] = _emit_inf(self.ell)
        return cfg

    @classmethod
    def from_config(cls, cfg: Mapping) -> "SpeedMeasure":
        dens = cfg.get("density", "reflected_bm")
        params = {}
        if isinstance(dens, Mapping):
            params.update({k: v for k, v in dens.items() if k != "name"})
            dens = dens["name"]
        params.update({k: v for k, v in cfg.items()
                       if k not in ("density", "atoms", "ell_prime", "ell")})
        kw = {}
        if "ell_prime" in cfg:
            kw["ell_prime"] = _as_inf(cfg["ell_prime"])
        if "ell" in cfg:
            kw["ell"] = _as_inf(cfg["ell"])
        atoms = [tuple(a) for a in cfg.get("atoms", [])]
        return builtin_measure(dens, atoms=atoms, **kw, **params)


def builtin_measure(name: str, atoms: Sequence = (), ell_prime: float | None = None,
                    ell: float | None = None, **params) -> SpeedMeasure:
    """Construct one of the named measures used in configs and the registry."""
    if name == "reflected_bm":
        lp = INF if ell_prime is None else ell_prime
        return SpeedMeasure(lambda y: np.full_like(np.asarray(y, dtype=float), 2.0),
                            atoms, lp, INF if ell is None else ell, name, ())
    if name == "exp_decay":
        rate = float(params.get("rate", 1.0))
        dens = lambda y: 2.0 * np.exp(-rate * np.asarray(y, dtype=float))
        return SpeedMeasure(dens, atoms, INF if ell_prime is None else ell_prime,
                            INF if ell is None else ell, name, (("rate", rate),))
    if name == "inverse_cube":
        # m' = 2/(1-x)^3 on [0, 1): transient with a type-3 natural boundary at 1
        dens = lambda y: 2.0 / (1.0 - np.minimum(np.asarray(y, dtype=float), 1.0 - 1e-300)) ** 3
        return SpeedMeasure(dens, atoms, 1.0, 1.0, name, ())
    if name == "power_drift":
        c, nu = float(params.get("c", 1.0)), float(params["nu"])
        if c <= 0 or nu <= 0:
            raise MeasureError("power_drift needs c > 0, nu > 0")
        ch = _power_drift_chart(c, nu)

        def dens(x):
            t = ch.t_of_x(x)
            return 2.0 * np.exp(-2.0 * c * np.power(t, nu))

        return SpeedMeasure(dens, atoms, INF, INF, name, (("c", c), ("nu", nu)), ch)
    if name == "bessel":
        alpha = float(params["alpha"])
        if not 0 < alpha < 1:
            raise MeasureError("bessel index must lie in (0, 1)")
        ch = _bessel_chart(alpha)
        dens = lambda x: 2.0 * np.power(2 * alpha * np.asarray(x, dtype=float),
                                        (1 - 2 * alpha) / alpha)
        return SpeedMeasure(dens, atoms, INF, INF, name, (("alpha", alpha),), ch)
    if name == "tabulated":
        knots = np.asarray(params["knots"], dtype=float)
        if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 2:
            raise MeasureError("tabulated density needs knots [[x, value], ...]")
        xs, vs = knots[:, 0], knots[:, 1]
        if xs[0] != 0 or np.any(np.diff(xs) <= 0):
            raise MeasureError("knots must start at 0 and increase")
        if np.any(vs < 0):
            raise MeasureError("negative density")
        lp = xs[-1] if ell_prime is None else ell_prime
        dens = lambda y: np.interp(y, xs, vs)
        return SpeedMeasure(dens, atoms, lp, INF if ell is None else ell, name,
                            (("knots", tuple(map(tuple, knots.tolist()))),))
    raise MeasureError(f"unknown density {name!r}")


# ---------------------------------------------------------------- tail tests

@dataclass
class TailVerdict:
    finite: bool | None
    total: float
    windows: list


def _tail_verdict(w: np.ndarray, head: float) -> tuple[bool | None, float]:
    """Decide convergence of sum(w) from the last doubling-window contributions."""
    w = np.maximum(np.asarray(w, dtype=float), 0.0)
    total = head + float(w.sum())
    if len(w) < 6:
        return None, total
    tail = w[-6:]
    if np.all(tail <= 1e-15 * max(total, 1e-300)):
        return True, total
    if np.any(tail <= 0):
        return None, total
    k = np.arange(len(w) - 5, len(w) + 1, dtype=float)
    lw = np.log(tail)
    g, g0 = np.polyfit(k, lw, 1)
    res_g = float(np.sum((lw - (g * k + g0)) ** 2))
    p, p0 = np.polyfit(np.log(k), lw, 1)
    res_p = float(np.sum((lw - (p * np.log(k) + p0)) ** 2))
    p = -p
    if g > -1e-3:
        return False, INF
    if res_g <= res_p and g < -1e-2:
        r = math.exp(g)
        return True, total + tail[-1] * r / (1.0 - r)
    if res_p < res_g:
        if p > 1.1:
            return True, total + tail[-1] * k[-1] / (p - 1.0)
        if p < 0.95:
            return False, INF
    return None, total


def _window_series(fn: Callable, edges_iter, head: float) -> TailVerdict:
    ws = []
    verdict: tuple[bool | None, float] = (None, head)
    for a, b in edges_iter:
        ws.append(_quad(fn, a, b))
        if len(ws) >= 8:
            verdict = _tail_verdict(np.array(ws), head)
            if verdict[0] is False:
                break
            if verdict[0] is True and ws[-1] <= 1e-15 * verdict[1]:
                break
    else:
        verdict = _tail_verdict(np.array(ws), head)
    return TailVerdict(verdict[0], verdict[1], ws)


def _doubling_edges(t0: float, cap: int):
    k = 0
    while 2.0 ** k <= cap:
        yield t0 * 2.0 ** k, t0 * 2.0 ** (k + 1)
        k += 1


def _converging_edges(t_end: float, t0: float, cap: int):
    d = t_end - t0
    k = 0
    while 2.0 ** k <= cap:
        yield t_end - d * 2.0 ** -k, t_end - d * 2.0 ** -(k + 1)
        k += 1


def _mass_tail(measure: SpeedMeasure, cap: int = WINDOW_CAP) -> TailVerdict:
    """m over the whole chart domain (up to l' or infinity)."""
    ch = measure.chart
    atoms = sum(w for _, w in measure.atoms)
    dm = lambda s: float(ch.dmdt(s))
    if math.isinf(ch.t_end):
        t0 = float(ch.t_of_x(1.0))
        return _window_series(dm, _doubling_edges(t0, cap), ch.mass(t0) + atoms)
    t0 = 0.5 * ch.t_end
    return _window_series(dm, _converging_edges(ch.t_end, t0, cap), ch.mass(t0) + atoms)


def _moment_tail(measure: SpeedMeasure, cap: int = WINDOW_CAP) -> TailVerdict:
    """int x dm over (1, inf) when l' = inf, int (l - x) dm near l otherwise."""
    ch = measure.chart
    if math.isinf(ch.t_end):
        t0 = float(ch.t_of_x(1.0))
        return _window_series(lambda s: float(ch.x_dmdt(s)), _doubling_edges(t0, cap), 0.0)
    ell = measure.ell_prime
    t0 = 0.5 * ch.t_end
    fn = lambda s: (ell - float(ch.x(s))) * float(ch.dmdt(s))
    return _window_series(fn, _converging_edges(ch.t_end, t0, cap), 0.0)


def classify_boundary(measure: SpeedMeasure, cap: int = WINDOW_CAP) -> BoundaryClass:
    """Classify the right boundary l' from l, l' and the tail integrals of m."""
    return _classify(measure, cap)[0]


def _classify(measure: SpeedMeasure, cap: int = WINDOW_CAP) -> tuple[BoundaryClass, float]:
    lp, ell = measure.ell_prime, measure.ell
    if measure.name == "tabulated" and math.isinf(lp):
        # no information about the tail beyond the last knot
        return BoundaryClass.UNDETERMINED, INF
    if ell < INF:
        if lp < ell:
            return BoundaryClass.REGULAR_ELASTIC, INF
        mt = _mass_tail(measure, cap)
        if mt.finite is None:
            return BoundaryClass.UNDETERMINED, INF
        if mt.finite:
            return BoundaryClass.REGULAR_ABSORBING, INF
        mom = _moment_tail(measure, cap)
        if mom.finite is None:
            return BoundaryClass.UNDETERMINED, INF
        return (BoundaryClass.EXIT if mom.finite else BoundaryClass.TYPE3_NATURAL), INF
    mt = _mass_tail(measure, cap)
    if mt.finite is None:
        return BoundaryClass.UNDETERMINED, INF
    if lp < INF:
        if not mt.finite:
            raise MeasureError("m(l') is infinite although l = inf")
        return BoundaryClass.REGULAR_REFLECTING, mt.total
    if not mt.finite:
        return BoundaryClass.TYPE1_NATURAL, INF
    mom = _moment_tail(measure, cap)
    if mom.finite is None:
        return BoundaryClass.UNDETERMINED, mt.total
    return (BoundaryClass.ENTRANCE if mom.finite else BoundaryClass.TYPE2_NATURAL), mt.total


# ---------------------------------------------------------------- specs

@dataclass(frozen=True)
class DiffusionSpec:
    measure: SpeedMeasure
    boundary_class: BoundaryClass
    pi0: float
    m_infty: float

    @property
    def ell(self) -> float:
        return self.measure.ell

    @property
    def ell_prime(self) -> float:
        return self.measure.ell_prime

    @property
    def name(self) -> str:
        m = self.measure
        if not m.params:
            return m.name
        return m.name + "(" + ",".join(f"{k}={v}" for k, v in m.params if k != "knots") + ")"


def _validate(measure: SpeedMeasure) -> None:
    ch = measure.chart
    hi = min(ch.t_end, 50.0 * ch.t_scale)
    ts = np.linspace(0.0, hi, 2001)[1:-1]
    vals = np.asarray(ch.dmdt(ts), dtype=float)
    if np.any(~np.isfinite(vals)) or np.any(vals < 0):
        raise MeasureError("negative or non-finite density")
    for eps in (1e-12, 1e-8, 1e-4):
        x = min(eps, 0.5 * measure.ell_prime)
        me = measure.mass(x)
        if not (me > 0 and math.isfinite(me)):
            raise MeasureError(f"m({x:g}) = {me}: 0 is not regular-reflecting")


def build_spec(measure: SpeedMeasure, cap: int = WINDOW_CAP) -> DiffusionSpec:
    """Validate the measure and attach boundary class, m(inf) and pi0."""
    _validate(measure)
    bc, m_inf = _classify(measure, cap)
    if measure.ell < INF:
        m_inf = INF
    pi0 = 0.0 if math.isinf(m_inf) else 1.0 / m_inf
    return DiffusionSpec(measure, bc, pi0, m_inf)


def spec_from_config(cfg: Mapping) -> DiffusionSpec:
    return build_spec(SpeedMeasure.from_config(cfg))


def h0(spec: DiffusionSpec, x):
    """Normalized zero resolvent x - pi0 * int_0^x m(y) dy."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa >= spec.ell):
        raise ValueError("h0 needs 0 <= x < l")
    if spec.pi0 == 0.0:
        return xa.copy() if xa.ndim else float(xa)
    m = spec.measure
    if m.name == "exp_decay" and not m.atoms:
        rate = m.param_dict["rate"]
        out = -np.expm1(-rate * xa) / rate
        return out if xa.ndim else float(out)
    ch = m.chart

    def one(xv):
        if xv == 0.0:
            return 0.0
        # int_0^x m(y) dy = int_(0,x] (x - z) dm(z)
        t = min(float(ch.t_of_x(min(xv, m.ell_prime))), ch.t_end)
        ac = _quad(lambda s: (xv - float(ch.x(s))) * float(ch.dmdt(s)), 0.0, t)
        at = sum(w * (xv - p) for p, w in m.atoms if p <= xv)
        return xv - spec.pi0 * (ac + at)

    out = np.array([one(v) for v in xa.ravel()]).reshape(xa.shape)
    return out if xa.ndim else float(out)
