"""Increasing/decreasing eigenfunctions, H(q), resolvent density and h_q.

The Volterra equations

    phi(x) = 1 + q int_0^x dy int_(0,y] phi dm,    psi(x) = x + (same),

are solved by Picard iteration on a grid in the chart coordinate ``t``.  Each
iterate is represented by nodal values of the function and of its scale
derivative (right and left limits, which differ at atoms); inside a cell the
function is the cubic Hermite interpolant in ``x``, and the cell integrals
use Gauss-Legendre nodes in ``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measure import INF, BoundaryClass, Chart, DiffusionSpec

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)


class EigenConvergenceError(RuntimeError):
    """H(q) could not be certified; ``bracket`` holds the last enclosure."""

    def __init__(self, msg: str, bracket: tuple[float, float]):
        super().__init__(f"{msg}; H in [{bracket[0]!r}, {bracket[1]!r}]")
        self.bracket = bracket


@dataclass(frozen=True)
class GridPolicy:
    n_nodes: int = 4096
    picard_tol: float = 1e-12
    max_picard: int = 5000
    h_rel_tol: float = 1e-8
    max_doublings: int = 24
    r0: float | None = None
    core: float = 16.0   # uniform part of the grid, in chart units


# ---------------------------------------------------------------- grids

def make_grid(r: float, n: int, t_scale: float = 1.0, t_end: float = INF,
              core: float = 16.0, extra: tuple = ()) -> np.ndarray:
    """Chart grid on [0, r]: geometric near 0, uniform core, geometric tail.

    When ``t_end`` is finite the tail is geometric in the distance to
    ``t_end`` so that singular densities at the right end are resolved.
    """
    n0 = n // 8
    t_a = 1e-2 * min(r, t_scale)
    near0 = np.geomspace(t_a * 1e-24, t_a, n0, endpoint=False)
    pieces = [np.zeros(1), near0]
    if math.isinf(t_end):
        c = min(r, core * t_scale)
        n1 = n // 2 if r > c else n - n0
        pieces.append(np.linspace(t_a, c, n1, endpoint=r <= c))
        if r > c:
            pieces.append(np.geomspace(c, r, n - n0 - n1 + 1))
    else:
        mid = t_a + 0.5 * (r - t_a) if r < t_end else 0.5 * t_end
        mid = max(mid, t_a)
        n1 = n // 2
        pieces.append(np.linspace(t_a, mid, n1, endpoint=False))
        d_hi = t_end - mid
        d_lo = t_end - r
        if d_lo > 0:
            d = np.geomspace(d_hi, d_lo, n - n0 - n1 + 1)
        else:
            d = np.concatenate([np.geomspace(d_hi, d_hi * 1e-12, n - n0 - n1), [0.0]])
        pieces.append(t_end - d)
    t = np.unique(np.concatenate(pieces + [np.asarray(extra, dtype=float)]))
    return t[t <= r]


@dataclass
class _Cells:
    """Geometry of a chart grid: nodes, Gauss points and Hermite weights."""

    t: np.ndarray
    x: np.ndarray
    dx: np.ndarray        # cell widths in scale
    xg: np.ndarray        # scale positions of Gauss points [cell, g]
    a_w: np.ndarray       # dx weights at Gauss points
    b_w: np.ndarray       # dm weights at Gauss points
    herm: np.ndarray      # Hermite basis [4, cell, g]


def _cells(chart: Chart, t: np.ndarray) -> _Cells:
    h = np.diff(t)
    tg = t[:-1, None] + 0.5 * h[:, None] * (1.0 + _GL_X[None, :])
    wg = 0.5 * h[:, None] * _GL_W[None, :]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        a_w = wg * chart.dxdt(tg)
        b_w = wg * chart.dmdt(tg)
    if chart._x is not None:
        x = np.asarray(chart.x(t), dtype=float)
        xg = np.asarray(chart.x(tg), dtype=float)
    else:
        x = np.concatenate([[0.0], np.cumsum(a_w.sum(axis=1))])
        # nested Gauss rule from the left node to each Gauss point
        sub = (tg - t[:-1, None])[..., None]
        ts = t[:-1, None, None] + 0.5 * sub * (1.0 + _GL_X[None, None, :])
        xg = x[:-1, None] + np.sum(0.5 * sub * _GL_W * chart.dxdt(ts), axis=2)
    dx = np.diff(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(dx[:, None] > 0, (xg - x[:-1, None]) / dx[:, None], 0.5)
    herm = np.stack([2 * s ** 3 - 3 * s ** 2 + 1, s ** 3 - 2 * s ** 2 + s,
                     -2 * s ** 3 + 3 * s ** 2, s ** 3 - s ** 2])
    return _Cells(t, x, dx, xg, a_w, b_w, herm)


def _interp_gauss(c: _Cells, f, dfp, dfm):
    """Hermite values at the Gauss points from nodal values and one-sided derivatives."""
    dx = c.dx[:, None]
    return (c.herm[0] * f[:-1, None] + c.herm[1] * dx * dfp[:-1, None]
            + c.herm[2] * f[1:, None] + c.herm[3] * dx * dfm[1:, None])


def volterra_solve(c: _Cells, mu_w: np.ndarray, atom_w: np.ndarray, f0: float, v0: float,
                   tol: float = 1e-12, max_iter: int = 5000):
    """Picard iteration for f = f0 + v0 x + int_0^x dy int_(0,y] f dmu.

    ``mu_w`` are the measure weights at the Gauss points (already multiplied by
    any rate), ``atom_w`` the atom masses at the nodes.  Returns nodal values,
    right/left scale derivatives and the iteration count.
    """
    n = len(c.x)
    f = f0 + v0 * c.x
    vp = np.full(n, float(v0))
    vm = vp.copy()
    gap = (c.x[1:, None] - c.xg)
    for it in range(1, max_iter + 1):
        fg = _interp_gauss(c, f, vp, vm)
        cm = np.sum(mu_w * fg, axis=1)
        cmom = np.sum(mu_w * gap * fg, axis=1)
        at = atom_w * f
        vp_new = v0 + np.concatenate([[0.0], np.cumsum(cm)]) + np.cumsum(at)
        vm_new = vp_new - at
        f_new = f0 + np.concatenate([[0.0], np.cumsum(vp_new[:-1] * c.dx + cmom)])
        scale = np.maximum(np.abs(f_new), 1e-300)
        change = np.max(np.abs(f_new - f) / scale)
        dchange = np.max(np.abs(vp_new - vp) / np.maximum(np.abs(vp_new), 1e-300))
        f, vp, vm = f_new, vp_new, vm_new
        if not np.all(np.isfinite(f)):
            raise FloatingPointError("overflow in Picard iteration")
        if max(change, dchange) < tol:
            return f, vp, vm, it
    raise EigenConvergenceError(f"Picard iteration did not converge in {max_iter} steps",
                                (math.nan, math.nan))


@dataclass(frozen=True)
class EigenSolution:
    q: float
    grid: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    rho: np.ndarray
    H: float
    dphi: np.ndarray
    dpsi: np.ndarray
    drho: np.ndarray
    dphi_left: np.ndarray = field(repr=False)
    drho_left: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    H_bracket: tuple = (math.nan, math.nan)
    boundary_class: BoundaryClass | None = None
    wronskian_defect: float = math.nan
    picard_iterations: int = 0

    @property
    def R(self) -> float:
        return float(self.grid[-1])

    def _hermite(self, f, dfp, dfm, x):
        xa = np.asarray(x, dtype=float)
        g = self.grid
        if np.any(xa < 0) or np.any(xa > g[-1] * (1 + 1e-14)):
            raise ValueError(f"position outside the truncation grid [0, {g[-1]:g}]")
        j = np.clip(np.searchsorted(g, xa, side="right") - 1, 0, len(g) - 2)
        dx = g[j + 1] - g[j]
        s = (xa - g[j]) / dx
        out = ((2 * s ** 3 - 3 * s ** 2 + 1) * f[j] + (s ** 3 - 2 * s ** 2 + s) * dx * dfp[j]
               + (-2 * s ** 3 + 3 * s ** 2) * f[j + 1] + (s ** 3 - s ** 2) * dx * dfm[j + 1])
        return out if xa.ndim else float(out)

    def phi_at(self, x):
        return self._hermite(self.phi, self.dphi, self.dphi_left, x)

    def rho_at(self, x):
        return self._hermite(self.rho, self.drho, self.drho_left, x)

    def psi_at(self, x):
        # psi = H (phi - rho)
        return self.H * (self.phi_at(x) - self.rho_at(x))


def _bracket_and_rho(c: _Cells, phi, vphi_p, vphi_m, psi, vpsi_p, mode: str,
                     upper: bool = False, tail: float | None = None):
    """H from the right-end condition and the stable decreasing solution rho.

    In the limit case H - psi(R)/phi(R) = int_R^inf phi^-2 lies in
    [0, 1/(phi(R) phi'(R))]; the tail is formed directly from that width
    (midpoint, or the full width when the upper envelope is used) instead of
    as a difference of nearly equal numbers.
    """
    lo = psi[-1] / phi[-1]
    if tail is not None:
        # int_R^end phi^-2 supplied by the caller
        H = lo + tail
        br = (H, H)
    elif mode == "reflecting":
        H = vpsi_p[-1] / vphi_p[-1]
        br = (H, H)
        tail = H - lo
    elif mode == "absorbing":
        H = lo
        br = (H, H)
        tail = 0.0
    else:
        width = 1.0 / (phi[-1] * vphi_p[-1])
        br = (lo, vpsi_p[-1] / vphi_p[-1])
        tail = width if upper else 0.5 * width
        H = lo + tail
    # rho/phi (x) = (1/H) (int_x^R phi^-2 + H - psi(R)/phi(R))
    phig = _interp_gauss(c, phi, vphi_p, vphi_m)
    with np.errstate(over="ignore"):
        cell = np.sum(c.a_w / phig ** 2, axis=1)
    tail_int = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    integ = tail_int + tail
    rho = phi * integ / H
    drho = vphi_p * integ / H - 1.0 / (H * phi)
    drho_l = vphi_m * integ / H - 1.0 / (H * phi)
    return H, br, rho, drho, drho_l


def _boundary_mode(bc: BoundaryClass) -> str:
    if bc == BoundaryClass.REGULAR_REFLECTING:
        return "reflecting"
    if bc == BoundaryClass.REGULAR_ABSORBING:
        return "absorbing"
    if bc == BoundaryClass.REGULAR_ELASTIC:
        raise ValueError("regular-elastic right boundary is not supported")
    if bc == BoundaryClass.UNDETERMINED:
        raise ValueError("boundary class undetermined; cannot fix the boundary condition")
    return "limit"


def _atom_nodes(spec: DiffusionSpec, t: np.ndarray) -> np.ndarray:
    w = np.zeros(len(t))
    ch = spec.measure.chart
    for p, mass in spec.measure.atoms:
        tp = float(ch.t_of_x(p))
        i = int(np.argmin(np.abs(t - tp)))
        w[i] += mass
    return w


def _solve_on(spec: DiffusionSpec, q: float, r: float, pol: GridPolicy, mode: str,
              upper: bool = False):
    ch = spec.measure.chart
    atoms_t = [float(ch.t_of_x(p)) for p, _ in spec.measure.atoms]
    t = make_grid(r, pol.n_nodes, ch.t_scale, ch.t_end, pol.core, tuple(a for a in atoms_t if a <= r))
    c = _cells(ch, t)
    aw = q * _atom_nodes(spec, t)
    mu = q * c.b_w
    phi, vpp, vpm, n1 = volterra_solve(c, mu, aw, 1.0, 0.0, pol.picard_tol, pol.max_picard)
    psi, vsp, vsm, n2 = volterra_solve(c, mu, aw, 0.0, 1.0, pol.picard_tol, pol.max_picard)
    H, br, rho, drho, drho_l = _bracket_and_rho(c, phi, vpp, vpm, psi, vsp, mode, upper)
    W = phi * vsp - vpp * psi
    defect = float(np.max(np.abs(W - 1.0) / np.maximum(1.0, np.abs(phi * vsp) + np.abs(vpp * psi))))
    return dict(t=t, grid=c.x, phi=phi, psi=psi, dphi=vpp, dphi_left=vpm, dpsi=vsp,
                H=H, H_bracket=br, rho=rho, drho=drho, drho_left=drho_l,
                wronskian_defect=defect, picard_iterations=max(n1, n2))


def solve_eigen(spec: DiffusionSpec, q: float, grid_policy: GridPolicy | None = None) -> EigenSolution:
    """phi_q, psi_q, rho_q and H(q) on a truncated grid."""
    pol = grid_policy or GridPolicy()
    if not q > 0:
        raise ValueError("q must be positive")
    if q < 1e-6:
        raise ValueError(f"q = {q:g} is below 1e-6: ill-conditioned small-q regime")
    mode = _boundary_mode(spec.boundary_class)
    ch = spec.measure.chart
    if mode != "limit":
        res = _solve_on(spec, q, ch.t_end, pol, mode)
        return EigenSolution(q=q, boundary_class=spec.boundary_class, **res)
    if math.isinf(ch.t_end):
        r0 = pol.r0 or 4.0 * ch.t_scale
        radii = (r0 * 2.0 ** k for k in range(pol.max_doublings + 1))
    else:
        radii = (ch.t_end * (1.0 - 0.5 * 4.0 ** -k) for k in range(1, pol.max_doublings + 1))
    last = None
    prev = None
    for r in radii:
        try:
            res = _solve_on(spec, q, r, pol, mode)
        except FloatingPointError:
            break
        lo, hi = res["H_bracket"]
        if not (np.isfinite(lo) and np.isfinite(hi)):
            break
        last = res
        if (hi - lo) <= pol.h_rel_tol * lo:
            # one more doubling tightens the enclosure and extends the reliable range
            try:
                res2 = _solve_on(spec, q, 2.0 * r if math.isinf(ch.t_end)
                                 else ch.t_end - 0.25 * (ch.t_end - r), pol, mode)
                lo2, hi2 = res2["H_bracket"]
                if np.isfinite(lo2) and np.isfinite(hi2) and hi2 - lo2 <= hi - lo:
                    res = res2
            except (FloatingPointError, EigenConvergenceError):
                pass
            return EigenSolution(q=q, boundary_class=spec.boundary_class,
                                 **_trim(res, 0.5 / (res["phi"][-1] * res["dphi"][-1])))
        if prev is not None and abs(hi - prev) <= pol.h_rel_tol * hi:
            # the upper envelope psi'/phi' has settled between R/2 and R;
            # keep doubling while it still moves, to extend the reliable range
            delta = abs(hi - prev)
            r_best = r
            for _ in range(6):
                r = 2.0 * r if math.isinf(ch.t_end) else ch.t_end - 0.25 * (ch.t_end - r)
                try:
                    nxt = _solve_on(spec, q, r, pol, mode)
                except (FloatingPointError, EigenConvergenceError):
                    break
                d = abs(nxt["H_bracket"][1] - hi)
                if not np.isfinite(d) or d >= delta:
                    break
                hi, delta, r_best = nxt["H_bracket"][1], d, r
                if d <= 1e-15 * hi:
                    break
            res = _solve_on(spec, q, r_best, pol, mode, upper=True)
            return EigenSolution(q=q, boundary_class=spec.boundary_class,
                                 **_trim(res, max(delta, 1e-16 * hi)))
        prev = hi
        if res["phi"][-1] > 1e150:
            break
    br = last["H_bracket"] if last else (math.nan, math.nan)
    raise EigenConvergenceError("H(q) limit not certified within the truncation budget", br)


def _trim(res: dict, delta_h: float, rel: float = 1e-8) -> dict:
    """Cut the grid where the uncertainty of H dominates rho (error phi * dH / H)."""
    u = res["phi"] * delta_h / res["H"]
    bad = np.nonzero(u > rel * res["rho"])[0]
    if len(bad) == 0:
        return res
    k = max(int(bad[0]), 8)
    out = dict(res)
    for key in ("t", "grid", "phi", "psi", "dphi", "dphi_left", "dpsi", "rho", "drho", "drho_left"):
        out[key] = res[key][:k]
    phi, psi, vp, vs = out["phi"], out["psi"], out["dphi"], out["dpsi"]
    W = phi * vs - vp * psi
    out["wronskian_defect"] = float(np.max(np.abs(W - 1.0) / np.maximum(1.0, np.abs(phi * vs) + np.abs(vp * psi))))
    return out


def resolvent(sol: EigenSolution, x, y):
    """r_q(x, y) = H phi(min) rho(max), density with respect to m."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    out = sol.H * sol.phi_at(lo) * sol.rho_at(hi)
    return out if np.ndim(out) else float(out)


def h_q(sol: EigenSolution, x):
    """h_q(x) = H (1 - rho(x))."""
    out = sol.H * (1.0 - sol.rho_at(x))
    return out if np.ndim(out) else float(out)
