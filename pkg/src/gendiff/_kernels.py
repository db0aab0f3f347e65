"""numba path kernel: unit-diffusion SDE in Lamperti coordinates with folded reflection at 0."""
import math

import numpy as np
from numba import njit

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_TWO_PI = 6.283185307179586
# bridge exponent beyond which the level is treated as not reached
_EXPO_CUT = 50.0

ST_OK = 0
ST_BUDGET = 1
ST_RANGE = 2
ST_ESCAPED = 3

TOP_NONE = 0
TOP_REFLECT = 1
TOP_ESCAPE = 2


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _unif(key, ctr):
    # open interval (0, 1)
    z = _mix(key + np.uint64(ctr) * _GOLD)
    return (np.float64(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def path_key(seed, path):
    return _mix(np.uint64(seed) ^ _mix(np.uint64(path) + _GOLD))


@njit(inline="always")
def _bridge_lt(y0, y1, c, h, key, ctr):
    """Local time at c of a Brownian bridge y0 -> y1 over time h; returns (lt, crossed, ctr)."""
    a0 = y0 - c
    a1 = y1 - c
    d = y1 - y0
    if a0 * a1 < 0.0 or a0 == 0.0 or a1 == 0.0:
        s = abs(a0) + abs(a1)
        u = _unif(key, ctr)
        ctr += 1
        return math.sqrt(d * d - 2.0 * h * math.log(u)) - s, True, ctr
    expo = 2.0 * a0 * a1 / h
    if expo > _EXPO_CUT:
        return 0.0, False, ctr
    s = abs(a0) + abs(a1)
    u = _unif(key, ctr)
    ctr += 1
    lt = math.sqrt(d * d - 2.0 * h * math.log(u)) - s
    if lt > 0.0:
        return lt, True, ctr
    return 0.0, False, ctr


@njit(inline="always")
def _weight(kind, c, amp, knots, vals, tail, u):
    if kind == 0:
        return amp * math.exp(-c * u)
    if kind == 1:
        return 1.0 if u == 0.0 else 0.0
    if kind == 2:
        n = knots.shape[0]
        if u >= knots[n - 1]:
            if tail > 0.0:
                return vals[n - 1] * math.exp(-tail * (u - knots[n - 1]))
            return 0.0
        return np.interp(u, knots, vals)
    return 0.0


@njit(inline="always")
def _drift(model, b_tab, inv_dy, y):
    if model == 0:
        return 0.0
    pos = y * inv_dy
    i = int(pos)
    n = b_tab.shape[0]
    if i >= n - 1:
        return b_tab[n - 1]
    w = pos - i
    return (1.0 - w) * b_tab[i] + w * b_tab[i + 1]


@njit(inline="always")
def _step(dist, b, dt, jmax):
    # largest dt * 4^j with 6 sqrt(h) and the drift displacement well inside dist
    h = dt
    j = 0
    while j < jmax:
        h4 = 4.0 * h
        if 36.0 * h4 > dist * dist or abs(b) * h4 > 0.25 * dist:
            break
        h = h4
        j += 1
    return h


@njit(cache=True, nogil=True)
def run_paths(model, b_tab, inv_dy, y_end, top_mode, ell_tr,
              y0s, seed, offset, dt, jmax,
              checkpoints, lev_y, lev_fac, fac0,
              band, band0_hi, band0_mass, lev_lo, lev_hi, lev_mass,
              q_disc, exp_q, clock_stop, hit_idx, ilt_idx, ilt_u, loc_h,
              fkind, fc, famp, fknots, fvals, ftail, t_cap, t_run,
              out_y, out_l0, out_ll, out_comp,
              t0_out, disc_out, exp_t, exp_l, exp_y, hit_t, hit_l, ilt_t, ilt_l, tail_l, status):
    n = y0s.shape[0]
    m = checkpoints.shape[0]
    k = lev_y.shape[0]
    ll = np.zeros(k)
    hit_any = np.zeros(k, dtype=np.bool_)
    for p in range(n):
        key = path_key(seed, offset + p)
        ctr = 0
        t = 0.0
        y = y0s[p]
        l0 = 0.0
        for i in range(k):
            ll[i] = 0.0
        comp = 0.0
        disc = 0.0
        st = ST_OK
        t0 = 0.0 if y == 0.0 else np.inf
        # exponential clock drawn first so it does not depend on the path
        if exp_q > 0.0:
            t_exp = -math.log(_unif(key, ctr)) / exp_q
        else:
            t_exp = np.inf
        ctr += 1
        exp_pending = exp_q > 0.0
        if t_exp > clock_stop:
            # clock beyond the window of interest: keep its time only
            exp_pending = False
            exp_t[p] = t_exp
        hit_pending = hit_idx >= 0
        if hit_pending and y >= lev_y[hit_idx]:
            hit_pending = False
            hit_t[p] = 0.0
            hit_l[p] = 0.0
        ilt_pending = ilt_idx >= -1 and not math.isnan(ilt_u[p])
        ci = 0
        while ci < m and checkpoints[ci] <= 0.0:
            out_y[p, ci] = y
            out_l0[p, ci] = 0.0
            for i in range(k):
                out_ll[p, ci, i] = 0.0
            out_comp[p, ci] = 0.0
            ci += 1
        fl = _weight(fkind, fc, famp, fknots, fvals, ftail, 0.0)
        while ci < m or t < t_run or ((exp_pending or hit_pending or ilt_pending) and t < clock_stop):
            if t >= t_cap:
                st = ST_BUDGET
                break
            b = _drift(model, b_tab, inv_dy, y)
            # distance to the nearest feature sets the step; for Brownian motion the
            # bridge local time is exact, so unless increments must be placed in time
            # only the second-nearest feature matters
            d1 = y
            d2 = np.inf
            for i in range(k):
                dd = abs(y - lev_y[i])
                if dd < d1:
                    d2 = d1
                    d1 = dd
                elif dd < d2:
                    d2 = dd
            if top_mode == TOP_REFLECT:
                dd = y_end - y
                if dd < d1:
                    d2 = d1
                    d1 = dd
                elif dd < d2:
                    d2 = dd
            if band:
                h = dt
            elif model != 0:
                h = _step(d1, b, dt, jmax)
                # the drift may be singular toward the table end (entrance boundaries)
                dtop = y_end - y
                if 0.02 * dtop * dtop < h:
                    h = max(0.02 * dtop * dtop, 1e-14)
            else:
                # increments only need placing in time near the nearest feature
                h = max(_step(d1, 0.0, dt, jmax), min(loc_h, _step(d2, 0.0, dt, jmax)))
            if ci < m and checkpoints[ci] - t < h:
                h = checkpoints[ci] - t
            if t < t_run and t_run - t < h:
                h = t_run - t
            if exp_pending and t_exp - t < h:
                h = t_exp - t
            if h < 0.0:
                h = 0.0
            z = math.sqrt(-2.0 * math.log(_unif(key, ctr))) * math.cos(_TWO_PI * _unif(key, ctr + 1))
            ctr += 2
            sh = math.sqrt(h)
            y1u = y + b * h + sh * z
            dl0 = 0.0
            hit0 = False
            if h > 0.0:
                if band:
                    if y < band0_hi:
                        dl0 = h / band0_mass
                    hit0 = y1u <= 0.0
                else:
                    lt, cr, ctr = _bridge_lt(y, y1u, 0.0, h, key, ctr)
                    dl0 = 2.0 * lt * fac0
                    hit0 = cr
                for i in range(k):
                    c = lev_y[i]
                    if band:
                        if lev_lo[i] <= y < lev_hi[i]:
                            ll[i] += h / lev_mass[i]
                        hit_any[i] = (y - c) * (abs(y1u) - c) <= 0.0
                    else:
                        lt1, cr1, ctr = _bridge_lt(y, y1u, c, h, key, ctr)
                        lt2 = 0.0
                        cr2 = False
                        if y1u < 0.0 or y < c:
                            lt2, cr2, ctr = _bridge_lt(y, y1u, -c, h, key, ctr)
                        ll[i] += (lt1 + lt2) * lev_fac[i]
                        hit_any[i] = cr1 or cr2
            t_mid = t + 0.5 * h
            t += h
            y = abs(y1u)
            if top_mode != TOP_ESCAPE and y > y_end:
                # reflecting boundary, or a guard wall where the drift pushes back
                y = abs(2.0 * y_end - y)
            l0 += dl0
            if dl0 > 0.0 and q_disc > 0.0:
                disc += math.exp(-q_disc * t_mid) * dl0
            elif dl0 > 0.0:
                disc += dl0
            fn = _weight(fkind, fc, famp, fknots, fvals, ftail, l0)
            comp += 0.5 * h * (fl + fn)
            fl = fn
            if hit0 and t0 == np.inf:
                t0 = t
            if not (y <= y_end or top_mode == TOP_ESCAPE) or not math.isfinite(y):
                st = ST_RANGE
                break
            if y > y_end:
                # beyond the table the path returns to 0 with probability 1 - x/l
                # and then collects an Exp(l) amount of local time
                if _unif(key, ctr) < ell_tr[1]:
                    tail_l[p] = -ell_tr[0] * math.log(_unif(key, ctr + 1))
                ctr += 2
                st = ST_ESCAPED
                break
            if exp_pending and t >= t_exp:
                exp_pending = False
                exp_t[p] = t_exp
                exp_l[p] = l0
                exp_y[p] = y
            if hit_pending and hit_any[hit_idx]:
                hit_pending = False
                hit_t[p] = t
                hit_l[p] = l0
            if ilt_pending:
                cur = l0 if ilt_idx == -1 else ll[ilt_idx]
                if cur >= ilt_u[p]:
                    ilt_pending = False
                    ilt_t[p] = t
                    ilt_l[p] = l0
            while ci < m and checkpoints[ci] <= t:
                out_y[p, ci] = y
                out_l0[p, ci] = l0
                for i in range(k):
                    out_ll[p, ci, i] = ll[i]
                out_comp[p, ci] = comp
                ci += 1
        # whatever was not reached keeps its nan/inf fill
        if st == ST_ESCAPED:
            while ci < m:
                out_y[p, ci] = y_end
                out_l0[p, ci] = l0
                for i in range(k):
                    out_ll[p, ci, i] = ll[i]
                out_comp[p, ci] = comp
                ci += 1
        t0_out[p] = t0
        disc_out[p] = disc
        status[p] = st
