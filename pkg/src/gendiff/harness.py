"""Experiment configs, the canonical spec registry, reports and the acceptance suites."""
from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .eigen import solve_eigen
from .laws import Weight, law_inverse_lt_clock, q_total_local_time
from .martingales import (MartingaleKind, check_martingale, penalized_total_local_time,
                          supermartingale_means, verify_penalization_limit)
from .measure import BoundaryClass, DiffusionSpec, build_spec, builtin_measure, classify_boundary
from .pathsim import MCEstimate, Simulator, default_threads
from .penalized import (HTransformKind, compare_decomposition_vs_reweighting, resolvent_hc_integral,
                        resolvent_hc_mc, transform_spec)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configs

@dataclass
class ExperimentConfig:
    spec: dict | str = "reflected_bm"
    clock_schedule: list = field(default_factory=list)
    weight: str = "exp:1"
    x0: float = 0.0
    t_grid: list = field(default_factory=list)
    n_paths: int = 10_000
    dt: float = 1e-4
    seed: int = 0
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_paths < 100:
            raise ConfigError("n_paths must be at least 100")
        if not 0 < self.dt <= 1e-2:
            raise ConfigError("dt must lie in (0, 1e-2]")
        s = [float(v) for v in self.clock_schedule]
        if len(s) > 1:
            d = np.diff(s)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ConfigError("clock schedule must be strictly monotone")
        if any(b <= a for a, b in zip(self.t_grid, self.t_grid[1:])):
            raise ConfigError("t grid must be increasing")
        if self.x0 < 0:
            raise ConfigError("x0 must be nonnegative")
        Weight.parse(self.weight)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad JSON: {e}") from e

    def build_spec(self) -> DiffusionSpec:
        return resolve_spec(self.spec)


# ---------------------------------------------------------------- registry

def _registry_measures() -> dict:
    out = {"reflected_bm": builtin_measure("reflected_bm"),
           "exp_decay": builtin_measure("exp_decay", rate=1.0)}
    for nu in (0.5, 1.0, 2.0, 3.0):
        out[f"power_drift_nu{nu:g}"] = builtin_measure("power_drift", c=1.0, nu=nu)
    for a in (0.25, 0.5, 0.75):
        out[f"bessel_alpha{a:g}"] = builtin_measure("bessel", alpha=a)
    out["flat_unit"] = builtin_measure("tabulated", knots=[[0.0, 2.0], [1.0, 2.0]])
    return out


# expected classes of the right boundary
REGISTRY_CLASSES = {
    "reflected_bm": BoundaryClass.TYPE1_NATURAL,
    "exp_decay": BoundaryClass.ENTRANCE,
    "power_drift_nu0.5": BoundaryClass.TYPE2_NATURAL,
    "power_drift_nu1": BoundaryClass.TYPE2_NATURAL,
    "power_drift_nu2": BoundaryClass.TYPE2_NATURAL,
    "power_drift_nu3": BoundaryClass.ENTRANCE,
    "bessel_alpha0.25": BoundaryClass.TYPE1_NATURAL,
    "bessel_alpha0.5": BoundaryClass.TYPE1_NATURAL,
    "bessel_alpha0.75": BoundaryClass.TYPE1_NATURAL,
    "flat_unit": BoundaryClass.REGULAR_REFLECTING,
}

_SPEC_CACHE: dict = {}


def registry() -> dict:
    """name -> DiffusionSpec for the canonical examples (built once)."""
    if not _SPEC_CACHE:
        for k, m in _registry_measures().items():
            _SPEC_CACHE[k] = build_spec(m)
    return dict(_SPEC_CACHE)


def registry_specs() -> list:
    return list(registry().values())


def resolve_spec(ref) -> DiffusionSpec:
    """A registry name, a path to a JSON spec file, or a config dict."""
    from .measure import MeasureError, spec_from_config
    if isinstance(ref, dict):
        try:
            return spec_from_config(ref)
        except (MeasureError, KeyError, TypeError) as e:
            raise ConfigError(f"bad spec config: {e}") from e
    reg = registry()
    if ref in reg:
        return reg[ref]
    try:
        with open(ref, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"no registry spec or file named {ref!r}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"bad JSON in {ref}: {e}") from e
    return resolve_spec(cfg)


# ---------------------------------------------------------------- reports

@dataclass
class Row:
    criterion: int
    label: str
    estimate: float
    std_error: float
    target: float
    gap: float
    passed: bool
    note: str = ""


@dataclass
class Report:
    suite: str
    seed: int
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.passed for r in self.rows)

    def criteria(self) -> dict:
        """criterion -> PASS/FAIL over its rows."""
        out: dict = {}
        for r in self.rows:
            out[r.criterion] = out.get(r.criterion, True) and r.passed
        return out

    def to_dict(self, timing: bool = True) -> dict:
        meta = dict(self.metadata)
        if not timing:
            meta.pop("wall_time", None)
            meta.pop("timestamp", None)
        rows = [r for r in self.rows if timing or r.label != "runtime_s"]
        return {"suite": self.suite, "seed": self.seed, "passed": self.passed,
                "rows": [_clean(asdict(r)) for r in rows], "metadata": meta}

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["criterion", "label", "estimate", "std_error", "target", "gap", "pass", "note"])
        for r in self.rows:
            w.writerow([r.criterion, r.label, _fmt(r.estimate), _fmt(r.std_error), _fmt(r.target),
                        _fmt(r.gap), "PASS" if r.passed else "FAIL", r.note])
        return buf.getvalue()


def _fmt(v) -> str:
    return f"{v:.12g}" if isinstance(v, float) else str(v)


def _clean(d: dict) -> dict:
    # JSON has no nan/inf
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _row(crit, label, est, se, target, passed, note="", gap=None) -> Row:
    est, target = float(est), float(target)
    return Row(crit, label, est, float(se), target, abs(est - target) if gap is None else float(gap),
               bool(passed), note)


# ---------------------------------------------------------------- criteria

_AUG = (0.5, 1.0, 2.0)


def criterion_1(**_) -> list:
    """Bessel kernel normalization over (a, u) in {0.5, 1, 2}^2."""
    rows = []
    t0 = time.perf_counter()
    for a in _AUG:
        for u in _AUG:
            tot = law_inverse_lt_clock(a, u).total_mass()
            rows.append(_row(1, f"mass a={a:g} u={u:g}", tot, 0.0, 1.0, abs(tot - 1.0) <= 1e-8))
    el = time.perf_counter() - t0
    rows.append(_row(1, "runtime_s", el, 0.0, 5.0, el < 5.0, gap=max(el - 5.0, 0.0)))
    return rows


def criterion_2(**_) -> list:
    """Laplace transform of L at the inverse local time of level a on the 27-point grid."""
    rows = []
    for a in _AUG:
        for u in _AUG:
            law = law_inverse_lt_clock(a, u)
            for b in _AUG:
                v = law.laplace(b)
                tgt = math.exp(-u * b / (1.0 + b * a))
                rows.append(_row(2, f"laplace a={a:g} u={u:g} beta={b:g}", v, 0.0, tgt,
                                 abs(v - tgt) <= 1e-7))
    return rows


def criterion_3(**_) -> list:
    bm = registry()["reflected_bm"]
    rows = []
    for q in (0.1, 0.5, 1.0, 2.0, 10.0):
        v = solve_eigen(bm, q).H * math.sqrt(2.0 * q)
        rows.append(_row(3, f"H*sqrt(2q) q={q:g}", v, 0.0, 1.0, abs(v - 1.0) <= 1e-6))
    for name, spec in registry().items():
        d = solve_eigen(spec, 1.0).wronskian_defect
        rows.append(_row(3, f"wronskian {name}", d, 0.0, 0.0, d <= 1e-8))
    return rows


def criterion_4(n: int = 100_000, seed: int = 0, threads: int | None = None, **_) -> list:
    """E_0[int e^{-t} dL_t] on reflected BM against H(1) = 1/sqrt(2)."""
    bm = registry()["reflected_bm"]
    t0 = time.perf_counter()
    horizon = 30.0
    pb = Simulator(bm, dt=1e-4, threads=threads).run(0.0, n, (), (), seed, q_disc=1.0, horizon=horizon)
    est = MCEstimate.from_values(pb.disc_lt, seed)
    el = time.perf_counter() - t0
    tgt = 1.0 / math.sqrt(2.0)
    # beyond the horizon the discounted local time contributes at most e^{-30} r_1(0, 0)
    return [_row(4, "revuz", est.mean, est.std_error, tgt, est.gap_ok(tgt), f"n={n} horizon={horizon:g}"),
            _row(4, "runtime_s", el, 0.0, 300.0, el < 300.0, gap=max(el - 300.0, 0.0))]


def criterion_5(n: int = 100_000, seed: int = 0, threads: int | None = None, **_) -> list:
    reg = registry()
    bm, ed = reg["reflected_bm"], reg["exp_decay"]
    f = Weight.exponential(1.0)
    times = (0.5, 1.0, 2.0)
    rows = []
    cases = [("M_sf", bm, MartingaleKind("M_sf", f), 0.5),
             ("M_h0f exp_decay", ed, MartingaleKind("M_h0f", f), 0.5),
             ("M_beta_a(1,1)", bm, MartingaleKind("M_beta_a", beta=1.0, a=1.0), 0.5)]
    for i, (label, spec, kind, x) in enumerate(cases):
        sim = Simulator(spec, dt=1e-4, threads=threads)
        for r in check_martingale(spec, kind, x, times, n, seed + 17 * i, simulator=sim):
            rows.append(_row(5, f"{label} t={r.t:g}", r.mean, r.std_error, r.target, r.passed))
    st = (0.25, 0.5, 1.0)
    means, se = supermartingale_means(ed, f, 0.5, st, n, seed + 101)
    for k in range(1, len(st)):
        ok = means[k] <= means[k - 1] + 3.0 * se[k - 1]
        rows.append(_row(5, f"N_h0f E[N_{st[k]:g}] <= E[N_{st[k - 1]:g}]", means[k], se[k - 1],
                         means[k - 1], ok, "supermartingale, common random numbers"))
    return rows


def criterion_6(**_) -> list:
    bm = registry()["reflected_bm"]
    rep = verify_penalization_limit(bm, "exp", Weight.exponential(1.0), 0.5,
                                    [1e-1, 1e-2, 1e-3, 1e-4], x=0.0, tol=1e-2)
    rows = [_row(6, f"q={r.param:g}", r.estimate, 0.0, r.target, r.passed, gap=r.gap) for r in rep.rows]
    rows.append(_row(6, "strictly decreasing gap", float(rep.monotone), 0.0, 1.0, rep.monotone))
    rows.append(_row(6, "final gap <= 1e-2", rep.rows[-1].gap, 0.0, 1e-2, rep.final_ok,
                     gap=rep.rows[-1].gap))
    return rows


def criterion_7(n: int = 100_000, seed: int = 0, **_) -> list:
    bm = registry()["reflected_bm"]
    rows = []
    for j, fam in enumerate(("hit", "ilt")):
        rep = verify_penalization_limit(bm, fam, Weight.exponential(1.0), 0.5, [4.0, 8.0, 16.0],
                                        x=1.0, n=n, seed=seed + 1000 * j, u=1.0)
        for r in rep.rows:
            rows.append(_row(7, f"{fam} a={r.param:g}", r.estimate, r.gap_se, r.target, r.passed,
                             gap=r.gap))
        rows.append(_row(7, f"{fam} shrinking gap", float(rep.monotone), 0.0, 1.0, rep.monotone))
    return rows


def criterion_8(n: int = 10_000, seed: int = 0, **_) -> list:
    bm = registry()["reflected_bm"]
    f = Weight.exponential(1.0)
    smp = penalized_total_local_time(bm, f, n, seed)
    res = stats.kstest(smp.L, q_total_local_time("s", bm, f).cdf)
    return [_row(8, "KS L_inf vs f", float(res.pvalue), 0.0, 0.01, res.pvalue > 0.01,
                 f"D={res.statistic:.4g} ess={smp.ess:.0f}", gap=res.statistic)]


def criterion_9(**_) -> list:
    rows = []
    for name, m in _registry_measures().items():
        if name.startswith(("power_drift", "bessel")):
            got = classify_boundary(m)
            want = REGISTRY_CLASSES[name]
            rows.append(Row(9, f"class {name}", float(got == want), 0.0, 1.0, float(got != want),
                            got == want, got.value))
    return rows


def criterion_10(n: int = 100_000, seed: int = 0, **_) -> list:
    bm = registry()["reflected_bm"]
    sol = solve_eigen(bm, 1.0)
    ts = transform_spec(bm, HTransformKind("s", 1.0), sol)
    gp, gr = ts.route_gap()
    g = _bump
    x = 0.5
    exact = resolvent_hc_integral(ts, 1.0, x, g, (0.0, 2.0))
    mc = resolvent_hc_mc(ts, 1.0, x, g, n, seed)
    return [_row(10, "resolvent MC vs closed form", mc.mean, mc.std_error, exact, mc.gap_ok(exact),
                 f"x={x:g} bump on (0,2)"),
            _row(10, "route gap phi", gp, 0.0, 0.0, gp <= 1e-6),
            _row(10, "route gap rho", gr, 0.0, 0.0, gr <= 1e-6)]


def _bump(y):
    y = np.asarray(y, dtype=float)
    return np.where(np.abs(y - 1.0) < 1.0, (1.0 - (y - 1.0) ** 2) ** 2, 0.0)


def criterion_11(n: int = 10_000, seed: int = 0, **_) -> list:
    rep = compare_decomposition_vs_reweighting(1.0, Weight.exponential(1.0), n, seed)
    return [_row(11, "KS X_t", rep.ks_X.pvalue, 0.0, 0.01, rep.ks_X.pvalue > 0.01,
                 f"D={rep.ks_X.statistic:.4g} n_eff={rep.ks_X.n_eff:.0f}", gap=rep.ks_X.statistic),
            _row(11, "KS L_t", rep.ks_L.pvalue, 0.0, 0.01, rep.ks_L.pvalue > 0.01,
                 f"D={rep.ks_L.statistic:.4g}", gap=rep.ks_L.statistic),
            _row(11, "post-g paths avoid 0", float(rep.post_g_positive), 0.0, 1.0, rep.post_g_positive)]


CRITERIA: dict = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
                  6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
                  11: criterion_11}

# suite -> (criteria, path-count override or None for each criterion's own default)
SUITES: dict = {
    "analytic": ((1, 2, 3, 6, 9), None),
    "mc-small": ((4, 5, 7, 8, 10, 11), 10_000),
    "full": (tuple(range(1, 12)), None),
}


def run_acceptance(suite: str = "analytic", seed: int = 0, threads: int | None = None,
                   criteria: Sequence[int] | None = None,
                   progress: Callable[[int, list], None] | None = None) -> Report:
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; available: {', '.join(SUITES)}")
    which, n = SUITES[suite]
    if criteria is not None:
        which = tuple(c for c in which if c in set(criteria))
    threads = threads or default_threads()
    rep = Report(suite, seed)
    t0 = time.perf_counter()
    for c in which:
        kw = {"seed": seed, "threads": threads}
        if n is not None:
            kw["n"] = n
        rows = CRITERIA[c](**kw)
        rep.rows.extend(rows)
        if progress:
            progress(c, rows)
    rep.metadata = {"gendiff": __version__, "numpy": np.__version__, "python": platform.python_version(),
                    "seed": seed, "suite": suite, "wall_time": round(time.perf_counter() - t0, 3)}
    return rep
