"""gendiff command line: classify, eigen, law, simulate, verify, penalize, decompose, accept."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from .eigen import EigenConvergenceError, GridPolicy, solve_eigen
from .harness import SUITES, ConfigError, resolve_spec, run_acceptance
from .laws import (ClockSpec, Weight, law_exp_clock, law_hitting_clock, law_inverse_lt_clock,
                   law_inverse_lt_clock_from_x)
from .martingales import FAMILIES, Functional, ScopeError, verify_penalization_limit
from .measure import MeasureError
from .pathsim import SimulationError, Simulator
from .penalized import (DecompositionError, HTransformKind, compare_decomposition_vs_reweighting,
                        resolvent_hc, transform_spec)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

THEOREMS = {"1.1": "exp", "1.2": "hit", "1.3": "ilt", "1.4": "ilt_u"}

# options that are not part of a command's config
_GLOBAL = ("seed", "threads", "out", "format", "config", "dump_config")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gendiff", description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default GENDIFF_THREADS or 1)")
    p.add_argument("--out", default=None, help="directory for output files (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--config", default=None, help="JSON file holding a command config")
    p.add_argument("--dump-config", action="store_true", help="print the command config and exit")
    sub = p.add_subparsers(dest="command")

    c = sub.add_parser("classify", help="boundary class, pi0 and m(inf) of a spec")
    c.add_argument("--spec", required=True, help="registry name or JSON spec file")

    c = sub.add_parser("eigen", help="phi, psi, rho on the grid and H(q)")
    c.add_argument("--spec", required=True)
    c.add_argument("--q", type=float, required=True)
    c.add_argument("--grid", type=int, default=4096)
    c.add_argument("--emit", choices=("csv", "json"), default=None)

    c = sub.add_parser("law", help="E_x[f(L_clock)] and, for eta-clocks, the law under P_a")
    c.add_argument("--spec", required=True)
    c.add_argument("--clock", required=True, help="exp:q | hit:a | ilt:a,u")
    c.add_argument("--weight", default="exp:1", help="exp:c[,amp] | ind0 | tab:FILE")
    c.add_argument("--x", type=float, default=0.0)
    c.add_argument("--points", type=int, default=41, help="density grid size for eta-clocks")

    c = sub.add_parser("simulate", help="paths on a regular grid")
    c.add_argument("--spec", required=True)
    c.add_argument("--x0", type=float, default=0.0)
    c.add_argument("--horizon", type=float, required=True)
    c.add_argument("--dt", type=float, default=1e-3)
    c.add_argument("--n", type=int, default=1)
    c.add_argument("--track", type=_floats, default=[])
    c.add_argument("--emit", choices=("csv", "json"), default=None)

    c = sub.add_parser("verify", help="penalization limit along a clock schedule")
    c.add_argument("--spec", default="reflected_bm")
    c.add_argument("--theorem", choices=tuple(THEOREMS) + FAMILIES, required=True,
                   help="limit family: 1.1/exp, 1.2/hit, 1.3/ilt, 1.4/ilt_u")
    c.add_argument("--weight", default="exp:1")
    c.add_argument("--x", type=float, default=0.0)
    c.add_argument("--t", type=float, default=0.5)
    c.add_argument("--schedule", type=_floats, required=True)
    c.add_argument("--n", type=int, default=100_000)
    c.add_argument("--dt", type=float, default=1e-4)
    c.add_argument("--functional", default="1", help="1 | const:c | xlt:b | llt:b")
    c.add_argument("--a", type=float, default=1.0)
    c.add_argument("--u", type=float, default=1.0)
    c.add_argument("--beta", type=float, default=1.0)
    c.add_argument("--tol", type=float, default=None, help="use the closed-form route (exp clock, F = 1) with this tolerance")

    c = sub.add_parser("penalize", help="resolvent of the exponentially penalized diffusion")
    c.add_argument("--spec", default="reflected_bm")
    c.add_argument("--h", choices=("h0", "s"), default="s")
    c.add_argument("--c", type=float, required=True)
    c.add_argument("--q", type=float, required=True)
    c.add_argument("--points", type=_floats, default=[0.0, 0.5, 1.0, 2.0])
    c.add_argument("--emit", choices=("csv", "json"), default=None)

    c = sub.add_parser("decompose", help="decomposition sampler vs reweighted paths (reflected BM)")
    c.add_argument("--t", type=float, required=True)
    c.add_argument("--weight", default="exp:1")
    c.add_argument("--n", type=int, default=10_000)
    c.add_argument("--x", type=float, default=0.5)

    c = sub.add_parser("accept", help="run an acceptance suite")
    c.add_argument("--suite", default="analytic", help=", ".join(SUITES))
    c.add_argument("--criteria", type=_floats, default=None)
    for c in sub.choices.values():
        # the seed may also follow the subcommand; it then overrides the global one
        c.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    return p


# ---------------------------------------------------------------- config round trip

def config_from_args(ns: argparse.Namespace) -> dict:
    """The command and its options, without the global flags."""
    d = {k: v for k, v in vars(ns).items() if k not in _GLOBAL}
    return d


def args_from_config(cfg: dict) -> list:
    cfg = dict(cfg)
    cmd = cfg.pop("command")
    argv = [cmd]
    for k, v in cfg.items():
        if v is None:
            continue
        flag = "--" + k.replace("_", "-") if k != "x0" else "--x0"
        if isinstance(v, (list, tuple)):
            if not v:
                continue
            argv += [flag, ",".join(repr(float(a)) for a in v)]
        else:
            argv += [flag, repr(v) if isinstance(v, float) else str(v)]
    return argv


# ---------------------------------------------------------------- output

def _table(header, rows, fmt: str, meta: dict | None = None) -> str:
    if fmt == "json":
        return json.dumps({**(meta or {}), "columns": list(header),
                           "rows": [[_json_num(v) for v in r] for r in rows]}, indent=1) + "\n"
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _json_num(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _emit(text: str, name: str, ns) -> None:
    if ns.out:
        os.makedirs(ns.out, exist_ok=True)
        path = os.path.join(ns.out, f"{name}.{_fmt(ns)}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)


def _fmt(ns) -> str:
    return getattr(ns, "emit", None) or ns.format


# ---------------------------------------------------------------- commands

def cmd_classify(ns) -> int:
    spec = resolve_spec(ns.spec)
    _emit(_table(["name", "boundary_class", "pi0", "m_infty", "ell_prime", "ell"],
                 [[spec.name, spec.boundary_class.value, spec.pi0, spec.m_infty,
                   spec.ell_prime, spec.ell]], _fmt(ns)), "classify", ns)
    return EXIT_PASS


def cmd_eigen(ns) -> int:
    spec = resolve_spec(ns.spec)
    sol = solve_eigen(spec, ns.q, GridPolicy(n_nodes=ns.grid))
    rows = list(zip(sol.grid.tolist(), sol.phi.tolist(), sol.psi.tolist(), sol.rho.tolist()))
    meta = {"spec": spec.name, "q": ns.q, "H": repr(float(sol.H)), "wronskian_defect": sol.wronskian_defect}
    _emit(_table(["x", "phi", "psi", "rho"], rows, _fmt(ns), meta), "eigen", ns)
    return EXIT_PASS


def cmd_law(ns) -> int:
    spec = resolve_spec(ns.spec)
    clock = ClockSpec.parse(ns.clock)
    f = Weight.parse(ns.weight)
    meta = {"spec": spec.name, "clock": str(clock), "weight": ns.weight, "x": ns.x}
    if clock.kind == "exponential":
        val = law_exp_clock(spec, solve_eigen(spec, clock.q), f, ns.x)
    elif clock.kind == "hitting":
        val = law_hitting_clock(spec, f, ns.x, clock.a)
    else:
        val = law_inverse_lt_clock_from_x(spec, ns.x, clock.a, clock.u, f)
        law = law_inverse_lt_clock(clock.a, clock.u)
        meta["atom_at_zero_under_P_a"] = law.atom_at_zero
        ys = np.linspace(0.0, 10.0 * max(clock.a, clock.u), ns.points)[1:]
        meta["value"] = repr(float(val))
        dens = law.density if law.density is not None else (lambda y: 0.0)
        rows = [[float(y), float(dens(y))] for y in ys]
        _emit(_table(["y", "density_under_P_a"], rows, _fmt(ns), meta), "law", ns)
        return EXIT_PASS
    _emit(_table(["value"], [[float(val)]], _fmt(ns), meta), "law", ns)
    return EXIT_PASS


def cmd_simulate(ns) -> int:
    spec = resolve_spec(ns.spec)
    if ns.horizon < 0 or not ns.dt > 0:
        raise ConfigError("need horizon >= 0 and dt > 0")
    n_steps = int(round(ns.horizon / ns.dt))
    times = np.linspace(0.0, n_steps * ns.dt, n_steps + 1)
    sim = Simulator(spec, dt=ns.dt, jmax=0, threads=ns.threads)
    pb = sim.run(ns.x0, ns.n, times, ns.track, ns.seed)
    if not np.all(pb.ok()):
        raise SimulationError(f"{int(np.sum(~pb.ok()))} paths failed")
    header = ["path", "t", "x", "L0"] + [f"L_{a:g}" for a in pb.levels]
    rows = []
    for p in range(ns.n):
        for i, t in enumerate(times):
            rows.append([p, float(t), float(pb.X[p, i]), float(pb.L0[p, i])]
                        + [float(pb.La[p, i, k]) for k in range(len(pb.levels))])
    _emit(_table(header, rows, _fmt(ns), {"spec": spec.name, "seed": ns.seed}), "simulate", ns)
    return EXIT_PASS


def cmd_verify(ns) -> int:
    spec = resolve_spec(ns.spec)
    fam = THEOREMS.get(ns.theorem, ns.theorem)
    f = Weight.parse(ns.weight)
    rep = verify_penalization_limit(spec, fam, f, ns.t, ns.schedule, x=ns.x,
                                    functional=Functional.parse(ns.functional), n=ns.n, seed=ns.seed,
                                    dt=ns.dt, u=ns.u, a=ns.a, beta=ns.beta, tol=ns.tol)
    if _fmt(ns) == "json":
        rows = [[r.param, r.estimate, r.std_error, r.target, r.target_se, r.gap, r.gap_se, int(r.passed)]
                for r in rep.rows]
        text = _table(["param", "estimate", "std_error", "target", "target_se", "gap", "gap_se", "pass"],
                      rows, "json", {"family": fam, "monotone": rep.monotone, "final_ok": rep.final_ok,
                                     "result": "PASS" if rep.passed else "FAIL"})
    else:
        text = rep.to_csv() + ("PASS\n" if rep.passed else "FAIL\n")
    _emit(text, "verify", ns)
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_penalize(ns) -> int:
    spec = resolve_spec(ns.spec)
    sol = solve_eigen(spec, ns.q)
    ts = transform_spec(spec, HTransformKind(ns.h, ns.c), sol)
    pts = [p for p in ns.points if 0 <= p <= sol.R]
    rows = [[x, y, resolvent_hc(ts, ns.q, x, y), float(ts.phi_hc(x)), float(ts.rho_hc(y))]
            for x in pts for y in pts]
    gp, gr = ts.route_gap()
    meta = {"spec": spec.name, "h": ns.h, "c": ns.c, "q": ns.q, "H_hc": repr(float(ts.H_hc)),
            "route_gap_phi": gp, "route_gap_rho": gr}
    _emit(_table(["x", "y", "r_hc", "phi_hc_x", "rho_hc_y"], rows, _fmt(ns), meta), "penalize", ns)
    return EXIT_PASS


def cmd_decompose(ns) -> int:
    f = Weight.parse(ns.weight)
    rep = compare_decomposition_vs_reweighting(ns.t, f, ns.n, ns.seed, x=ns.x)
    rows = [["X_t", rep.ks_X.statistic, rep.ks_X.pvalue, rep.ks_X.n_eff],
            ["L_t", rep.ks_L.statistic, rep.ks_L.pvalue, rep.ks_L.n_eff]]
    meta = {"t": ns.t, "x": ns.x, "mean_X_decomposition": rep.mean_A.mean,
            "mean_X_reweighted": rep.mean_B.mean, "ess": rep.ess,
            "post_g_positive": rep.post_g_positive, "result": "PASS" if rep.passed else "FAIL"}
    _emit(_table(["marginal", "ks_statistic", "p_value", "n_eff"], rows, _fmt(ns), meta), "decompose", ns)
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_accept(ns) -> int:
    crit = [int(c) for c in ns.criteria] if ns.criteria else None

    def progress(c, rows):
        ok = all(r.passed for r in rows)
        print(f"criterion {c}: {'PASS' if ok else 'FAIL'}", file=sys.stderr, flush=True)

    rep = run_acceptance(ns.suite, ns.seed, ns.threads, crit, progress)
    _emit(rep.to_json() + "\n" if _fmt(ns) == "json" else rep.to_csv(), f"accept_{ns.suite}", ns)
    return EXIT_PASS if rep.passed else EXIT_FAIL


COMMANDS = {"classify": cmd_classify, "eigen": cmd_eigen, "law": cmd_law, "simulate": cmd_simulate,
            "verify": cmd_verify, "penalize": cmd_penalize, "decompose": cmd_decompose,
            "accept": cmd_accept}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_PASS
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
            sub = parser.parse_args(args_from_config(cfg))
        except (OSError, json.JSONDecodeError, KeyError, SystemExit) as e:
            print(f"gendiff: bad config file: {e}", file=sys.stderr)
            return EXIT_CONFIG
        for k in _GLOBAL:
            setattr(sub, k, getattr(ns, k))
        ns = sub
    if not ns.command:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    if ns.dump_config:
        print(json.dumps(config_from_args(ns), sort_keys=True))
        return EXIT_PASS
    try:
        return COMMANDS[ns.command](ns)
    except (ConfigError, MeasureError, ScopeError, DecompositionError, ValueError) as e:
        print(f"gendiff: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (EigenConvergenceError, SimulationError, FloatingPointError, RuntimeError) as e:
        print(f"gendiff: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
