"""Command-line interface.

Subcommands: validate, warmstart, solve, eval, contour, mc-check, tighten.
Reports are JSON, grids and curves are CSV.  Exit codes: 0 success,
2 unreadable input, 3 invalid scenario or plan, 4 solver failure,
5 unknown contour variable.
"""

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .contour import UnknownVariable, contour_grid, local_maxima
from .errors import DegenerateDemand, ParseError, ShapeError, SolverError, ValidationError
from .evaluator import check_constraints, metrics, reliability
from .homotopy import HomotopyConfig
from .montecarlo import simulate
from .scenario import DispatchPlan, load_scenario, plan_cost, total_weighted_demand
from .search import SearchConfig, search, tighten_budget
from .warmstart import warm_start

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_SOLVER = 4
EXIT_VARIABLE = 5


class _Encoder(json.JSONEncoder):
    """Numpy-aware encoder that writes infinities as the string ``"inf"``."""

    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return super().default(o)

    def iterencode(self, o, _one_shot=False):
        return super().iterencode(_finite(o), _one_shot)


def _finite(o):
    if isinstance(o, float) and not math.isfinite(o):
        return "nan" if math.isnan(o) else ("inf" if o > 0 else "-inf")
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, np.ndarray):
        return _finite(o.tolist())
    if isinstance(o, np.floating):
        return _finite(float(o))
    return o


def _csv_value(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return repr(x) if isinstance(x, float) else x


def _emit_json(doc, path=None):
    text = json.dumps(doc, cls=_Encoder, indent=1)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _emit_csv(header, rows, path=None):
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_value(x) for x in row])
    finally:
        if path:
            fh.close()


def _emit_summary(doc, path=None):
    """Side report of a CSV command: to ``path``, or to stderr."""
    if path:
        _emit_json(doc, path)
    else:
        sys.stderr.write(json.dumps(_finite(doc), cls=_Encoder) + "\n")


# ---------------------------------------------------------------- inputs

def _scenario(args):
    s = load_scenario(args.scenario)
    changes = {}
    if getattr(args, "eta_c", None) is not None:
        changes["eta_c"] = float(args.eta_c)
    if getattr(args, "eta_h", None) is not None:
        changes["eta_h"] = float(args.eta_h)
    return s.replace(**changes) if changes else s


def _plan(path, s):
    """Read a plan file: either a bare plan or any report holding ``"plan"``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if isinstance(doc, dict) and "plan" in doc and isinstance(doc["plan"], dict):
        doc = doc["plan"]
    return DispatchPlan.from_dict(doc, s)


def _homotopy_cfg(args, force=None):
    kw = {}
    if getattr(args, "eta_h", None) is not None:
        kw["eta_h"] = args.eta_h
    if getattr(args, "iota_h", None) is not None:
        kw["iota_h"] = args.iota_h
    if getattr(args, "schedule", None) is not None:
        kw["schedule"] = args.schedule
    f = getattr(args, "force_prob_one", False) if force is None else force
    return HomotopyConfig(force_prob_one=bool(f), **kw)


def _search_cfg(args):
    return SearchConfig(
        homotopy=_homotopy_cfg(args),
        max_iters=args.max_iters,
        eta_c=args.eta_c,
        threads=args.threads,
    )


def _plan_summary(s, plan, force=False):
    return {
        "R": reliability(s, plan, force_prob_one=force),
        "cost": plan_cost(s, plan),
        "plan": plan.to_dict(),
        "metrics": metrics(s, plan, force_prob_one=force).to_dict(),
    }


# ---------------------------------------------------------------- commands

def cmd_validate(args):
    s = _scenario(args)
    total_weighted_demand(s)
    _emit_json({
        "valid": True,
        "commodities": s.n_E,
        "nodes": dict(s.nodes),
        "vehicles": {lv: s.m(lv) for lv in ("S", "D", "F")},
        "budget": s.budget,
        "eta_c": s.eta_c,
        "eta_h": s.eta_h,
    }, args.out)
    return EXIT_OK


def cmd_warmstart(args):
    s = _scenario(args)
    total_weighted_demand(s)
    ws = warm_start(s)
    doc = _plan_summary(s, ws.plan)
    doc["stopped_at"] = ws.stopped_at
    doc["levels"] = {k: {kk: vv for kk, vv in v.items() if kk != "greedy"} for k, v in ws.levels.items()}
    doc["constraints_satisfied"] = check_constraints(s, ws.plan).satisfied
    _emit_json(doc, args.out)
    return EXIT_OK


def _solve_doc(s, rep):
    doc = _plan_summary(s, rep.plan, rep.force_prob_one)
    d = rep.to_dict()
    doc["force_prob_one"] = rep.force_prob_one
    doc["solver"] = d["solver"]
    return doc


def cmd_solve(args):
    s = _scenario(args)
    cfg = _search_cfg(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = search(s, cfg)
    doc = _solve_doc(s, rep)
    doc["warnings"] = sorted({str(w.message) for w in caught})
    if args.tighten:
        res = tighten_budget(s, rep, cfg, eps_R=args.tighten_eps)
        doc["tightening"] = {
            "eps_R": res.eps_R,
            "R0": res.R0,
            "curve": res.rows(),
            "best": _plan_summary(s, res.best.plan, rep.force_prob_one) | {"budget": res.best.budget},
        }
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_eval(args):
    s = _scenario(args)
    plan = _plan(args.plan, s)
    total_weighted_demand(s)
    doc = _plan_summary(s, plan, args.force_prob_one)
    doc["constraints"] = check_constraints(s, plan).to_dict()
    _emit_json(doc, args.out)
    return EXIT_OK


def _range(text):
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if not hi > lo:
        raise argparse.ArgumentTypeError("range must have hi > lo")
    return lo, hi


def cmd_contour(args):
    s = _scenario(args)
    total_weighted_demand(s)
    if args.plan:
        plan = _plan(args.plan, s)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            plan = search(s, _search_cfg(args)).plan
    grid = contour_grid(s, plan, args.x, args.y, args.x_range, args.y_range, args.n, zeta=args.zeta,
                        force_prob_one=args.force_prob_one)
    _emit_csv([args.x, args.y, "R"], grid.rows(), args.out)
    peaks = local_maxima(grid)
    summary = {
        "argmax": dict(zip((args.x, args.y, "R"), grid.argmax)),
        "local_maxima": [dict(zip((args.x, args.y, "R"), p)) for p in peaks],
        "n": args.n,
        "zeta": args.zeta,
    }
    _emit_summary(summary, args.summary)
    return EXIT_OK


def cmd_mc_check(args):
    s = _scenario(args)
    total_weighted_demand(s)
    if args.plan:
        plan = _plan(args.plan, s)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            plan = search(s, _search_cfg(args)).plan
    res = simulate(s, plan, args.samples, args.seed, threads=args.threads)
    doc = res.to_dict()
    doc["within_3_std_err"] = bool(abs(res.R_hat - res.R_analytic) <= 3 * res.std_err)
    _emit_json(doc, args.out)
    if args.hist:
        _emit_csv(["lateness_lo", "lateness_hi", "count"], res.histogram_rows(), args.hist)
    return EXIT_OK


def cmd_tighten(args):
    s = _scenario(args)
    cfg = _search_cfg(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = search(s, cfg)
        res = tighten_budget(s, rep, cfg, eps_R=args.tighten_eps)
    _emit_csv(["budget", "R", "cost"], ([r["budget"], r["R"], r["cost"]] for r in res.rows()), args.out)
    best = _plan_summary(s, res.best.plan, cfg.force_prob_one)
    best["budget"] = res.best.budget
    best["initial_cost"] = rep.cost
    best["R0"] = res.R0
    _emit_summary(best, args.summary)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="aidnet", description="Dispatch optimization for aid delivery networks.")
    parser.add_argument("--version", action="version", version=f"aidnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, solver=True):
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--out", help="output file (stdout when omitted)")
        p.add_argument("--eta-c", type=float, default=None, help="pruning and drop threshold")
        p.add_argument("--eta-h", type=float, default=None, help="start-point success target")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
        p.add_argument("--force-prob-one", action="store_true",
                       help="diagnostic mode: every success probability is taken as 1")
        if solver:
            p.add_argument("--iota-h", type=int, default=None, help="continuation steps")
            p.add_argument("--schedule", choices=("uniform", "geometric"), default=None)
            p.add_argument("--max-iters", type=int, default=50, help="cap on accepted search moves")

    p = sub.add_parser("validate", help="check a scenario file")
    common(p, solver=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("warmstart", help="feasible start plan")
    common(p, solver=False)
    p.set_defaults(func=cmd_warmstart)

    p = sub.add_parser("solve", help="optimize dispatch, cargo and times")
    common(p)
    p.add_argument("--tighten", action="store_true", help="also run budget tightening")
    p.add_argument("--tighten-eps", type=float, default=0.5, help="allowed drop in R while tightening")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="evaluate a plan")
    common(p, solver=False)
    p.add_argument("--plan", required=True, help="plan JSON or solve report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("contour", help="reliability over a grid of two departure times")
    common(p)
    p.add_argument("--plan", help="plan JSON or solve report (solved when omitted)")
    p.add_argument("--x", required=True, help="first variable, e.g. t_fa[0]")
    p.add_argument("--y", required=True, help="second variable, e.g. t_df[0]")
    p.add_argument("--x-range", type=_range, required=True, metavar="LO:HI")
    p.add_argument("--y-range", type=_range, required=True, metavar="LO:HI")
    p.add_argument("--n", type=int, default=200, help="grid points per axis")
    p.add_argument("--zeta", type=float, default=None, help="penalty scale override")
    p.add_argument("--summary", help="JSON file for argmax and local maxima")
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("mc-check", help="Monte Carlo estimate of a plan's reliability")
    common(p)
    p.add_argument("--plan", help="plan JSON or solve report (solved when omitted)")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hist", help="CSV file for the lateness histogram")
    p.set_defaults(func=cmd_mc_check)

    p = sub.add_parser("tighten", help="solve, then lower the budget step by step")
    common(p)
    p.add_argument("--tighten-eps", type=float, default=0.5, help="allowed drop in R")
    p.add_argument("--summary", help="JSON file for the cheapest near-best plan")
    p.set_defaults(func=cmd_tighten)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "samples", 1) < 1:
        parser.error("--samples must be at least 1")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, DegenerateDemand, ShapeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except UnknownVariable as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_VARIABLE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
