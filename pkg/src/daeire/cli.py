"""Command-line driver: analyze, witness, reduce, solve.

Exit status is 0 on success, 2 when some component failed while others
succeeded or were attempted, and 1 on any fatal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .errors import DaeError
from .expr import jet_name, to_str
from .ire import ire_loop
from .model_io import (emit_report_json, emit_trajectory_csv, load_model,
                       load_point, validate_square)
from .solver import SolveConfig, global_solve, initial_points
from .structural import analyze

log = logging.getLogger("daeire")

COMMANDS = ("analyze", "witness", "reduce", "solve")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="daeire",
        description="Structural analysis and index reduction by embedding for DAEs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("model", help="model file (.dae text or JSON)")
        p.add_argument("--abstol", type=float, default=1e-6)
        p.add_argument("--reltol", type=float, default=1e-3)
        p.add_argument("--step", type=float, default=1e-2)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--beta", type=float, default=1e5)
        p.add_argument("--t0", type=float, default=None)
        p.add_argument("--tend", type=float, default=None)
        p.add_argument("--max-passes", type=int, default=10)
        p.add_argument("--out", default=None,
                       help="output directory (default: report on stdout; "
                            "solve writes CSVs to the current directory)")
        p.add_argument("--initial", default=None,
                       help="JSON initial point, bypasses witness generation")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


# ------------------------------------------------------------------ sections

def _structure(sigma, sol, names) -> dict:
    return {"variables": list(names), "signature": sigma, "c": list(sol.c),
            "d": list(sol.d), "delta": sol.delta, "transversal": list(sol.transversal)}


def _named(point, names) -> dict:
    return {jet_name(v, names): val for v, val in sorted(point.values.items())}


def _witness_section(ws, names) -> dict:
    return {
        "seed": ws.seed,
        "formulation": ws.formulation,
        "random_point": ws.a,
        "unknowns": [jet_name(v, names) for v in ws.unknowns],
        "points": [list(map(float, p)) for p in ws.points],
        "residuals": ws.residuals,
        "sigma_min": ws.sigma_min,
        "ranks": ws.ranks,
        "components": ws.components,
        "failed_paths": ws.failed_paths,
    }


def _ire_section(res, seed) -> dict:
    ps = res.system
    names = ps.names
    return {
        "seed": seed,
        "iterations": [lg.as_dict() for lg in res.passes],
        "xi": [[{"variable": jet_name(y, names), "value": v} for y, v in rec.frozen]
               for rec in res.records],
        "replaced": [[{"new": names[u.var], "old": jet_name(s, names)}
                      for u, s in rec.replaced] for rec in res.records],
        "delta": res.delta,
        "regularized": {
            "variables": list(names),
            "c": list(ps.sol.c),
            "d": list(ps.sol.d),
            "equations": [to_str(e, names) + " = 0" for e in ps.equations],
            "carried_constraints": [to_str(e, names) + " = 0" for e in ps.carried],
        },
        "point": _named(res.point, names),
    }


# ------------------------------------------------------------------ commands

def _write(out_dir, filename, text):
    if out_dir is None:
        sys.stdout.write(text)
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, filename), "w", encoding="utf-8") as fh:
        fh.write(text)


def _starts(args, sys_, ps, t0):
    if args.initial:
        return None, [(0, load_point(args.initial, sys_))]
    return initial_points(sys_, ps, t0, args.seed, args.abstol, args.beta)


def cmd_analyze(args, model) -> int:
    sigma, sol, _ = analyze(model.equations, model.names)
    _write(args.out, "report.json", emit_report_json(
        command="analyze", structure=_structure(sigma, sol, model.names),
        status="ok"))
    return 0


def cmd_witness(args, model) -> int:
    t0 = model.t0 if args.t0 is None else args.t0
    sigma, sol, ps = analyze(model.equations, model.names)
    ws, _ = initial_points(model, ps, t0, args.seed, args.abstol, args.beta)
    _write(args.out, "witness.json", emit_report_json(
        command="witness", structure=_structure(sigma, sol, model.names),
        witness=_witness_section(ws, model.names), status="ok"))
    return 0


def cmd_reduce(args, model) -> int:
    t0 = model.t0 if args.t0 is None else args.t0
    sigma, sol, ps = analyze(model.equations, model.names)
    ws, starts = _starts(args, model, ps, t0)
    comps, code = [], 0
    for label, p in starts:
        entry = {"component": label, "start": _named(p, model.names)}
        try:
            res = ire_loop(model.equations, model.names, p, abstol=args.abstol,
                           seed=args.seed, max_passes=args.max_passes, sol=sol)
            entry.update(_ire_section(res, args.seed), status="ok")
        except DaeError as exc:
            entry.update(status="failed", stage=exc.stage, error=str(exc))
            print(f"component {label}: {exc.stage}: {exc}", file=sys.stderr)
            code = 2
        comps.append(entry)
    sections = {"command": "reduce", "structure": _structure(sigma, sol, model.names)}
    if ws is not None:
        sections["witness"] = _witness_section(ws, model.names)
    _write(args.out, "report.json", emit_report_json(
        **sections, components=comps, status="ok" if code == 0 else "partial"))
    return code


def cmd_solve(args, model) -> int:
    cfg = SolveConfig(abstol=args.abstol, reltol=args.reltol, h=args.step,
                      t0=args.t0, t_end=args.tend)
    initial = load_point(args.initial, model) if args.initial else None
    result = global_solve(model, cfg, seed=args.seed, initial=initial,
                          beta=args.beta, max_passes=args.max_passes)
    out = args.out if args.out is not None else "."
    comps = []
    for k, comp in enumerate(result.components):
        entry = {"component": comp.label, "status": comp.status,
                 "start": _named(comp.point, model.names)}
        if comp.ire is not None:
            entry.update(_ire_section(comp.ire, args.seed))
        if comp.status != "ok":
            entry.update(stage=comp.stage, error=comp.error)
            print(f"component {comp.label}: {comp.stage}: {comp.error}", file=sys.stderr)
        tr = comp.trajectory
        if tr is not None:
            fname = f"component_{k}.csv"
            _write(out, fname, emit_trajectory_csv(tr))
            entry.update(csv=fname, samples=len(tr), failure_time=tr.failure_time)
        comps.append(entry)
    sections = {"command": "solve", "structure": _structure(result.sigma, result.sol,
                                                            model.names)}
    if result.witness is not None:
        sections["witness"] = _witness_section(result.witness, model.names)
    code = 2 if result.failed else 0
    _write(out, "report.json", emit_report_json(
        **sections, components=comps, status="ok" if code == 0 else "partial"))
    return code


HANDLERS = {"analyze": cmd_analyze, "witness": cmd_witness,
            "reduce": cmd_reduce, "solve": cmd_solve}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        model = load_model(args.model)
        validate_square(model)
        return HANDLERS[args.command](args, model)
    except DaeError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
