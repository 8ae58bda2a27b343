"""Command line: ``hybridloc {generate,solve,certify,mc,report}``.

Exit codes: 0 success, 1 I/O or data error, 2 usage error, 3 acceptance
check failed, 4 solver did not converge.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .certify import certify
from .cost import CoincidentPointsError, WeightMode
from .gen import GenConfig, GenerationError, calibrate_comm_radius, make_instance
from .model import ParseError, parse, serialize
from .solver import Init, SolverConfig, refine_nonconvex, solve_convex

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_CHECK, EXIT_NOCONV = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# flag dest -> config field; flags override config-file values
GEN_FLAGS = {
    "dim": ("--dim",), "n": ("--n",), "num_anchors": ("--num-anchors", "--anchors"),
    "region_side": ("--region-side", "--region"), "comm_radius": ("--comm-radius",),
    "bearing_edge_fraction": ("--bearing-edge-fraction",),
    "bearing_anchor_fraction": ("--bearing-anchor-fraction",),
    "sigma": ("--sigma",), "bearing_sigma_deg": ("--bearing-sigma-deg", "--bearing-deg"),
    "seed": ("--seed",), "max_attempts": ("--max-attempts",),
}
GEN_TYPES = {"dim": int, "n": int, "num_anchors": int, "seed": int, "max_attempts": int}
SOLVER_FLAGS = {"tol_pg": ("--tol-pg",), "max_iters": ("--max-iters",),
                "init": ("--init",)}
MC_FLAGS = {"min_trials": ("--min-trials",), "max_trials": ("--max-trials",),
            "window": ("--window",), "rel_tol": ("--rel-tol",), "jobs": ("--jobs",)}


def _add_gen_flags(p):
    g = p.add_argument_group("network generation")
    for dest, names in GEN_FLAGS.items():
        g.add_argument(*names, dest=dest, type=GEN_TYPES.get(dest, float), default=None)


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--tol-pg", dest="tol_pg", type=float, default=None)
    g.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    g.add_argument("--init", dest="init", choices=[i.value for i in Init if i is not Init.GIVEN],
                   default=None)
    g.add_argument("--no-acceleration", dest="use_acceleration", action="store_false",
                   default=None)
    g.add_argument("--mode", choices=[m.value for m in WeightMode], default=None,
                   help="quadratic weighting of range terms (default: unit)")


def _load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise DataError(f"config {path}: expected a JSON object")
    return doc


def _overlay(base: dict, args, keys) -> dict:
    out = dict(base)
    for k in keys:
        val = getattr(args, k, None)
        if val is not None:
            out[k] = val
    return out


def _gen_config(args, doc) -> GenConfig:
    fields = _overlay(doc.get("gen", doc if "n" in doc else {}), args, GEN_FLAGS)
    try:
        return GenConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid generation settings: {exc}") from None


def _solver_config(args, doc) -> SolverConfig:
    keys = list(SOLVER_FLAGS) + ["use_acceleration"]
    try:
        return SolverConfig(**_overlay(doc.get("solver", {}), args, keys))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid solver settings: {exc}") from None


def _mode(args, doc) -> WeightMode:
    return WeightMode(args.mode or doc.get("mode", WeightMode.UNIT.value))


def _read_instance(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    try:
        return parse(text)
    except ParseError as exc:
        raise DataError(f"{path}: {exc}") from None


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


# --- subcommands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    doc = _load_config(args.config)
    cfg = _gen_config(args, doc)
    radius = cfg.comm_radius
    if radius is None:
        radius = calibrate_comm_radius(cfg)
        print(f"calibrated comm_radius = {radius:g} m")
    try:
        inst, truth, attempts = make_instance(cfg, np.random.default_rng(cfg.seed), radius)
    except GenerationError as exc:
        raise DataError(str(exc)) from None
    _write(args.output, serialize(inst, truth))
    print(f"wrote {args.output}: n={inst.n}, {inst.num_edges} edges, {inst.num_links} anchor "
          f"links, comm_radius={radius:g} m, {attempts - 1} localizability retries")
    return EXIT_OK


def _solution_doc(sol, refined=None) -> dict:
    doc = {"x": sol.x.tolist(), "y": sol.y.tolist(), "w": sol.w.tolist(),
           "objective": sol.objective, "iterations": sol.iterations,
           "converged": sol.converged, "pg_residual": sol.pg_residual, "mode": sol.mode.value}
    if refined is not None:
        doc["refined"] = {"x": refined.x.tolist(), "cost": refined.cost,
                          "iterations": refined.iterations, "converged": refined.converged}
    return doc


def cmd_solve(args) -> int:
    doc = _load_config(args.config)
    inst, _ = _read_instance(args.instance)
    cfg = _solver_config(args, doc)
    mode = _mode(args, doc)
    sol = solve_convex(inst, cfg, mode)
    refined = None
    if args.refine:
        try:
            refined = refine_nonconvex(sol.x, inst, mode)
        except CoincidentPointsError as exc:
            raise DataError(f"refinement failed: {exc}") from None
    _write(args.output, json.dumps(_solution_doc(sol, refined), indent=1))
    print(f"objective {sol.objective:.12g}, {sol.iterations} iterations, "
          f"pg residual {sol.pg_residual:.3g}, converged={sol.converged}")
    return EXIT_OK if sol.converged else EXIT_NOCONV


class _Sol:
    def __init__(self, doc, inst):
        try:
            self.x = np.array(doc["x"], dtype=float).reshape(inst.n, inst.dim)
            self.y = np.array(doc["y"], dtype=float).reshape(inst.num_edges, inst.dim)
            self.w = np.array(doc["w"], dtype=float).reshape(inst.num_links, inst.dim)
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"solution does not match instance: {exc}") from None


def cmd_certify(args) -> int:
    inst, truth = _read_instance(args.instance)
    try:
        sol_doc = json.loads(Path(args.solution).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read solution {args.solution}: {exc}") from None
    sol = _Sol(sol_doc, inst)
    try:
        rep = certify(sol, inst, truth)
    except CoincidentPointsError as exc:
        raise DataError(str(exc)) from None
    out = rep.to_dict()
    if truth is None:
        out.pop("loc_error")
        out.pop("loc_error_max")
    text = json.dumps(out, indent=1)
    if args.output:
        _write(args.output, text)
    angles = rep.angles
    print(f"E1 {rep.E1:.6g} m, E2 {rep.E2:.3g} m, "
          f"angles median {np.median(angles) if angles.size else float('nan'):.3g} deg"
          + (f", loc_error {rep.loc_error:.4g} m" if truth is not None else ""))
    return EXIT_OK


def cmd_mc(args) -> int:
    doc = _load_config(args.config)
    gen = _gen_config(args, doc)
    solver = _solver_config(args, doc)
    mc_fields = {k: v for k, v in doc.items() if k not in ("gen", "solver")}
    mc_fields = _overlay(mc_fields, args, MC_FLAGS)
    if args.mode:
        mc_fields["mode"] = args.mode
    if args.metrics:
        mc_fields["metrics"] = tuple(args.metrics.split(","))
    if args.seed is not None:
        # for campaigns --seed is the base seed of the trial seed split
        mc_fields["base_seed"] = args.seed
    try:
        cfg = harness.McConfig(gen=gen, solver=solver, **mc_fields)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid campaign settings: {exc}") from None

    def progress(rec):
        if args.verbose:
            status = "ok" if rec.ok else f"FAILED ({rec.error})"
            print(f"trial {rec.trial}: {status}", file=sys.stderr)

    try:
        summary = harness.run_mc(cfg, progress)
        code = EXIT_OK
    except harness.CampaignAborted as exc:
        print(f"campaign aborted: {exc}", file=sys.stderr)
        summary, code = exc.summary, EXIT_DATA
    harness.write_results(summary, args.output)
    print(harness.format_report(harness.summarize(summary)))
    print(f"results written to {args.output}")
    return code


def cmd_report(args) -> int:
    try:
        results = harness.load_results(args.directory)
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(str(exc)) from None
    if not results.rows:
        raise DataError(f"{args.directory}: no trials recorded")
    report = harness.summarize(results)
    print(harness.format_report(report))
    if args.json:
        print(json.dumps(report, indent=1))
    if not args.check:
        return EXIT_OK
    baseline = None
    if args.baseline:
        baseline = harness.summarize(harness.load_results(args.baseline))
    checks = harness.check_report(report, baseline)
    for name, passed, detail in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return EXIT_OK if all(p for _, p, _ in checks) else EXIT_CHECK


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridloc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random localizable instance")
    p.add_argument("--config")
    _add_gen_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve the convex relaxation")
    p.add_argument("instance")
    p.add_argument("--config")
    _add_solver_flags(p)
    p.add_argument("--refine", action="store_true", help="polish x on the nonconvex ML cost")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("certify", help="suboptimality certificates of a solution")
    p.add_argument("instance")
    p.add_argument("solution")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("mc", help="run a Monte Carlo campaign")
    p.add_argument("--config")
    _add_gen_flags(p)
    _add_solver_flags(p)
    g = p.add_argument_group("campaign")
    g.add_argument("--min-trials", dest="min_trials", type=int, default=None)
    g.add_argument("--max-trials", dest="max_trials", type=int, default=None)
    g.add_argument("--window", type=int, default=None)
    g.add_argument("--rel-tol", dest="rel_tol", type=float, default=None)
    g.add_argument("--jobs", type=int, default=None)
    g.add_argument("--metrics", help=f"comma list from {','.join(harness.ALL_METRICS)}")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("report", help="summarize a results directory")
    p.add_argument("directory")
    p.add_argument("--check", action="store_true", help="apply acceptance thresholds")
    p.add_argument("--baseline", help="n=10 results directory to compare a large campaign with")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
