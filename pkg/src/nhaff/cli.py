"""Command-line front end.

Subcommands::

    nhaff simulate  --model builtin:affine_particle --param c=1 --potential z \
                    --q0 1,1,0 --v0 0,0,0 --t 10 --dt 1e-3 --out traj.csv
    nhaff reaction  --model ... --q0 ... --v0 ...
    nhaff rad       --model ... --grid "-1:1:3,0.5:1.5:3,-1:1:3"
    nhaff check     --model ... --what energy --grid ...

Exit codes: 0 success, 2 validation or I/O error, 3 guard stop,
4 solver error, 5 check verdict negative.  All floats are printed with 17
significant digits and all sampling flows from one seed (``--seed`` or
the ``NHAFF_SEED`` environment variable), so outputs are byte-identical
across reruns.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, dynamics, model as model_mod
from .expr import ExprError
from .linalg import RankDropError
from .model import ModelError, ModelSpec, State, evaluate_frame, load_model, project_velocity
from .reaction import ConstraintResidualError, reaction_force, xi

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_GUARD_STOP = 3
EXIT_SOLVER_ERROR = 4
EXIT_CHECK_FAILED = 5

FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# deterministic JSON with 17-significant-digit floats

def _json17(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  "{k}": {_json17(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(np.asarray(obj).tolist()) if isinstance(obj, np.ndarray) else list(obj)
        return "[" + ", ".join(_json17(v, indent) for v in seq) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return FLOAT_FMT % float(obj)
    if obj is None:
        return "null"
    return '"' + str(obj).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _emit_json(doc: dict, out: str | None) -> None:
    text = _json17(doc) + "\n"
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text)


# ---------------------------------------------------------------------------
# argument plumbing

def _parse_params(items) -> dict[str, float]:
    params: dict[str, float] = {}
    for item in items or []:
        if "=" not in item:
            raise ModelError(f"--param expects NAME=VALUE, got '{item}'")
        name, _, value = item.partition("=")
        params[name.strip()] = float(value)
    return params


def _parse_vector(text: str, n: int, what: str) -> np.ndarray:
    vals = np.array([float(x) for x in text.split(",")], dtype=float)
    if vals.size != n:
        raise ModelError(f"{what} needs {n} comma-separated values, got {vals.size}")
    return vals


def _load(args) -> ModelSpec:
    return load_model(args.model, params=_parse_params(args.param), potential=args.potential)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("NHAFF_SEED", "0"))


def _resolve_field(m: ModelSpec, text: str):
    """A --field/--observable value: preset name (F, K, xi) or expression list."""
    presets = analysis.builtin_fields(m)
    if text in presets:
        return presets[text]
    if text == "xi":
        return analysis.xi_field(m)
    if "," not in text:
        raise ModelError(f"unknown field preset '{text}' (have"
                         f" {', '.join([*presets, 'xi']) or 'none'}); or pass"
                         " a comma-separated expression list")
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != m.n:
        raise ModelError(f"field needs {m.n} components, got {len(parts)}")
    return analysis.VectorFieldSpec.parse(parts)


def _common_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="builtin:<name> or a model JSON path")
    p.add_argument("--param", action="append", metavar="NAME=VALUE",
                   help="parameter override (repeatable)")
    p.add_argument("--potential", default=None, metavar="EXPR",
                   help="potential expression or preset")
    p.add_argument("--seed", type=int, default=None,
                   help="sampling seed (default: NHAFF_SEED env var or 0)")
    p.add_argument("--out", default=None, help="output file path")


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    m = _load(args)
    q0 = _parse_vector(args.q0, m.n, "--q0")
    v0 = _parse_vector(args.v0, m.n, "--v0")
    if not model_mod.check_guards(m, q0):
        raise ModelError(f"initial configuration violates a guard: q0={q0.tolist()}")
    opts = dynamics.IntegrateOpts(project=not args.no_project, stride=args.stride)
    traj = dynamics.integrate(m, State(q0, v0), args.t, args.dt, opts)
    if args.out:
        traj.to_csv(args.out)

    summary = {
        "model": args.model,
        "termination": traj.termination,
        "t_final": float(traj.t[-1]),
        "dt": args.dt,
        "stride": args.stride,
        "seed": _seed(args),
        "v0_projection_delta": traj.meta["v0_projection_delta"],
        "energy_drift": float(np.max(np.abs(traj.E - traj.E[0]))),
        "max_residual": float(np.max(traj.residual)),
        "samples": len(traj),
    }
    observables = {}
    for name in args.observable or []:
        Y = _resolve_field(m, name)
        if callable(Y) and not isinstance(Y, analysis.VectorFieldSpec):
            J = np.array([dynamics.momentum(evaluate_frame(m, traj.q[j]), traj.v[j], Y(traj.q[j]))
                          for j in range(len(traj))])
            drift = float(np.max(np.abs(J - J[0])))
            observables[name] = {"J0": float(J[0]), "max_drift": drift,
                                 "rel_drift": drift / (1.0 + abs(float(J[0])))}
        else:
            observables[name] = analysis.momentum_drift(traj, m, Y).to_dict()
    if observables:
        summary["observables"] = observables
    _emit_json(summary, None)
    if traj.termination == "guard_stop":
        return EXIT_GUARD_STOP
    if traj.termination == "solver_error":
        return EXIT_SOLVER_ERROR
    return EXIT_OK


def cmd_reaction(args) -> int:
    m = _load(args)
    q0 = _parse_vector(args.q0, m.n, "--q0")
    v_raw = _parse_vector(args.v0, m.n, "--v0")
    f = evaluate_frame(m, q0)
    v = project_velocity(f, v_raw)
    sample = reaction_force(f, v)
    xi_q = xi(f)
    doc = {
        "model": args.model,
        "q": q0,
        "v": v,
        "v0_projection_delta": float(np.linalg.norm(v - v_raw)),
        "R": sample.R,
        "lambda": sample.lam,
        "xi": xi_q,
        "R_dot_xi": float(sample.R @ xi_q),
        "E": dynamics.energy(f, v),
    }
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_rad(args) -> int:
    m = _load(args)
    grid = analysis.grid_box(args.grid)
    seed = _seed(args)
    lines = ["," .join([f"q{i}" for i in range(1, m.n + 1)] + ["d", "fiber_dim", "flags"])]
    for idx, q in enumerate(grid):
        rep = analysis.rad_fiber(m, q, N=args.samples, speed=args.speed,
                                 rank_tol=args.tol_rank,
                                 rng=analysis.point_rng(seed, idx))
        row = [FLOAT_FMT % x for x in q] + [str(rep.d), str(rep.fiber_dim),
                                            ";".join(rep.flags)]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    m = _load(args)
    seed = _seed(args)
    if args.what == "generator":
        if not args.field or not args.q0:
            raise ModelError("--what generator needs --field and --q0")
        Y = _resolve_field(m, args.field)
        if not isinstance(Y, analysis.VectorFieldSpec):
            raise ModelError("--what generator needs a symbolic field")
        res = analysis.generator_projection(m, Y, _parse_vector(args.q0, m.n, "--q0"))
        passed = abs(res.obstruction) <= args.tol_section
        doc = res.to_dict()
        doc["verdict"] = "projectable" if passed else "obstructed"
        _emit_json(doc, args.out)
        return EXIT_OK if passed else EXIT_CHECK_FAILED

    if not args.grid:
        raise ModelError(f"--what {args.what} needs --grid")
    grid = analysis.grid_box(args.grid)
    if args.what == "energy":
        verdict = analysis.energy_conservation_test(
            m, grid, N=args.samples, speed=args.speed,
            section_tol=args.tol_section, seed=seed)
        ok = verdict.is_section
    elif args.what == "section":
        if not args.field:
            raise ModelError("--what section needs --field")
        verdict = analysis.is_section_of_rad(
            m, _resolve_field(m, args.field), grid, N=args.samples,
            speed=args.speed, section_tol=args.tol_section, seed=seed)
        ok = verdict.is_section
    elif args.what == "gauge":
        if not args.field:
            raise ModelError("--what gauge needs --field")
        Y = _resolve_field(m, args.field)
        if not isinstance(Y, analysis.VectorFieldSpec):
            raise ModelError("--what gauge needs a symbolic field")
        verdict = analysis.gauge_symmetry_test(
            m, Y, grid, N=args.samples, speed=args.speed,
            tol=args.tol_section, seed=seed,
            on_constraint=not args.off_constraint)
        ok = verdict.is_gauge_symmetry
    else:  # pragma: no cover - argparse restricts choices
        raise ModelError(f"unknown check '{args.what}'")
    _emit_json(verdict.to_dict(), args.out)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="nhaff", description=__doc__,
                                  formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a trajectory, write CSV + summary JSON")
    _common_model_flags(p)
    p.add_argument("--q0", required=True, help="initial configuration, comma separated")
    p.add_argument("--v0", required=True, help="initial velocity (projected onto the fiber)")
    p.add_argument("--t", type=float, required=True, help="final time")
    p.add_argument("--dt", type=float, required=True, help="fixed step size")
    p.add_argument("--stride", type=int, default=10, help="store every Nth step")
    p.add_argument("--no-project", action="store_true",
                   help="skip per-step velocity re-projection")
    p.add_argument("--observable", action="append", metavar="NAME|EXPRLIST",
                   help="momentum observable: preset (F, K, xi) or expressions (repeatable)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reaction", help="reaction force, multiplier, xi and energy at one state")
    _common_model_flags(p)
    p.add_argument("--q0", required=True)
    p.add_argument("--v0", required=True)
    p.set_defaults(func=cmd_reaction)

    p = sub.add_parser("rad", help="reaction-annihilator fiber ranks over a grid (CSV)")
    _common_model_flags(p)
    p.add_argument("--grid", required=True, help="box grid 'lo:hi:n,lo:hi:n,...'")
    p.add_argument("--samples", type=int, default=None, help="fiber velocity samples per point")
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--tol-rank", type=float, default=analysis.DEFAULT_RANK_TOL)
    p.set_defaults(func=cmd_rad)

    p = sub.add_parser("check", help="conservation / section / gauge / generator checks")
    _common_model_flags(p)
    p.add_argument("--what", required=True, choices=["energy", "section", "gauge", "generator"])
    p.add_argument("--grid", default=None, help="box grid 'lo:hi:n,...'")
    p.add_argument("--q0", default=None, help="configuration for --what generator")
    p.add_argument("--field", default=None, metavar="NAME|EXPRLIST",
                   help="candidate field: preset (F, K, xi) or expression list")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--tol-section", type=float, default=analysis.DEFAULT_SECTION_TOL)
    p.add_argument("--off-constraint", action="store_true",
                   help="sample gauge test velocities off the constraint fiber")
    p.set_defaults(func=cmd_check)
    return top


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, ExprError, RankDropError, ConstraintResidualError,
            ValueError, OSError) as exc:
        print(f"nhaff: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
