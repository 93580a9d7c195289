"""Command-line front end.

Subcommands: eval, jvp, vjp, jvp-inv, vjp-inv, lump, newton, ode, check.
Numeric results are printed as compact JSON; convergence tables can be
emitted as CSV.  Errors exit nonzero with a machine-readable JSON payload.
The default seed is 0, overridable by the ADTOOL_SEED environment variable;
an explicit --seed wins over both.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import modes, ode, solvers
from .errors import AdtoolError, ValidationError
from .generate import sample_inputs
from .lumpify import (
    Dag,
    brute_force_schedule,
    eval_dag,
    greedy_schedule,
    lumped_mode_eval,
    schedule_objectives,
    OBJECTIVES,
)
from .oracle import check_identities, compare_modes
from .programs import parse_program
from .trace import Trace, gather, run_primal, scatter

_MODE_NAMES = {
    "jvp": "jvp",
    "vjp": "vjp",
    "jvp-inv": "jvp_inverse",
    "vjp-inv": "vjp_inverse",
}


def _emit(obj) -> None:
    print(json.dumps(obj, separators=(",", ":")))


def _floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got '{text}'") from None


def _load(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_program(fh.read())
    except OSError as exc:
        raise ValidationError(f"cannot read '{path}': {exc}") from None


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("ADTOOL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"ADTOOL_SEED must be an integer, got '{env}'") from None
    return 0


def _program_state(prog, at):
    """Full evaluation state from --at values."""
    if isinstance(prog, Trace):
        if len(at) != len(prog.input_slots):
            raise ValidationError(
                f"--at needs {len(prog.input_slots)} value(s) for this program"
            )
        return scatter(prog.n, prog.input_slots, at)
    if len(at) != len(prog.inputs):
        raise ValidationError(f"--at needs {len(prog.inputs)} value(s) for this graph")
    return np.array(at, dtype=float)


def _cmd_eval(args) -> int:
    prog = _load(args.program)
    x = _program_state(prog, _floats(args.at))
    if isinstance(prog, Trace):
        result = gather(run_primal(prog, x), prog.output_slots)
    else:
        result, _ = eval_dag(prog, x)
    _emit({"result": [float(v) for v in result]})
    return 0


def _cmd_mode(args) -> int:
    prog = _load(args.program)
    mode = _MODE_NAMES[args.command]
    x = _program_state(prog, _floats(args.at))
    vec = _floats(args.vec)
    if isinstance(prog, Trace):
        if len(vec) != prog.n:
            raise ValidationError(f"--vec needs {prog.n} value(s)")
        fn = getattr(modes, mode)
        if mode in ("jvp_inverse", "vjp_inverse"):
            result = fn(prog, x, np.array(vec), tol=args.tol)
        else:
            result = fn(prog, x, np.array(vec))
    else:
        n = prog.n_active_inputs
        if len(vec) != n:
            raise ValidationError(f"--vec needs {n} value(s)")
        result = lumped_mode_eval(prog, n, x, np.array(vec), mode)
    _emit({"result": [float(v) for v in result]})
    return 0


def _cmd_lump(args) -> int:
    prog = _load(args.program)
    if isinstance(prog, Trace):
        from .lumpify import trace_to_dag

        prog = trace_to_dag(prog)
    n = prog.n_active_inputs
    if args.objective is None:
        sched = greedy_schedule(prog, n)
        algorithm = "greedy"
    else:
        sched = brute_force_schedule(prog, n, args.objective)
        algorithm = f"brute-force:{args.objective}"
    _emit({
        "algorithm": algorithm,
        "n": sched.n,
        "order": list(sched.order),
        "cuts": list(sched.cuts),
        "lumps": [
            {"nodes": list(lp.ids), "size": lp.size, "max_width": lp.max_width,
             "l": lp.l, "k": lp.k}
            for lp in sched.lumps
        ],
        "objectives": schedule_objectives(sched),
    })
    return 0


def _cmd_newton(args) -> int:
    prog = _load(args.program)
    x0 = _floats(args.at)
    cfg = solvers.NewtonConfig(max_iters=args.max_iters, abs_tol=args.tol)
    result = solvers.newton_solve(prog, np.array(x0), cfg)
    _emit({
        "root": [float(v) for v in result.root],
        "iterations": result.iterations,
        "residuals": [float(r) for r in result.residuals],
    })
    return 0


def _cmd_ode(args) -> int:
    prog = _load(args.field)
    field = ode.VectorField(prog)
    x0 = np.zeros(field.n) if args.at is None else np.array(_floats(args.at))
    mode = "primal" if args.mode == "eval" else _MODE_NAMES.get(args.mode, args.mode)
    if mode not in ode.ODE_MODES:
        raise ValidationError(f"unknown ode mode '{args.mode}'")
    vec = None if args.vec is None else np.array(_floats(args.vec))

    if args.dts:
        problem = ode.OdeProblem(field, args.t0, args.t1, _floats(args.dts)[0], x0)
        rows = ode.convergence_report(problem, mode, _floats(args.dts), v=vec)
        if args.csv:
            buf = io.StringIO()
            writer = csv.writer(buf)
            writer.writerow(["dt", "error", "order"])
            for row in rows:
                writer.writerow([repr(row.dt), repr(row.error),
                                 "" if row.order is None else repr(row.order)])
            sys.stdout.write(buf.getvalue())
        else:
            _emit({"table": [
                {"dt": row.dt, "error": row.error, "order": row.order}
                for row in rows
            ]})
        return 0

    problem = ode.OdeProblem(field, args.t0, args.t1, args.dt, x0)
    if mode == "primal":
        result = ode.integrate_primal(problem)[-1]
    else:
        if vec is None:
            raise ValidationError("--vec is required for derivative modes")
        if vec.shape != (field.n,):
            raise ValidationError(f"--vec needs {field.n} value(s)")
        runner = {
            "jvp": ode.ode_forward_tangent,
            "vjp": ode.ode_reverse_cotangent,
            "jvp_inverse": ode.ode_reverse_inverse,
            "vjp_inverse": ode.ode_forward_inverse,
        }[mode]
        if mode in ("jvp_inverse", "vjp_inverse"):
            result = runner(problem, vec, exact_solve=args.exact_solve)
        else:
            result = runner(problem, vec)
    _emit({"result": [float(v) for v in result]})
    return 0


def _cmd_check(args) -> int:
    prog = _load(args.program)
    seed = _resolve_seed(args)
    rng = np.random.default_rng(seed)
    if args.at is not None:
        x = _program_state(prog, _floats(args.at))
    else:
        x = sample_inputs(prog, rng)
    comparison = compare_modes(prog, x, args.trials, seed=seed, tol=args.tol)
    identities = check_identities(prog, x, args.trials, seed=seed)
    ok = comparison.passed and identities.passed
    _emit({
        "seed": seed,
        "at": [float(v) for v in x],
        "modes": comparison.to_dict(),
        "identities": identities.to_dict(),
        "pass": ok,
    })
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adtool",
        description="Evaluate straight-line numeric programs and their four "
                    "derivative accumulation modes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, vec=False):
        p.add_argument("program", help="program file")
        p.add_argument("--at", required=True, help="comma-separated input values")
        if vec:
            p.add_argument("--vec", required=True, help="comma-separated derivative vector")
            p.add_argument("--tol", type=float, default=modes.DEFAULT_SINGULAR_TOL,
                           help="singular-step tolerance for inverse modes")
        p.add_argument("--json", action="store_true", help="JSON output (default)")

    p = sub.add_parser("eval", help="run the program")
    common(p)
    p.set_defaults(fn=_cmd_eval)

    for name in ("jvp", "vjp", "jvp-inv", "vjp-inv"):
        p = sub.add_parser(name, help=f"{name} derivative product")
        common(p, vec=True)
        p.set_defaults(fn=_cmd_mode)

    p = sub.add_parser("lump", help="schedule a graph into constant-width lumps")
    p.add_argument("program", help="program file")
    p.add_argument("--objective", choices=OBJECTIVES, default=None,
                   help="use exhaustive search minimizing this objective")
    p.add_argument("--json", action="store_true", help="JSON output (default)")
    p.set_defaults(fn=_cmd_lump)

    p = sub.add_parser("newton", help="find a root of a square program")
    p.add_argument("program", help="program file")
    p.add_argument("--at", required=True, help="starting point")
    p.add_argument("--tol", type=float, default=1e-12, help="residual tolerance")
    p.add_argument("--max-iters", type=int, default=25)
    p.add_argument("--json", action="store_true", help="JSON output (default)")
    p.set_defaults(fn=_cmd_newton)

    p = sub.add_parser("ode", help="integrate a field and its derivative flows")
    p.add_argument("--field", required=True, help="vector-field program file")
    p.add_argument("--t0", type=float, required=True)
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--dt", type=float, help="step size for a single run")
    p.add_argument("--dts", help="comma-separated decreasing steps: emit a convergence table")
    p.add_argument("--mode", default="eval",
                   help="eval, jvp, vjp, jvp-inv, or vjp-inv")
    p.add_argument("--vec", help="derivative vector for non-primal modes")
    p.add_argument("--at", help="initial state (default zeros)")
    p.add_argument("--exact-solve", action="store_true",
                   help="solve inverse steps exactly through the lumped solver")
    p.add_argument("--json", action="store_true", help="JSON output (default)")
    p.add_argument("--csv", action="store_true", help="CSV output for tables")
    p.set_defaults(fn=_cmd_ode)

    p = sub.add_parser("check", help="compare every mode against the dense reference")
    p.add_argument("program", help="program file")
    p.add_argument("--at", help="input values (default: sampled from the seed)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--json", action="store_true", help="JSON output (default)")
    p.set_defaults(fn=_cmd_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "ode" and not args.dts and args.dt is None:
        parser.error("ode requires --dt or --dts")
    try:
        return args.fn(args)
    except AdtoolError as exc:
        _emit({"error": exc.payload()})
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
