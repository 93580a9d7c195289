"""Dense reference implementations used to validate the sparse modes.

The Jacobian here is assembled from explicit per-step dense matrices and
plain matrix products, cross-checked against central finite differences of
the primal; the solver is hand-rolled Gaussian elimination with partial
pivoting.  None of it shares code with the sparse step kernels, which is the
point: agreement between the two paths is the main correctness evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import modes
from .basis import Const, Slot, arg_values, eval_grads, eval_op
from .errors import (
    OracleError,
    SingularLumpError,
    SingularMatrixError,
    SingularStepError,
    ValidationError,
)
from .lumpify import Dag, eval_dag, lumped_mode_eval, greedy_schedule
from .trace import Trace, gather, run_primal

__all__ = [
    "dense_jacobian",
    "fd_jacobian",
    "dense_solve",
    "dense_inverse",
    "compare_modes",
    "check_identities",
    "ModeComparison",
    "IdentityReport",
    "rel_err",
]


def rel_err(got, want) -> float:
    """Max-norm error relative to max(1, ||want||_inf)."""
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    denom = max(1.0, float(np.max(np.abs(want))) if want.size else 0.0)
    diff = float(np.max(np.abs(got - want))) if want.size else 0.0
    return diff / denom


def _trace_jacobian(trace: Trace, x) -> np.ndarray:
    """Product of explicit per-step dense Jacobians, projected to the
    trace's output/input slots."""
    state = np.array(x, dtype=float)
    jac = np.eye(trace.n)
    for t, ins in enumerate(trace.instrs):
        vals = arg_values(ins.args, state)
        grads = eval_grads(ins.op, vals, step=t)
        step_mat = np.eye(trace.n)
        step_mat[ins.dest, :] = 0.0
        for operand, g in zip(ins.args, grads):
            if isinstance(operand, Slot) and operand.active:
                step_mat[ins.dest, operand.index] += g
        jac = step_mat @ jac
        state[ins.dest] = eval_op(ins.op, vals, step=t)
    return jac[np.ix_(trace.output_slots, trace.input_slots)]


def _dag_jacobian(dag: Dag, x) -> np.ndarray:
    """Forward accumulation of dense gradient rows over the graph nodes."""
    _, values = eval_dag(dag, x)
    active = dag.value_activity
    active_inputs = [name for name in dag.inputs if active[name]]
    m = len(active_inputs)
    rows = {name: np.zeros(m) for name in dag.inputs}
    for j, name in enumerate(active_inputs):
        rows[name][j] = 1.0
    for pos, node in enumerate(dag.nodes):
        vals = [a.value if isinstance(a, Const) else values[a] for a in node.args]
        grads = eval_grads(node.op, vals, step=pos)
        row = np.zeros(m)
        for ref, g in zip(node.args, grads):
            if not isinstance(ref, Const) and active[ref]:
                row += g * rows[ref]
        rows[node.id] = row
    out_rows = [rows[ref] for ref in dag.outputs if active[ref]]
    return np.array(out_rows, dtype=float).reshape(len(out_rows), m)


def _fd_step(xj: float) -> float:
    return 1e-6 * max(1.0, abs(xj))


def _trace_nonactive_taint(trace: Trace) -> set[int]:
    """Input slots whose perturbation reaches a non-active read.

    Non-active reads treat their value as a constant, so the derivative map
    deliberately differs from the finite-difference derivative of the primal
    along those inputs; such columns are exempt from the cross-check.
    """
    influences = {s: {s} for s in range(trace.n)}
    tainted: set[int] = set()
    for ins in trace.instrs:
        new = set()
        for operand in ins.args:
            if isinstance(operand, Slot):
                if operand.active:
                    new |= influences[operand.index]
                else:
                    tainted |= influences[operand.index]
        influences[ins.dest] = new
    return tainted


def fd_jacobian(prog, x) -> np.ndarray:
    """Central-difference Jacobian of the primal, columns over the inputs."""
    x = np.array(x, dtype=float)
    if isinstance(prog, Trace):
        def f(z):
            return gather(run_primal(prog, z), prog.output_slots)

        columns = list(prog.input_slots)
        positions = columns
    else:
        active = prog.value_activity

        def f(z):
            outs, _ = eval_dag(prog, z)
            return np.array(
                [o for o, ref in zip(outs, prog.outputs) if active[ref]], dtype=float
            )

        positions = [i for i, name in enumerate(prog.inputs) if active[name]]
        columns = positions
    base = f(x)
    jac = np.zeros((base.shape[0], len(columns)))
    for j, pos in enumerate(positions):
        h = _fd_step(x[pos])
        hi = x.copy()
        hi[pos] += h
        lo = x.copy()
        lo[pos] -= h
        jac[:, j] = (f(hi) - f(lo)) / (2.0 * h)
    return jac


def dense_jacobian(prog, x, check_fd: bool = True, fd_tol: float = 1e-5) -> np.ndarray:
    """Dense Jacobian of a trace or graph at ``x``.

    With ``check_fd`` (the default) the result is verified entry by entry
    against central finite differences; disagreement raises OracleError.
    """
    if isinstance(prog, Trace):
        jac = _trace_jacobian(prog, x)
        exempt = _trace_nonactive_taint(prog)
        skip = {j for j, s in enumerate(prog.input_slots) if s in exempt}
    elif isinstance(prog, Dag):
        jac = _dag_jacobian(prog, x)
        skip = set()
    else:
        raise ValidationError(f"expected a Trace or Dag, got {type(prog).__name__}")
    if check_fd:
        fd = fd_jacobian(prog, x)
        for i in range(jac.shape[0]):
            for j in range(jac.shape[1]):
                if j in skip:
                    continue
                err = abs(jac[i, j] - fd[i, j]) / max(1.0, abs(jac[i, j]))
                if err > fd_tol:
                    raise OracleError(
                        f"finite-difference cross-check failed at entry ({i}, {j}): "
                        f"accumulated {jac[i, j]:.12g}, differenced {fd[i, j]:.12g}"
                    )
    return jac


def dense_solve(mat, rhs, pivot_tol: float = 1e-12) -> np.ndarray:
    """Solve ``mat @ w = rhs`` by Gaussian elimination with partial pivoting."""
    a = np.array(mat, dtype=float)
    b = np.array(rhs, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"matrix must be square, got shape {a.shape}")
    n = a.shape[0]
    if b.shape[0] != n:
        raise ValidationError("right-hand side length does not match the matrix")
    norm = float(np.max(np.sum(np.abs(a), axis=1))) if n else 0.0
    tol = pivot_tol * norm
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= tol:
            raise SingularMatrixError(abs(a[p, k]), tol)
        if p != k:
            a[[k, p]] = a[[p, k]]
            b[[k, p]] = b[[p, k]]
        for i in range(k + 1, n):
            if a[i, k] != 0.0:
                lam = a[i, k] / a[k, k]
                a[i, k + 1:] -= lam * a[k, k + 1:]
                a[i, k] = 0.0
                b[i] -= lam * b[k]
    w = np.zeros_like(b)
    for k in range(n - 1, -1, -1):
        w[k] = (b[k] - a[k, k + 1:] @ w[k + 1:]) / a[k, k]
    return w


def dense_inverse(mat, pivot_tol: float = 1e-12) -> np.ndarray:
    a = np.asarray(mat, dtype=float)
    n = a.shape[0]
    inv = np.zeros((n, n))
    eye = np.eye(n)
    for j in range(n):
        inv[:, j] = dense_solve(a, eye[:, j], pivot_tol)
    return inv


def _mode_fns(prog):
    """Uniform (x, v) -> vector callables for all four modes."""
    if isinstance(prog, Trace):
        return {
            "jvp": lambda x, v: modes.jvp(prog, x, v),
            "vjp": lambda x, v: modes.vjp(prog, x, v),
            "jvp_inverse": lambda x, v: modes.jvp_inverse(prog, x, v),
            "vjp_inverse": lambda x, v: modes.vjp_inverse(prog, x, v),
        }
    schedule = greedy_schedule(prog, prog.n_active_inputs)
    return {
        mode: (lambda x, v, _m=mode: lumped_mode_eval(
            prog, prog.n_active_inputs, x, v, _m, schedule=schedule))
        for mode in ("jvp", "vjp", "jvp_inverse", "vjp_inverse")
    }


@dataclass
class ModeComparison:
    """Worst relative error of each mode against the dense references."""

    n: int
    trials: int
    seed: int
    tol: float
    max_rel_err: dict = field(default_factory=dict)
    singular: bool = False
    consistent_singularity: bool = True
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.singular:
            return self.consistent_singularity
        return all(e <= self.tol for e in self.max_rel_err.values())

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "trials": self.trials,
            "seed": self.seed,
            "tol": self.tol,
            "max_rel_err": dict(self.max_rel_err),
            "singular": self.singular,
            "consistent_singularity": self.consistent_singularity,
            "notes": list(self.notes),
            "passed": self.passed,
        }


def compare_modes(prog, x, trials: int, seed: int = 0, tol: float = 1e-8) -> ModeComparison:
    """Check all four modes against dense products J v, J^T v, J^-1 v, J^-T v.

    Random probe vectors are drawn from a seeded generator.  If a mode raises
    a singularity error, the report records whether the dense reference is
    near-singular as well instead of failing outright.
    """
    rng = np.random.default_rng(seed)
    fns = _mode_fns(prog)
    n = prog.n if isinstance(prog, Trace) else prog.n_active_inputs
    report = ModeComparison(n=n, trials=trials, seed=seed, tol=tol,
                            max_rel_err={name: 0.0 for name in fns})
    jac = dense_jacobian(prog, x)
    if jac.shape != (n, n):
        raise ValidationError(
            f"mode comparison needs a square derivative map, got {jac.shape}"
        )
    for _ in range(trials):
        v = rng.standard_normal(n)
        refs = {}
        try:
            refs["jvp"] = jac @ v
            refs["vjp"] = jac.T @ v
            refs["jvp_inverse"] = dense_solve(jac, v)
            refs["vjp_inverse"] = dense_solve(jac.T, v)
        except SingularMatrixError:
            report.singular = True
            report.notes.append("dense reference is singular")
            return report
        for name, fn in fns.items():
            try:
                got = fn(x, v)
            except (SingularStepError, SingularLumpError) as exc:
                report.singular = True
                try:
                    dense_solve(jac, v)
                    near = float(np.linalg.cond(jac)) > 1e12
                except SingularMatrixError:
                    near = True
                report.consistent_singularity = near
                report.notes.append(f"{name}: {exc}")
                return report
            err = rel_err(got, refs[name])
            if err > report.max_rel_err[name]:
                report.max_rel_err[name] = err
    return report


@dataclass
class IdentityReport:
    """Worst-case residuals of the algebraic mode identities."""

    trials: int
    seed: int
    dot_tol: float
    comp_tol: float
    max_err: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        dots = ("pairing", "pairing_inverse")
        ok_dots = all(self.max_err.get(k, 0.0) <= self.dot_tol for k in dots)
        comps = (k for k in self.max_err if k.startswith("roundtrip"))
        return ok_dots and all(self.max_err[k] <= self.comp_tol for k in comps)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "seed": self.seed,
            "dot_tol": self.dot_tol,
            "comp_tol": self.comp_tol,
            "max_err": dict(self.max_err),
            "passed": self.passed,
        }


def check_identities(
    prog, x, trials: int, seed: int = 0,
    dot_tol: float = 1e-10, comp_tol: float = 1e-8,
) -> IdentityReport:
    """Exercise the pairing and round-trip identities on random vectors.

    Pairings: <vjp(w), v> = <w, jvp(v)> and <u, jvp_inverse(w)> =
    <vjp_inverse(u), w>.  Round trips: each mode composed with its inverse
    returns the input vector.
    """
    rng = np.random.default_rng(seed)
    fns = _mode_fns(prog)
    n = prog.n if isinstance(prog, Trace) else prog.n_active_inputs
    report = IdentityReport(trials=trials, seed=seed, dot_tol=dot_tol, comp_tol=comp_tol)
    errs = {
        "pairing": 0.0,
        "pairing_inverse": 0.0,
        "roundtrip_jvp_jvp_inverse": 0.0,
        "roundtrip_jvp_inverse_jvp": 0.0,
        "roundtrip_vjp_vjp_inverse": 0.0,
        "roundtrip_vjp_inverse_vjp": 0.0,
    }
    for _ in range(trials):
        v = rng.standard_normal(n)
        w = rng.standard_normal(n)
        lhs = float(fns["vjp"](x, w) @ v)
        rhs = float(w @ fns["jvp"](x, v))
        errs["pairing"] = max(errs["pairing"], abs(lhs - rhs) / max(1.0, abs(rhs)))
        lhs = float(v @ fns["jvp_inverse"](x, w))
        rhs = float(fns["vjp_inverse"](x, v) @ w)
        errs["pairing_inverse"] = max(
            errs["pairing_inverse"], abs(lhs - rhs) / max(1.0, abs(rhs))
        )
        pairs = (
            ("roundtrip_jvp_jvp_inverse", "jvp", "jvp_inverse"),
            ("roundtrip_jvp_inverse_jvp", "jvp_inverse", "jvp"),
            ("roundtrip_vjp_vjp_inverse", "vjp", "vjp_inverse"),
            ("roundtrip_vjp_inverse_vjp", "vjp_inverse", "vjp"),
        )
        for key, outer, inner in pairs:
            got = fns[outer](x, fns[inner](x, v))
            errs[key] = max(errs[key], rel_err(got, v))
    report.max_err = errs
    return report
