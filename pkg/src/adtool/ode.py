"""Explicit-Euler integration of a vector field and its derivative flows.

Integrating dx/dt = g(x) with steps x_{k+1} = x_k + dt*g(x_k) makes every
step's Jacobian a near-identity matrix I + dt*Jg.  Products with it and its
transpose propagate tangents forward and cotangents backward; products with
its inverse use the first-order expansion (I + dt*Jg)^-1 = I - dt*Jg +
O(dt^2), accumulating an O(dt) error over the 1/dt steps.  The four flows:

    forward tangent     v += dt*jvp(g, x_k, v)   integrated T0 -> T1
    reverse cotangent   v += dt*vjp(g, x_k, v)   integrated T1 -> T0
    reverse inverse     v -= dt*jvp(g, x_k, v)   integrated T1 -> T0
    forward inverse     v -= dt*vjp(g, x_k, v)   integrated T0 -> T1

The two tangent flows share one right-hand side and differ only in
integration direction, as do the two cotangent flows.  A consequence worth
noting: if the primal flow is stable (eigenvalues of Jg negative), both
inverse flows grow, because inverting a linear map reciprocates its
eigenvalues.

An ``exact_solve`` flag replaces the first-order inverse steps with an exact
solve of the Euler step map: x + dt*g(x) reads each state component twice, so
the step is not a constant-width register program, but as a data-flow graph
it schedules into lumps and the lumped inverse modes invert it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import modes
from .basis import Const, get_op
from .errors import ValidationError
from .lumpify import (
    Dag,
    DagNode,
    eval_dag,
    greedy_schedule,
    lumped_mode_eval,
    trace_to_dag,
)
from .trace import Trace, gather, run_primal, scatter

__all__ = [
    "VectorField",
    "OdeProblem",
    "integrate_primal",
    "ode_forward_tangent",
    "ode_reverse_cotangent",
    "ode_reverse_inverse",
    "ode_forward_inverse",
    "convergence_report",
    "ConvergenceRow",
    "ODE_MODES",
]

ODE_MODES = ("primal", "jvp", "vjp", "jvp_inverse", "vjp_inverse")


def _append_euler_update(base: Dag, in_names: Sequence[str], dt: float) -> Dag:
    """Extend a graph computing g(x) into one computing x + dt*g(x)."""
    prefix = "eu"
    taken = set(base.inputs) | {node.id for node in base.nodes}
    while any(f"{prefix}_s{i}" in taken or f"{prefix}_n{i}" in taken
              for i in range(len(in_names))):
        prefix += "_"
    mul = get_op("mul_const")
    add = get_op("add")
    nodes = list(base.nodes)
    outputs = []
    for i, name in enumerate(in_names):
        scaled = f"{prefix}_s{i}"
        nodes.append(DagNode(scaled, mul, (base.outputs[i], Const(float(dt)))))
        stepped = f"{prefix}_n{i}"
        nodes.append(DagNode(stepped, add, (name, scaled)))
        outputs.append(stepped)
    return Dag(
        inputs=base.inputs,
        nodes=tuple(nodes),
        outputs=tuple(outputs),
        input_active=base.input_active,
    )


@dataclass(frozen=True)
class VectorField:
    """A vector field g over an n-dimensional state, backed by a register
    program or a data-flow graph.

    For register programs, ``constant_slots`` marks state components that are
    side parameters: the program must give them a zero field value and read
    them only through non-active operands, so they stay fixed along the flow
    and carry no derivatives.  Graph-backed fields must have all inputs
    active and one output per input.
    """

    program: object
    constant_slots: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constant_slots", tuple(self.constant_slots))
        if isinstance(self.program, Trace):
            trace = self.program
            if len(trace.input_slots) != trace.n or len(trace.output_slots) != trace.n:
                raise ValidationError("vector field must map the full state to itself")
        elif isinstance(self.program, Dag):
            dag = self.program
            if self.constant_slots:
                raise ValidationError(
                    "graph-backed fields carry parameters as non-active inputs, "
                    "not constant_slots"
                )
            if not all(dag.input_active):
                raise ValidationError("graph-backed fields need every input active")
            if len(dag.outputs) != len(dag.inputs):
                raise ValidationError("vector field must map the full state to itself")
        else:
            raise ValidationError(
                f"expected a Trace or Dag, got {type(self.program).__name__}"
            )

    @property
    def n(self) -> int:
        if isinstance(self.program, Trace):
            return self.program.n
        return len(self.program.inputs)

    @cached_property
    def _dag_schedule(self):
        return greedy_schedule(self.program, self.n)

    def value(self, x) -> np.ndarray:
        if isinstance(self.program, Trace):
            state = scatter(self.n, self.program.input_slots, x)
            return gather(run_primal(self.program, state), self.program.output_slots)
        outs, _ = eval_dag(self.program, x)
        return outs

    def jvp(self, x, v) -> np.ndarray:
        if isinstance(self.program, Trace):
            state = scatter(self.n, self.program.input_slots, x)
            tangent = scatter(self.n, self.program.input_slots, v)
            return gather(modes.jvp(self.program, state, tangent),
                          self.program.output_slots)
        return lumped_mode_eval(self.program, self.n, x, v, "jvp",
                                schedule=self._dag_schedule)

    def vjp(self, x, v) -> np.ndarray:
        if isinstance(self.program, Trace):
            state = scatter(self.n, self.program.input_slots, x)
            cotangent = scatter(self.n, self.program.output_slots, v)
            return gather(modes.vjp(self.program, state, cotangent),
                          self.program.input_slots)
        return lumped_mode_eval(self.program, self.n, x, v, "vjp",
                                schedule=self._dag_schedule)

    def euler_step_dag(self, dt: float) -> Dag:
        """Graph of one Euler step x + dt*g(x), inputs in state order."""
        if isinstance(self.program, Dag):
            return _append_euler_update(self.program, self.program.inputs, dt)
        trace = self.program
        slot_active = [True] * trace.n
        for i in self.constant_slots:
            slot_active[trace.input_slots[i]] = False
        base = trace_to_dag(trace, input_active=slot_active)
        in_names = [f"r{s}" for s in trace.input_slots]
        stepped = _append_euler_update(base, in_names, dt)
        # Re-declare the inputs in state-component order so callers index the
        # step graph the same way they index the state vector.
        return Dag(
            inputs=tuple(in_names),
            nodes=stepped.nodes,
            outputs=stepped.outputs,
            input_active=tuple(i not in self.constant_slots for i in range(self.n)),
        )


@dataclass(frozen=True)
class OdeProblem:
    """An initial state integrated from t0 to t1 with a fixed Euler step.

    The step count is rounded up so the grid lands exactly on t1; the
    effective step is then ``span / steps <= dt``.
    """

    field: VectorField
    t0: float
    t1: float
    dt: float
    x0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x0", np.array(self.x0, dtype=float))
        if self.t1 <= self.t0:
            raise ValidationError("t1 must exceed t0")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.x0.shape != (self.field.n,):
            raise ValidationError(
                f"initial state has shape {self.x0.shape}, field expects ({self.field.n},)"
            )

    @property
    def steps(self) -> int:
        span = self.t1 - self.t0
        return max(1, math.ceil(span / self.dt - 1e-9))

    @property
    def dt_eff(self) -> float:
        return (self.t1 - self.t0) / self.steps


def integrate_primal(problem: OdeProblem) -> np.ndarray:
    """Euler trajectory, shape (steps + 1, n)."""
    dt = problem.dt_eff
    traj = np.zeros((problem.steps + 1, problem.field.n))
    traj[0] = problem.x0
    for k in range(problem.steps):
        traj[k + 1] = traj[k] + dt * problem.field.value(traj[k])
    return traj


def _exact_step_solver(problem: OdeProblem, mode: str):
    dag = problem.field.euler_step_dag(problem.dt_eff)
    n_active = dag.n_active_inputs
    schedule = greedy_schedule(dag, n_active)
    active_idx = [i for i, a in enumerate(dag.input_active) if a]

    def solve(x, v):
        out = np.array(v, dtype=float)
        out[active_idx] = lumped_mode_eval(
            dag, n_active, x, out[active_idx], mode, schedule=schedule
        )
        return out

    return solve


def ode_forward_tangent(problem: OdeProblem, xdot0) -> np.ndarray:
    """Propagate a tangent along the trajectory, T0 -> T1, in tandem with the
    primal (no stored trajectory)."""
    dt = problem.dt_eff
    x = problem.x0.copy()
    v = np.array(xdot0, dtype=float)
    for _ in range(problem.steps):
        dv = problem.field.jvp(x, v)
        dx = problem.field.value(x)
        v += dt * dv
        x += dt * dx
    return v


def ode_reverse_cotangent(problem: OdeProblem, xbar1) -> np.ndarray:
    """Pull a cotangent back along the stored trajectory, T1 -> T0."""
    dt = problem.dt_eff
    traj = integrate_primal(problem)
    v = np.array(xbar1, dtype=float)
    for k in range(problem.steps - 1, -1, -1):
        v = v + dt * problem.field.vjp(traj[k], v)
    return v


def ode_reverse_inverse(problem: OdeProblem, ydot_star1, exact_solve: bool = False) -> np.ndarray:
    """Apply the inverse of the flow map's derivative, T1 -> T0.

    The default stepper uses the first-order inverse v - dt*jvp(g, x, v);
    with ``exact_solve`` each Euler step map is inverted exactly through the
    lumped solver.
    """
    dt = problem.dt_eff
    traj = integrate_primal(problem)
    v = np.array(ydot_star1, dtype=float)
    solver = _exact_step_solver(problem, "jvp_inverse") if exact_solve else None
    for k in range(problem.steps - 1, -1, -1):
        if solver is not None:
            v = solver(traj[k], v)
        else:
            v = v - dt * problem.field.jvp(traj[k], v)
    return v


def ode_forward_inverse(problem: OdeProblem, xbar_star0, exact_solve: bool = False) -> np.ndarray:
    """Apply the inverse-transpose of the flow map's derivative, T0 -> T1,
    in tandem with the primal."""
    dt = problem.dt_eff
    x = problem.x0.copy()
    v = np.array(xbar_star0, dtype=float)
    solver = _exact_step_solver(problem, "vjp_inverse") if exact_solve else None
    for _ in range(problem.steps):
        if solver is not None:
            nv = solver(x, v)
        else:
            nv = v - dt * problem.field.vjp(x, v)
        x += dt * problem.field.value(x)
        v = nv
    return v


_MODE_RUNNERS = {
    "primal": lambda p, v: integrate_primal(p)[-1],
    "jvp": ode_forward_tangent,
    "vjp": ode_reverse_cotangent,
    "jvp_inverse": ode_reverse_inverse,
    "vjp_inverse": ode_forward_inverse,
}


@dataclass(frozen=True)
class ConvergenceRow:
    dt: float
    error: float
    order: Optional[float]


def convergence_report(
    problem: OdeProblem,
    mode: str,
    dts: Sequence[float],
    v=None,
    reference=None,
) -> list[ConvergenceRow]:
    """Error of one mode at a sequence of step sizes, with empirical orders.

    ``dts`` must be strictly decreasing.  ``reference`` may be the exact
    answer (an array) or a callable of no arguments producing it; when
    omitted, a run at half the finest step stands in.  Each row after the
    first reports log(err_prev / err) / log(dt_prev / dt).  Zero errors leave
    the order undefined (None).
    """
    if mode not in _MODE_RUNNERS:
        raise ValidationError(f"unknown mode '{mode}', expected one of {ODE_MODES}")
    dts = [float(d) for d in dts]
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ValidationError("dts must be strictly decreasing")
    runner = _MODE_RUNNERS[mode]
    if v is None:
        v = np.ones(problem.field.n)

    def run(dt):
        return runner(replace(problem, dt=dt), v)

    if reference is None:
        ref = run(dts[-1] / 2.0)
    elif callable(reference):
        ref = np.asarray(reference(), dtype=float)
    else:
        ref = np.asarray(reference, dtype=float)

    rows = []
    prev = None
    for dt in dts:
        err = float(np.max(np.abs(run(dt) - ref)))
        order = None
        if prev is not None:
            p_dt, p_err = prev
            if err > 0.0 and p_err > 0.0:
                order = math.log(p_err / err) / math.log(p_dt / dt)
        rows.append(ConvergenceRow(dt=dt, error=err, order=order))
        prev = (dt, err)
    return rows
