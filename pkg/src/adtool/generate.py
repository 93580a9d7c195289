"""Seeded random program and graph generators used for validation.

Generation is rejection-based: candidates are resampled until the program
evaluates inside every operation's domain, every step's overwritten-slot
partial clears a floor, and intermediate values stay bounded.  This keeps
randomized comparisons against the dense references well away from
singularities without touching the code under test.
"""

from __future__ import annotations

import numpy as np

from .basis import Const, Slot, arg_values, builtin_ops, eval_op, linearize_step
from .errors import AdtoolError, SingularLumpError, WidthUnderflowError
from .lumpify import Dag, DagNode, eval_dag, greedy_schedule, lumped_mode_eval
from .trace import Instruction, Trace

__all__ = [
    "GENERAL_OPS",
    "INVERTIBLE_OPS",
    "random_trace",
    "random_dag",
    "dag_suite",
    "sample_inputs",
]

# Weighted toward arithmetic so values stay moderate.
GENERAL_OPS = (
    "add", "add", "sub", "sub", "mul", "mul", "div",
    "sqrt", "log", "exp", "sin", "cos", "atan", "neg", "square",
    "add_const", "sub_const", "mul_const",
)

# Ops whose local inverses exist, for tapeless sweeps.
INVERTIBLE_OPS = (
    "add", "add", "sub", "sub", "mul", "mul", "div",
    "sqrt", "log", "exp", "atan", "neg",
    "add_const", "sub_const", "mul_const",
)


def _random_structure(rng, n, depth, op_names):
    registry = builtin_ops()
    instrs = []
    for _ in range(depth):
        op = registry[op_names[rng.integers(len(op_names))]]
        dest = int(rng.integers(n))
        if op.name.endswith("_const"):
            lo, hi = (0.5, 1.5) if op.name == "mul_const" else (-1.5, 1.5)
            c = float(rng.uniform(lo, hi))
            if op.name == "mul_const" and rng.random() < 0.5:
                c = -c
            args = (Slot(dest), Const(c))
        elif op.arity == 2:
            if n < 2:
                continue
            other = int(rng.integers(n - 1))
            other = other if other < dest else other + 1
            args = (Slot(dest), Slot(other)) if rng.random() < 0.5 \
                else (Slot(other), Slot(dest))
        else:
            args = (Slot(dest),)
        instrs.append(Instruction(op=op, dest=dest, args=args))
    return Trace(n=n, instrs=tuple(instrs))


def _trace_ok(trace, x, a_min, max_abs):
    try:
        state = np.array(x, dtype=float)
        for t, ins in enumerate(trace.instrs):
            lin = linearize_step(ins, state, step=t)
            if abs(lin.a) < a_min:
                return False
            if any(abs(b) > max_abs for b in lin.bs):
                return False
            state[ins.dest] = eval_op(ins.op, arg_values(ins.args, state), step=t)
            if abs(state[ins.dest]) > max_abs or abs(state[ins.dest]) < 1.0 / max_abs:
                return False
        return True
    except AdtoolError:
        return False


def random_trace(
    rng,
    n: int = None,
    depth: int = None,
    op_names=GENERAL_OPS,
    a_min: float = 1e-3,
    max_abs: float = 1e3,
    max_tries: int = 500,
):
    """A random overwrite-form trace with inputs keeping every |a| >= a_min.

    Returns (trace, x).  Raises RuntimeError if no candidate survives the
    rejection budget, which indicates a generator bug rather than bad luck.
    """
    for _ in range(max_tries):
        nn = n if n is not None else int(rng.integers(2, 7))
        dd = depth if depth is not None else int(rng.integers(1, 21))
        trace = _random_structure(rng, nn, dd, op_names)
        x = rng.uniform(0.7, 1.6, size=nn)
        if _trace_ok(trace, x, a_min, max_abs):
            return trace, x
    raise RuntimeError("random_trace exhausted its rejection budget")


def _random_dag_structure(rng, n, n_nodes, op_names):
    registry = builtin_ops()
    names = [f"r{i}" for i in range(n)]
    nodes = []
    for j in range(n_nodes):
        op = registry[op_names[rng.integers(len(op_names))]]
        if op.name.endswith("_const"):
            lo, hi = (0.5, 1.5) if op.name == "mul_const" else (-1.5, 1.5)
            args = (names[rng.integers(len(names))], Const(float(rng.uniform(lo, hi))))
        elif op.arity == 2:
            a = names[rng.integers(len(names))]
            b = names[rng.integers(len(names))]
            args = (a, b)
        else:
            args = (names[rng.integers(len(names))],)
        nid = f"tmp{j + 1}"
        nodes.append(DagNode(nid, op, args))
        names.append(nid)
    consumed = set()
    for node in nodes:
        for a in node.args:
            if not isinstance(a, Const):
                consumed.add(a)
    sinks = [name for name in names if name not in consumed]
    if len(sinks) > n:
        return None
    outputs = list(sinks)
    # Prefer unconsumed... every value is consumed or a sink; pad with
    # fanned-out values, unused inputs first.
    spare = [name for name in names if name not in outputs]
    rng.shuffle(spare)
    spare.sort(key=lambda nm: 0 if nm.startswith("r") and nm not in consumed else 1)
    while len(outputs) < n and spare:
        outputs.append(spare.pop(0))
    if len(outputs) != n:
        return None
    return Dag(inputs=tuple(f"r{i}" for i in range(n)),
               nodes=tuple(nodes), outputs=tuple(outputs))


def random_dag(
    rng,
    n: int = None,
    n_nodes: int = None,
    op_names=GENERAL_OPS,
    max_cond: float = 1e5,
    max_tries: int = 2000,
):
    """A random schedulable graph with n active inputs and outputs.

    Returns (dag, x) where the graph evaluates cleanly at x, its greedy
    schedule exists, every lump block inverts, and the derivative map is
    well conditioned.
    """
    from .oracle import dense_jacobian

    for _ in range(max_tries):
        nn = n if n is not None else int(rng.integers(1, 5))
        kk = n_nodes if n_nodes is not None else int(rng.integers(1, 11))
        dag = _random_dag_structure(rng, nn, kk, op_names)
        if dag is None:
            continue
        x = rng.uniform(0.7, 1.6, size=nn)
        try:
            schedule = greedy_schedule(dag, nn)
            eval_dag(dag, x)
            jac = dense_jacobian(dag, x, check_fd=False)
            if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > max_cond:
                continue
            lumped_mode_eval(dag, nn, x, np.ones(nn), "jvp_inverse", schedule=schedule)
        except (AdtoolError, WidthUnderflowError, SingularLumpError):
            continue
        if np.max(np.abs(jac)) > 1e4:
            continue
        return dag, x
    raise RuntimeError("random_dag exhausted its rejection budget")


def dag_suite(seed: int, count: int = 200, max_nodes: int = 10):
    """A deterministic list of (dag, x) pairs with 1..max_nodes nodes."""
    rng = np.random.default_rng(seed)
    suite = []
    while len(suite) < count:
        n_nodes = 1 + (len(suite) % max_nodes)
        suite.append(random_dag(rng, n_nodes=n_nodes))
    return suite


def sample_inputs(prog, rng, a_min: float = 1e-3, max_abs: float = 1e3,
                  max_tries: int = 500) -> np.ndarray:
    """Inputs at which a given program evaluates cleanly, for seeded checks."""
    if isinstance(prog, Trace):
        size = prog.n
    else:
        size = len(prog.inputs)
    for _ in range(max_tries):
        x = rng.uniform(0.7, 1.6, size=size)
        try:
            if isinstance(prog, Trace):
                if _trace_ok(prog, x, a_min, max_abs):
                    return x
                continue
            eval_dag(prog, x)
            return x
        except AdtoolError:
            continue
    raise RuntimeError("could not sample a valid input for the program")
