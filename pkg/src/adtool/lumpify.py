"""Scheduling general data-flow graphs into constant-width macro steps.

A graph with temporaries has no fixed-width register form: scheduling its
nodes makes the count of live active values rise above ``n`` between some
steps.  Any topological order can still be cut wherever exactly ``n`` active
values are live; the segment between two consecutive cuts is a *lump*.  A
lump reads ``k`` live values, consumes ``l`` of them for the last time, and
writes ``l`` new values into the freed register slots, so its derivative map
restricted to the involved slots is the block matrix

    [[A, B],     A: l x l   partials of the writes w.r.t. the dying reads
     [0, I]]     B: l x (k-l)  partials w.r.t. the surviving reads

whose inverse [[A^-1, -A^-1 B], [0, I]] has the same sparsity.  The four
derivative modes then run lump by lump with ``a -> A``, ``b -> B``,
``1/a -> A^-1`` and ``-b/a -> -A^-1 B`` in the scalar step kernels.

Cut placement depends on the chosen topological order.  ``greedy_schedule``
prefers width-decreasing nodes, then width-preserving ones, then the smallest
increase, breaking ties by declaration order, and cuts every time the live
width returns to ``n``.  ``brute_force_schedule`` enumerates every
topological order of small graphs and keeps the one minimizing a chosen
objective, as a reference point for the greedy rule.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .basis import BasisOp, Const, Slot, eval_grads, eval_op
from .errors import (
    SizeLimitError,
    SingularLumpError,
    ValidationError,
    WidthUnderflowError,
)
from .trace import Instruction, Trace

__all__ = [
    "DagNode",
    "Dag",
    "eval_dag",
    "Lump",
    "LumpSchedule",
    "LumpLinearization",
    "greedy_schedule",
    "brute_force_schedule",
    "all_topological_orders",
    "check_schedule",
    "schedule_objectives",
    "OBJECTIVES",
    "lump_linearization",
    "invert_lump",
    "lumped_mode_eval",
    "lower_to_trace",
    "trace_to_dag",
    "ENUM_NODE_LIMIT",
]

ENUM_NODE_LIMIT = 12
OBJECTIVES = ("size", "width", "lk")


@dataclass(frozen=True)
class DagNode:
    """One graph node: an operation over named values or literals.

    ``args`` entries are value names (graph inputs or earlier node ids) or
    :class:`Const` literals.  ``active`` may be left None to derive it from
    the operands; an explicit value must agree with the derivation.
    """

    id: str
    op: BasisOp
    args: tuple
    active: Optional[bool] = None


@dataclass(frozen=True)
class Dag:
    """An immutable data-flow graph with named inputs, nodes, and outputs.

    Nodes must be declared after every value they reference, which also
    guarantees acyclicity.  A value is active when it is an active input or
    depends on one; non-active values (parameters) are carried along but do
    not count toward live width and contribute no derivatives.
    """

    inputs: tuple[str, ...]
    nodes: tuple[DagNode, ...] = ()
    outputs: tuple[str, ...] = ()
    input_active: tuple[bool, ...] = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.input_active is None:
            object.__setattr__(self, "input_active", (True,) * len(self.inputs))
        else:
            object.__setattr__(self, "input_active", tuple(bool(b) for b in self.input_active))
        if len(self.input_active) != len(self.inputs):
            raise ValidationError("input_active length does not match inputs")
        seen = set()
        for name in self.inputs:
            if name in seen:
                raise ValidationError(f"duplicate input name '{name}'")
            seen.add(name)
        for node in self.nodes:
            if node.id in seen:
                raise ValidationError(f"duplicate value name '{node.id}'")
            if len(node.args) != node.op.arity:
                raise ValidationError(
                    f"node '{node.id}': op '{node.op.name}' takes {node.op.arity} "
                    f"operand(s), got {len(node.args)}"
                )
            for a in node.args:
                if not isinstance(a, Const) and a not in seen:
                    raise ValidationError(
                        f"node '{node.id}' references '{a}' before its definition"
                    )
            seen.add(node.id)
        out_seen = set()
        for ref in self.outputs:
            if ref not in seen:
                raise ValidationError(f"output references unknown value '{ref}'")
            if ref in out_seen:
                raise ValidationError(f"duplicate output '{ref}'")
            out_seen.add(ref)
        activity = self.value_activity
        for node in self.nodes:
            if node.active is not None and node.active != activity[node.id]:
                raise ValidationError(
                    f"node '{node.id}' declared active={node.active} but its "
                    f"operands imply {activity[node.id]}"
                )

    @cached_property
    def value_activity(self) -> Mapping[str, bool]:
        act = dict(zip(self.inputs, self.input_active))
        for node in self.nodes:
            act[node.id] = any(
                not isinstance(a, Const) and act[a] for a in node.args
            )
        return act

    @cached_property
    def consumers(self) -> Mapping[str, frozenset]:
        """Positions of the nodes reading each value (distinct per node)."""
        cons = {name: set() for name in self.inputs}
        for pos, node in enumerate(self.nodes):
            cons[node.id] = set()
            for a in node.args:
                if not isinstance(a, Const):
                    cons[a].add(pos)
        return {name: frozenset(v) for name, v in cons.items()}

    @property
    def n_active_inputs(self) -> int:
        return sum(self.input_active)


def eval_dag(dag: Dag, x) -> tuple[np.ndarray, dict]:
    """Evaluate the graph; returns (output values, all value bindings)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (len(dag.inputs),):
        raise ValidationError(
            f"graph has {len(dag.inputs)} input(s), got state of shape {x.shape}"
        )
    values = {name: float(v) for name, v in zip(dag.inputs, x)}
    for pos, node in enumerate(dag.nodes):
        vals = [a.value if isinstance(a, Const) else values[a] for a in node.args]
        values[node.id] = eval_op(node.op, vals, step=pos)
    return np.array([values[ref] for ref in dag.outputs], dtype=float), values


@dataclass(frozen=True)
class _LumpStep:
    """A lump node with operands resolved to register slots, earlier lump
    steps, or literals: ('slot', index, active) | ('local', pos, active) |
    ('const', value, False)."""

    op: BasisOp
    args: tuple


@dataclass(frozen=True)
class Lump:
    """A contiguous schedule segment between two width-``n`` cuts."""

    ids: tuple[str, ...]
    start: int
    end: int
    max_width: int
    write_slots: tuple[int, ...]   # slots receiving the lump's surviving values
    dying_slots: tuple[int, ...]   # slots whose values are read for the last time
    keep_slots: tuple[int, ...]    # slots read but still live after the lump
    steps: tuple[_LumpStep, ...] = field(repr=False, default=())
    write_locals: tuple[int, ...] = field(repr=False, default=())
    passive_writes: tuple = field(repr=False, default=())

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def l(self) -> int:
        return len(self.write_slots)

    @property
    def k(self) -> int:
        return len(self.write_slots) + len(self.keep_slots)


@dataclass(frozen=True)
class LumpSchedule:
    """A total order of the graph nodes plus its width-``n`` cut points."""

    n: int
    order: tuple[str, ...]
    cuts: tuple[int, ...]
    lumps: tuple[Lump, ...]
    slot_of: Mapping[str, int] = field(repr=False, default=None)
    machine_width: int = 0
    widths: tuple[int, ...] = field(repr=False, default=())

    @property
    def max_lump_size(self) -> int:
        return max((lp.size for lp in self.lumps), default=0)

    @property
    def max_lump_width(self) -> int:
        return max((lp.max_width for lp in self.lumps), default=self.n)

    @property
    def max_l(self) -> int:
        return max((lp.l for lp in self.lumps), default=0)

    @property
    def max_k(self) -> int:
        return max((lp.k for lp in self.lumps), default=0)


def _require_square(dag: Dag, n: int) -> None:
    act = dag.value_activity
    if dag.n_active_inputs != n:
        raise ValidationError(
            f"graph has {dag.n_active_inputs} active input(s), expected {n}"
        )
    n_out = sum(1 for ref in dag.outputs if act[ref])
    if n_out != n:
        raise ValidationError(f"graph has {n_out} active output(s), expected {n}")


def _analyze(dag: Dag, n: int, order: Sequence[int]) -> LumpSchedule:
    """Liveness, slot assignment, and lump extraction for one node order."""
    _require_square(dag, n)
    act = dag.value_activity
    outputs = set(dag.outputs)
    if sorted(order) != list(range(len(dag.nodes))):
        raise ValidationError("order must be a permutation of the graph's nodes")

    remaining = {name: set(pos) for name, pos in dag.consumers.items()}
    birth = {name: 0 for name in dag.inputs}
    death: dict[str, int] = {}

    slot_of: dict[str, int] = {}
    free: list[int] = []
    next_slot = 0

    def alloc() -> int:
        nonlocal next_slot
        if free:
            return heapq.heappop(free)
        next_slot += 1
        return next_slot - 1

    width = 0
    for name in dag.inputs:
        slot_of[name] = alloc()
        if not remaining[name] and name not in outputs:
            death[name] = 0
            heapq.heappush(free, slot_of[name])
        elif act[name]:
            width += 1
    if width < n:
        raise WidthUnderflowError(0, width, n)

    widths = [width]
    cuts = [0]
    for i, pos in enumerate(order):
        node = dag.nodes[pos]
        for ref in dict.fromkeys(a for a in node.args if not isinstance(a, Const)):
            if ref not in birth:
                raise ValidationError(
                    f"order schedules '{node.id}' before its operand '{ref}'"
                )
            remaining[ref].discard(pos)
            if not remaining[ref] and ref not in outputs and ref not in death:
                death[ref] = i + 1
                heapq.heappush(free, slot_of[ref])
                if act[ref]:
                    width -= 1
        birth[node.id] = i + 1
        slot_of[node.id] = alloc()
        alive = bool(remaining[node.id]) or node.id in outputs
        if not alive:
            death[node.id] = i + 1
            heapq.heappush(free, slot_of[node.id])
        elif act[node.id]:
            width += 1
        if width < n:
            raise WidthUnderflowError(i + 1, width, n)
        widths.append(width)
        if width == n:
            cuts.append(i + 1)

    lumps = []
    for c0, c1 in zip(cuts, cuts[1:]):
        seg = [dag.nodes[order[i]] for i in range(c0, c1)]
        local_index = {node.id: j for j, node in enumerate(seg)}
        steps = []
        reads_active: dict[str, int] = {}
        for node in seg:
            resolved = []
            for a in node.args:
                if isinstance(a, Const):
                    resolved.append(("const", a.value, False))
                elif a in local_index:
                    resolved.append(("local", local_index[a], act[a]))
                else:
                    resolved.append(("slot", slot_of[a], act[a]))
                    if act[a]:
                        reads_active[a] = slot_of[a]
            steps.append(_LumpStep(node.op, tuple(resolved)))
        dying = sorted(s for name, s in reads_active.items()
                       if death.get(name, len(order) + 1) <= c1)
        keeps = sorted(s for name, s in reads_active.items()
                       if death.get(name, len(order) + 1) > c1)
        survivors = [
            (local_index[node.id], node.id) for node in seg
            if death.get(node.id, len(order) + 1) > c1
        ]
        writes = sorted(
            ((slot_of[name], j) for j, name in survivors if act[name])
        )
        passive = tuple(
            (j, slot_of[name]) for j, name in survivors if not act[name]
        )
        if len(writes) != len(dying):
            raise AssertionError("lump write/death imbalance")
        lumps.append(Lump(
            ids=tuple(node.id for node in seg),
            start=c0,
            end=c1,
            max_width=max(widths[c0:c1 + 1]),
            write_slots=tuple(s for s, _ in writes),
            dying_slots=tuple(dying),
            keep_slots=tuple(keeps),
            steps=tuple(steps),
            write_locals=tuple(j for _, j in writes),
            passive_writes=passive,
        ))

    return LumpSchedule(
        n=n,
        order=tuple(dag.nodes[p].id for p in order),
        cuts=tuple(cuts),
        lumps=tuple(lumps),
        slot_of=dict(slot_of),
        machine_width=next_slot,
        widths=tuple(widths),
    )


def greedy_schedule(dag: Dag, n: int) -> LumpSchedule:
    """Schedule by repeatedly taking the ready node with the most negative
    live-width change, breaking ties by declaration order, cutting whenever
    the width returns to ``n``.

    Raises WidthUnderflowError if the width ever drops below ``n``; any
    schedule position with fewer than ``n`` live active values is a
    bottleneck that makes the graph's derivative map singular, so this is a
    structural failure rather than a scheduling accident.
    """
    _require_square(dag, n)
    act = dag.value_activity
    outputs = set(dag.outputs)
    consumers = dag.consumers
    remaining = {name: set(pos) for name, pos in consumers.items()}
    alive_when_born = {
        node.id: bool(consumers[node.id]) or node.id in outputs for node in dag.nodes
    }

    pending = {}
    ready = []
    for pos, node in enumerate(dag.nodes):
        deps = {a for a in node.args if not isinstance(a, Const) and a not in dag.inputs}
        pending[pos] = set(deps)
        if not deps:
            ready.append(pos)

    produced_by = {node.id: pos for pos, node in enumerate(dag.nodes)}
    order = []
    while ready or len(order) < len(dag.nodes):
        best = None
        for pos in sorted(ready):
            node = dag.nodes[pos]
            delta = 1 if (act[node.id] and alive_when_born[node.id]) else 0
            for ref in dict.fromkeys(a for a in node.args if not isinstance(a, Const)):
                if act[ref] and ref not in outputs and remaining[ref] == {pos}:
                    delta -= 1
            if best is None or (delta, pos) < best:
                best = (delta, pos)
        if best is None:
            raise ValidationError("graph has unreachable nodes")
        _, pos = best
        node = dag.nodes[pos]
        ready.remove(pos)
        order.append(pos)
        for ref in dict.fromkeys(a for a in node.args if not isinstance(a, Const)):
            remaining[ref].discard(pos)
        for later, deps in pending.items():
            if node.id in deps:
                deps.discard(node.id)
                if not deps and later not in order and later not in ready:
                    ready.append(later)
    return _analyze(dag, n, order)


def all_topological_orders(dag: Dag, limit: int = ENUM_NODE_LIMIT):
    """Yield every topological order of the graph's nodes as position tuples."""
    if len(dag.nodes) > limit:
        raise SizeLimitError(len(dag.nodes), limit)
    deps = []
    for node in dag.nodes:
        deps.append({a for a in node.args
                     if not isinstance(a, Const) and a not in dag.inputs})
    done_names: set[str] = set()
    order: list[int] = []
    used = [False] * len(dag.nodes)

    def rec():
        if len(order) == len(dag.nodes):
            yield tuple(order)
            return
        for pos in range(len(dag.nodes)):
            if used[pos]:
                continue
            if deps[pos] <= done_names:
                used[pos] = True
                order.append(pos)
                done_names.add(dag.nodes[pos].id)
                yield from rec()
                done_names.discard(dag.nodes[pos].id)
                order.pop()
                used[pos] = False

    yield from rec()


def _score(schedule: LumpSchedule, objective: str):
    if objective == "size":
        return schedule.max_lump_size
    if objective == "width":
        return schedule.max_lump_width
    if objective == "lk":
        return (schedule.max_l, schedule.max_k)
    raise ValidationError(f"unknown objective '{objective}', expected one of {OBJECTIVES}")


def brute_force_schedule(dag: Dag, n: int, objective: str = "size") -> LumpSchedule:
    """Exhaustively search topological orders for the one minimizing the
    objective: 'size' (largest lump node count), 'width' (largest live
    width), or 'lk' (largest l, then largest k).  First optimum in
    declaration-order enumeration wins, so results are deterministic.
    """
    _score(LumpSchedule(n=n, order=(), cuts=(0,), lumps=()), objective)
    best = None
    best_score = None
    underflow = None
    for order in all_topological_orders(dag):
        try:
            sched = _analyze(dag, n, order)
        except WidthUnderflowError as exc:
            underflow = exc
            continue
        score = _score(sched, objective)
        if best_score is None or score < best_score:
            best, best_score = sched, score
    if best is None:
        raise underflow or WidthUnderflowError(0, 0, n)
    return best


def schedule_objectives(schedule: LumpSchedule) -> dict:
    """The three objective values of a schedule, for reports."""
    return {
        "size": schedule.max_lump_size,
        "width": schedule.max_lump_width,
        "lk": [schedule.max_l, schedule.max_k],
    }


def check_schedule(dag: Dag, schedule: LumpSchedule) -> None:
    """Validate a schedule structurally: topological order, every cut at live
    width exactly ``n``, lumps covering the order.  Raises on violation."""
    pos_of = {node.id: pos for pos, node in enumerate(dag.nodes)}
    try:
        order = [pos_of[name] for name in schedule.order]
    except KeyError as exc:
        raise ValidationError(f"schedule orders unknown node {exc}") from None
    rebuilt = _analyze(dag, schedule.n, order)
    if rebuilt.cuts != schedule.cuts:
        raise ValidationError(
            f"cuts {schedule.cuts} do not match live-width analysis {rebuilt.cuts}"
        )
    covered = tuple(name for lump in schedule.lumps for name in lump.ids)
    if covered != schedule.order:
        raise ValidationError("lumps do not partition the schedule order")
    for cut in schedule.cuts:
        if rebuilt.widths[cut] != schedule.n:
            raise ValidationError(f"cut at position {cut} has width {rebuilt.widths[cut]}")


@dataclass(frozen=True)
class LumpLinearization:
    """Dense blocks of one lump's derivative map plus their slot maps."""

    A: np.ndarray
    B: np.ndarray
    write_slots: tuple[int, ...]
    dying_slots: tuple[int, ...]
    keep_slots: tuple[int, ...]


def _eval_lump_steps(lump: Lump, state: np.ndarray) -> list[float]:
    vals: list[float] = []
    for j, step in enumerate(lump.steps):
        args = []
        for kind, payload, _ in step.args:
            if kind == "const":
                args.append(payload)
            elif kind == "local":
                args.append(vals[payload])
            else:
                args.append(float(state[payload]))
        vals.append(eval_op(step.op, args, step=lump.start + j))
    return vals


def run_lump(lump: Lump, state: np.ndarray) -> None:
    """Execute a lump's nodes, storing every surviving value in its slot."""
    vals = _eval_lump_steps(lump, state)
    for slot, local in zip(lump.write_slots, lump.write_locals):
        state[slot] = vals[local]
    for local, slot in lump.passive_writes:
        state[slot] = vals[local]


def lump_linearization(lump: Lump, pre_cut_state: np.ndarray) -> LumpLinearization:
    """Blocks (A, B) of a lump's derivative map at the given pre-cut state.

    Columns are ordered dying slots first, then surviving read slots; rows
    follow the write-slot order.  Built by one forward accumulation pass over
    the lump with unit seeds on each read.
    """
    l = lump.l
    k = lump.k
    col_of = {s: j for j, s in enumerate(lump.dying_slots + lump.keep_slots)}
    vals: list[float] = []
    rows: list[np.ndarray] = []
    for j, step in enumerate(lump.steps):
        args = []
        for kind, payload, _ in step.args:
            if kind == "const":
                args.append(payload)
            elif kind == "local":
                args.append(vals[payload])
            else:
                args.append(float(pre_cut_state[payload]))
        grads = eval_grads(step.op, args, step=lump.start + j)
        row = np.zeros(k)
        for (kind, payload, active), g in zip(step.args, grads):
            if not active:
                continue
            if kind == "local":
                row += g * rows[payload]
            else:
                row[col_of[payload]] += g
        vals.append(eval_op(step.op, args, step=lump.start + j))
        rows.append(row)
    a = np.zeros((l, l))
    b = np.zeros((l, k - l))
    for i, local in enumerate(lump.write_locals):
        a[i, :] = rows[local][:l]
        b[i, :] = rows[local][l:]
    return LumpLinearization(
        A=a, B=b,
        write_slots=lump.write_slots,
        dying_slots=lump.dying_slots,
        keep_slots=lump.keep_slots,
    )


def invert_lump(lin: LumpLinearization, pivot_tol: float = 1e-12):
    """Inverted blocks (A^-1, -A^-1 B) via LU with partial pivoting.

    Raises SingularLumpError when a pivot falls below
    ``pivot_tol * ||A||_inf``.
    """
    l = lin.A.shape[0]
    if l == 0:
        return np.zeros((0, 0)), np.zeros((0, lin.B.shape[1]))
    norm = float(np.max(np.sum(np.abs(lin.A), axis=1)))
    tol = pivot_tol * norm
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = lu_factor(lin.A)
    min_pivot = float(np.min(np.abs(np.diag(lu))))
    if min_pivot <= tol:
        raise SingularLumpError(min_pivot, tol)
    a_inv = lu_solve((lu, piv), np.eye(l))
    if lin.B.shape[1]:
        minus_a_inv_b = -lu_solve((lu, piv), lin.B)
    else:
        minus_a_inv_b = np.zeros((l, 0))
    return a_inv, minus_a_inv_b


def block_forward(v, lin: LumpLinearization) -> None:
    w = np.asarray(lin.write_slots, dtype=int)
    d = np.asarray(lin.dying_slots, dtype=int)
    kp = np.asarray(lin.keep_slots, dtype=int)
    new = lin.A @ v[d] + lin.B @ v[kp]
    v[w] = new


def block_reverse(v, lin: LumpLinearization) -> None:
    w = np.asarray(lin.write_slots, dtype=int)
    d = np.asarray(lin.dying_slots, dtype=int)
    kp = np.asarray(lin.keep_slots, dtype=int)
    old = v[w].copy()
    v[kp] += lin.B.T @ old
    v[d] = lin.A.T @ old


def block_forward_inverse(v, lin: LumpLinearization, a_inv, minus_a_inv_b) -> None:
    w = np.asarray(lin.write_slots, dtype=int)
    d = np.asarray(lin.dying_slots, dtype=int)
    kp = np.asarray(lin.keep_slots, dtype=int)
    old = v[d].copy()
    v[w] = a_inv.T @ old
    v[kp] += minus_a_inv_b.T @ old


def block_reverse_inverse(v, lin: LumpLinearization, a_inv, minus_a_inv_b) -> None:
    w = np.asarray(lin.write_slots, dtype=int)
    d = np.asarray(lin.dying_slots, dtype=int)
    kp = np.asarray(lin.keep_slots, dtype=int)
    v[d] = a_inv @ v[w] + minus_a_inv_b @ v[kp]


def lumped_mode_eval(
    dag: Dag, n: int, x, v, mode: str,
    schedule: LumpSchedule = None,
    pivot_tol: float = 1e-12,
) -> np.ndarray:
    """Run one derivative mode over a scheduled graph, lump by lump.

    ``x`` covers every graph input in declaration order; ``v`` is indexed by
    the active inputs (for jvp / vjp_inverse) or active outputs (for vjp /
    jvp_inverse), both length ``n``.  Forward-direction modes run in tandem
    with evaluation; reverse-direction modes record the pre-cut states first.
    """
    if mode not in ("jvp", "vjp", "jvp_inverse", "vjp_inverse"):
        raise ValidationError(f"unknown mode '{mode}'")
    sched = schedule if schedule is not None else greedy_schedule(dag, n)
    act = dag.value_activity
    x = np.asarray(x, dtype=float)
    if x.shape != (len(dag.inputs),):
        raise ValidationError(
            f"graph has {len(dag.inputs)} input(s), got state of shape {x.shape}"
        )
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValidationError(f"derivative vector must have shape ({n},)")

    in_slots = [sched.slot_of[name] for name in dag.inputs if act[name]]
    out_slots = [sched.slot_of[ref] for ref in dag.outputs if act[ref]]

    state = np.zeros(sched.machine_width)
    for name, val in zip(dag.inputs, x):
        state[sched.slot_of[name]] = val

    work = np.zeros(sched.machine_width)
    forward = mode in ("jvp", "vjp_inverse")
    work[in_slots if forward else out_slots] = v

    if forward:
        for lump in sched.lumps:
            lin = lump_linearization(lump, state)
            if mode == "jvp":
                block_forward(work, lin)
            else:
                a_inv, mab = invert_lump(lin, pivot_tol)
                block_forward_inverse(work, lin, a_inv, mab)
            run_lump(lump, state)
        return work[out_slots]

    pre_states = []
    for lump in sched.lumps:
        pre_states.append(state.copy())
        run_lump(lump, state)
    for lump, pre in zip(reversed(sched.lumps), reversed(pre_states)):
        lin = lump_linearization(lump, pre)
        if mode == "vjp":
            block_reverse(work, lin)
        else:
            a_inv, mab = invert_lump(lin, pivot_tol)
            block_reverse_inverse(work, lin, a_inv, mab)
    return work[in_slots]


def lower_to_trace(dag: Dag, schedule: LumpSchedule = None) -> Trace:
    """Render a scheduled graph as a register program.

    Values take the lowest free slot when born, so a lump's surviving values
    reuse the slots freed by the values it consumed; interior temporaries
    spill into extra registers, which is visible in the trace's width
    profile.
    """
    sched = schedule if schedule is not None else greedy_schedule(dag, dag.n_active_inputs)
    act = dag.value_activity
    by_id = {node.id: node for node in dag.nodes}
    instrs = []
    for name in sched.order:
        node = by_id[name]
        args = []
        for a in node.args:
            if isinstance(a, Const):
                args.append(a)
            else:
                args.append(Slot(sched.slot_of[a], active=act[a]))
        instrs.append(Instruction(op=node.op, dest=sched.slot_of[name], args=tuple(args)))
    return Trace(
        n=sched.machine_width,
        instrs=tuple(instrs),
        input_slots=tuple(sched.slot_of[name] for name in dag.inputs),
        output_slots=tuple(sched.slot_of[ref] for ref in dag.outputs),
    )


def trace_to_dag(trace: Trace, input_active: Sequence[bool] = None) -> Dag:
    """View a register program as a data-flow graph over value versions.

    Graph inputs are the initial register values; each instruction becomes a
    node over the current versions of its source slots.  A non-active read of
    an active value has no graph representation and raises ValidationError.
    """
    if input_active is None:
        input_active = (True,) * trace.n
    current = {i: f"r{i}" for i in range(trace.n)}
    activity = {f"r{i}": bool(a) for i, a in zip(range(trace.n), input_active)}
    nodes = []
    for t, ins in enumerate(trace.instrs):
        args = []
        node_active = False
        for operand in ins.args:
            if isinstance(operand, Const):
                args.append(operand)
                continue
            ref = current[operand.index]
            if not operand.active and activity[ref]:
                raise ValidationError(
                    f"step {t}: non-active read of active value '{ref}' has no "
                    "graph equivalent"
                )
            args.append(ref)
            node_active = node_active or (operand.active and activity[ref])
        nid = f"t{t}"
        nodes.append(DagNode(nid, ins.op, tuple(args)))
        activity[nid] = node_active
        current[ins.dest] = nid
    return Dag(
        inputs=tuple(f"r{i}" for i in range(trace.n)),
        nodes=tuple(nodes),
        outputs=tuple(current[s] for s in trace.output_slots),
        input_active=tuple(bool(a) for a in input_active),
    )
