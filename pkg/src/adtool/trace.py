"""Straight-line programs over a fixed register file.

A :class:`Trace` is an ordered list of instructions over ``n`` registers.  A
machine state is a length-``n`` float vector; running the trace threads the
state through every instruction.  When each instruction overwrites one of its
active source slots, the trace is in overwrite form and the count of live
active registers stays at ``n`` between steps, which is the regime in which
the derivative map of the whole program can be inverted step by step.

Traces are immutable after construction and all operations here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import BasisOp, Const, Slot, arg_values, eval_op
from .errors import ValidationError

__all__ = [
    "Instruction",
    "Trace",
    "Tape",
    "WidthViolation",
    "eval_primal",
    "run_primal",
    "width_profile",
    "check_constant_width",
    "gather",
    "scatter",
]


@dataclass(frozen=True)
class Instruction:
    """One basis-function application writing to a destination slot.

    Source slots must be pairwise distinct.  The destination may be any slot;
    when it coincides with an active source the instruction is in overwrite
    form, which is what the inverse derivative modes require.
    """

    op: BasisOp
    dest: int
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if len(self.args) != self.op.arity:
            raise ValidationError(
                f"op '{self.op.name}' takes {self.op.arity} operand(s), "
                f"got {len(self.args)}"
            )
        slots = self.src_slots
        if len(set(slots)) != len(slots):
            raise ValidationError("source slots must be pairwise distinct")
        if self.dest < 0:
            raise ValidationError("destination slot must be non-negative")

    @property
    def src_slots(self) -> tuple[int, ...]:
        return tuple(a.index for a in self.args if isinstance(a, Slot))

    @property
    def active_src_slots(self) -> tuple[int, ...]:
        return tuple(a.index for a in self.args if isinstance(a, Slot) and a.active)

    @property
    def overwrites_source(self) -> bool:
        return self.dest in self.active_src_slots

    @property
    def other_active_slots(self) -> tuple[int, ...]:
        """Active source slots other than the destination, in operand order.

        Aligned with ``StepLinearization.bs`` for this instruction.
        """
        return tuple(s for s in self.active_src_slots if s != self.dest)


@dataclass(frozen=True)
class Trace:
    """An immutable straight-line program over ``n`` registers."""

    n: int
    instrs: tuple[Instruction, ...] = ()
    input_slots: tuple[int, ...] = None
    output_slots: tuple[int, ...] = None

    def __post_init__(self):
        object.__setattr__(self, "instrs", tuple(self.instrs))
        if self.n < 0:
            raise ValidationError("machine width must be non-negative")
        if self.input_slots is None:
            object.__setattr__(self, "input_slots", tuple(range(self.n)))
        else:
            object.__setattr__(self, "input_slots", tuple(self.input_slots))
        if self.output_slots is None:
            object.__setattr__(self, "output_slots", tuple(range(self.n)))
        else:
            object.__setattr__(self, "output_slots", tuple(self.output_slots))
        for name, slots in (("input", self.input_slots), ("output", self.output_slots)):
            if len(set(slots)) != len(slots):
                raise ValidationError(f"{name} slots must be distinct")
            for s in slots:
                if not 0 <= s < self.n:
                    raise ValidationError(f"{name} slot r{s} out of range for width {self.n}")
        for t, ins in enumerate(self.instrs):
            for s in ins.src_slots + (ins.dest,):
                if not 0 <= s < self.n:
                    raise ValidationError(f"step {t}: slot r{s} out of range for width {self.n}")

    def __len__(self) -> int:
        return len(self.instrs)

    @property
    def is_overwrite_form(self) -> bool:
        """Every instruction overwrites one of its active sources."""
        return all(ins.overwrites_source for ins in self.instrs)


@dataclass
class Tape:
    """Pre-step machine states recorded by a forward sweep, one per step."""

    states: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, t: int) -> np.ndarray:
        return self.states[t]


def _as_state(trace: Trace, x) -> np.ndarray:
    state = np.array(x, dtype=float)
    if state.shape != (trace.n,):
        raise ValidationError(
            f"state has shape {state.shape}, trace expects ({trace.n},)"
        )
    return state


def run_primal(trace: Trace, x) -> np.ndarray:
    """Run the program and return the final machine state (no tape)."""
    state = _as_state(trace, x)
    for t, ins in enumerate(trace.instrs):
        state[ins.dest] = eval_op(ins.op, arg_values(ins.args, state), step=t)
    return state


def eval_primal(trace: Trace, x) -> tuple[np.ndarray, Tape]:
    """Run the program, recording the pre-step state of every instruction."""
    state = _as_state(trace, x)
    tape = Tape()
    for t, ins in enumerate(trace.instrs):
        value = eval_op(ins.op, arg_values(ins.args, state), step=t)
        tape.states.append(state.copy())
        state[ins.dest] = value
    return state, tape


def width_profile(trace: Trace) -> list[int]:
    """Count of live active registers at each of the T+1 cuts.

    A register is live at a cut when its current value is later read by an
    active operand before being overwritten, or survives to an output slot.
    Overwrite-form traces with full-width inputs and outputs have a constant
    profile equal to ``n``.
    """
    live = set(trace.output_slots)
    profile = [0] * (len(trace.instrs) + 1)
    profile[len(trace.instrs)] = len(live)
    for t in range(len(trace.instrs) - 1, -1, -1):
        ins = trace.instrs[t]
        live.discard(ins.dest)
        live.update(ins.active_src_slots)
        profile[t] = len(live)
    return profile


@dataclass(frozen=True)
class WidthViolation:
    """First cut whose live active width differs from the machine width."""

    step: int
    width: int


def check_constant_width(trace: Trace) -> Optional[WidthViolation]:
    """None when every cut has exactly ``n`` live active registers."""
    for cut, width in enumerate(width_profile(trace)):
        if width != trace.n:
            return WidthViolation(cut, width)
    return None


def gather(state: np.ndarray, slots: Sequence[int]) -> np.ndarray:
    return np.array([state[s] for s in slots], dtype=float)


def scatter(n: int, slots: Sequence[int], values, base=None) -> np.ndarray:
    """Place ``values`` at ``slots`` in a length-``n`` vector."""
    out = np.zeros(n) if base is None else np.array(base, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(slots) != values.shape[0]:
        raise ValidationError(
            f"{values.shape[0]} value(s) for {len(slots)} slot(s)"
        )
    for s, v in zip(slots, values):
        out[s] = v
    return out
