"""Scalar primitive operations and per-step linearization.

Programs are built from a small registry of scalar basis functions (add, mul,
exp, ...).  Each operation knows its value, its partial derivatives, its
domain, and, when the operation is injective, a local inverse used to
reconstruct pre-step values without a tape.

Operands come in two kinds: :class:`Slot` reads a register (optionally as a
non-active read, which contributes no derivative), and :class:`Const` embeds a
literal.  A step that writes its result over one of its active source slots
has a one-row linearization ``(a, bs)``: ``a`` is the partial with respect to
the overwritten slot's previous value, ``bs`` are the partials with respect to
the other active source slots in operand order.  Partials of constants and
non-active reads are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

from .errors import DomainError, NoLocalInverseError, ValidationError

__all__ = [
    "Slot",
    "Const",
    "BasisOp",
    "StepLinearization",
    "builtin_ops",
    "get_op",
    "eval_op",
    "eval_grads",
    "arg_values",
    "linearize_step",
    "eval_and_linearize",
    "invert_step_value",
    "is_step_invertible",
]


@dataclass(frozen=True)
class Slot:
    """A register read.  Non-active reads are treated as constants."""

    index: int
    active: bool = True


@dataclass(frozen=True)
class Const:
    """A literal operand bound inside the instruction."""

    value: float


@dataclass(frozen=True, eq=False)
class BasisOp:
    """One scalar primitive: value, gradient, domain, optional local inverses.

    ``inverses`` maps an operand position to a callable computing that
    operand's value from the result and the remaining operands in order.
    Only injective positions carry an entry.
    """

    name: str
    arity: int
    fn: Callable[..., float]
    grads: Callable[..., tuple]
    domain: Callable[..., bool] = lambda *a: True
    inverses: Mapping[int, Callable[..., float]] = field(default_factory=dict)

    def __repr__(self) -> str:
        return f"<op {self.name}/{self.arity}>"


@dataclass(frozen=True)
class StepLinearization:
    """Sparse partials of one step: ``a`` for the overwritten slot, ``bs`` for
    the remaining active source slots in operand order."""

    a: float
    bs: tuple[float, ...] = ()


def _positive(x) -> bool:
    return x > 0.0


def _second_nonzero(u, v) -> bool:
    return v != 0.0


_OPS = (
    BasisOp(
        "add", 2, lambda u, v: u + v, lambda u, v: (1.0, 1.0),
        inverses={0: lambda y, v: y - v, 1: lambda y, u: y - u},
    ),
    BasisOp(
        "sub", 2, lambda u, v: u - v, lambda u, v: (1.0, -1.0),
        inverses={0: lambda y, v: y + v, 1: lambda y, u: u - y},
    ),
    BasisOp(
        "mul", 2, lambda u, v: u * v, lambda u, v: (v, u),
        inverses={0: lambda y, v: y / v, 1: lambda y, u: y / u},
    ),
    BasisOp(
        "div", 2, lambda u, v: u / v, lambda u, v: (1.0 / v, -u / (v * v)),
        domain=_second_nonzero,
        inverses={0: lambda y, v: y * v, 1: lambda y, u: u / y},
    ),
    BasisOp(
        "sqrt", 1, math.sqrt, lambda u: (0.5 / math.sqrt(u),),
        domain=_positive,
        inverses={0: lambda y: y * y},
    ),
    BasisOp(
        "log", 1, math.log, lambda u: (1.0 / u,),
        domain=_positive,
        inverses={0: math.exp},
    ),
    BasisOp("exp", 1, math.exp, lambda u: (math.exp(u),), inverses={0: math.log}),
    BasisOp("sin", 1, math.sin, lambda u: (math.cos(u),)),
    BasisOp("cos", 1, math.cos, lambda u: (-math.sin(u),)),
    BasisOp("atan", 1, math.atan, lambda u: (1.0 / (1.0 + u * u),),
            inverses={0: math.tan}),
    BasisOp("neg", 1, lambda u: -u, lambda u: (-1.0,), inverses={0: lambda y: -y}),
    BasisOp("square", 1, lambda u: u * u, lambda u: (2.0 * u,)),
    # Unary-with-literal forms; the literal travels as a Const operand.
    BasisOp(
        "add_const", 2, lambda u, c: u + c, lambda u, c: (1.0, 1.0),
        inverses={0: lambda y, c: y - c},
    ),
    BasisOp(
        "sub_const", 2, lambda u, c: u - c, lambda u, c: (1.0, -1.0),
        inverses={0: lambda y, c: y + c},
    ),
    BasisOp(
        "mul_const", 2, lambda u, c: u * c, lambda u, c: (c, u),
        inverses={0: lambda y, c: y / c},
    ),
)

_REGISTRY = MappingProxyType({op.name: op for op in _OPS})


def builtin_ops() -> Mapping[str, BasisOp]:
    """The immutable registry of built-in operations, keyed by name."""
    return _REGISTRY


def get_op(name: str) -> BasisOp:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValidationError(f"unknown operation '{name}'") from None


def arg_values(args: Sequence, state) -> list[float]:
    """Resolve operand values against a machine state."""
    return [a.value if isinstance(a, Const) else float(state[a.index]) for a in args]


def eval_op(op: BasisOp, vals: Sequence[float], step=None) -> float:
    """Evaluate ``op`` at ``vals``, mapping any numeric failure to DomainError."""
    if not op.domain(*vals):
        raise DomainError(op.name, vals, step)
    try:
        out = op.fn(*vals)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(op.name, vals, step) from exc
    if not math.isfinite(out):
        raise DomainError(op.name, vals, step)
    return out


def eval_grads(op: BasisOp, vals: Sequence[float], step=None) -> tuple:
    if not op.domain(*vals):
        raise DomainError(op.name, vals, step)
    try:
        g = op.grads(*vals)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(op.name, vals, step) from exc
    if not all(math.isfinite(gi) for gi in g):
        raise DomainError(op.name, vals, step)
    return g


def _split_partials(instr, grads) -> StepLinearization:
    a = 0.0
    bs = []
    for operand, g in zip(instr.args, grads):
        if isinstance(operand, Slot) and operand.active:
            if operand.index == instr.dest:
                a = g
            else:
                bs.append(g)
    return StepLinearization(float(a), tuple(float(b) for b in bs))


def linearize_step(instr, pre_state, step=None) -> StepLinearization:
    """Partials of one instruction at its pre-step state.

    ``a`` is zero when the destination slot is not among the active sources
    (the previous value is discarded, so nothing depends on it).
    """
    vals = arg_values(instr.args, pre_state)
    return _split_partials(instr, eval_grads(instr.op, vals, step))


def eval_and_linearize(instr, pre_state, step=None):
    """Value and linearization in one pass; used by tandem sweeps."""
    vals = arg_values(instr.args, pre_state)
    value = eval_op(instr.op, vals, step)
    return value, _split_partials(instr, eval_grads(instr.op, vals, step))


def invert_step_value(instr, post_value: float, post_state, step=None) -> float:
    """Recover the destination slot's pre-step value from the post-step state.

    Requires the instruction to read its destination and the operation to be
    injective in that operand.  Raises NoLocalInverseError otherwise.
    """
    pos = None
    for i, operand in enumerate(instr.args):
        if isinstance(operand, Slot) and operand.index == instr.dest:
            pos = i
            break
    if pos is None:
        raise NoLocalInverseError(
            instr.op.name, "step does not read the slot it overwrites"
        )
    rule = instr.op.inverses.get(pos)
    if rule is None:
        raise NoLocalInverseError(
            instr.op.name, f"operand {pos} cannot be recovered from the result"
        )
    others = [
        (a.value if isinstance(a, Const) else float(post_state[a.index]))
        for i, a in enumerate(instr.args)
        if i != pos
    ]
    try:
        pre = rule(post_value, *others)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(instr.op.name, [post_value, *others], step) from exc
    if not math.isfinite(pre):
        raise DomainError(instr.op.name, [post_value, *others], step)
    return pre


def is_step_invertible(lin: StepLinearization, tol: float = 1e-12) -> bool:
    """True when the step's overwritten-slot partial clears the tolerance."""
    return abs(lin.a) > tol
