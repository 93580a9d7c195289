"""The four derivative accumulation modes over register traces.

Each instruction's state-to-state Jacobian differs from the identity only in
the written row, so products with it, its transpose, its inverse, and its
inverse transpose all reduce to a sparse update of a derivative vector.  For a
step with partials ``(a, bs)`` on destination slot ``R`` and other active
source slots ``S_i``:

    forward          v[R] = a*v[R] + sum b_i*v[S_i]        (J v)
    reverse          v[S_i] += b_i*v[R]; v[R] = a*v[R]     (J^T v)
    forward inverse  v[R] /= a; v[S_i] -= b_i*v[R]         (J^-T v)
    reverse inverse  v[R] = (v[R] - sum b_i*v[S_i]) / a    (J^-1 v)

The whole-program products chain these kernels: ``jvp`` and ``vjp_inverse``
sweep forward in tandem with the primal and need no tape; ``vjp`` and
``jvp_inverse`` sweep the steps in reverse order over recorded pre-step
states.  Note the write sets: the reverse-inverse kernel touches only the
written slot, the forward-inverse kernel touches every involved slot.

Inverse modes require every step to overwrite an active source with a
non-negligible partial ``a``; a step failing that raises SingularStepError
at the offending index.
"""

from __future__ import annotations

import numpy as np

from .basis import (
    eval_and_linearize,
    invert_step_value,
    is_step_invertible,
    linearize_step,
)
from .errors import SingularStepError, ValidationError
from .trace import Trace, eval_primal, run_primal

__all__ = [
    "forward_step",
    "reverse_step",
    "forward_inverse_step",
    "reverse_inverse_step",
    "STEP_KERNELS",
    "jvp",
    "vjp",
    "jvp_inverse",
    "vjp_inverse",
    "vjp_tapeless",
    "jvp_inverse_tapeless",
    "DEFAULT_SINGULAR_TOL",
]

DEFAULT_SINGULAR_TOL = 1e-12


def forward_step(v, dest, a, others) -> None:
    v[dest] = a * v[dest] + sum(b * v[s] for s, b in others)


def reverse_step(v, dest, a, others) -> None:
    vr = v[dest]
    v[dest] = a * vr
    for s, b in others:
        v[s] += b * vr


def forward_inverse_step(v, dest, a, others) -> None:
    w = v[dest] / a
    v[dest] = w
    for s, b in others:
        v[s] -= b * w


def reverse_inverse_step(v, dest, a, others) -> None:
    v[dest] = (v[dest] - sum(b * v[s] for s, b in others)) / a


# One table holds all four per-step transformations.
STEP_KERNELS = {
    "jvp": forward_step,
    "vjp": reverse_step,
    "vjp_inverse": forward_inverse_step,
    "jvp_inverse": reverse_inverse_step,
}


def _vector(trace: Trace, v) -> np.ndarray:
    out = np.array(v, dtype=float)
    if out.shape != (trace.n,):
        raise ValidationError(
            f"derivative vector has shape {out.shape}, trace expects ({trace.n},)"
        )
    return out


def _sites(ins, lin):
    return ins.dest, lin.a, tuple(zip(ins.other_active_slots, lin.bs))


def jvp(trace: Trace, x, xdot) -> np.ndarray:
    """Tangent of the program's output along ``xdot`` (J v), computed in
    tandem with the primal sweep, no tape."""
    state = np.array(x, dtype=float)
    v = _vector(trace, xdot)
    for t, ins in enumerate(trace.instrs):
        value, lin = eval_and_linearize(ins, state, step=t)
        dest, a, others = _sites(ins, lin)
        forward_step(v, dest, a, others)
        state[ins.dest] = value
    return v


def vjp(trace: Trace, x, ybar) -> np.ndarray:
    """Cotangent pulled back through the program (J^T v); consumes the tape
    in reverse step order."""
    _, tape = eval_primal(trace, x)
    v = _vector(trace, ybar)
    for t in range(len(trace.instrs) - 1, -1, -1):
        ins = trace.instrs[t]
        lin = linearize_step(ins, tape[t], step=t)
        dest, a, others = _sites(ins, lin)
        reverse_step(v, dest, a, others)
    return v


def jvp_inverse(trace: Trace, x, ydot_star, tol: float = DEFAULT_SINGULAR_TOL) -> np.ndarray:
    """Solve J w = v for w (J^-1 v) by inverting each step in reverse order
    over the tape."""
    _, tape = eval_primal(trace, x)
    v = _vector(trace, ydot_star)
    for t in range(len(trace.instrs) - 1, -1, -1):
        ins = trace.instrs[t]
        lin = linearize_step(ins, tape[t], step=t)
        if not is_step_invertible(lin, tol):
            raise SingularStepError(t, abs(lin.a), tol)
        dest, a, others = _sites(ins, lin)
        reverse_inverse_step(v, dest, a, others)
    return v


def vjp_inverse(trace: Trace, x, xbar_star, tol: float = DEFAULT_SINGULAR_TOL) -> np.ndarray:
    """Solve J^T w = v for w (J^-T v) in tandem with the primal sweep, no
    tape."""
    state = np.array(x, dtype=float)
    v = _vector(trace, xbar_star)
    for t, ins in enumerate(trace.instrs):
        value, lin = eval_and_linearize(ins, state, step=t)
        if not is_step_invertible(lin, tol):
            raise SingularStepError(t, abs(lin.a), tol)
        dest, a, others = _sites(ins, lin)
        forward_inverse_step(v, dest, a, others)
        state[ins.dest] = value
    return v


def _reconstruct_sweep(trace: Trace, x, y):
    """Yield (t, instruction, pre-step state) backwards, rebuilding each
    pre-step state from the post-step state via local inverses."""
    post = np.array(y, dtype=float) if y is not None else run_primal(trace, x)
    if post.shape != (trace.n,):
        raise ValidationError(
            f"output state has shape {post.shape}, trace expects ({trace.n},)"
        )
    for t in range(len(trace.instrs) - 1, -1, -1):
        ins = trace.instrs[t]
        pre = post.copy()
        pre[ins.dest] = invert_step_value(ins, float(post[ins.dest]), post, step=t)
        yield t, ins, pre
        post = pre


def vjp_tapeless(trace: Trace, x, ybar, y=None) -> np.ndarray:
    """Like :func:`vjp` but reconstructs intermediate states backwards from
    the output instead of recording a tape.  Requires every step's operation
    to have a local inverse.  Pass ``y`` to skip the forward sweep."""
    v = _vector(trace, ybar)
    for t, ins, pre in _reconstruct_sweep(trace, x, y):
        lin = linearize_step(ins, pre, step=t)
        dest, a, others = _sites(ins, lin)
        reverse_step(v, dest, a, others)
    return v


def jvp_inverse_tapeless(
    trace: Trace, x, ydot_star, y=None, tol: float = DEFAULT_SINGULAR_TOL
) -> np.ndarray:
    """Like :func:`jvp_inverse` without a tape; intermediate states are
    reconstructed backwards via local inverses."""
    v = _vector(trace, ydot_star)
    for t, ins, pre in _reconstruct_sweep(trace, x, y):
        lin = linearize_step(ins, pre, step=t)
        if not is_step_invertible(lin, tol):
            raise SingularStepError(t, abs(lin.a), tol)
        dest, a, others = _sites(ins, lin)
        reverse_inverse_step(v, dest, a, others)
    return v
