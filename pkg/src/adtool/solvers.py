"""Newton root finding driven by inverse-mode differentiation.

Each step solves J dx = f(x) through the reverse-inverse mode instead of
forming or factoring a dense Jacobian, so the per-step cost matches one
taped derivative sweep.  Works on constant-width register programs directly
and on general graphs through the lumped evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MaxItersExceeded, ValidationError
from .lumpify import Dag, eval_dag, greedy_schedule, lumped_mode_eval
from .modes import DEFAULT_SINGULAR_TOL, jvp_inverse
from .trace import Trace, gather, run_primal, scatter

__all__ = ["NewtonConfig", "NewtonResult", "newton_step", "newton_solve"]


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 25
    abs_tol: float = 1e-12
    singular_tol: float = DEFAULT_SINGULAR_TOL

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")
        if self.abs_tol <= 0 or self.singular_tol <= 0:
            raise ValidationError("tolerances must be positive")


def _residual_and_solver(prog, singular_tol):
    """f(x) and a J(x)^-1 v solver for a register program or a graph."""
    if isinstance(prog, Trace):
        if len(prog.input_slots) != prog.n or len(prog.output_slots) != prog.n:
            raise ValidationError("root finding needs a square, full-width program")

        def residual(x):
            y = run_primal(prog, scatter(prog.n, prog.input_slots, x))
            return gather(y, prog.output_slots)

        def solve(x, v):
            state = scatter(prog.n, prog.input_slots, x)
            rhs = scatter(prog.n, prog.output_slots, v)
            w = jvp_inverse(prog, state, rhs, tol=singular_tol)
            return gather(w, prog.input_slots)

        return residual, solve
    if isinstance(prog, Dag):
        if not all(prog.input_active):
            raise ValidationError("root finding needs every graph input active")
        n = prog.n_active_inputs
        schedule = greedy_schedule(prog, n)

        def residual(x):
            outs, _ = eval_dag(prog, x)
            return outs

        def solve(x, v):
            return lumped_mode_eval(prog, n, x, v, "jvp_inverse", schedule=schedule)

        return residual, solve
    raise ValidationError(f"expected a Trace or Dag, got {type(prog).__name__}")


def newton_step(prog, x, singular_tol: float = DEFAULT_SINGULAR_TOL) -> np.ndarray:
    """One Newton update x - J^-1 f(x)."""
    residual, solve = _residual_and_solver(prog, singular_tol)
    x = np.array(x, dtype=float)
    return x - solve(x, residual(x))


@dataclass
class NewtonResult:
    root: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)


def newton_solve(prog, x0, config: NewtonConfig = NewtonConfig()) -> NewtonResult:
    """Iterate Newton steps until ||f(x)||_inf <= abs_tol.

    Returns the root, the number of steps taken, and the residual history
    (including the starting residual).  Raises MaxItersExceeded, carrying the
    best iterate seen, when the budget runs out; no damping or line search is
    attempted.
    """
    residual, solve = _residual_and_solver(prog, config.singular_tol)
    x = np.array(x0, dtype=float)
    fx = residual(x)
    res = float(np.max(np.abs(fx))) if fx.size else 0.0
    history = [res]
    best_x, best_res = x.copy(), res
    for k in range(config.max_iters):
        if res <= config.abs_tol:
            return NewtonResult(root=x, iterations=k, residuals=history)
        x = x - solve(x, fx)
        fx = residual(x)
        res = float(np.max(np.abs(fx))) if fx.size else 0.0
        history.append(res)
        if res < best_res:
            best_x, best_res = x.copy(), res
    if res <= config.abs_tol:
        return NewtonResult(root=x, iterations=config.max_iters, residuals=history)
    raise MaxItersExceeded(best_x, best_res, history)
