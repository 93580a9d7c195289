"""Exception hierarchy shared by every module in the package.

All errors derive from :class:`AdtoolError` so callers (and the command-line
front end) can catch one type and serialize a machine-readable payload.
"""

from __future__ import annotations


class AdtoolError(Exception):
    """Base class for errors raised by this package."""

    def payload(self) -> dict:
        """Machine-readable description, used for JSON error output."""
        return {"type": type(self).__name__, "message": str(self)}


class DomainError(AdtoolError):
    """A primitive operation was evaluated outside its domain."""

    def __init__(self, op: str, args, step=None):
        self.op = op
        self.args = tuple(float(a) for a in args)
        self.step = step
        super().__init__()

    def __str__(self) -> str:
        where = "" if self.step is None else f" at step {self.step}"
        vals = ", ".join(format(a, "g") for a in self.args)
        return f"{self.op}({vals}) is outside the operation's domain{where}"

    def payload(self) -> dict:
        out = super().payload()
        out.update({"op": self.op, "args": list(self.args), "step": self.step})
        return out


class SingularStepError(AdtoolError):
    """A step's local derivative is too small to invert."""

    def __init__(self, step: int, magnitude: float, tol: float):
        self.step = step
        self.magnitude = float(magnitude)
        self.tol = float(tol)
        super().__init__(
            f"step {step} is not invertible: |a| = {magnitude:.3g} <= tol = {tol:.3g}"
        )

    def payload(self) -> dict:
        out = super().payload()
        out.update({"step": self.step, "magnitude": self.magnitude, "tol": self.tol})
        return out


class NoLocalInverseError(AdtoolError):
    """An operation has no registered local inverse for the needed operand."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"operation '{op}' has no local inverse"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class WidthUnderflowError(AdtoolError):
    """Live active width fell below the machine width during scheduling."""

    def __init__(self, position: int, width: int, n: int):
        self.position = position
        self.width = width
        self.n = n
        super().__init__(
            f"live active width {width} < {n} after scheduling {position} node(s); "
            "the graph's derivative map is structurally singular"
        )


class SizeLimitError(AdtoolError):
    """Exhaustive enumeration was requested beyond its node budget."""

    def __init__(self, count: int, limit: int):
        self.count = count
        self.limit = limit
        super().__init__(f"graph has {count} nodes, exhaustive search allows <= {limit}")


class SingularLumpError(AdtoolError):
    """A lump's square block is numerically singular."""

    def __init__(self, pivot: float, tol: float):
        self.pivot = float(pivot)
        self.tol = float(tol)
        super().__init__(f"lump block is singular: |pivot| = {pivot:.3g} <= tol = {tol:.3g}")


class SingularMatrixError(AdtoolError):
    """Pivoted elimination found no usable pivot."""

    def __init__(self, pivot: float, tol: float):
        self.pivot = float(pivot)
        self.tol = float(tol)
        super().__init__(f"matrix is singular: |pivot| = {pivot:.3g} <= tol = {tol:.3g}")


class OracleError(AdtoolError):
    """The reference Jacobian disagreed with its finite-difference cross-check."""


class ParseError(AdtoolError):
    """A program file could not be parsed."""

    def __init__(self, line: int, col: int, message: str):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, col {col}: {message}")

    def payload(self) -> dict:
        out = super().payload()
        out.update({"line": self.line, "col": self.col})
        return out


class ValidationError(AdtoolError):
    """A structurally invalid program, graph, or schedule."""


class MaxItersExceeded(AdtoolError):
    """Newton iteration hit its step budget; carries the best iterate seen."""

    def __init__(self, best, residual: float, history):
        self.best = best
        self.residual = float(residual)
        self.history = list(history)
        super().__init__(
            f"no convergence in {len(history) - 1} iteration(s); "
            f"best residual {residual:.3g}"
        )

    def payload(self) -> dict:
        out = super().payload()
        out.update({"best": [float(v) for v in self.best], "residual": self.residual})
        return out
