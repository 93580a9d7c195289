"""Text format for register programs and data-flow graphs.

    # comment
    width 2
    inputs r0 r1
    outputs r0 r1
    r0 = mul r0 r1

Body lines are ``<dest> = <op> <arg...>`` where arguments are register names
``rK``, numeric literals (non-active), or temporaries ``tmpK``.  A file with
any temporaries parses as a graph: each body line then defines a new value
named ``tmpK`` and outputs may reference registers or temporaries.  Without
temporaries the file parses as a register program, whose instructions must
overwrite one of their source registers.
"""

from __future__ import annotations

import re

from .basis import Const, Slot, builtin_ops
from .errors import ParseError, ValidationError
from .lumpify import Dag, DagNode
from .trace import Instruction, Trace

__all__ = ["parse_program", "print_program"]

_SLOT_RE = re.compile(r"^r(\d+)$")
_TMP_RE = re.compile(r"^tmp(\d+)$")


def _tokenize(text: str):
    """Logical lines as (lineno, [(col, token), ...]), comments stripped."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        toks = [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", body)]
        if toks:
            lines.append((lineno, toks))
    return lines


def _parse_number(tok: str):
    try:
        return float(tok)
    except ValueError:
        return None


def _header(lines):
    if len(lines) < 3:
        raise ParseError(1, 1, "expected 'width', 'inputs', and 'outputs' lines")
    (ln, toks) = lines[0]
    if toks[0][1] != "width" or len(toks) != 2 or not toks[1][1].isdigit():
        raise ParseError(ln, toks[0][0], "expected 'width <n>'")
    width = int(toks[1][1])
    (in_ln, toks) = lines[1]
    if toks[0][1] != "inputs":
        raise ParseError(in_ln, toks[0][0], "expected 'inputs <names...>'")
    inputs = (in_ln, toks[1:])
    (out_ln, toks) = lines[2]
    if toks[0][1] != "outputs":
        raise ParseError(out_ln, toks[0][0], "expected 'outputs <names...>'")
    outputs = (out_ln, toks[1:])
    return width, inputs, outputs, lines[3:]


def _slot_index(lineno, col, tok, width):
    m = _SLOT_RE.match(tok)
    if not m:
        raise ParseError(lineno, col, f"expected a register name, got '{tok}'")
    idx = int(m.group(1))
    if idx >= width:
        raise ValidationError(f"line {lineno}: register {tok} out of range for width {width}")
    return idx


def parse_program(text: str):
    """Parse program text into a Trace or, when temporaries appear, a Dag."""
    lines = _tokenize(text)
    width, inputs, outputs, body = _header(lines)
    registry = builtin_ops()

    is_dag = any(
        _TMP_RE.match(tok)
        for _, toks in lines
        for _, tok in toks
    )

    parsed_body = []
    for lineno, toks in body:
        if len(toks) < 3 or toks[1][1] != "=":
            raise ParseError(lineno, toks[0][0], "expected '<dest> = <op> <args...>'")
        dest_col, dest = toks[0]
        op_col, op_name = toks[2]
        op = registry.get(op_name)
        if op is None:
            raise ParseError(lineno, op_col, f"unknown op '{op_name}'")
        parsed_body.append((lineno, dest_col, dest, op, toks[3:]))

    if not is_dag:
        instrs = []
        for lineno, dest_col, dest, op, arg_toks in parsed_body:
            dest_idx = _slot_index(lineno, dest_col, dest, width)
            args = []
            for col, tok in arg_toks:
                if _SLOT_RE.match(tok):
                    args.append(Slot(_slot_index(lineno, col, tok, width)))
                else:
                    num = _parse_number(tok)
                    if num is None:
                        raise ParseError(lineno, col, f"expected a register or number, got '{tok}'")
                    args.append(Const(num))
            try:
                instr = Instruction(op=op, dest=dest_idx, args=tuple(args))
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            if not instr.overwrites_source:
                raise ValidationError(
                    f"line {lineno}: destination r{dest_idx} must overwrite one of "
                    "its source registers (use a tmpK name for a fresh value)"
                )
            instrs.append(instr)
        in_ln, in_toks = inputs
        out_ln, out_toks = outputs
        in_slots = tuple(_slot_index(in_ln, col, tok, width) for col, tok in in_toks)
        out_slots = tuple(_slot_index(out_ln, col, tok, width) for col, tok in out_toks)
        return Trace(n=width, instrs=tuple(instrs),
                     input_slots=in_slots, output_slots=out_slots)

    # Graph form: inputs are register names, body defines tmp values.
    in_ln, in_toks = inputs
    input_names = []
    for col, tok in in_toks:
        if not _SLOT_RE.match(tok):
            raise ParseError(in_ln, col, f"graph inputs must be registers, got '{tok}'")
        input_names.append(tok)
    if len(input_names) != width:
        raise ValidationError(
            f"graph header width {width} does not match {len(input_names)} input(s)"
        )
    known = set(input_names)
    nodes = []
    for lineno, dest_col, dest, op, arg_toks in parsed_body:
        if not _TMP_RE.match(dest):
            raise ParseError(
                lineno, dest_col,
                f"graph definitions must name a temporary (tmpK), got '{dest}'",
            )
        if dest in known:
            raise ValidationError(f"line {lineno}: '{dest}' is defined twice")
        args = []
        for col, tok in arg_toks:
            if _SLOT_RE.match(tok) or _TMP_RE.match(tok):
                if tok not in known:
                    raise ValidationError(f"line {lineno}: '{tok}' is not defined yet")
                args.append(tok)
            else:
                num = _parse_number(tok)
                if num is None:
                    raise ParseError(lineno, col, f"expected a value or number, got '{tok}'")
                args.append(Const(num))
        try:
            nodes.append(DagNode(dest, op, tuple(args)))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        known.add(dest)
    out_ln, out_toks = outputs
    out_refs = []
    for _, tok in out_toks:
        if tok not in known:
            raise ValidationError(f"line {out_ln}: output '{tok}' is not defined")
        out_refs.append(tok)
    return Dag(inputs=tuple(input_names), nodes=tuple(nodes), outputs=tuple(out_refs))


def _format_const(value: float) -> str:
    return repr(float(value))


def print_program(prog) -> str:
    """Render a Trace or Dag in the canonical text form.

    Graph values are renamed to r0..r{m-1} and tmp1..tmpT in declaration
    order, so printing normalizes names; activity flags have no textual form
    and are dropped.
    """
    out = []
    if isinstance(prog, Trace):
        out.append(f"width {prog.n}")
        out.append("inputs " + " ".join(f"r{s}" for s in prog.input_slots))
        out.append("outputs " + " ".join(f"r{s}" for s in prog.output_slots))
        for ins in prog.instrs:
            rendered = [
                f"r{a.index}" if isinstance(a, Slot) else _format_const(a.value)
                for a in ins.args
            ]
            out.append(f"r{ins.dest} = {ins.op.name} " + " ".join(rendered))
        return "\n".join(out) + "\n"
    if isinstance(prog, Dag):
        rename = {name: f"r{i}" for i, name in enumerate(prog.inputs)}
        for i, node in enumerate(prog.nodes, start=1):
            rename[node.id] = f"tmp{i}"
        out.append(f"width {len(prog.inputs)}")
        out.append("inputs " + " ".join(rename[name] for name in prog.inputs))
        out.append("outputs " + " ".join(rename[ref] for ref in prog.outputs))
        for node in prog.nodes:
            rendered = [
                rename[a] if not isinstance(a, Const) else _format_const(a.value)
                for a in node.args
            ]
            out.append(f"{rename[node.id]} = {node.op.name} " + " ".join(rendered))
        return "\n".join(out) + "\n"
    raise ValidationError(f"expected a Trace or Dag, got {type(prog).__name__}")
