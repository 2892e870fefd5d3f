"""Bridge to an external SMT solver speaking SMT-LIB v2 over stdin/stdout."""
from __future__ import annotations

import os
import shlex
import subprocess
import time
from fractions import Fraction
from typing import Mapping

from .lra import ConstraintSystem, LinearAtom, Relation, SolveResult, SolveStatus, check_assignment

__all__ = ["ProtocolError", "SmtLibSolver", "solve_external", "to_smtlib", "parse_sexpr", "parse_value"]

_OPS = {Relation.GT: ">", Relation.GE: ">=", Relation.LT: "<", Relation.LE: "<=", Relation.EQ: "="}

# flags that make common solvers read a script from stdin
_STDIN_FLAGS = {"z3": ["-in", "-smt2"], "cvc5": ["--lang=smt2"], "cvc4": ["--lang=smt2"]}


class ProtocolError(RuntimeError):
    """The solver's reply could not be understood."""


def _name(v) -> str:
    return f"v{v}"


def _real(q: Fraction) -> str:
    q = Fraction(q)
    mag = f"{abs(q.numerator)}.0" if q.denominator == 1 else f"(/ {abs(q.numerator)}.0 {q.denominator}.0)"
    return f"(- {mag})" if q < 0 else mag


def _term(v, integral: Mapping) -> str:
    return f"(to_real {_name(v)})" if integral.get(v, False) else _name(v)


def _atom(atom: LinearAtom, integral: Mapping) -> str:
    parts = [f"(* {_real(c)} {_term(v, integral)})" for v, c in sorted(atom.expr.coefficients.items())]
    parts.append(_real(atom.expr.constant))
    lhs = parts[0] if len(parts) == 1 else f"(+ {' '.join(parts)})"
    return f"({_OPS[Relation(atom.relation)]} {lhs} 0.0)"


def to_smtlib(system: ConstraintSystem) -> str:
    """Render ``system`` as a self-contained SMT-LIB v2 script."""
    variables = system.variables()
    integral = {v: system.integral.get(v, False) for v in variables}
    logic = "QF_LIRA" if any(integral.values()) else "QF_LRA"
    lines = [f"(set-logic {logic})", "(set-option :produce-models true)"]
    for v in variables:
        lines.append(f"(declare-fun {_name(v)} () {'Int' if integral[v] else 'Real'})")
    for v in variables:
        lo, hi = system.bounds[v]
        t = _term(v, integral)
        lines.append(f"(assert (and (<= {_real(lo)} {t}) (<= {t} {_real(hi)})))")
    for a in system.atoms:
        lines.append(f"(assert {_atom(a, integral)})")
    for d in system.disjunctions:
        lines.append(f"(assert (or {' '.join(_atom(a, integral) for a in d)}))")
    lines.append("(check-sat)")
    if variables:
        lines.append(f"(get-value ({' '.join(_name(v) for v in variables)}))")
    lines.append("(exit)")
    return "\n".join(lines) + "\n"


def _tokens(text: str):
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            yield ch
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch == '"':
            j = text.index('"', i + 1)
            yield text[i : j + 1]
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            yield text[i:j]
            i = j


def parse_sexpr(text: str) -> list:
    """Parse a sequence of s-expressions into nested lists of atoms."""
    stack: list[list] = [[]]
    for tok in _tokens(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ProtocolError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ProtocolError("unbalanced '('")
    return stack[0]


def parse_value(term) -> Fraction:
    """Numeric SMT-LIB term: ``5``, ``2.5``, ``(- 3)``, ``(/ 1 2)`` and nestings thereof."""
    if isinstance(term, str):
        try:
            return Fraction(term)
        except ValueError:
            raise ProtocolError(f"not a numeral: {term!r}") from None
    if len(term) == 2 and term[0] == "-":
        return -parse_value(term[1])
    if len(term) == 3 and term[0] == "/":
        den = parse_value(term[2])
        if den == 0:
            raise ProtocolError("division by zero in model value")
        return parse_value(term[1]) / den
    if len(term) == 2 and term[0] == "to_real":
        return parse_value(term[1])
    raise ProtocolError(f"unsupported value term {term!r}")


def _interpret(output: str, variables: list) -> tuple[SolveStatus, dict | None]:
    exprs = parse_sexpr(output)
    if not exprs:
        raise ProtocolError("empty solver output")
    head = exprs[0]
    if isinstance(head, list) and head and head[0] == "error":
        raise ProtocolError(f"solver error: {' '.join(map(str, head[1:]))}")
    if head not in ("sat", "unsat", "unknown"):
        raise ProtocolError(f"unexpected check-sat reply {head!r}")
    if head != "sat":
        return SolveStatus(head), None
    if not variables:
        return SolveStatus.SAT, {}
    if len(exprs) < 2 or not isinstance(exprs[1], list):
        raise ProtocolError("missing get-value reply")
    names = {_name(v): v for v in variables}
    model = {}
    for pair in exprs[1]:
        if not (isinstance(pair, list) and len(pair) == 2 and pair[0] in names):
            raise ProtocolError(f"malformed model entry {pair!r}")
        model[names[pair[0]]] = parse_value(pair[1])
    if set(model) != set(variables):
        raise ProtocolError("model does not cover every variable")
    return SolveStatus.SAT, model


class SmtLibSolver:
    """Runs one fresh solver process per query."""

    def __init__(self, command: str | list[str]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise ValueError("empty solver command")
        base = os.path.basename(argv[0])
        if len(argv) == 1 and base in _STDIN_FLAGS:
            argv += _STDIN_FLAGS[base]
        self.argv = argv

    def __repr__(self):
        return f"SmtLibSolver({' '.join(self.argv)!r})"

    def solve(self, system: ConstraintSystem, deadline: float | None = None) -> SolveResult:
        start = time.monotonic()
        script = to_smtlib(system)
        variables = system.variables()
        try:
            proc = subprocess.run(
                self.argv, input=script, capture_output=True, text=True, timeout=deadline, check=False
            )
        except subprocess.TimeoutExpired:
            return SolveResult(SolveStatus.UNKNOWN, elapsed=time.monotonic() - start, message="deadline expired")
        except OSError as exc:
            return SolveResult(SolveStatus.UNKNOWN, elapsed=time.monotonic() - start, message=f"spawn failed: {exc}")
        elapsed = time.monotonic() - start
        try:
            status, model = _interpret(proc.stdout, variables)
        except ProtocolError as exc:
            return SolveResult(SolveStatus.UNKNOWN, elapsed=elapsed, message=f"protocol-parse failure: {exc}")
        if status is SolveStatus.SAT and not check_assignment(system, model):
            return SolveResult(SolveStatus.UNKNOWN, elapsed=elapsed, message="external model failed validation")
        return SolveResult(status, model, elapsed=elapsed)


def solve_external(system: ConstraintSystem, deadline: float | None = None, command: str | None = None) -> SolveResult:
    """Solve through an external binary (``command`` or ``$FAIRCERT_SMT_SOLVER``)."""
    command = command or os.environ.get("FAIRCERT_SMT_SOLVER")
    if not command:
        raise ValueError("no external solver configured (pass command or set FAIRCERT_SMT_SOLVER)")
    return SmtLibSolver(command).solve(system, deadline)
