"""Exact decision procedure for conjunctions of affine (in)equalities.

The core is the bounded general simplex used by SMT solvers: every atom
``sum(a_i x_i) + c  rel  0`` becomes a bound on a slack row, strict bounds
are kept exact with delta-rationals ``(a, b) = a + b*delta``, and pivots
follow Bland's rule so a run is fully deterministic.  Integer variables are
handled by depth-first branch-and-bound on the most fractional variable and
disjunctions by depth-first case splitting.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

from ..concolic import SymExpr

__all__ = [
    "Relation",
    "LinearAtom",
    "ConstraintSystem",
    "SolveStatus",
    "SolveResult",
    "UnboundedVariable",
    "MissingVariable",
    "solve",
    "check_assignment",
]

_ZERO = Fraction(0)
_ONE = Fraction(1)


class Relation(str, Enum):
    GT = "gt"
    GE = "ge"
    LT = "lt"
    LE = "le"
    EQ = "eq"


_HOLDS = {
    Relation.GT: lambda v: v > 0,
    Relation.GE: lambda v: v >= 0,
    Relation.LT: lambda v: v < 0,
    Relation.LE: lambda v: v <= 0,
    Relation.EQ: lambda v: v == 0,
}


@dataclass(frozen=True)
class LinearAtom:
    """``expr relation 0``."""

    expr: SymExpr
    relation: Relation

    def holds(self, binding: Mapping) -> bool:
        return _HOLDS[Relation(self.relation)](self.expr.evaluate(binding))

    @property
    def strict(self) -> bool:
        return self.relation in (Relation.GT, Relation.LT)


@dataclass
class ConstraintSystem:
    atoms: list[LinearAtom] = field(default_factory=list)
    bounds: dict[Hashable, tuple[Fraction, Fraction]] = field(default_factory=dict)
    integral: dict[Hashable, bool] = field(default_factory=dict)
    disjunctions: list[list[LinearAtom]] = field(default_factory=list)

    def referenced(self) -> set:
        used = set()
        for a in self.atoms:
            used |= a.expr.variables
        for d in self.disjunctions:
            for a in d:
                used |= a.expr.variables
        return used

    def variables(self) -> list:
        return sorted(set(self.bounds) | self.referenced())

    @property
    def uses_integers(self) -> bool:
        return any(self.integral.get(v, False) for v in self.variables())


class SolveStatus(str, Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass
class SolveResult:
    status: SolveStatus
    model: dict | None = None
    pivots: int = 0
    elapsed: float = 0.0
    message: str = ""

    @property
    def sat(self) -> bool:
        return self.status is SolveStatus.SAT


class UnboundedVariable(ValueError):
    """A variable is referenced without a finite box."""


class MissingVariable(KeyError):
    pass


class _Timeout(Exception):
    pass


def check_assignment(system: ConstraintSystem, model: Mapping) -> bool:
    """Independent exact check of ``model`` against every part of ``system``."""
    for v in system.variables():
        if v not in model:
            raise MissingVariable(v)
    binding = {v: Fraction(model[v]) for v in system.variables()}
    for v, (lo, hi) in system.bounds.items():
        if not lo <= binding[v] <= hi:
            return False
    for v, flag in system.integral.items():
        if flag and v in binding and binding[v].denominator != 1:
            return False
    if not all(a.holds(binding) for a in system.atoms):
        return False
    return all(any(a.holds(binding) for a in d) for d in system.disjunctions)


# -- delta-rational helpers: values are (real, delta) tuples, ordered lexicographically


def _dadd(p, q):
    return (p[0] + q[0], p[1] + q[1])


def _dsub(p, q):
    return (p[0] - q[0], p[1] - q[1])


def _dscale(k, p):
    return (k * p[0], k * p[1])


def _dfloor(p) -> int:
    a, b = p
    fl = math.floor(a)
    if a == fl and b < 0:
        return fl - 1
    return fl


class _Tableau:
    """Bounded simplex state; variables are dense integer indices."""

    def __init__(self, n: int, deadline: float | None):
        self.lower: list = [None] * n
        self.upper: list = [None] * n
        self.value: list = [(_ZERO, _ZERO)] * n
        self.rows: dict[int, dict[int, Fraction]] = {}
        self.trail: list = []
        self.pivots = 0
        self.deadline = deadline

    def add_row(self, coeffs: dict[int, Fraction]) -> int:
        s = len(self.value)
        self.lower.append(None)
        self.upper.append(None)
        row = {}
        for j, a in coeffs.items():
            if j in self.rows:
                for k, c in self.rows[j].items():
                    t = row.get(k, _ZERO) + a * c
                    if t:
                        row[k] = t
                    else:
                        row.pop(k, None)
            else:
                t = row.get(j, _ZERO) + a
                if t:
                    row[j] = t
                else:
                    row.pop(j, None)
        self.rows[s] = row
        val = (_ZERO, _ZERO)
        for k, c in row.items():
            val = _dadd(val, _dscale(c, self.value[k]))
        self.value.append(val)
        return s

    # bounds with backtracking

    def mark(self) -> int:
        return len(self.trail)

    def undo(self, mark: int) -> None:
        while len(self.trail) > mark:
            x, side, old = self.trail.pop()
            if side == "l":
                self.lower[x] = old
            else:
                self.upper[x] = old

    def assert_lower(self, x: int, c) -> bool:
        if self.upper[x] is not None and c > self.upper[x]:
            return False
        if self.lower[x] is not None and c <= self.lower[x]:
            return True
        self.trail.append((x, "l", self.lower[x]))
        self.lower[x] = c
        if x not in self.rows and self.value[x] < c:
            self._update(x, c)
        return True

    def assert_upper(self, x: int, c) -> bool:
        if self.lower[x] is not None and c < self.lower[x]:
            return False
        if self.upper[x] is not None and c >= self.upper[x]:
            return True
        self.trail.append((x, "u", self.upper[x]))
        self.upper[x] = c
        if x not in self.rows and self.value[x] > c:
            self._update(x, c)
        return True

    def _update(self, x: int, v) -> None:
        theta = _dsub(v, self.value[x])
        for b, row in self.rows.items():
            a = row.get(x)
            if a is not None:
                self.value[b] = _dadd(self.value[b], _dscale(a, theta))
        self.value[x] = v

    def _pivot_and_update(self, xi: int, xj: int, v) -> None:
        a = self.rows[xi][xj]
        theta = _dscale(1 / a, _dsub(v, self.value[xi]))
        self.value[xi] = v
        self.value[xj] = _dadd(self.value[xj], theta)
        for b, row in self.rows.items():
            if b != xi:
                c = row.get(xj)
                if c is not None:
                    self.value[b] = _dadd(self.value[b], _dscale(c, theta))
        self._pivot(xi, xj)

    def _pivot(self, xi: int, xj: int) -> None:
        self.pivots += 1
        row = self.rows.pop(xi)
        a = row.pop(xj)
        inv = 1 / a
        new = {xi: inv}
        for k, c in row.items():
            new[k] = -c * inv
        for b, r in self.rows.items():
            c = r.pop(xj, None)
            if c is None:
                continue
            for k, w in new.items():
                t = r.get(k, _ZERO) + c * w
                if t:
                    r[k] = t
                else:
                    r.pop(k, None)
        self.rows[xj] = new

    def check(self) -> bool:
        """Restore feasibility of basic variables; False on conflict."""
        lower, upper, value = self.lower, self.upper, self.value
        while True:
            if self.deadline is not None and time.monotonic() > self.deadline:
                raise _Timeout
            xi = None
            for b in sorted(self.rows):
                v = value[b]
                if (lower[b] is not None and v < lower[b]) or (upper[b] is not None and v > upper[b]):
                    xi = b
                    break
            if xi is None:
                return True
            row = self.rows[xi]
            if lower[xi] is not None and value[xi] < lower[xi]:
                target = lower[xi]
                candidates = [
                    j
                    for j, a in row.items()
                    if (a > 0 and (upper[j] is None or value[j] < upper[j]))
                    or (a < 0 and (lower[j] is None or value[j] > lower[j]))
                ]
            else:
                target = upper[xi]
                candidates = [
                    j
                    for j, a in row.items()
                    if (a < 0 and (upper[j] is None or value[j] < upper[j]))
                    or (a > 0 and (lower[j] is None or value[j] > lower[j]))
                ]
            if not candidates:
                return False
            self._pivot_and_update(xi, min(candidates), target)

    def delta(self) -> Fraction:
        """Half the largest delta keeping every bound satisfied."""
        best = None
        for x, (a, b) in enumerate(self.value):
            lo, hi = self.lower[x], self.upper[x]
            if lo is not None and a > lo[0] and b < lo[1]:
                cand = (a - lo[0]) / (lo[1] - b)
                best = cand if best is None or cand < best else best
            if hi is not None and a < hi[0] and b > hi[1]:
                cand = (hi[0] - a) / (b - hi[1])
                best = cand if best is None or cand < best else best
        return _ONE if best is None else best / 2


def _normalize(expr: SymExpr, index: Mapping) -> tuple[tuple, Fraction]:
    """Linear part scaled so its first coefficient is +-1, and the scale used."""
    items = sorted(((index[v], c) for v, c in expr.coefficients.items()))
    k = abs(items[0][1])
    return tuple((j, c / k) for j, c in items), k


class _Problem:
    def __init__(self, system: ConstraintSystem, deadline: float | None):
        self.system = system
        self.vars = system.variables()
        self.index = {v: i for i, v in enumerate(self.vars)}
        self.tab = _Tableau(len(self.vars), deadline)
        self.slacks: dict[tuple, int] = {}
        self.int_vars = [self.index[v] for v in self.vars if system.integral.get(v, False)]
        self._int_set = set(self.int_vars)

    def setup(self) -> bool:
        tab = self.tab
        for v in self.vars:
            lo, hi = self.system.bounds[v]
            i = self.index[v]
            lo, hi = Fraction(lo), Fraction(hi)
            if i in self._int_set:
                lo, hi = Fraction(math.ceil(lo)), Fraction(math.floor(hi))
            tab.value[i] = (lo, _ZERO)
            if not (tab.assert_lower(i, (lo, _ZERO)) and tab.assert_upper(i, (hi, _ZERO))):
                return False
        # register every slack before any pivoting so rows are built over original variables
        for atom in self.system.atoms:
            self._target(atom)
        for disj in self.system.disjunctions:
            for atom in disj:
                self._target(atom)
        return all(self.assert_atom(a) for a in self.system.atoms)

    def _target(self, atom: LinearAtom) -> tuple[int, Fraction]:
        lin, k = _normalize(atom.expr, self.index)
        if len(lin) == 1 and lin[0][1] == 1:
            return lin[0][0], k
        s = self.slacks.get(lin)
        if s is None:
            s = self.tab.add_row(dict(lin))
            self.slacks[lin] = s
        return s, k

    def assert_atom(self, atom: LinearAtom) -> bool:
        x, k = self._target(atom)
        c = -atom.expr.constant / k  # atom reads  x rel c
        rel = Relation(atom.relation)
        tab = self.tab
        if rel is Relation.GT:
            ok = tab.assert_lower(x, (c, _ONE))
        elif rel is Relation.GE:
            ok = tab.assert_lower(x, (c, _ZERO))
        elif rel is Relation.LT:
            ok = tab.assert_upper(x, (c, -_ONE))
        elif rel is Relation.LE:
            ok = tab.assert_upper(x, (c, _ZERO))
        else:
            ok = tab.assert_lower(x, (c, _ZERO)) and tab.assert_upper(x, (c, _ZERO))
        if ok and x in self._int_set:
            ok = self._round_integer_bounds(x)
        return ok

    def _round_integer_bounds(self, x: int) -> bool:
        tab = self.tab
        lo, hi = tab.lower[x], tab.upper[x]
        ok = True
        if lo is not None and (lo[1] != 0 or lo[0].denominator != 1):
            n = math.floor(lo[0]) + 1 if lo[1] > 0 else math.ceil(lo[0])
            ok = tab.assert_lower(x, (Fraction(n), _ZERO))
        if ok and hi is not None and (hi[1] != 0 or hi[0].denominator != 1):
            ok = tab.assert_upper(x, (Fraction(_dfloor(hi)), _ZERO))
        return ok

    def search(self, disjunctions: Sequence[Sequence[LinearAtom]], k: int = 0) -> bool:
        if not self.tab.check():
            return False
        if k == len(disjunctions):
            return self.branch_and_bound()
        for atom in disjunctions[k]:
            m = self.tab.mark()
            if self.assert_atom(atom) and self.search(disjunctions, k + 1):
                return True
            self.tab.undo(m)
        return False

    def viable(self, disjunctions) -> list[list[LinearAtom]] | None:
        """Drop alternatives that conflict with the base atoms alone."""
        kept = []
        for disj in disjunctions:
            alive = []
            for atom in disj:
                m = self.tab.mark()
                if self.assert_atom(atom) and self.tab.check():
                    alive.append(atom)
                self.tab.undo(m)
            if not alive:
                return None
            kept.append(alive)
        return kept

    def _fractional(self) -> int | None:
        best, best_score = None, None
        for x in self.int_vars:
            a, b = self.tab.value[x]
            if b == 0 and a.denominator == 1:
                continue
            frac = a - math.floor(a)
            score = min(frac, 1 - frac) if frac else _ZERO
            if best is None or score > best_score:
                best, best_score = x, score
        return best

    def branch_and_bound(self) -> bool:
        if not self.tab.check():
            return False
        x = self._fractional()
        if x is None:
            return True
        fl = Fraction(_dfloor(self.tab.value[x]))
        m = self.tab.mark()
        if self.tab.assert_upper(x, (fl, _ZERO)) and self.branch_and_bound():
            return True
        self.tab.undo(m)
        if self.tab.assert_lower(x, (fl + 1, _ZERO)) and self.branch_and_bound():
            return True
        self.tab.undo(m)
        return False

    def model(self) -> dict:
        d = self.tab.delta()
        return {v: self.tab.value[i][0] + self.tab.value[i][1] * d for v, i in self.index.items()}


def _split_constants(system: ConstraintSystem):
    """Evaluate variable-free atoms; returns (atoms, disjunctions) or None if trivially unsat."""
    atoms = []
    for a in system.atoms:
        if a.expr.is_constant():
            if not a.holds({}):
                return None
        else:
            atoms.append(a)
    disjs = []
    for d in system.disjunctions:
        if any(a.expr.is_constant() and a.holds({}) for a in d):
            continue
        rest = [a for a in d if not a.expr.is_constant()]
        if not rest:
            return None
        disjs.append(rest)
    return atoms, disjs


def solve(system: ConstraintSystem, deadline: float | None = None) -> SolveResult:
    """Decide ``system``; ``deadline`` is a budget in seconds (None = unlimited).

    A ``sat`` result carries an exact rational model covering every variable
    with bounds; ``unknown`` is returned only when the budget runs out.
    """
    start = time.monotonic()
    missing = [v for v in system.variables() if v not in system.bounds]
    if missing:
        raise UnboundedVariable(f"no bounds for variable(s) {missing}")
    split = _split_constants(system)
    if split is None:
        return SolveResult(SolveStatus.UNSAT, elapsed=time.monotonic() - start)
    reduced = ConstraintSystem(split[0], system.bounds, system.integral, split[1])
    prob = _Problem(reduced, None if deadline is None else start + deadline)
    try:
        ok = prob.setup()
        if ok:
            ok = prob.tab.check()
        if ok:
            disjs = prob.viable(reduced.disjunctions)
            ok = disjs is not None and prob.search(disjs)
    except _Timeout:
        return SolveResult(
            SolveStatus.UNKNOWN, pivots=prob.tab.pivots, elapsed=time.monotonic() - start, message="deadline expired"
        )
    elapsed = time.monotonic() - start
    if not ok:
        return SolveResult(SolveStatus.UNSAT, pivots=prob.tab.pivots, elapsed=elapsed)
    model = prob.model()
    if not check_assignment(system, model):
        raise AssertionError("simplex produced a model violating its own constraints")
    return SolveResult(SolveStatus.SAT, model, prob.tab.pivots, elapsed)
