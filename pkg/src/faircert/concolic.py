"""Concolic execution of ReLU networks and branch-flipping bookkeeping.

Each value flowing through the network is a :class:`ConcolicScalar`: its
concrete rational plus an affine :class:`SymExpr` over the symbolic input
attributes.  ReLU keeps the expression on its active side and collapses to
the constant 0 otherwise, so every expression stays affine.  The sign test
of every non-constant pre-activation (and of every output logit against the
threshold) becomes a :class:`BranchLiteral`.

:class:`ExecTree` records which literal prefixes have been executed and
:class:`WorkQueue` holds the flipped-suffix constraints still to be tried.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .exact import format_fraction
from .model import Activation, check_input

__all__ = [
    "SymExpr",
    "ConcolicScalar",
    "Site",
    "LiteralKind",
    "BranchLiteral",
    "PathTrace",
    "PathConstraint",
    "EdgeStatus",
    "TreeNode",
    "ExecTree",
    "TreeInconsistency",
    "Strategy",
    "WorkQueue",
    "concolic_forward",
    "explore",
    "exploration",
    "next_target",
]

_ZERO = Fraction(0)


class SymExpr:
    """Affine expression ``constant + sum(coef * x_var)`` with no zero coefficients."""

    __slots__ = ("constant", "_terms", "_hash")

    def __init__(self, constant=0, coefficients: Mapping[int, Fraction] | None = None):
        self.constant = Fraction(constant)
        terms = {}
        if coefficients:
            for var, c in coefficients.items():
                c = Fraction(c)
                if c:
                    terms[var] = c
        self._terms = terms
        self._hash = None

    @classmethod
    def _raw(cls, constant: Fraction, terms: dict) -> "SymExpr":
        # terms must already be free of zeros
        e = cls.__new__(cls)
        e.constant = constant
        e._terms = terms
        e._hash = None
        return e

    @classmethod
    def variable(cls, var: int) -> "SymExpr":
        return cls._raw(_ZERO, {var: Fraction(1)})

    @property
    def coefficients(self) -> dict[int, Fraction]:
        return dict(self._terms)

    @property
    def variables(self) -> frozenset[int]:
        return frozenset(self._terms)

    def is_constant(self) -> bool:
        return not self._terms

    def evaluate(self, binding: Mapping[int, Fraction]) -> Fraction:
        return self.constant + sum((c * binding[v] for v, c in self._terms.items()), _ZERO)

    def __add__(self, other: "SymExpr") -> "SymExpr":
        terms = dict(self._terms)
        for v, c in other._terms.items():
            s = terms.get(v, _ZERO) + c
            if s:
                terms[v] = s
            else:
                terms.pop(v, None)
        return SymExpr._raw(self.constant + other.constant, terms)

    def __neg__(self) -> "SymExpr":
        return self.scale(Fraction(-1))

    def __sub__(self, other: "SymExpr") -> "SymExpr":
        return self + (-other)

    def scale(self, k: Fraction) -> "SymExpr":
        if not k:
            return SymExpr._raw(_ZERO, {})
        return SymExpr._raw(self.constant * k, {v: c * k for v, c in self._terms.items()})

    def shift(self, k: Fraction) -> "SymExpr":
        return SymExpr._raw(self.constant + k, dict(self._terms))

    def _key(self):
        return self.constant, tuple(sorted(self._terms.items()))

    def __eq__(self, other):
        return isinstance(other, SymExpr) and self._key() == other._key()

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._key())
        return self._hash

    def render(self, names: Mapping[int, str] | None = None) -> str:
        parts = []
        for v, c in sorted(self._terms.items()):
            name = names[v] if names else f"x{v}"
            if c == 1:
                term = name
            elif c == -1:
                term = f"-{name}"
            else:
                term = f"{format_fraction(c)}*{name}"
            parts.append(term)
        if self.constant or not parts:
            parts.append(format_fraction(self.constant))
        text = " + ".join(parts)
        return text.replace("+ -", "- ")

    def __repr__(self):
        return f"SymExpr({self.render()})"


def linear_combination(weights: Sequence[Fraction], exprs: Sequence[SymExpr], bias: Fraction) -> SymExpr:
    terms: dict[int, Fraction] = {}
    const = bias
    for w, e in zip(weights, exprs):
        if not w:
            continue
        const += w * e.constant
        for v, c in e._terms.items():
            terms[v] = terms.get(v, _ZERO) + w * c
    return SymExpr._raw(const, {v: c for v, c in terms.items() if c})


@dataclass(frozen=True)
class ConcolicScalar:
    concrete: Fraction
    symbolic: SymExpr


@dataclass(frozen=True, order=True)
class Site:
    """Neuron address; ``copy`` is 1 for base models and 1/2 inside a dual model."""

    layer: int
    neuron: int
    copy: int = 1

    def __str__(self):
        return f"n{self.layer},{self.neuron}" + ("'" if self.copy == 2 else "")


class LiteralKind(str, Enum):
    RELU = "relu"
    OUTPUT_THRESHOLD = "output_threshold"


@dataclass(frozen=True)
class BranchLiteral:
    """``expr > 0`` held on this execution iff ``polarity``."""

    expr: SymExpr
    polarity: bool
    site: Site
    kind: LiteralKind

    def negated(self) -> "BranchLiteral":
        return BranchLiteral(self.expr, not self.polarity, self.site, self.kind)

    def render(self, names=None) -> str:
        op = ">" if self.polarity else "<="
        return f"{self.expr.render(names)} {op} 0"


@dataclass
class PathTrace:
    literals: list[BranchLiteral]
    labels: tuple[int, ...]
    inputs: tuple[Fraction, ...]
    logits: list[ConcolicScalar] = field(default_factory=list)
    fixed_sites: list[Site] = field(default_factory=list)

    @property
    def polarities(self) -> tuple[bool, ...]:
        return tuple(l.polarity for l in self.literals)

    def region(self) -> list[BranchLiteral]:
        """ReLU literals only: the activation region this execution lies in."""
        return [l for l in self.literals if l.kind is LiteralKind.RELU]


def _copy_of(model, layer: int, neuron: int) -> int:
    widths = getattr(model, "base_widths", None)
    if widths is None:
        return 1
    return 1 + neuron // widths[layer]


def concolic_forward(model, seed: Sequence, symbolic_mask: Iterable[int]) -> tuple[tuple[int, ...], PathTrace]:
    """Run ``model`` on ``seed`` with the masked attributes symbolic.

    Returns the predicted label(s) and the :class:`PathTrace` of non-constant
    branch literals in layer-major, neuron-minor order.
    """
    mask = set(symbolic_mask)
    if not mask:
        raise ValueError("symbolic mask must be nonempty")
    values = check_input(model, seed)
    for m in mask:
        if not 0 <= m < len(values):
            raise ValueError(f"mask index {m} outside the input")
    cells = [
        ConcolicScalar(v, SymExpr.variable(i) if i in mask else SymExpr(v)) for i, v in enumerate(values)
    ]
    literals: list[BranchLiteral] = []
    fixed: list[Site] = []
    last = len(model.layers) - 1
    for li, layer in enumerate(model.layers):
        concrete = layer.affine([c.concrete for c in cells])
        exprs = [c.symbolic for c in cells]
        out = []
        for j, z in enumerate(concrete):
            col = [row[j] for row in layer.weights]
            e = linear_combination(col, exprs, layer.biases[j])
            site = Site(li + 1, j, _copy_of(model, li, j))
            if layer.activation is Activation.RELU:
                if e.is_constant():
                    fixed.append(site)
                else:
                    literals.append(BranchLiteral(e, z > 0, site, LiteralKind.RELU))
                out.append(ConcolicScalar(z, e) if z > 0 else ConcolicScalar(_ZERO, SymExpr()))
            elif li == last:
                margin = e.shift(-model.threshold)
                if margin.is_constant():
                    fixed.append(site)
                else:
                    literals.append(
                        BranchLiteral(margin, z > model.threshold, site, LiteralKind.OUTPUT_THRESHOLD)
                    )
                out.append(ConcolicScalar(z, e))
            else:
                out.append(ConcolicScalar(z, e))
        cells = out
    labels = tuple(int(c.concrete > model.threshold) for c in cells)
    trace = PathTrace(literals, labels, tuple(values), cells, fixed)
    return labels, trace


# -- exploration bookkeeping ---------------------------------------------------


class EdgeStatus(str, Enum):
    UNVISITED = "unvisited"
    PENDING = "pending"
    EXPLORED = "explored"
    NO_SOLUTION = "no_solution"
    UNDECIDED = "undecided"  # solver gave up before deciding


class TreeInconsistency(RuntimeError):
    """An execution disagreed with the tree built from earlier executions."""


@dataclass
class Edge:
    status: EdgeStatus = EdgeStatus.UNVISITED
    child: "TreeNode | None" = None


@dataclass
class TreeNode:
    site: Site | None
    expr: SymExpr | None = None
    kind: LiteralKind | None = None
    edges: dict = field(default_factory=lambda: {True: Edge(), False: Edge()})
    records: list = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return self.site is None


@dataclass(frozen=True)
class PathConstraint:
    """Prefix of executed literals followed by the negation of ``target``."""

    prefix: tuple[BranchLiteral, ...]
    target: BranchLiteral

    @property
    def key(self) -> tuple[bool, ...]:
        return tuple(l.polarity for l in self.prefix) + (not self.target.polarity,)

    @property
    def literals(self) -> tuple[BranchLiteral, ...]:
        return self.prefix + (self.target.negated(),)

    def __len__(self):
        return len(self.prefix) + 1


def _node_for(literals: Sequence[BranchLiteral], i: int) -> TreeNode:
    if i < len(literals):
        lit = literals[i]
        return TreeNode(lit.site, lit.expr, lit.kind)
    return TreeNode(None)


class ExecTree:
    """Binary tree of executed literal prefixes (root = first literal)."""

    def __init__(self):
        self.root: TreeNode | None = None

    def insert(self, trace: PathTrace) -> tuple[list[TreeNode], list[tuple[bool, ...]]]:
        """Add ``trace``; return the node at each literal depth and any pending keys it covered."""
        lits = trace.literals
        if self.root is None:
            self.root = _node_for(lits, 0)
        node = self.root
        nodes = []
        covered = []
        for i, lit in enumerate(lits):
            if node.site != lit.site or node.expr != lit.expr:
                raise TreeInconsistency(f"depth {i}: tree has {node.site}, execution reached {lit.site}")
            nodes.append(node)
            edge = node.edges[lit.polarity]
            if edge.status is EdgeStatus.PENDING:
                covered.append(trace.polarities[: i + 1])
            edge.status = EdgeStatus.EXPLORED
            if edge.child is None:
                edge.child = _node_for(lits, i + 1)
            node = edge.child
        if not node.is_leaf:
            raise TreeInconsistency(f"execution ended above explored site {node.site}")
        node.records.append((trace.inputs, trace.labels))
        return nodes, covered

    def edge(self, key: Sequence[bool]) -> Edge:
        node = self.root
        if node is None:
            raise KeyError(key)
        for pol in key[:-1]:
            node = node.edges[pol].child
            if node is None:
                raise KeyError(key)
        return node.edges[key[-1]]

    def mark(self, key: Sequence[bool], status: EdgeStatus) -> None:
        self.edge(key).status = status

    def edges(self):
        """Yield ``(key, edge)`` for every edge of every internal node."""
        if self.root is None:
            return
        stack = [((), self.root)]
        while stack:
            prefix, node = stack.pop()
            if node.is_leaf:
                continue
            for pol in (True, False):
                e = node.edges[pol]
                yield prefix + (pol,), e
                if e.child is not None:
                    stack.append((prefix + (pol,), e.child))

    def status_counts(self) -> dict[str, int]:
        counts = {s.value: 0 for s in EdgeStatus}
        for _, e in self.edges():
            counts[e.status.value] += 1
        return counts

    def to_document(self, names: Mapping[int, str] | None = None) -> dict:
        def render(node: TreeNode | None):
            if node is None:
                return None
            if node.is_leaf:
                return {
                    "leaf": [
                        {"input": [format_fraction(v) for v in inp], "labels": list(lab)}
                        for inp, lab in node.records
                    ]
                }
            return {
                "site": str(node.site),
                "layer": node.site.layer,
                "neuron": node.site.neuron,
                "copy": node.site.copy,
                "kind": node.kind.value,
                "literal": f"{node.expr.render(names)} > 0",
                "true": {"status": node.edges[True].status.value, "child": render(node.edges[True].child)},
                "false": {"status": node.edges[False].status.value, "child": render(node.edges[False].child)},
            }

        return {"root": render(self.root), "edges": self.status_counts()}


class Strategy(str, Enum):
    FIFO = "fifo"
    LIFO = "lifo"


class WorkQueue:
    """Pending path constraints; one entry per pending tree edge."""

    def __init__(self, strategy: Strategy | str = Strategy.FIFO):
        self.strategy = Strategy(strategy)
        self._items: deque[PathConstraint] = deque()
        self._keys: set[tuple[bool, ...]] = set()

    def push(self, pc: PathConstraint) -> bool:
        if pc.key in self._keys:
            return False
        self._keys.add(pc.key)
        self._items.append(pc)
        return True

    def pop(self) -> PathConstraint | None:
        if not self._items:
            return None
        pc = self._items.popleft() if self.strategy is Strategy.FIFO else self._items.pop()
        self._keys.discard(pc.key)
        return pc

    def discard(self, key: tuple[bool, ...]) -> None:
        if key in self._keys:
            self._keys.discard(key)
            self._items = deque(pc for pc in self._items if pc.key != key)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(list(self._items))

    def __contains__(self, key):
        return key in self._keys


def next_target(queue: WorkQueue) -> PathConstraint | None:
    """Remove and return the next constraint, or ``None`` when the queue is empty."""
    return queue.pop()


def explore(model, seed: Sequence, symbolic_mask: Iterable[int], queue: WorkQueue, tree: ExecTree) -> PathTrace:
    """Execute ``seed``, record it in ``tree``, enqueue each unvisited flip.

    Returns the trace; ``queue`` and ``tree`` are updated in place.
    """
    _, trace = concolic_forward(model, seed, symbolic_mask)
    nodes, covered = tree.insert(trace)
    for key in covered:
        queue.discard(key)
    lits = tuple(trace.literals)
    for i, node in enumerate(nodes):
        alt = node.edges[not lits[i].polarity]
        if alt.status is EdgeStatus.UNVISITED:
            if queue.push(PathConstraint(lits[:i], lits[i])):
                alt.status = EdgeStatus.PENDING
    return trace


def exploration(model, seed, symbolic_mask, queue: WorkQueue, tree: ExecTree) -> tuple[WorkQueue, ExecTree]:
    explore(model, seed, symbolic_mask, queue, tree)
    return queue, tree
