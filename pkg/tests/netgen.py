"""Random networks, constraint systems, and brute-force oracles shared by the tests."""
from __future__ import annotations

import itertools
import random
from fractions import Fraction

from faircert.concolic import SymExpr
from faircert.model import AttributeSpec, LayerSpec, ModelSpec
from faircert.solver import ConstraintSystem, LinearAtom, Relation

F = Fraction


def _weight(rng: random.Random, lo: int, hi: int, nonzero: bool) -> Fraction:
    while True:
        w = rng.randint(lo, hi)
        if w or not nonzero:
            return F(w)


def random_model(
    rng: random.Random,
    *,
    n_attrs: tuple[int, int] = (2, 4),
    domain: tuple[int, int] = (2, 8),
    n_pa: tuple[int, int] = (1, 2),
    hidden: tuple[int, int] = (1, 12),
    max_layers: int = 2,
    weights: tuple[int, int] = (-3, 3),
    biases: tuple[int, int] = (-4, 4),
    nonzero: bool = False,
    pa_scale: Fraction | None = None,
    zero_pa: bool = False,
    real_attrs: bool = False,
) -> ModelSpec:
    """Small ReLU classifier over integer (or real) attribute boxes.

    ``pa_scale`` multiplies every outgoing weight of the protected attributes,
    ``zero_pa`` sets them to zero so the model is fair by construction.
    """
    n = rng.randint(*n_attrs)
    attrs = []
    for i in range(n):
        lo = rng.randint(-3, 3)
        size = rng.randint(*domain)
        kind = "real" if real_attrs and rng.random() < 0.5 else "integer"
        attrs.append(AttributeSpec(f"a{i}", kind, lo, lo + size - 1))
    pa = sorted(rng.sample(range(n), rng.randint(n_pa[0], min(n_pa[1], n))))

    total = rng.randint(*hidden)
    n_layers = rng.randint(1, max(1, min(max_layers, total)))
    widths = _split(rng, total, n_layers)
    layers = []
    fan_in = n
    for li, width in enumerate(widths + [1]):
        rows = []
        for i in range(fan_in):
            row = [_weight(rng, *weights, nonzero) for _ in range(width)]
            if li == 0 and i in pa:
                if zero_pa:
                    row = [F(0)] * width
                elif pa_scale is not None:
                    row = [w * pa_scale for w in row]
            rows.append(row)
        bs = [_weight(rng, *biases, nonzero) for _ in range(width)]
        act = "threshold_output" if li == len(widths) else "relu"
        layers.append(LayerSpec(rows, bs, act))
        fan_in = width
    return ModelSpec(attrs, layers, pa)


def _split(rng: random.Random, total: int, parts: int) -> list[int]:
    cuts = sorted(rng.sample(range(1, total), parts - 1)) if parts > 1 else []
    bounds = [0, *cuts, total]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def fairness_family(rng: random.Random) -> ModelSpec:
    """The 50-net oracle family: a mix of strongly, weakly and non PA-dependent nets.

    Nets whose label is constant over the whole box are redrawn, since every
    oracle agrees on them trivially.
    """
    roll = rng.random()
    while True:
        if roll < 0.2:
            m = random_model(rng, zero_pa=True)
        elif roll < 0.45:
            m = random_model(rng, pa_scale=F(1, rng.choice([20, 50, 100])))
        else:
            m = random_model(rng)
        if not constant_label(m):
            return m


def constant_label(model: ModelSpec) -> bool:
    points = itertools.product(*(a.values() for a in model.attributes))
    return len({naive_label(model, p) for p in points}) == 1


def random_instance(rng: random.Random, model: ModelSpec) -> list[Fraction]:
    out = []
    for a in model.attributes:
        if a.integral:
            out.append(F(rng.randint(int(a.lower), int(a.upper))))
        else:
            out.append(a.lower + (a.upper - a.lower) * F(rng.randint(0, 64), 64))
    return out


# -- oracles ---------------------------------------------------------------------------


def naive_forward(model: ModelSpec, x) -> list[Fraction]:
    """Textbook matrix-vector evaluation, written independently of the library."""
    h = [F(v) for v in x]
    for layer in model.layers:
        z = []
        for j in range(len(layer.biases)):
            acc = F(layer.biases[j])
            for i in range(len(h)):
                acc += h[i] * layer.weights[i][j]
            z.append(acc)
        h = [max(F(0), v) for v in z] if layer.activation.value == "relu" else z
    return h


def naive_label(model: ModelSpec, x) -> int:
    return int(naive_forward(model, x)[0] > model.threshold)


def pa_enumeration(model: ModelSpec, phi, pa) -> list[Fraction] | None:
    """A PA-perturbation of ``phi`` with a different label, or None."""
    base = naive_label(model, phi)
    for combo in itertools.product(*(model.attributes[p].values() for p in pa)):
        cand = list(phi)
        for p, v in zip(pa, combo):
            cand[p] = F(v)
        if cand != list(phi) and naive_label(model, cand) != base:
            return cand
    return None


def pair_enumeration(model: ModelSpec, pa) -> bool:
    """True iff two instances agreeing off ``pa`` get different labels."""
    seen: dict[tuple, int] = {}
    domains = [a.values() for a in model.attributes]
    for point in itertools.product(*domains):
        key = tuple(v for i, v in enumerate(point) if i not in pa)
        label = naive_label(model, point)
        if seen.setdefault(key, label) != label:
            return True
    return False


# -- constraint systems ----------------------------------------------------------------

_RELATIONS = list(Relation)


def random_system(rng: random.Random, *, max_vars: int = 4, max_atoms: int = 5, disjunctions: bool = True) -> ConstraintSystem:
    """Bounded integer system with mixed strict and non-strict atoms."""
    nv = rng.randint(1, max_vars)
    bounds = {}
    for v in range(nv):
        lo = rng.randint(-5, 5)
        bounds[v] = (F(lo), F(lo + rng.randint(0, 10)))
    atoms = [_random_atom(rng, nv) for _ in range(rng.randint(1, max_atoms))]
    disj = []
    if disjunctions and rng.random() < 0.3:
        disj.append([_random_atom(rng, nv) for _ in range(rng.randint(2, 3))])
    return ConstraintSystem(atoms, bounds, {v: True for v in range(nv)}, disj)


def _random_atom(rng: random.Random, nv: int) -> LinearAtom:
    coeffs = {v: F(rng.randint(-3, 3)) for v in rng.sample(range(nv), rng.randint(1, nv))}
    coeffs = {v: c for v, c in coeffs.items() if c} or {0: F(1)}
    rel = rng.choice(_RELATIONS)
    if rel is Relation.EQ and rng.random() < 0.6:
        rel = Relation.GE
    return LinearAtom(SymExpr(F(rng.randint(-6, 6)), coeffs), rel)


def grid_sat(system: ConstraintSystem) -> bool:
    vs = system.variables()
    ranges = [range(int(system.bounds[v][0]), int(system.bounds[v][1]) + 1) for v in vs]
    for point in itertools.product(*ranges):
        binding = {v: F(x) for v, x in zip(vs, point)}
        if all(a.holds(binding) for a in system.atoms) and all(
            any(a.holds(binding) for a in d) for d in system.disjunctions
        ):
            return True
    return False
