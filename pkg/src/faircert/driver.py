"""Discriminatory-instance checking and fairness verification.

``check_instance`` perturbs only the protected attributes of one instance.
``verify_fairness`` explores the dual network with every input symbolic;
when the queue drains without a witness the model is certified fair over
the declared attribute box.  Witnesses are always re-validated by concrete
forward passes before they are reported.
"""
from __future__ import annotations

import logging
import multiprocessing
import os
import random
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Sequence

from .concolic import (
    BranchLiteral,
    EdgeStatus,
    ExecTree,
    PathConstraint,
    PathTrace,
    Strategy,
    SymExpr,
    TreeInconsistency,
    WorkQueue,
    explore,
)
from .dual import DualModelSpec, build_dual, extract_pair, split_input
from .model import ModelSpec, check_input, predict
from .solver import ConstraintSystem, LinearAtom, Relation, SmtLibSolver, SolveResult, SolveStatus
from .solver import solve as internal_solve

__all__ = [
    "Budget",
    "Witness",
    "InvalidWitness",
    "witness_violations",
    "Outcome",
    "Verdict",
    "RunReport",
    "InstanceOutcome",
    "InstanceResult",
    "DatasetResult",
    "VerificationResult",
    "Mode",
    "make_backend",
    "check_instance",
    "check_dataset",
    "verify_fairness",
    "bias_estimate",
    "DegenerateDomain",
]

log = logging.getLogger(__name__)

SolveFn = Callable[[ConstraintSystem, float], SolveResult]


@dataclass(frozen=True)
class Budget:
    wall_clock: float = 1800.0
    max_dequeues: int | None = None
    per_solve: float = 60.0

    def __post_init__(self):
        if self.wall_clock <= 0 or self.per_solve <= 0:
            raise ValueError("budget durations must be positive")
        if self.max_dequeues is not None and self.max_dequeues <= 0:
            raise ValueError("max_dequeues must be positive")


class InvalidWitness(ValueError):
    pass


def witness_violations(model: ModelSpec, pa: Sequence[int], phi, phi_prime) -> list[str]:
    """Which of the four witness conditions fail (empty list = valid witness)."""
    failed = []
    try:
        phi = check_input(model, phi)
        phi_prime = check_input(model, phi_prime)
    except ValueError:
        return ["domain"]
    pa = set(pa)
    if not any(phi[p] != phi_prime[p] for p in pa):
        failed.append("protected-differs")
    if any(phi[i] != phi_prime[i] for i in range(model.n_attributes) if i not in pa):
        failed.append("non-protected-equal")
    if predict(model, phi) == predict(model, phi_prime):
        failed.append("labels-differ")
    return failed


@dataclass(frozen=True)
class Witness:
    phi: tuple[Fraction, ...]
    phi_prime: tuple[Fraction, ...]
    label: int
    label_prime: int

    @classmethod
    def build(cls, model: ModelSpec, pa: Sequence[int], phi, phi_prime) -> "Witness":
        failed = witness_violations(model, pa, phi, phi_prime)
        if failed:
            raise InvalidWitness(f"not an unfairness witness: {', '.join(failed)}")
        phi, phi_prime = tuple(check_input(model, phi)), tuple(check_input(model, phi_prime))
        return cls(phi, phi_prime, predict(model, phi), predict(model, phi_prime))


class Outcome(str, Enum):
    UNFAIR = "unfair"
    FAIR = "fair"
    UNKNOWN = "unknown"


@dataclass
class Verdict:
    outcome: Outcome
    witness: Witness | None = None
    certificate: dict | None = None


@dataclass
class RunReport:
    uw: str = "Unk"
    fq: int = 0
    n_test: int = 0
    n_sat: int = 0
    n_unsat: int = 0
    elapsed: float = 0.0
    strategy: str = "fifo"
    backend: str = "internal"
    seed: int | None = None
    n_unknown: int = 0
    n_dequeued: int = 0
    n_region_queries: int = 0
    consistency_violations: int = 0
    arithmetic: str = "real"
    mode: str = ""
    note: str = ""


class InstanceOutcome(str, Enum):
    WITNESS = "witness"
    EXHAUSTED = "exhausted"
    BUDGET_EXCEEDED = "budget_exceeded"


@dataclass
class InstanceResult:
    outcome: InstanceOutcome
    witness: Witness | None
    report: RunReport
    tree: ExecTree | None = field(default=None, repr=False)


class Mode(str, Enum):
    PATH = "path"
    REGION_QUERY = "region_query"


@dataclass
class VerificationResult:
    verdict: Verdict
    report: RunReport
    tree: ExecTree | None = field(default=None, repr=False)


def make_backend(spec: str | None = "internal") -> tuple[str, SolveFn]:
    """``internal`` or ``smtlib=<command>``; returns (name, solve function)."""
    spec = spec or "internal"
    if spec == "internal":
        return "internal", internal_solve
    if spec.startswith("smtlib"):
        _, _, command = spec.partition("=")
        if not command:
            command = os.environ.get("FAIRCERT_SMT_SOLVER", "")
        if not command:
            raise ValueError("smtlib backend needs a solver command (smtlib=<path> or FAIRCERT_SMT_SOLVER)")
        solver = SmtLibSolver(command)
        return f"smtlib={command}", solver.solve
    raise ValueError(f"unknown backend {spec!r}")


def _atom(lit: BranchLiteral) -> LinearAtom:
    return LinearAtom(lit.expr, Relation.GT if lit.polarity else Relation.LE)


def _arithmetic(model: ModelSpec, variables) -> str:
    kinds = {model.attributes[v].integral for v in variables}
    return "integer" if kinds == {True} else "real" if kinds == {False} else "mixed"


class _Search:
    """One (Q, T) exploration with solver dispatch and counters."""

    def __init__(self, model, mask, budget: Budget, strategy, backend, cancel=None):
        self.model = model
        self.mask = sorted(mask)
        self.budget = budget
        self.queue = WorkQueue(strategy)
        self.tree = ExecTree()
        self.backend_name, self.solve = make_backend(backend) if isinstance(backend, (str, type(None))) else backend
        self.cancel = cancel
        self.start = time.monotonic()
        self.report = RunReport(
            strategy=Strategy(strategy).value,
            backend=self.backend_name,
            arithmetic=_arithmetic(model, self.mask),
        )
        self.disjunctions: list[list[LinearAtom]] = []
        self.exhausted_budget = False

    def bounds(self):
        attrs = self.model.attributes
        return (
            {v: (attrs[v].lower, attrs[v].upper) for v in self.mask},
            {v: attrs[v].integral for v in self.mask},
        )

    def system(self, literals: Sequence[BranchLiteral], extra: Sequence[LinearAtom] = ()) -> ConstraintSystem:
        bounds, integral = self.bounds()
        atoms = [_atom(l) for l in literals] + list(extra)
        return ConstraintSystem(atoms, bounds, integral, [list(d) for d in self.disjunctions])

    def remaining(self) -> float:
        return self.budget.wall_clock - (time.monotonic() - self.start)

    def out_of_budget(self) -> bool:
        if self.cancel is not None and self.cancel.is_set():
            self.report.note = "cancelled"
            return True
        if self.remaining() <= 0:
            self.report.note = "wall-clock budget exhausted"
            return True
        if self.budget.max_dequeues is not None and self.report.n_dequeued >= self.budget.max_dequeues:
            self.report.note = "dequeue budget exhausted"
            return True
        return False

    def run_solver(self, system: ConstraintSystem) -> SolveResult:
        limit = max(min(self.budget.per_solve, self.remaining()), 1e-3)
        return self.solve(system, limit)

    def first(self, seed) -> PathTrace:
        trace = explore(self.model, seed, self.mask, self.queue, self.tree)
        self.report.fq = len(self.queue)
        self.report.n_test = 1
        return trace

    def steps(self, assemble: Callable[[dict], list]):
        """Yield each new trace obtained by solving a dequeued constraint."""
        r = self.report
        while len(self.queue):
            if self.out_of_budget():
                self.exhausted_budget = True
                return
            pc: PathConstraint = self.queue.pop()
            r.n_dequeued += 1
            result = self.run_solver(self.system(pc.literals))
            if result.status is SolveStatus.UNKNOWN:
                r.n_unknown += 1
                self.tree.mark(pc.key, EdgeStatus.UNDECIDED)
                log.debug("solver gave up: %s", result.message)
                continue
            if result.status is SolveStatus.UNSAT:
                r.n_unsat += 1
                self.tree.mark(pc.key, EdgeStatus.NO_SOLUTION)
                continue
            r.n_sat += 1
            values = assemble(result.model)
            try:
                trace = explore(self.model, values, self.mask, self.queue, self.tree)
            except TreeInconsistency as exc:
                r.consistency_violations += 1
                self.tree.mark(pc.key, EdgeStatus.UNDECIDED)
                log.error("concolic divergence: %s", exc)
                continue
            r.n_test += 1
            if not _follows(trace, pc):
                r.consistency_violations += 1
            yield trace

    def finish(self) -> None:
        self.report.elapsed = time.monotonic() - self.start

    @property
    def decided(self) -> bool:
        counts = self.tree.status_counts()
        return (
            not self.exhausted_budget
            and self.report.n_unknown == 0
            and self.report.consistency_violations == 0
            and counts["pending"] == 0
            and counts["undecided"] == 0
        )

    def certificate(self) -> dict:
        counts = self.tree.status_counts()
        return {
            "closed_edges": counts["explored"] + counts["no_solution"],
            "explored_edges": counts["explored"],
            "no_solution_edges": counts["no_solution"],
            "unsat_constraints": self.report.n_unsat,
            "region_queries": self.report.n_region_queries,
        }


def _follows(trace: PathTrace, pc: PathConstraint) -> bool:
    want = pc.literals
    got = trace.literals[: len(want)]
    return len(got) == len(want) and all(
        a.site == b.site and a.polarity == b.polarity and a.expr == b.expr for a, b in zip(got, want)
    )


# -- instance checking ----------------------------------------------------------


def check_instance(
    model: ModelSpec,
    phi: Sequence,
    pa: Sequence[int],
    budget: Budget = Budget(),
    *,
    strategy: Strategy | str = Strategy.FIFO,
    backend: str | tuple | None = "internal",
    cancel=None,
) -> InstanceResult:
    """Search for a protected-attribute perturbation of ``phi`` that flips the label.

    Non-protected attributes stay frozen at ``phi``'s values.  ``exhausted``
    means every feasible path over the protected attributes was tried and
    none changes the label.
    """
    phi = check_input(model, phi)
    pa = sorted(set(pa))
    if not pa:
        raise ValueError("at least one protected attribute is required")
    base_label = predict(model, phi)
    search = _Search(model, pa, budget, strategy, backend, cancel)
    search.report.mode = "instance"

    def assemble(values: dict) -> list:
        out = list(phi)
        for p in pa:
            out[p] = values[p]
        return out

    search.first(phi)
    witness = None
    for trace in search.steps(assemble):
        if trace.labels[0] != base_label:
            witness = Witness.build(model, pa, phi, trace.inputs)
            break
    search.finish()
    r = search.report
    if witness is not None:
        r.uw = "Y"
        return InstanceResult(InstanceOutcome.WITNESS, witness, r, search.tree)
    if search.decided:
        r.uw = "N"
        return InstanceResult(InstanceOutcome.EXHAUSTED, None, r, search.tree)
    r.uw = "Unk"
    return InstanceResult(InstanceOutcome.BUDGET_EXCEEDED, None, r, search.tree)


@dataclass
class DatasetResult:
    outcome: str  # "witness" | "none" | "unknown"
    witness: Witness | None
    instance_index: int | None
    report: RunReport
    per_instance: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)


def _check_one(model, phi, pa, budget, strategy, backend, cancel):
    try:
        res = check_instance(model, phi, pa, budget, strategy=strategy, backend=backend, cancel=cancel)
        res.tree = None  # keep inter-process traffic small
        return res
    except Exception as exc:  # reported per instance, never aborts the sweep
        return f"{type(exc).__name__}: {exc}"


def check_dataset(
    model: ModelSpec,
    dataset: Sequence[Sequence],
    pa: Sequence[int],
    budget: Budget = Budget(),
    workers: int = 1,
    *,
    deterministic: bool = True,
    strategy: Strategy | str = Strategy.FIFO,
    backend: str | None = "internal",
) -> DatasetResult:
    """Run :func:`check_instance` over ``dataset`` until the first witness.

    In deterministic mode the reported witness is the first one in dataset
    order and counters aggregate only instances up to it, so the result does
    not depend on ``workers``.
    """
    start = time.monotonic()
    n = len(dataset)
    results: dict[int, object] = {}

    def sub_budget() -> Budget:
        left = budget.wall_clock - (time.monotonic() - start)
        return Budget(max(left, 1e-3), budget.max_dequeues, budget.per_solve)

    if workers <= 1:
        for i, phi in enumerate(dataset):
            res = _check_one(model, phi, pa, sub_budget(), strategy, backend, None)
            results[i] = res
            if isinstance(res, InstanceResult) and res.outcome is InstanceOutcome.WITNESS:
                break
    else:
        with multiprocessing.Manager() as manager:
            cancel = manager.Event()
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {
                    pool.submit(_check_one, model, phi, pa, sub_budget(), strategy, backend, None if deterministic else cancel): i
                    for i, phi in enumerate(dataset)
                }
                pending = set(futures)
                first_hit = None
                while pending:
                    done, pending = wait(pending, return_when=FIRST_COMPLETED)
                    for fut in done:
                        i = futures[fut]
                        res = fut.result() if not fut.cancelled() else None
                        if res is None:
                            continue
                        results[i] = res
                        if isinstance(res, InstanceResult) and res.outcome is InstanceOutcome.WITNESS:
                            if first_hit is None or i < first_hit:
                                first_hit = i
                    if first_hit is not None:
                        if not deterministic:
                            cancel.set()
                        for fut in list(pending):
                            if futures[fut] > first_hit and fut.cancel():
                                pending.discard(fut)
                        if not deterministic:
                            for fut in list(pending):
                                fut.cancel()
                    # deterministic mode still waits for every instance before the first hit
    return _aggregate(results, n, deterministic, budget, strategy, backend, time.monotonic() - start)


def _aggregate(results, n, deterministic, budget, strategy, backend, elapsed) -> DatasetResult:
    order = sorted(results)
    hit = None
    for i in order:
        res = results[i]
        if isinstance(res, InstanceResult) and res.outcome is InstanceOutcome.WITNESS:
            hit = i
            break
    if deterministic and hit is not None:
        order = [i for i in order if i <= hit]
    report = RunReport(strategy=Strategy(strategy).value, backend=make_backend(backend)[0], mode="dataset")
    per_instance, errors = [], {}
    arith = set()
    fq_taken = False
    for i in order:
        res = results[i]
        if isinstance(res, str):
            errors[i] = res
            per_instance.append((i, "error"))
            continue
        r = res.report
        if not fq_taken:
            report.fq, fq_taken = r.fq, True
        report.n_test += r.n_test
        report.n_sat += r.n_sat
        report.n_unsat += r.n_unsat
        report.n_unknown += r.n_unknown
        report.n_dequeued += r.n_dequeued
        report.consistency_violations += r.consistency_violations
        arith.add(r.arithmetic)
        per_instance.append((i, res.outcome.value))
    report.arithmetic = arith.pop() if len(arith) == 1 else "mixed" if arith else "real"
    report.elapsed = elapsed
    if hit is not None:
        report.uw = "Y"
        return DatasetResult("witness", results[hit].witness, hit, report, per_instance, errors)
    complete = len(order) == n and all(
        isinstance(results[i], InstanceResult) and results[i].outcome is InstanceOutcome.EXHAUSTED for i in order
    )
    report.uw = "N" if complete else "Unk"
    return DatasetResult("none" if complete else "unknown", None, None, report, per_instance, errors)


# -- fairness verification --------------------------------------------------------


def _disequality(dual: DualModelSpec) -> list[LinearAtom]:
    """Some protected attribute differs from its duplicate (as 2|PA| alternatives)."""
    alts = []
    for p, q in dual.pa_mapping:
        if dual.attributes[p].integral:
            alts.append(LinearAtom(SymExpr(-1, {q: 1, p: -1}), Relation.GE))
            alts.append(LinearAtom(SymExpr(-1, {p: 1, q: -1}), Relation.GE))
        else:
            alts.append(LinearAtom(SymExpr(0, {q: 1, p: -1}), Relation.GT))
            alts.append(LinearAtom(SymExpr(0, {p: 1, q: -1}), Relation.GT))
    return alts


def random_seed(model: ModelSpec, rng: random.Random) -> list[Fraction]:
    """Uniform point of the attribute box (lattice points for integer attributes)."""
    out = []
    for a in model.attributes:
        if a.integral:
            out.append(Fraction(rng.randint(int(a.lower), int(a.upper))))
        else:
            out.append(a.lower + (a.upper - a.lower) * Fraction(rng.randrange(10**6 + 1), 10**6))
    return out


def verify_fairness(
    model: ModelSpec,
    pa: Sequence[int],
    seed_instance: Sequence | None = None,
    budget: Budget = Budget(),
    mode: Mode | str = Mode.REGION_QUERY,
    *,
    rng_seed: int = 0,
    strategy: Strategy | str = Strategy.FIFO,
    backend: str | tuple | None = "internal",
) -> VerificationResult:
    """Decide whether any two inputs differing only on ``pa`` get different labels.

    ``seed_instance`` may be a base instance (its duplicate protected slots
    copy the originals) or a full dual input.
    """
    mode = Mode(mode.replace("-", "_") if isinstance(mode, str) else mode)
    dual = build_dual(model, pa)
    pa = list(dual.pa)
    if seed_instance is None:
        seed = random_seed(dual, random.Random(rng_seed))
    elif len(seed_instance) == model.n_attributes:
        seed = split_input(dual, seed_instance, {})
    else:
        seed = check_input(dual, seed_instance)
    search = _Search(dual, range(dual.n_attributes), budget, strategy, backend)
    search.disjunctions = [_disequality(dual)]
    r = search.report
    r.mode = mode.value
    r.seed = rng_seed if seed_instance is None else None
    asked: set = set()

    def pair_witness(values) -> Witness | None:
        phi, phi_prime = extract_pair(dual, values)
        failed = witness_violations(model, pa, phi, phi_prime)
        if failed:
            r.consistency_violations += 1
            log.error("solver-derived pair failed validation: %s", failed)
            return None
        return Witness.build(model, pa, phi, phi_prime)

    def inspect(trace: PathTrace) -> Witness | None:
        if trace.labels[0] != trace.labels[1]:
            return pair_witness(trace.inputs)
        if mode is not Mode.REGION_QUERY:
            return None
        region = trace.region()
        key = tuple((l.site, l.polarity) for l in region)
        if key in asked:
            return None
        asked.add(key)
        z, z_prime = (c.symbolic.shift(-dual.threshold) for c in trace.logits)
        for above, below in ((z, z_prime), (z_prime, z)):
            if search.out_of_budget():
                search.exhausted_budget = True
                return None
            extra = [LinearAtom(above, Relation.GT), LinearAtom(below, Relation.LE)]
            r.n_region_queries += 1
            result = search.run_solver(search.system(region, extra))
            if result.status is SolveStatus.UNKNOWN:
                r.n_unknown += 1
            elif result.status is SolveStatus.SAT:
                w = pair_witness([result.model[i] for i in range(dual.n_attributes)])
                if w is not None:
                    return w
        return None

    def assemble(values: dict) -> list:
        return [values[i] for i in range(dual.n_attributes)]

    witness = inspect(search.first(seed))
    if witness is None:
        for trace in search.steps(assemble):
            witness = inspect(trace)
            if witness is not None:
                break
    search.finish()
    if witness is not None:
        r.uw = "Y"
        return VerificationResult(Verdict(Outcome.UNFAIR, witness), r, search.tree)
    if search.decided:
        r.uw = "N"
        return VerificationResult(Verdict(Outcome.FAIR, None, search.certificate()), r, search.tree)
    r.uw = "Unk"
    return VerificationResult(Verdict(Outcome.UNKNOWN), r, search.tree)


# -- sampling-based bias estimate ----------------------------------------------------


class DegenerateDomain(ValueError):
    pass


def _other_value(attr, current: Fraction, rng: random.Random) -> Fraction:
    if attr.integral:
        choices = [v for v in attr.values() if v != current]
        return Fraction(rng.choice(choices))
    while True:
        v = attr.lower + (attr.upper - attr.lower) * Fraction(rng.randrange(10**6 + 1), 10**6)
        if v != current:
            return v


def bias_estimate(
    model: ModelSpec,
    dataset: Sequence[Sequence],
    pa: Sequence[int],
    rounds: int = 100,
    per_round: int = 100,
    rng_seed: int = 0,
) -> float:
    """Percentage of sampled instances whose label flips when their protected values change.

    Each round draws ``per_round`` instances with replacement and moves every
    protected attribute to a different in-domain value chosen uniformly.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    pa = list(pa)
    for p in pa:
        a = model.attributes[p]
        if a.lower == a.upper:
            raise DegenerateDomain(f"protected attribute {a.name!r} has a single value")
    rows = [check_input(model, row) for row in dataset]
    rng = random.Random(rng_seed)
    flips = 0
    for _ in range(rounds):
        for _ in range(per_round):
            phi = rows[rng.randrange(len(rows))]
            alt = list(phi)
            for p in pa:
                alt[p] = _other_value(model.attributes[p], phi[p], rng)
            flips += predict(model, phi) != predict(model, alt)
    return float(Fraction(100 * flips, rounds * per_round))
