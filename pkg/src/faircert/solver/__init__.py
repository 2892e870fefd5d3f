"""Linear-arithmetic backends: the built-in exact simplex and an SMT-LIB bridge."""
from .lra import (
    ConstraintSystem,
    LinearAtom,
    MissingVariable,
    Relation,
    SolveResult,
    SolveStatus,
    UnboundedVariable,
    check_assignment,
    solve,
)
from .smtlib import ProtocolError, SmtLibSolver, solve_external, to_smtlib

__all__ = [
    "ConstraintSystem",
    "LinearAtom",
    "MissingVariable",
    "Relation",
    "SolveResult",
    "SolveStatus",
    "UnboundedVariable",
    "check_assignment",
    "solve",
    "ProtocolError",
    "SmtLibSolver",
    "solve_external",
    "to_smtlib",
]
