from __future__ import annotations

import itertools
import shutil
from fractions import Fraction

import pytest

from faircert.model import AttributeSpec, LayerSpec, ModelSpec
from netgen import naive_label

F = Fraction

# hidden layer of the two-attribute fixture; the output layer is searched for
FIG1_HIDDEN = LayerSpec([[1, 1, -1], [-1, -1, 1]], [0, -1, 0], "relu")
FIG1_ATTRS = [AttributeSpec("x", "integer", 0, 10), AttributeSpec("y", "integer", 0, 10)]


def _fig1_ok(model: ModelSpec) -> bool:
    # [0, 5] -> 0 and, among PA perturbations at y = 5, only x = 6 flips the label
    if naive_label(model, [0, 5]) != 0:
        return False
    flips = [x for x in range(11) if naive_label(model, [x, 5]) == 1]
    return flips == [6]


def search_fig1() -> ModelSpec:
    """First small-integer output layer giving the two-attribute discrimination scenario."""
    for w1, w2, w3, b in itertools.product(range(-4, 5), repeat=4):
        model = ModelSpec(FIG1_ATTRS, [FIG1_HIDDEN, LayerSpec([[w1], [w2], [w3]], [b], "threshold_output")], [0])
        if _fig1_ok(model):
            return model
    raise AssertionError("no fixture net in the search space")


@pytest.fixture(scope="session")
def fig1():
    return search_fig1()


@pytest.fixture(scope="session")
def fig1_fair(fig1):
    """The fixture with the protected attribute disconnected."""
    first = fig1.layers[0]
    rows = [tuple(F(0) for _ in first.weights[0])] + list(first.weights[1:])
    return ModelSpec(fig1.attributes, [LayerSpec(rows, first.biases, "relu"), fig1.layers[1]], [0])


@pytest.fixture(scope="session")
def flip_model():
    """Single binary attribute, label = [x > 0]."""
    return ModelSpec(
        [AttributeSpec("x", "integer", 0, 1)],
        [LayerSpec([[1]], [0], "relu"), LayerSpec([[1]], [0], "threshold_output")],
        [0],
    )


@pytest.fixture(scope="session")
def z3_path():
    path = shutil.which("z3")
    if path is None:
        pytest.skip("z3 binary not available")
    return path


# acceptance criteria append (line) here; printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
