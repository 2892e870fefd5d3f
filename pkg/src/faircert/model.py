"""Dense ReLU networks over exact rationals.

A model is a chain of fully connected layers with ReLU (or identity) hidden
activations and a thresholded binary output.  All parameters are
:class:`fractions.Fraction`; inference never touches floating point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Sequence

from .exact import format_fraction, is_integral, to_fraction

__all__ = [
    "Kind",
    "Activation",
    "AttributeSpec",
    "LayerSpec",
    "ModelSpec",
    "ModelError",
    "ShapeMismatch",
    "UnknownActivation",
    "ProtectedIndexOutOfRange",
    "MalformedDocument",
    "DimensionMismatch",
    "DomainViolation",
    "load_model",
    "dump_model",
    "model_to_document",
    "model_from_document",
    "forward",
    "predict",
]


class Kind(str, Enum):
    INTEGER = "integer"
    REAL = "real"


class Activation(str, Enum):
    RELU = "relu"
    THRESHOLD_OUTPUT = "threshold_output"
    LINEAR = "linear"


class ModelError(ValueError):
    """Base class for model construction and inference errors.

    ``path`` locates the offending element inside the model document,
    e.g. ``layers[1].biases``.
    """

    kind = "model-error"

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{self.kind} at {path}: {message}" if path else f"{self.kind}: {message}")


class ShapeMismatch(ModelError):
    kind = "shape-mismatch"


class UnknownActivation(ModelError):
    kind = "unknown-activation"


class ProtectedIndexOutOfRange(ModelError):
    kind = "protected-index-out-of-range"


class MalformedDocument(ModelError):
    kind = "malformed-document"


class DimensionMismatch(ModelError):
    kind = "dimension-mismatch"


class DomainViolation(ModelError):
    kind = "domain-violation"


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: Kind
    lower: Fraction
    upper: Fraction

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "lower", to_fraction(self.lower))
        object.__setattr__(self, "upper", to_fraction(self.upper))
        if self.lower > self.upper:
            raise MalformedDocument(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        if self.kind is Kind.INTEGER and not (is_integral(self.lower) and is_integral(self.upper)):
            raise MalformedDocument("integer attribute bounds must be integral")

    @property
    def integral(self) -> bool:
        return self.kind is Kind.INTEGER

    def contains(self, value: Fraction) -> bool:
        if not (self.lower <= value <= self.upper):
            return False
        return not self.integral or is_integral(value)

    def values(self) -> range:
        """Lattice points of an integer attribute."""
        if not self.integral:
            raise ValueError(f"attribute {self.name!r} is real-valued")
        return range(int(self.lower), int(self.upper) + 1)


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer; ``weights[i][j]`` connects input ``i`` to neuron ``j``."""

    weights: tuple[tuple[Fraction, ...], ...]
    biases: tuple[Fraction, ...]
    activation: Activation

    def __post_init__(self):
        object.__setattr__(
            self, "weights", tuple(tuple(to_fraction(w) for w in row) for row in self.weights)
        )
        object.__setattr__(self, "biases", tuple(to_fraction(b) for b in self.biases))
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def fan_in(self) -> int:
        return len(self.weights)

    @property
    def fan_out(self) -> int:
        return len(self.biases)

    @cached_property
    def _scaled(self) -> tuple[int, tuple[tuple[int, ...], ...]]:
        # integer weight matrix over one common denominator, for fast exact inference
        den = 1
        for row in self.weights:
            for w in row:
                den = den * w.denominator // math.gcd(den, w.denominator)
        ints = tuple(tuple(w.numerator * (den // w.denominator) for w in row) for row in self.weights)
        return den, ints

    def affine(self, values: Sequence[Fraction]) -> list[Fraction]:
        """Pre-activations ``values @ weights + biases``, exactly."""
        den_in = 1
        for v in values:
            den_in = den_in * v.denominator // math.gcd(den_in, v.denominator)
        nums = [v.numerator * (den_in // v.denominator) for v in values]
        wden, ints = self._scaled
        acc = [0] * self.fan_out
        for n, row in zip(nums, ints):
            if n:
                for j, w in enumerate(row):
                    if w:
                        acc[j] += n * w
        scale = den_in * wden
        return [Fraction(a, scale) + b for a, b in zip(acc, self.biases)]


@dataclass(frozen=True)
class ModelSpec:
    attributes: tuple[AttributeSpec, ...]
    layers: tuple[LayerSpec, ...]
    protected: tuple[int, ...] = ()
    threshold: Fraction = Fraction(0)
    n_outputs: int = field(default=1, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "protected", tuple(self.protected))
        object.__setattr__(self, "threshold", to_fraction(self.threshold))
        _check_structure(self)

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def non_protected(self) -> tuple[int, ...]:
        pa = set(self.protected)
        return tuple(i for i in range(self.n_attributes) if i not in pa)

    @property
    def hidden_neurons(self) -> int:
        return sum(layer.fan_out for layer in self.layers[:-1])

    def with_protected(self, protected: Sequence[int]) -> "ModelSpec":
        return ModelSpec(self.attributes, self.layers, tuple(protected), self.threshold, self.n_outputs)


def _check_structure(model: ModelSpec) -> None:
    if not model.attributes:
        raise MalformedDocument("model needs at least one attribute", "attributes")
    if not model.layers:
        raise MalformedDocument("model needs at least one layer", "layers")
    width = model.n_attributes
    last = len(model.layers) - 1
    for li, layer in enumerate(model.layers):
        where = f"layers[{li}]"
        if layer.fan_in != width:
            raise ShapeMismatch(f"expected {width} weight rows, got {layer.fan_in}", f"{where}.weights")
        for ri, row in enumerate(layer.weights):
            if len(row) != layer.fan_out:
                raise ShapeMismatch(
                    f"row has {len(row)} entries but layer has {layer.fan_out} biases",
                    f"{where}.weights[{ri}]",
                )
        if layer.fan_out == 0:
            raise ShapeMismatch("layer has no neurons", f"{where}.biases")
        if li == last:
            if layer.activation is not Activation.THRESHOLD_OUTPUT:
                raise UnknownActivation("final layer must be threshold_output", f"{where}.activation")
        elif layer.activation is Activation.THRESHOLD_OUTPUT:
            raise UnknownActivation("threshold_output is only allowed on the final layer", f"{where}.activation")
        width = layer.fan_out
    if width != model.n_outputs:
        raise ShapeMismatch(f"final layer must have {model.n_outputs} output(s), got {width}", f"layers[{last}].biases")
    seen = set()
    for k, p in enumerate(model.protected):
        if not isinstance(p, int) or isinstance(p, bool) or not 0 <= p < model.n_attributes:
            raise ProtectedIndexOutOfRange(f"index {p!r} outside 0..{model.n_attributes - 1}", f"protected[{k}]")
        if p in seen:
            raise ProtectedIndexOutOfRange(f"index {p} listed twice", f"protected[{k}]")
        seen.add(p)


def check_input(model: ModelSpec, values: Sequence) -> list[Fraction]:
    """Validate an input vector against the attribute box; return it as Fractions."""
    if len(values) != model.n_attributes:
        raise DimensionMismatch(f"expected {model.n_attributes} values, got {len(values)}")
    out = [to_fraction(v) for v in values]
    for attr, v in zip(model.attributes, out):
        if not attr.contains(v):
            raise DomainViolation(f"{attr.name}={v} outside [{attr.lower}, {attr.upper}] ({attr.kind.value})")
    return out


def forward(model: ModelSpec, values: Sequence) -> list[Fraction]:
    """Exact final-layer logits (before thresholding)."""
    act = check_input(model, values)
    for layer in model.layers:
        pre = layer.affine(act)
        if layer.activation is Activation.RELU:
            act = [z if z > 0 else Fraction(0) for z in pre]
        else:
            act = pre
    return act


def labels_of(model: ModelSpec, logits: Sequence[Fraction]) -> tuple[int, ...]:
    return tuple(int(z > model.threshold) for z in logits)


def predict(model: ModelSpec, values: Sequence) -> int:
    """Binary label: 1 iff the logit is strictly above the threshold."""
    return labels_of(model, forward(model, values))[0]


# -- document format ---------------------------------------------------------


def _num(value, path: str) -> Fraction:
    try:
        return to_fraction(value)
    except (TypeError, ValueError) as exc:
        raise MalformedDocument(str(exc), path) from None


def _require(doc: dict, key: str, path: str):
    if not isinstance(doc, dict):
        raise MalformedDocument("expected an object", path)
    if key not in doc:
        raise MalformedDocument(f"missing field {key!r}", path)
    return doc[key]


def _parse_attributes(raw, n_expected=None) -> list[AttributeSpec]:
    if not isinstance(raw, list):
        raise MalformedDocument("expected a list", "attributes")
    attrs = []
    for i, a in enumerate(raw):
        where = f"attributes[{i}]"
        name = _require(a, "name", where)
        kind = _require(a, "kind", where)
        if kind not in ("integer", "real"):
            raise MalformedDocument(f"unknown kind {kind!r}", f"{where}.kind")
        lo = _num(_require(a, "min", where), f"{where}.min")
        hi = _num(_require(a, "max", where), f"{where}.max")
        try:
            attrs.append(AttributeSpec(str(name), Kind(kind), lo, hi))
        except MalformedDocument as exc:
            raise MalformedDocument(str(exc).split(": ", 1)[-1], where) from None
    return attrs


def _parse_layers(raw) -> list[LayerSpec]:
    if not isinstance(raw, list):
        raise MalformedDocument("expected a list", "layers")
    layers = []
    for li, l in enumerate(raw):
        where = f"layers[{li}]"
        act = _require(l, "activation", where)
        if act not in {a.value for a in Activation}:
            raise UnknownActivation(f"{act!r}", f"{where}.activation")
        rows = _require(l, "weights", where)
        biases = _require(l, "biases", where)
        if not isinstance(rows, list) or not all(isinstance(r, list) for r in rows):
            raise MalformedDocument("weights must be a list of rows", f"{where}.weights")
        if not isinstance(biases, list):
            raise MalformedDocument("biases must be a list", f"{where}.biases")
        weights = tuple(
            tuple(_num(w, f"{where}.weights[{ri}][{ci}]") for ci, w in enumerate(row))
            for ri, row in enumerate(rows)
        )
        bs = tuple(_num(b, f"{where}.biases[{bi}]") for bi, b in enumerate(biases))
        layers.append(LayerSpec(weights, bs, Activation(act)))
    return layers


def model_from_document(doc: dict) -> ModelSpec:
    if not isinstance(doc, dict):
        raise MalformedDocument("model document must be an object", "$")
    if "dual" in doc:
        raise MalformedDocument("document describes a dual model; use load_dual", "dual")
    attrs = _parse_attributes(_require(doc, "attributes", "$"))
    layers = _parse_layers(_require(doc, "layers", "$"))
    protected = doc.get("protected", [])
    if not isinstance(protected, list):
        raise MalformedDocument("protected must be a list of indices", "protected")
    threshold = _num(doc.get("threshold", "0"), "threshold")
    return ModelSpec(attrs, layers, tuple(protected), threshold)


def _document_fields(model: ModelSpec) -> dict:
    return {
        "attributes": [
            {"name": a.name, "kind": a.kind.value, "min": format_fraction(a.lower), "max": format_fraction(a.upper)}
            for a in model.attributes
        ],
        "layers": [
            {
                "activation": layer.activation.value,
                "weights": [[format_fraction(w) for w in row] for row in layer.weights],
                "biases": [format_fraction(b) for b in layer.biases],
            }
            for layer in model.layers
        ],
        "protected": list(model.protected),
        "threshold": format_fraction(model.threshold),
    }


def model_to_document(model: ModelSpec) -> dict:
    return _document_fields(model)


def canonical_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_json(raw: bytes | str):
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}", "$") from None
    try:
        # numeric literals stay exact
        return json.loads(raw, parse_float=Fraction, parse_int=int)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}", "$") from None


def load_model(raw: bytes | str) -> ModelSpec:
    """Parse a model document (JSON text) into a validated :class:`ModelSpec`."""
    return model_from_document(parse_json(raw))


def dump_model(model: ModelSpec) -> str:
    return canonical_json(model_to_document(model))
