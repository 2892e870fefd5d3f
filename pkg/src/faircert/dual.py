"""Dual networks: two weight-sharing copies of a model compared on their labels.

The dual input is ``(attributes of M) + (duplicates of the protected ones)``.
Copy 1 reads the original attributes, copy 2 reads the non-protected
attributes together with the duplicated protected ones.  Hidden and output
weight matrices are block diagonal, so the copies never interact and each
copy's logit equals the base model's logit on its own input.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, NamedTuple, Sequence

from .exact import to_fraction
from .model import (
    AttributeSpec,
    DomainViolation,
    LayerSpec,
    MalformedDocument,
    ModelSpec,
    ProtectedIndexOutOfRange,
    _document_fields,
    _parse_attributes,
    _parse_layers,
    canonical_json,
    check_input,
    forward,
    model_from_document,
    parse_json,
)

__all__ = [
    "DualModelSpec",
    "DualOutput",
    "EmptyProtectedSet",
    "build_dual",
    "dual_output",
    "split_input",
    "extract_pair",
    "dump_dual",
    "load_dual",
    "load_any",
]

_ZERO = Fraction(0)


class EmptyProtectedSet(ValueError):
    pass


@dataclass(frozen=True)
class DualModelSpec(ModelSpec):
    base: ModelSpec | None = None
    pa_mapping: tuple[tuple[int, int], ...] = ()
    base_widths: tuple[int, ...] = ()

    @property
    def pa(self) -> tuple[int, ...]:
        return tuple(p for p, _ in self.pa_mapping)

    @property
    def mapping(self) -> dict[int, int]:
        return dict(self.pa_mapping)


class DualOutput(NamedTuple):
    label: int
    label_prime: int
    merged: int


def build_dual(model: ModelSpec, pa: Sequence[int]) -> DualModelSpec:
    """Two block-diagonal copies of ``model`` sharing the non-protected inputs."""
    pa = list(dict.fromkeys(pa))
    if not pa:
        raise EmptyProtectedSet("at least one protected attribute is required")
    n = model.n_attributes
    for k, p in enumerate(pa):
        if not isinstance(p, int) or not 0 <= p < n:
            raise ProtectedIndexOutOfRange(f"index {p!r} outside 0..{n - 1}", f"pa[{k}]")
    pa_set = set(pa)
    attrs = list(model.attributes) + [
        AttributeSpec(model.attributes[p].name + "'", model.attributes[p].kind, model.attributes[p].lower, model.attributes[p].upper)
        for p in pa
    ]
    layers = []
    for li, layer in enumerate(model.layers):
        h = layer.fan_out
        zeros = (_ZERO,) * h
        if li == 0:
            rows = [row + zeros if i in pa_set else row + row for i, row in enumerate(layer.weights)]
            rows += [zeros + layer.weights[p] for p in pa]
        else:
            rows = [row + zeros for row in layer.weights] + [zeros + row for row in layer.weights]
        layers.append(LayerSpec(tuple(rows), layer.biases + layer.biases, layer.activation))
    return DualModelSpec(
        attributes=tuple(attrs),
        layers=tuple(layers),
        protected=tuple(pa),
        threshold=model.threshold,
        n_outputs=2,
        base=model,
        pa_mapping=tuple((p, n + k) for k, p in enumerate(pa)),
        base_widths=tuple(l.fan_out for l in model.layers),
    )


def dual_output(dual: DualModelSpec, values: Sequence) -> DualOutput:
    z, z_prime = forward(dual, values)
    label, label_prime = int(z > dual.threshold), int(z_prime > dual.threshold)
    return DualOutput(label, label_prime, int(label != label_prime))


def split_input(dual: DualModelSpec, base_instance: Sequence, pa_override: Mapping[int, object]) -> list[Fraction]:
    """Dual input for ``base_instance`` with the duplicated slots set from ``pa_override``.

    Protected attributes missing from ``pa_override`` keep their original value.
    """
    phi = check_input(dual.base, base_instance)
    mapping = dual.mapping
    for p in pa_override:
        if p not in mapping:
            raise ProtectedIndexOutOfRange(f"{p} is not a protected attribute of this dual")
    out = list(phi)
    for p, slot in dual.pa_mapping:
        v = to_fraction(pa_override[p]) if p in pa_override else phi[p]
        if not dual.attributes[slot].contains(v):
            attr = dual.attributes[slot]
            raise DomainViolation(f"override {attr.name}={v} outside [{attr.lower}, {attr.upper}]")
        out.append(v)
    return out


def extract_pair(dual: DualModelSpec, values: Sequence) -> tuple[list[Fraction], list[Fraction]]:
    """Inverse of :func:`split_input`: the two base instances a dual input encodes."""
    values = check_input(dual, values)
    n = dual.base.n_attributes
    phi = values[:n]
    phi_prime = list(phi)
    for p, slot in dual.pa_mapping:
        phi_prime[p] = values[slot]
    return phi, phi_prime


def dump_dual(dual: DualModelSpec) -> str:
    doc = _document_fields(dual)
    doc["dual"] = {"pa_mapping": [list(pair) for pair in dual.pa_mapping]}
    return canonical_json(doc)


def _dual_from_document(doc: dict) -> DualModelSpec:
    info = doc.get("dual")
    if not isinstance(info, dict) or not isinstance(info.get("pa_mapping"), list):
        raise MalformedDocument("dual section needs a pa_mapping list", "dual")
    try:
        pa = [int(p) for p, _ in info["pa_mapping"]]
    except (TypeError, ValueError):
        raise MalformedDocument("pa_mapping entries must be [index, index] pairs", "dual.pa_mapping") from None
    stripped = {k: v for k, v in doc.items() if k != "dual"}
    n_attrs = len(stripped.get("attributes", [])) - len(pa)
    layers = stripped.get("layers", [])
    if n_attrs <= 0 or not isinstance(layers, list) or not layers:
        raise MalformedDocument("dual document is missing attributes or layers", "$")
    # the base network is copy 1: top-left block of every layer
    base_layers = []
    rows_in = n_attrs
    for li, layer in enumerate(layers):
        try:
            width = len(layer["biases"]) // 2
            base_layers.append(
                {
                    "activation": layer["activation"],
                    "weights": [row[:width] for row in layer["weights"][:rows_in]],
                    "biases": layer["biases"][:width],
                }
            )
        except (KeyError, TypeError):
            raise MalformedDocument("malformed dual layer", f"layers[{li}]") from None
        rows_in = width
    base_doc = dict(stripped, attributes=stripped["attributes"][:n_attrs], layers=base_layers)
    base = model_from_document(base_doc)
    dual = build_dual(base, pa)
    if (
        tuple(_parse_attributes(stripped["attributes"])) != dual.attributes
        or tuple(_parse_layers(layers)) != dual.layers
    ):
        raise MalformedDocument("layers are not the dual construction of their first copy", "layers")
    return dual


def load_dual(raw: bytes | str) -> DualModelSpec:
    doc = parse_json(raw)
    if not isinstance(doc, dict) or "dual" not in doc:
        raise MalformedDocument("not a dual model document", "dual")
    return _dual_from_document(doc)


def load_any(raw: bytes | str) -> ModelSpec:
    """Load either a base model or a dual model document."""
    doc = parse_json(raw)
    if isinstance(doc, dict) and "dual" in doc:
        return _dual_from_document(doc)
    return model_from_document(doc)
