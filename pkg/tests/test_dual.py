import json
import random
from fractions import Fraction

import pytest

from faircert.concolic import concolic_forward
from faircert.dual import (
    DualModelSpec,
    EmptyProtectedSet,
    build_dual,
    dual_output,
    dump_dual,
    extract_pair,
    load_any,
    load_dual,
    split_input,
)
from faircert.model import DomainViolation, MalformedDocument, ProtectedIndexOutOfRange, dump_model, forward, load_model
from netgen import naive_forward, naive_label, random_instance, random_model

F = Fraction


def test_shape_of_fixture_dual(fig1):
    dual = build_dual(fig1, [0])
    assert dual.n_attributes == 3
    assert [a.name for a in dual.attributes] == ["x", "y", "x'"]
    assert [(l.fan_in, l.fan_out) for l in dual.layers] == [(3, 6), (6, 2)]
    assert dual.pa_mapping == ((0, 2),)
    assert dual.attributes[2] == type(dual.attributes[0])("x'", "integer", 0, 10)


def test_block_structure():
    rng = random.Random(1)
    for _ in range(50):
        m = random_model(rng, max_layers=3)
        pa = list(m.protected)
        dual = build_dual(m, pa)
        first = dual.layers[0]
        h = m.layers[0].fan_out
        for i, row in enumerate(m.layers[0].weights):
            expected = row + (F(0),) * h if i in pa else row + row
            assert first.weights[i] == expected
        for k, p in enumerate(pa):
            assert first.weights[m.n_attributes + k] == (F(0),) * h + m.layers[0].weights[p]
        for base, doubled in zip(m.layers[1:], dual.layers[1:]):
            w = base.fan_out
            for i, row in enumerate(base.weights):
                assert doubled.weights[i] == row + (F(0),) * w
                assert doubled.weights[base.fan_in + i] == (F(0),) * w + row
        for base, doubled in zip(m.layers, dual.layers):
            assert doubled.biases == base.biases + base.biases


def test_forward_equivalence_against_two_separate_forwards():
    rng = random.Random(2)
    for _ in range(1000):
        m = random_model(rng, real_attrs=True, max_layers=3, hidden=(1, 20))
        pa = list(m.protected)
        dual = build_dual(m, pa)
        phi = random_instance(rng, m)
        other = random_instance(rng, m)
        override = {p: other[p] for p in pa}
        x = split_input(dual, phi, override)
        phi_prime = list(phi)
        for p in pa:
            phi_prime[p] = other[p]
        assert forward(dual, x) == [naive_forward(m, phi)[0], naive_forward(m, phi_prime)[0]]
        out = dual_output(dual, x)
        assert out.merged == int(naive_label(m, phi) != naive_label(m, phi_prime))


def test_identical_copies_never_merge():
    rng = random.Random(3)
    for _ in range(200):
        m = random_model(rng)
        dual = build_dual(m, m.protected)
        phi = random_instance(rng, m)
        assert dual_output(dual, split_input(dual, phi, {})).merged == 0


def test_zero_pa_weight_model_never_merges(fig1_fair):
    dual = build_dual(fig1_fair, [0])
    for x in range(11):
        for y in range(11):
            for xp in range(11):
                assert dual_output(dual, [x, y, xp]).merged == 0


def test_symmetry_of_merged_output():
    rng = random.Random(4)
    for _ in range(300):
        m = random_model(rng)
        dual = build_dual(m, m.protected)
        x = random_instance(rng, dual)
        swapped = list(x)
        for p, slot in dual.pa_mapping:
            swapped[p], swapped[slot] = x[slot], x[p]
        assert dual_output(dual, x).merged == dual_output(dual, swapped).merged


def test_split_input_section_seed_and_round_trip(fig1):
    dual = build_dual(fig1, [0])
    assert split_input(dual, [0, 5], {0: 0}) == [0, 5, 0]
    assert extract_pair(dual, [1, 2, 0]) == ([1, 2], [0, 2])
    rng = random.Random(5)
    for _ in range(300):
        m = random_model(rng, real_attrs=True)
        dual = build_dual(m, m.protected)
        phi = random_instance(rng, m)
        other = random_instance(rng, m)
        override = {p: other[p] for p in m.protected}
        phi_back, prime_back = extract_pair(dual, split_input(dual, phi, override))
        assert phi_back == phi
        assert [prime_back[p] for p in m.protected] == [other[p] for p in m.protected]
        assert all(prime_back[i] == phi[i] for i in m.non_protected)


def test_split_input_rejects_bad_overrides(fig1):
    dual = build_dual(fig1, [0])
    with pytest.raises(DomainViolation):
        split_input(dual, [0, 5], {0: 11})
    with pytest.raises(ProtectedIndexOutOfRange):
        split_input(dual, [0, 5], {1: 3})


def test_build_errors(fig1):
    with pytest.raises(EmptyProtectedSet):
        build_dual(fig1, [])
    with pytest.raises(ProtectedIndexOutOfRange):
        build_dual(fig1, [2])


def test_fq_doubles_on_all_nonzero_weight_models():
    rng = random.Random(6)
    for _ in range(50):
        m = random_model(rng, nonzero=True, max_layers=3)
        dual = build_dual(m, m.protected)
        seed = random_instance(rng, m)
        _, base_trace = concolic_forward(m, seed, range(m.n_attributes))
        _, dual_trace = concolic_forward(dual, split_input(dual, seed, {}), range(dual.n_attributes))
        assert len(dual_trace.literals) == 2 * len(base_trace.literals)


def test_dual_document_round_trip(fig1):
    dual = build_dual(fig1, [0])
    text = dump_dual(dual)
    again = load_dual(text)
    assert isinstance(again, DualModelSpec)
    assert again.base == fig1 and again.layers == dual.layers and again.pa_mapping == dual.pa_mapping
    assert dump_dual(again) == text
    assert isinstance(load_any(text), DualModelSpec)
    assert load_any(dump_model(fig1)) == fig1
    with pytest.raises(MalformedDocument):
        load_model(text)


def test_tampered_dual_document_is_rejected(fig1):
    doc = json.loads(dump_dual(build_dual(fig1, [0])))
    # off-diagonal block of the output layer: copy-1 neuron 0 feeding copy-2 logit
    assert doc["layers"][1]["weights"][0][1] == "0"
    doc["layers"][1]["weights"][0][1] = "7"
    with pytest.raises(MalformedDocument):
        load_dual(json.dumps(doc))
