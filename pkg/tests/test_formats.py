import io
import json
import random
from fractions import Fraction
from pathlib import Path

import pytest

from faircert.driver import RunReport, Witness, verify_fairness
from faircert.dual import build_dual, dump_dual, load_dual
from faircert.formats import (
    DatasetError,
    DatasetTable,
    emit_report,
    format_vector,
    load_report,
    parse_dataset,
    parse_vector,
    report_document,
    serialize_dataset,
    summary_line,
)
from faircert.model import canonical_json, dump_model, load_model
from netgen import random_instance, random_model

F = Fraction
GOLDEN = Path(__file__).parent / "golden"


# -- datasets -----------------------------------------------------------------------------


def test_parse_two_column_dataset(fig1):
    table = parse_dataset(b"x,y\n0,5\n6,5\n\n10,0\n", fig1)
    assert table.columns == ["x", "y"]
    assert table.rows == [[0, 5], [6, 5], [10, 0]]
    assert len(table) == 3


def test_header_is_mapped_to_attribute_order(fig1):
    table = parse_dataset("y, x\n5,0\n", fig1)
    assert table.rows == [[0, 5]]


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("x,y,z\n0,5,1\n", "unknown column 'z'"),
        ("x\n0\n", "missing column(s) y"),
        ("x,x,y\n0,0,1\n", "duplicate"),
        ("x,y\n0,11\n", "row 2, column 'y'"),
        ("x,y\n0,5\n1.5,5\n", "row 3, column 'x'"),
        ("x,y\n0,abc\n", "not a number"),
        ("x,y\n0\n", "expected 2 values"),
        ("", "missing header"),
    ],
)
def test_dataset_errors(fig1, text, fragment):
    with pytest.raises(DatasetError) as info:
        parse_dataset(text, fig1)
    assert fragment in str(info.value)


def test_dataset_round_trip():
    rng = random.Random(12)
    for _ in range(100):
        m = random_model(rng, real_attrs=True)
        rows = [random_instance(rng, m) for _ in range(rng.randint(0, 15))]
        table = DatasetTable([a.name for a in m.attributes], rows)
        text = serialize_dataset(table)
        again = parse_dataset(text, m)
        assert again == table
        assert serialize_dataset(again) == text


def test_vectors():
    assert parse_vector("0, 5,1/2,-0.25") == [0, 5, F(1, 2), F(-1, 4)]
    assert format_vector([F(0), F(1, 2), F(1, 3)]) == "0,0.5,1/3"


# -- reports ------------------------------------------------------------------------------


def test_unfair_report_embeds_witness(fig1):
    res = verify_fairness(fig1, [0], [0, 5, 0])
    doc = report_document(res.report, res.verdict.outcome.value, res.verdict.witness)
    assert doc["outcome"] == "unfair"
    w = doc["witness"]
    assert {w["label"], w["label_prime"]} == {0, 1}
    assert len(w["phi"]) == len(w["phi_prime"]) == 2
    assert "timestamp" in doc and "elapsed" in doc["report"]


def test_fair_report_carries_certificate(fig1_fair):
    res = verify_fairness(fig1_fair, [0])
    doc = report_document(res.report, "fair", None, res.verdict.certificate)
    assert doc["outcome"] == "fair" and doc["witness"] is None
    assert doc["certificate"]["closed_edges"] > 0


def test_deterministic_reruns_are_byte_identical(fig1):
    texts = []
    for _ in range(2):
        res = verify_fairness(fig1, [0], rng_seed=5)
        v = res.verdict
        texts.append(canonical_json(report_document(res.report, v.outcome.value, v.witness, v.certificate, deterministic=True)))
    assert texts[0] == texts[1]
    assert "timestamp" not in texts[0] and "elapsed" not in texts[0]


def test_report_round_trip():
    report = RunReport(uw="Y", fq=8, n_test=3, n_sat=2, n_unsat=1, elapsed=0.5, seed=4, mode="path")
    w = Witness((F(1), F(1, 3)), (F(2), F(1, 3)), 1, 0)
    text = canonical_json(report_document(report, "unfair", w, None, {"pa": [0]}))
    back = load_report(text)
    assert back["report"] == report
    assert back["witness"] == w
    assert back["outcome"] == "unfair" and back["config"] == {"pa": [0]}
    with pytest.raises(ValueError):
        load_report(json.dumps({"schema_version": 99}))


def test_emit_report_writes_document_and_summary(tmp_path):
    report = RunReport(uw="N", fq=24, n_test=5, n_sat=4, n_unsat=7, elapsed=1.234)
    out = io.StringIO()
    emit_report(report, "fair", None, tmp_path / "r.json", certificate={"closed_edges": 3}, stdout=out)
    assert out.getvalue() == "N\t24\t5\t4\t7\t1.23\n"
    assert summary_line(report) == out.getvalue().rstrip("\n")
    assert json.loads((tmp_path / "r.json").read_text())["certificate"] == {"closed_edges": 3}


# -- golden files -------------------------------------------------------------------------


def test_golden_model_and_dual(fig1):
    assert dump_model(fig1) == (GOLDEN / "fig1_model.json").read_text()
    assert load_model((GOLDEN / "fig1_model.json").read_bytes()) == fig1
    assert dump_dual(build_dual(fig1, [0])) == (GOLDEN / "fig1_dual.json").read_text()
    assert load_dual((GOLDEN / "fig1_dual.json").read_bytes()).base == fig1


def test_golden_report(fig1):
    golden = (GOLDEN / "fig1_verify_report.json").read_text()
    res = verify_fairness(fig1, [0], [0, 5, 0])
    v = res.verdict
    doc = report_document(res.report, v.outcome.value, v.witness, v.certificate, {"mode": "region_query"}, deterministic=True)
    assert canonical_json(doc) == golden
    assert load_report(golden)["witness"] == v.witness
