"""Dataset CSV ingestion and report / trace documents."""
from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Sequence, TextIO

from .driver import RunReport, Witness
from .exact import format_fraction, to_fraction
from .model import ModelSpec, canonical_json

__all__ = [
    "DatasetError",
    "DatasetTable",
    "parse_dataset",
    "serialize_dataset",
    "report_document",
    "emit_report",
    "load_report",
    "summary_line",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1
TOOL_VERSION = "0.1.0"


class DatasetError(ValueError):
    pass


@dataclass
class DatasetTable:
    columns: list[str]
    rows: list[list[Fraction]]

    def __len__(self):
        return len(self.rows)


def parse_dataset(raw: bytes | str, model: ModelSpec) -> DatasetTable:
    """Comma-separated values with a header naming every model attribute."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    reader = csv.reader(io.StringIO(raw))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DatasetError("empty dataset: missing header row") from None
    names = [a.name for a in model.attributes]
    position = {name: i for i, name in enumerate(names)}
    for h in header:
        if h not in position:
            raise DatasetError(f"unknown column {h!r}")
    if len(set(header)) != len(header):
        raise DatasetError("duplicate column in header")
    missing = [n for n in names if n not in header]
    if missing:
        raise DatasetError(f"missing column(s) {', '.join(missing)}")
    order = [header.index(n) for n in names]
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise DatasetError(f"row {lineno}: expected {len(header)} values, got {len(rec)}")
        row = []
        for attr, col in zip(model.attributes, order):
            try:
                v = to_fraction(rec[col])
            except (TypeError, ValueError):
                raise DatasetError(f"row {lineno}, column {attr.name!r}: not a number: {rec[col]!r}") from None
            if not attr.contains(v):
                raise DatasetError(
                    f"row {lineno}, column {attr.name!r}: {rec[col].strip()} outside "
                    f"[{format_fraction(attr.lower)}, {format_fraction(attr.upper)}] ({attr.kind.value})"
                )
            row.append(v)
        rows.append(row)
    return DatasetTable(names, rows)


def serialize_dataset(table: DatasetTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_fraction(v) for v in row])
    return buf.getvalue()


def _witness_doc(w: Witness | None):
    if w is None:
        return None
    return {
        "phi": [format_fraction(v) for v in w.phi],
        "phi_prime": [format_fraction(v) for v in w.phi_prime],
        "label": w.label,
        "label_prime": w.label_prime,
    }


def report_document(
    report: RunReport,
    outcome: str,
    witness: Witness | None = None,
    certificate: dict | None = None,
    config: dict | None = None,
    *,
    deterministic: bool = False,
) -> dict:
    """Structured report; ``deterministic`` drops the timestamp and timings."""
    counters = asdict(report)
    if deterministic:
        counters.pop("elapsed")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool": "faircert",
        "tool_version": TOOL_VERSION,
        "outcome": outcome,
        "witness": _witness_doc(witness),
        "certificate": certificate,
        "report": counters,
        "config": config or {},
    }
    if not deterministic:
        doc["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return doc


def summary_line(report: RunReport) -> str:
    """Tab-separated UW, FQ, #test, #sat, #unsat, Time."""
    return "\t".join(
        [report.uw, str(report.fq), str(report.n_test), str(report.n_sat), str(report.n_unsat), f"{report.elapsed:.2f}"]
    )


def emit_report(
    report: RunReport,
    outcome: str,
    witness: Witness | None,
    destination: str | Path | TextIO | None,
    *,
    certificate: dict | None = None,
    config: dict | None = None,
    deterministic: bool = False,
    stdout: TextIO | None = None,
) -> str:
    """Write the report document to ``destination`` and the summary row to stdout."""
    text = canonical_json(
        report_document(report, outcome, witness, certificate, config, deterministic=deterministic)
    )
    if destination is not None:
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            Path(destination).write_text(text)
    print(summary_line(report), file=stdout or sys.stdout)
    return text


def load_report(raw: str | bytes) -> dict:
    """Parse a report document back into objects (RunReport, Witness)."""
    doc = json.loads(raw)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {doc.get('schema_version')!r}")
    known = {f.name for f in fields(RunReport)}
    counters = {k: v for k, v in doc["report"].items() if k in known}
    w = doc.get("witness")
    witness = None
    if w is not None:
        witness = Witness(
            tuple(to_fraction(v) for v in w["phi"]),
            tuple(to_fraction(v) for v in w["phi_prime"]),
            w["label"],
            w["label_prime"],
        )
    return {
        "outcome": doc["outcome"],
        "report": RunReport(**counters),
        "witness": witness,
        "certificate": doc.get("certificate"),
        "config": doc.get("config", {}),
    }


def parse_vector(text: str) -> list[Fraction]:
    return [to_fraction(t) for t in text.split(",") if t.strip()]


def format_vector(values: Sequence[Fraction]) -> str:
    return ",".join(format_fraction(v) for v in values)
