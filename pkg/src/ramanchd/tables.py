"""Deterministic CSV/JSON tables.

Floats are written with ``repr`` (shortest round-trip form), so parsing a
table and writing it back reproduces the original bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

CONVENTIONS = (
    "units: energies and rates in eV, tau in hbar/eV, phi in rad",
    "frame: frequencies in the laser rotating frame (omega < 0 is red-shifted)",
    "quadrature: a_phi = (a e^{-i phi} + a^dag e^{i phi}) / 2",
    "vectorization: column-stacking",
)


@dataclass
class Table:
    name: str
    columns: list
    rows: list = field(default_factory=list)
    meta: list = field(default_factory=list)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "item"):
        return _fmt(value.item())
    text = str(value)
    if "," in text or "\n" in text:
        raise ValueError(f"table cell {text!r} contains a separator")
    return text


def _parse(token: str):
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def _normalize(value):
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, bool):
        return int(value)
    return value


def table_to_csv(table: Table) -> str:
    lines = [f"# table: {table.name}"]
    lines += [f"# {m}" for m in table.meta]
    lines.append(",".join(table.columns))
    for row in table.rows:
        if len(row) != len(table.columns):
            raise ValueError(f"row width {len(row)} != {len(table.columns)} columns")
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def csv_to_table(text: str) -> Table:
    lines = text.splitlines()
    meta, name = [], ""
    i = 0
    while i < len(lines) and lines[i].startswith("# "):
        body = lines[i][2:]
        if i == 0 and body.startswith("table: "):
            name = body[len("table: "):]
        else:
            meta.append(body)
        i += 1
    if i >= len(lines):
        raise ValueError("table has no column header")
    columns = lines[i].split(",")
    rows = [[_parse(tok) for tok in line.split(",")] for line in lines[i + 1:]]
    return Table(name, columns, rows, meta)


def table_to_json(table: Table) -> str:
    doc = {"table": table.name, "meta": list(table.meta), "columns": list(table.columns),
           "rows": [[_normalize(v) for v in row] for row in table.rows]}
    return json.dumps(doc, indent=1) + "\n"


def json_to_table(text: str) -> Table:
    doc = json.loads(text)
    return Table(doc["table"], doc["columns"], doc["rows"], doc["meta"])


def write_table(table: Table, directory, fmt: str = "csv") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{table.name}.{fmt}"
    text = table_to_csv(table) if fmt == "csv" else table_to_json(table)
    path.write_bytes(text.encode("utf-8"))
    return path


def read_table(path) -> Table:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return json_to_table(text) if path.suffix == ".json" else csv_to_table(text)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
