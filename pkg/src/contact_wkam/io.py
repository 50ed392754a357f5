"""CSV and JSON output with deterministic formatting and schema checks."""

from __future__ import annotations

import csv
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .model import GridFunction

FLOAT_FMT = "{:.17g}"


def config_hash(text: str) -> str:
    """Short SHA-256 of the canonical config text."""
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _header_lines(fh, header: str | None) -> None:
    if header:
        for line in header.splitlines():
            fh.write(f"# {line}\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT.format(float(v))


def write_columns_csv(path, columns: dict, header: str | None = None) -> None:
    """Equal-length columns, in the given order, under a ``#`` header."""
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    if len({len(c) for c in data}) > 1:
        raise ValueError("columns differ in length")
    with open(path, "w", newline="") as fh:
        _header_lines(fh, header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([_fmt(v) for v in row])


def write_grid_csv(path, gf: GridFunction, header: str | None = None) -> None:
    write_columns_csv(path, {"x": gf.x, "value": gf.values}, header)


def read_grid_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """(x, value) columns from a file written by :func:`write_grid_csv`."""
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    arr = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]])
    return arr[:, 0], arr[:, 1]


def load_schema(name: str) -> dict:
    text = resources.files("contact_wkam").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def write_json(path, obj: dict, schema: str | None = None) -> None:
    """Validate ``obj`` against a packaged schema, then write it sorted and indented."""
    if schema is not None:
        jsonschema.validate(obj, load_schema(schema))
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
