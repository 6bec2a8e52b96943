"""CSV reading/writing with manifest headers and stable float formatting.

Every file the pipeline emits starts with a single comment line carrying
the tool version, the seed, and content hashes of the inputs, so a rerun
with identical inputs and seed is byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field

from wealthmap.exceptions import SchemaError

TOOL_NAME = "wealthmap"


def fmt(value) -> str:
    """Format a cell deterministically; floats use shortest round-trip repr."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))  # float() strips numpy subclasses
    if value is None:
        return ""
    if hasattr(value, "item"):  # numpy scalar
        return fmt(value.item())
    return str(value)


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:12]


@dataclass
class Manifest:
    version: str
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)

    def line(self) -> str:
        parts = [f"# {TOOL_NAME} {self.version}"]
        if self.seed is not None:
            parts.append(f"seed={self.seed}")
        if self.inputs:
            joined = ",".join(f"{os.path.basename(k)}:{v}" for k, v in sorted(self.inputs.items()))
            parts.append(f"inputs={joined}")
        return " ".join(parts)

    @classmethod
    def for_inputs(cls, version: str, seed: int | None, paths: list[str]) -> "Manifest":
        return cls(version=version, seed=seed, inputs={p: file_sha256(p) for p in paths})


def write_csv(path: str, header: list[str], rows, manifest: Manifest | None = None) -> None:
    buf = io.StringIO()
    if manifest is not None:
        buf.write(manifest.line() + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())


def read_csv(path: str, required: list[str] | None = None) -> tuple[list[str], list[dict[str, str]]]:
    """Read a CSV, skipping leading ``#`` comment lines.

    Returns (header, rows-as-dicts). Raises SchemaError when required
    columns are missing or a row has the wrong number of fields; the
    message names the offending 1-based physical line.
    """
    if not os.path.exists(path):
        raise SchemaError(f"{path}: file not found")
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    lineno = 0
    while lineno < len(lines) and lines[lineno].startswith("#"):
        lineno += 1
    if lineno >= len(lines):
        raise SchemaError(f"{path}: no header row")
    header = next(csv.reader([lines[lineno]]))
    if required is not None:
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing} (header {header})")
    rows = []
    for offset, raw in enumerate(lines[lineno + 1 :], start=lineno + 2):
        if not raw:
            continue
        cells = next(csv.reader([raw]))
        if len(cells) != len(header):
            raise SchemaError(
                f"{path}:{offset}: expected {len(header)} fields, found {len(cells)}"
            )
        rows.append(dict(zip(header, cells)))
    return header, rows


def parse_float(path: str, row_idx: int, column: str, raw: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise SchemaError(f"{path}: row {row_idx}: column {column!r} has non-numeric value {raw!r}")
    if v != v:
        raise SchemaError(f"{path}: row {row_idx}: column {column!r} is NaN")
    return v


def parse_int(path: str, row_idx: int, column: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise SchemaError(f"{path}: row {row_idx}: column {column!r} has non-integer value {raw!r}")
