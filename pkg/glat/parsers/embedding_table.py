"""Reader and writer for the ``#glat-embeddings v1`` text format.

Line 1: ``#glat-embeddings v1 d=<d> patch_px=<px> slide=<slide_id>``
Rows:   ``<id>,<x>,<y>,<v0>,...,<v{d-1}>`` (no spaces, LF endings)

Floats are written with ``repr`` (shortest round-trip form) so a reload is
bit-exact.
"""

import math
from pathlib import Path
from typing import Dict, List, Union

from pydantic import ValidationError

from glat.exceptions import EmbeddingFormatError, GridError, MissingInputError
from glat.models import EmbeddingTable, GridReport, PatchRecord

MAGIC = "#glat-embeddings"
VERSION = "v1"


def _parse_header(line: str) -> Dict[str, str]:
    parts = line.split()
    if len(parts) < 3 or parts[0] != MAGIC:
        raise EmbeddingFormatError("malformed header", line=1)
    if parts[1] != VERSION:
        raise EmbeddingFormatError(f"unsupported version '{parts[1]}'", line=1)

    fields: Dict[str, str] = {}
    for part in parts[2:]:
        key, sep, value = part.partition("=")
        if not sep or not value:
            raise EmbeddingFormatError(f"malformed header field '{part}'", line=1)
        fields[key] = value
    if "d" not in fields:
        raise EmbeddingFormatError("header is missing d=<dim>", line=1)
    return fields


def _header_int(fields: Dict[str, str], key: str, default: int) -> int:
    raw = fields.get(key, str(default))
    try:
        value = int(raw)
    except ValueError:
        raise EmbeddingFormatError(f"header field {key}={raw} is not an integer", line=1)
    if value < 1:
        raise EmbeddingFormatError(f"header field {key} must be >= 1", line=1)
    return value


def load_embedding_table(path: Union[str, Path]) -> EmbeddingTable:
    """
    Load and validate an embedding table file.

    Args:
        path: Path to the table file

    Returns:
        EmbeddingTable sorted by id

    Raises:
        MissingInputError: If the file does not exist
        EmbeddingFormatError: On the first malformed line (with its number)
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Embedding table not found: {path}")

    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmbeddingFormatError("empty file", line=1)

    fields = _parse_header(lines[0].rstrip("\r"))
    d = _header_int(fields, "d", 1)
    patch_px = _header_int(fields, "patch_px", 224)
    slide_id = fields.get("slide", path.stem)

    records: List[PatchRecord] = []
    seen = set()
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.rstrip("\r").split(",")
        if len(cells) != d + 3:
            raise EmbeddingFormatError(
                f"expected {d + 3} values, got {len(cells)}", line=line_no
            )
        if any(c != c.strip() for c in cells):
            raise EmbeddingFormatError("whitespace inside a row", line=line_no)
        try:
            patch_id, x, y = (int(c) for c in cells[:3])
            values = tuple(float(c) for c in cells[3:])
        except ValueError:
            raise EmbeddingFormatError("unparseable number", line=line_no)
        if not all(math.isfinite(v) for v in values):
            raise EmbeddingFormatError("non-finite value", line=line_no)
        if patch_id in seen:
            raise EmbeddingFormatError("duplicate id", line=line_no)
        seen.add(patch_id)
        try:
            records.append(PatchRecord(id=patch_id, x=x, y=y, embedding=values))
        except ValidationError as e:
            raise EmbeddingFormatError(f"invalid record ({e.errors()[0]['msg']})", line=line_no)

    try:
        return EmbeddingTable(d=d, slide_id=slide_id, patch_px=patch_px, records=tuple(records))
    except ValidationError as e:
        raise EmbeddingFormatError(f"invalid table: {e}")


def format_embedding_table(table: EmbeddingTable) -> str:
    """Serialize a table to the v1 text format."""
    lines = [f"{MAGIC} {VERSION} d={table.d} patch_px={table.patch_px} slide={table.slide_id}"]
    for record in table.records:
        values = ",".join(repr(float(v)) for v in record.embedding)
        lines.append(f"{record.id},{record.x},{record.y},{values}")
    return "\n".join(lines) + "\n"


def save_embedding_table(table: EmbeddingTable, path: Union[str, Path]) -> None:
    """
    Write a table in the v1 text format.

    Args:
        table: Validated table
        path: Destination file (parent directories are created)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_embedding_table(table))


def validate_patch_grid(table: EmbeddingTable) -> GridReport:
    """
    Check that no two patches share a cell and measure the grid.

    Args:
        table: Validated table

    Returns:
        GridReport with width = max(x)+1, height = max(y)+1 and N/(width*height)

    Raises:
        GridError: If two records share an (x, y) coordinate
    """
    seen: Dict[tuple, int] = {}
    for record in table.records:
        cell = (record.x, record.y)
        if cell in seen:
            raise GridError(
                f"duplicate coordinate {cell} for ids {seen[cell]} and {record.id}"
            )
        seen[cell] = record.id

    if not table.records:
        return GridReport(width=0, height=0, coverage=0.0)
    width = max(r.x for r in table.records) + 1
    height = max(r.y for r in table.records) + 1
    return GridReport(width=width, height=height, coverage=len(table) / (width * height))
