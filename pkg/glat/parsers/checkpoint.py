"""Text checkpoints (``#glat-checkpoint v1``).

After the header come ``meta <key> <value>`` lines for the forward-pass
switches, then for each parameter a ``<name> <ndims> <dims...>`` line
followed by one line of space-separated values in row-major order.
"""

from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from pydantic import ValidationError

from glat.exceptions import EmbeddingFormatError, MissingInputError
from glat.models import PARAM_NAMES, FilterParams, GlatLayerParams, ModelParams

HEADER = "#glat-checkpoint v1"
META_KEYS = ("lambda", "graph_bias", "heads", "attention", "aggregation")


def format_checkpoint(params: ModelParams) -> str:
    """Serialize parameters to the v1 text format."""
    meta = {
        "lambda": repr(float(params.glat.lambda_)),
        "graph_bias": params.glat.graph_bias,
        "heads": str(params.glat.heads),
        "attention": params.attention,
        "aggregation": params.aggregation,
    }
    lines = [HEADER]
    lines.extend(f"meta {key} {meta[key]}" for key in META_KEYS)
    for name, arr in params.arrays().items():
        lines.append(f"{name} {arr.ndim} {' '.join(str(n) for n in arr.shape)}")
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    return "\n".join(lines) + "\n"


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> None:
    """Write a checkpoint file (parent directories are created)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_checkpoint(params))


def _parse_array(spec_line: str, values_line: str, line_no: int) -> tuple:
    parts = spec_line.split()
    try:
        name, ndims = parts[0], int(parts[1])
        shape = tuple(int(n) for n in parts[2:])
    except (IndexError, ValueError):
        raise EmbeddingFormatError("malformed parameter record", line=line_no)
    if len(shape) != ndims:
        raise EmbeddingFormatError(f"{name}: {ndims} dims declared, {len(shape)} given", line=line_no)
    try:
        values = [float(v) for v in values_line.split()]
    except ValueError:
        raise EmbeddingFormatError(f"{name}: unparseable value", line=line_no + 1)
    if len(values) != int(np.prod(shape, dtype=np.int64)):
        raise EmbeddingFormatError(f"{name}: expected {int(np.prod(shape))} values", line=line_no + 1)
    return name, np.array(values, dtype=np.float64).reshape(shape)


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Args:
        path: Checkpoint file

    Returns:
        ModelParams

    Raises:
        MissingInputError: If the file does not exist
        EmbeddingFormatError: If the file is malformed or incomplete
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines: List[str] = f.read().splitlines()
    if not lines or lines[0] != HEADER:
        raise EmbeddingFormatError("missing checkpoint header", line=1)

    meta: Dict[str, str] = {}
    arrays: Dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("meta "):
            parts = line.split()
            if len(parts) != 3:
                raise EmbeddingFormatError("malformed meta line", line=i + 1)
            meta[parts[1]] = parts[2]
            i += 1
            continue
        if i + 1 >= len(lines):
            raise EmbeddingFormatError("parameter record without values", line=i + 1)
        name, arr = _parse_array(line, lines[i + 1], i + 1)
        arrays[name] = arr
        i += 2

    missing = [key for key in META_KEYS if key not in meta] + [n for n in PARAM_NAMES if n not in arrays]
    if missing:
        raise EmbeddingFormatError(f"checkpoint is missing {', '.join(missing)}")

    try:
        glat = GlatLayerParams(
            wq=arrays["glat.wq"],
            wk=arrays["glat.wk"],
            wv=arrays["glat.wv"],
            filter=FilterParams(coeffs=arrays["glat.filter"]),
            lambda_=float(meta["lambda"]),
            graph_bias=meta["graph_bias"],
            heads=int(meta["heads"]),
        )
        return ModelParams(
            glat=glat,
            agg_logits=arrays["agg_logits"],
            cls_w=arrays["cls_w"],
            cls_b=arrays["cls_b"],
            attention=meta["attention"],
            aggregation=meta["aggregation"],
        )
    except (ValidationError, ValueError) as e:
        raise EmbeddingFormatError(f"invalid checkpoint: {e}")
