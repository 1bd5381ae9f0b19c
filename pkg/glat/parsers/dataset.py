"""Reader for dataset directories (``labels.csv`` plus one table per slide)."""

import csv
from pathlib import Path
from typing import List, NamedTuple, Union

from glat.exceptions import EmbeddingFormatError, MissingInputError
from glat.models import NUM_CLASSES, EmbeddingTable, GradeLabel
from glat.parsers.embedding_table import load_embedding_table

LABELS_FILE = "labels.csv"
HEADER = ["slide_id", "label", "file"]


class LabeledSlide(NamedTuple):
    table: EmbeddingTable
    label: GradeLabel


def load_dataset(directory: Union[str, Path]) -> List[LabeledSlide]:
    """
    Load every slide listed in ``<directory>/labels.csv``.

    Args:
        directory: Dataset directory written by the synth command

    Returns:
        Slides in manifest order

    Raises:
        MissingInputError: If the directory, manifest or a listed table is missing
        EmbeddingFormatError: On a malformed manifest row
    """
    directory = Path(directory)
    manifest = directory / LABELS_FILE
    if not manifest.exists():
        raise MissingInputError(f"Dataset manifest not found: {manifest}")

    slides: List[LabeledSlide] = []
    with open(manifest, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != HEADER:
            raise EmbeddingFormatError(f"manifest header must be {','.join(HEADER)}", line=1)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise EmbeddingFormatError("expected slide_id,label,file", line=line_no)
            slide_id, raw_label, rel = row
            try:
                label = int(raw_label)
            except ValueError:
                raise EmbeddingFormatError(f"label '{raw_label}' is not an integer", line=line_no)
            if not 0 <= label < NUM_CLASSES:
                raise EmbeddingFormatError(f"label {label} outside [0, {NUM_CLASSES - 1}]", line=line_no)
            table = load_embedding_table(directory / rel)
            if table.slide_id != slide_id:
                table = table.model_copy(update={"slide_id": slide_id})
            slides.append(LabeledSlide(table, GradeLabel(class_index=label)))
    return slides


def load_tables(path: Union[str, Path]) -> List[EmbeddingTable]:
    """A single table file, or every table of a dataset directory."""
    path = Path(path)
    if path.is_dir():
        return [slide.table for slide in load_dataset(path)]
    return [load_embedding_table(path)]
