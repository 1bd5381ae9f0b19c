"""Build patch-score heatmaps as ``x,y,score`` CSV and a P2 graymap."""

import csv
import math
from pathlib import Path
from typing import Mapping, Sequence, Tuple, Union

import numpy as np

from glat.exceptions import DimensionMismatchError
from glat.models import EmbeddingTable, HeatmapArtifact
from glat.parsers.embedding_table import validate_patch_grid

Scores = Union[Sequence[float], Mapping[int, float], np.ndarray]


def _align_scores(scores: Scores, table: EmbeddingTable) -> np.ndarray:
    ids = table.ids()
    if isinstance(scores, Mapping):
        if set(scores) != set(ids):
            raise DimensionMismatchError("Heatmap scores must cover exactly the table's patch ids")
        return np.array([scores[i] for i in ids], dtype=np.float64)
    values = np.asarray(scores, dtype=np.float64)
    if values.shape != (len(ids),):
        raise DimensionMismatchError(f"{values.size} scores for {len(ids)} patches")
    return values


def normalize_scores(values: np.ndarray, normalization: str = "minmax") -> np.ndarray:
    """Min-max scale to [0, 1]; a zero range maps everything to 0."""
    if normalization == "none":
        return values
    low, high = float(np.min(values)), float(np.max(values))
    if high <= low:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def to_pixels(grid: np.ndarray) -> np.ndarray:
    """[0, 1] values to 0..255 gray levels, rounding half up."""
    return np.array(
        [[min(255, max(0, math.floor(255.0 * v + 0.5))) for v in row] for row in grid],
        dtype=np.int64,
    )


class HeatmapBuilder:
    """Write score heatmaps aligned with a slide's patch grid."""

    def __init__(self, normalization: str = "minmax"):
        """
        Initialize builder.

        Args:
            normalization: ``minmax`` or ``none``
        """
        if normalization not in ("minmax", "none"):
            raise ValueError(f"Unknown normalization: {normalization}")
        self.normalization = normalization

    def build(self, scores: Scores, table: EmbeddingTable) -> HeatmapArtifact:
        """Grid of normalized scores; cells without a patch are 0."""
        values = normalize_scores(_align_scores(scores, table), self.normalization)
        report = validate_patch_grid(table)
        grid = np.zeros((report.height, report.width))
        for record, value in zip(table.records, values):
            grid[record.y, record.x] = value
        return HeatmapArtifact(grid=grid, normalization=self.normalization)

    def export(self, scores: Scores, table: EmbeddingTable, output_path: Path) -> Tuple[Path, Path]:
        """
        Write ``<output_path>.csv`` (raw scores) and ``<output_path>.pgm``.

        Args:
            scores: One score per patch id (sequence in id order or id mapping)
            table: Slide the scores belong to
            output_path: Path without extension

        Returns:
            (csv path, pgm path)
        """
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        raw = _align_scores(scores, table)
        artifact = self.build(raw, table)

        csv_path = output_path.with_suffix(".csv")
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["x", "y", "score"])
            for record, value in zip(table.records, raw):
                writer.writerow([record.x, record.y, repr(float(value))])

        pgm_path = output_path.with_suffix(".pgm")
        pixels = to_pixels(artifact.grid)
        lines = ["P2", f"{artifact.width} {artifact.height}", "255"]
        lines.extend(" ".join(str(p) for p in row) for row in pixels)
        with open(pgm_path, "w", encoding="ascii", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        return csv_path, pgm_path


def heatmap_export(scores: Scores, table: EmbeddingTable, path: Path, normalization: str = "minmax") -> Tuple[Path, Path]:
    """Module-level shortcut for :meth:`HeatmapBuilder.export`."""
    return HeatmapBuilder(normalization).export(scores, table, path)
