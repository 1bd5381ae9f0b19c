"""Synthetic slides with planted, spatially contiguous lesions.

Background patches are zero-mean noise. Each lesion is a disk of patches
shifted by the signature vector of its class. A slide's label is the class
of its largest lesion (0 when it has none).
"""

import csv
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from loguru import logger

from glat.models import NUM_CLASSES, EmbeddingTable, GradeLabel, SynthSpec, SyntheticSlide
from glat.parsers.dataset import LABELS_FILE
from glat.parsers.embedding_table import save_embedding_table
from glat.utils.prng import SplitMix64, derive_seed

SLIDES_DIR = "slides"

# Stream keys under the global seed.
_LABEL_STREAM = 0
_SIGNATURE_STREAM = 1
_SLIDE_STREAM = 2


class Lesion(NamedTuple):
    class_index: int
    cx: int
    cy: int
    radius: int


def class_signatures(spec: SynthSpec) -> np.ndarray:
    """(C x d) signature vectors; row 0 (normal tissue) is zero."""
    rng = SplitMix64(derive_seed(spec.seed, _SIGNATURE_STREAM))
    signatures = np.zeros((NUM_CLASSES, spec.d))
    signatures[1:] = rng.normal((NUM_CLASSES - 1, spec.d), scale=spec.class_signal_scale)
    return signatures


def allocate_labels(spec: SynthSpec) -> List[int]:
    """
    Slide labels matching the class mixture (largest remainder), seeded shuffle.

    Every slide is class 0 when the lesion count range allows no lesions.
    """
    n = spec.n_slides
    if spec.lesion_count_range[1] == 0:
        return [0] * n

    shares = np.asarray(spec.class_mixture, dtype=np.float64)
    exact = shares / shares.sum() * n
    counts = np.floor(exact).astype(int)
    remainder_order = np.lexsort((np.arange(NUM_CLASSES), -(exact - counts)))
    for c in remainder_order[: n - counts.sum()]:
        counts[c] += 1

    labels = [c for c in range(NUM_CLASSES) for _ in range(counts[c])]
    perm = SplitMix64(derive_seed(spec.seed, _LABEL_STREAM)).permutation(n)
    return [labels[i] for i in perm]


def _disk(lesion: Lesion, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return (xs - lesion.cx) ** 2 + (ys - lesion.cy) ** 2 <= lesion.radius**2


def _plan_lesions(spec: SynthSpec, target: int, rng: SplitMix64) -> List[Lesion]:
    """
    Secondary lesions first, then the primary lesion of the target class.

    With more than one lesion the primary radius is drawn above the minimum
    when the range allows it, and secondaries are never wider than the
    primary. The primary is painted last, so it keeps the largest area.
    """
    if target == 0:
        return []
    lo, hi = spec.lesion_count_range
    r_lo, r_hi = spec.lesion_radius_range
    count = int(rng.integers(max(1, lo), hi))

    radius = int(rng.integers(min(r_lo + 1, r_hi) if count > 1 else r_lo, r_hi))
    cx = int(rng.integers(radius, spec.grid_w - 1 - radius))
    cy = int(rng.integers(radius, spec.grid_h - 1 - radius))
    primary = Lesion(target, cx, cy, radius)

    secondary = [
        Lesion(
            class_index=int(rng.integers(1, NUM_CLASSES - 1)),
            cx=int(rng.integers(0, spec.grid_w - 1)),
            cy=int(rng.integers(0, spec.grid_h - 1)),
            radius=int(rng.integers(r_lo, max(r_lo, radius - 1))),
        )
        for _ in range(count - 1)
    ]
    return secondary + [primary]


def generate_slide(spec: SynthSpec, index: int, target: int, signatures: np.ndarray) -> SyntheticSlide:
    """One slide; randomness comes only from ``derive_seed(seed, slide stream, index)``."""
    rng = SplitMix64(derive_seed(spec.seed, _SLIDE_STREAM, index))
    ys, xs = np.divmod(np.arange(spec.grid_w * spec.grid_h), spec.grid_w)

    lesions = _plan_lesions(spec, target, rng)
    owner = np.full(xs.size, -1)
    for i, lesion in enumerate(lesions):
        owner[_disk(lesion, xs, ys)] = i

    label = 0
    if lesions:
        areas = np.bincount(owner[owner >= 0], minlength=len(lesions))
        # Ties go to the lesion painted last.
        largest = len(lesions) - 1 - int(np.argmax(areas[::-1]))
        label = lesions[largest].class_index

    embeddings = rng.normal((xs.size, spec.d), scale=spec.noise_scale)
    lesion_mask = owner >= 0
    classes = np.array([lesion.class_index for lesion in lesions], dtype=int)
    if lesion_mask.any():
        embeddings[lesion_mask] += signatures[classes[owner[lesion_mask]]]

    ids = np.arange(xs.size)
    table = EmbeddingTable.from_arrays(
        ids, np.stack([xs, ys], axis=1), embeddings, slide_id=f"slide_{index:04d}"
    )
    return SyntheticSlide(
        table=table,
        label=GradeLabel(class_index=label),
        lesion_ids=tuple(int(i) for i in ids[lesion_mask]),
    )


def synth_generate(spec: SynthSpec) -> List[SyntheticSlide]:
    """
    Generate ``spec.n_slides`` labeled slides, deterministic in ``spec.seed``.

    Args:
        spec: Generator settings

    Returns:
        Slides in index order
    """
    signatures = class_signatures(spec)
    labels = allocate_labels(spec)
    slides = [generate_slide(spec, i, target, signatures) for i, target in enumerate(labels)]
    logger.info(
        "Generated {} slides, class counts {}",
        len(slides),
        np.bincount([s.label.class_index for s in slides], minlength=NUM_CLASSES).tolist(),
    )
    return slides


def write_dataset(slides: Sequence[SyntheticSlide], output_dir: Path) -> Path:
    """
    Write one table per slide plus ``labels.csv`` (slide_id,label,file).

    Args:
        slides: Generated slides
        output_dir: Dataset directory (created)

    Returns:
        Path of the labels file
    """
    output_dir = Path(output_dir)
    (output_dir / SLIDES_DIR).mkdir(parents=True, exist_ok=True)

    rows: List[Tuple[str, int, str]] = []
    for slide in slides:
        rel = f"{SLIDES_DIR}/{slide.table.slide_id}.txt"
        save_embedding_table(slide.table, output_dir / rel)
        rows.append((slide.table.slide_id, slide.label.class_index, rel))

    labels_path = output_dir / LABELS_FILE
    with open(labels_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["slide_id", "label", "file"])
        writer.writerows(rows)
    return labels_path
