"""Command orchestration: synth, select, train, infer, heatmap, crossval."""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from glat.analyzers.attention import gla_forward, msa_forward
from glat.analyzers.irm import IterativeRefiner, random_selection
from glat.analyzers.metrics import metrics_report
from glat.config import Settings
from glat.exceptions import DimensionMismatchError, MissingInputError
from glat.generators.synth_generator import synth_generate, write_dataset
from glat.models import (
    EmbeddingTable,
    FrozenProjections,
    GradeLabel,
    IrmResult,
    MetricsReport,
    ModelParams,
    WSIBag,
)
from glat.output.heatmap_builder import heatmap_export
from glat.output.report_builder import ReportBuilder
from glat.parsers.checkpoint import load_checkpoint, save_checkpoint
from glat.parsers.dataset import LabeledSlide, load_dataset, load_tables
from glat.parsers.embedding_table import save_embedding_table
from glat.providers.feature_provider import identity_projections, local_extract, make_frozen_projections
from glat.training.head import init_model_params
from glat.training.trainer import TrainResult, bundles_for, predict_probs, train_loop
from glat.utils.prng import SplitMix64, derive_seed

COMMANDS = ("select", "train", "infer", "heatmap", "synth", "crossval")

# Stream keys under the training seed.
_SPLIT_STREAM = 101
_FOLD_STREAM = 102


class SlidePreparer:
    """Feature provider, frozen scorer and patch selection for one configuration."""

    def __init__(self, settings: Settings):
        """
        Initialize preparer.

        Args:
            settings: Run settings
        """
        self.settings = settings
        self.provider_spec = settings.provider_spec()
        self._projections: Dict[int, FrozenProjections] = {}

    def projections(self, d: int) -> FrozenProjections:
        """Scorer weights for d-dimensional embeddings (cached per d)."""
        if d not in self._projections:
            s = self.settings
            if s.scorer == "none":
                self._projections[d] = identity_projections(d)
            else:
                self._projections[d] = make_frozen_projections(
                    s.irm_seed, d, s.irm_d_k, s.irm_d_v, tie_qk=s.irm_tie_qk
                )
        return self._projections[d]

    def refiner(self, d: int) -> IterativeRefiner:
        s = self.settings
        return IterativeRefiner(self.projections(d), s.m, s.t, s.shuffle_seed, s.score_mode)

    def embed(self, table: EmbeddingTable) -> EmbeddingTable:
        return local_extract(self.provider_spec, table)

    def select(self, table: EmbeddingTable) -> Tuple[EmbeddingTable, Optional[IrmResult]]:
        """Embedded slide restricted to the selected patches, with the IRM trace if any."""
        embedded = self.embed(table)
        if self.settings.selection == "random":
            seed = derive_seed(self.settings.shuffle_seed, sum(map(ord, table.slide_id)))
            return embedded.subset(random_selection(embedded, self.settings.m, seed)), None
        result = self.refiner(embedded.d).run(embedded)
        return embedded.subset(result.state.selected_ids), result

    def bags(self, slides: Sequence[LabeledSlide]) -> List[WSIBag]:
        """Labeled bags of selected patches."""
        return [
            WSIBag(slide_id=s.table.slide_id, label=s.label, patches=self.select(s.table)[0])
            for s in slides
        ]


def split_indices(n: int, val_fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """Seeded train/validation split; both sides get at least one slide."""
    if n < 2:
        raise ValueError("Need at least two slides to split")
    perm = [int(i) for i in SplitMix64(seed).permutation(n)]
    n_val = min(n - 1, max(1, round(val_fraction * n)))
    return sorted(perm[n_val:]), sorted(perm[:n_val])


def _new_params(settings: Settings, d: int) -> ModelParams:
    return init_model_params(
        d=d,
        d_k=settings.d_k,
        d_v=settings.d_v,
        m_max=settings.m,
        seed=settings.seed,
        filter_order=settings.filter_order,
        lambda_=settings.lambda_,
        graph_bias=settings.graph_bias,
        heads=settings.heads,
        attention=settings.attention,
        aggregation=settings.aggregation,
    )


def _check_checkpoint(params: ModelParams, settings: Settings, d: int) -> None:
    problems = []
    if params.glat.d != d:
        problems.append(f"d={params.glat.d} but embeddings have d={d}")
    if params.glat.d_k != settings.d_k:
        problems.append(f"d_k={params.glat.d_k} but config has {settings.d_k}")
    if params.glat.d_v != settings.d_v:
        problems.append(f"d_v={params.glat.d_v} but config has {settings.d_v}")
    if params.m_max != settings.m:
        problems.append(f"M={params.m_max} but config has {settings.m}")
    if problems:
        raise DimensionMismatchError("Checkpoint does not match configuration: " + "; ".join(problems))


def train_on(
    settings: Settings, train: Sequence[WSIBag], val: Sequence[WSIBag]
) -> TrainResult:
    """Fresh parameters trained on ``train`` with early stopping on ``val``."""
    params = _new_params(settings, train[0].patches.d)
    return train_loop(train, val, params, settings.train_config(), settings.sigma)


def holdout_run(settings: Settings) -> Tuple[MetricsReport, TrainResult]:
    """Synthesize, select and train on a seeded split; metrics on the validation part."""
    preparer = SlidePreparer(settings)
    bags = preparer.bags(
        [LabeledSlide(table=s.table, label=s.label) for s in synth_generate(settings.synth_spec())]
    )
    train_idx, val_idx = split_indices(len(bags), settings.val_fraction, derive_seed(settings.seed, 101))
    train, val = [bags[i] for i in train_idx], [bags[i] for i in val_idx]
    result = train_on(settings, train, val)
    probs = predict_probs(val, bundles_for(val, settings.sigma), result.params)
    return metrics_report(probs, [b.label.class_index for b in val], settings.kappa_weighting), result


# --- Commands ---------------------------------------------------------------


def cmd_synth(settings: Settings, output_dir: Path) -> Path:
    """Generate a synthetic dataset directory."""
    print(f"\n[1/2] Generating {settings.n_slides} synthetic slides...")
    slides = synth_generate(settings.synth_spec())
    print(f"\n[2/2] Writing dataset to {output_dir}")
    labels_path = write_dataset(slides, output_dir)
    print(f"       [OK] {labels_path}")
    return labels_path


def cmd_select(
    settings: Settings, input_path: Path, output_dir: Path, trace_path: Optional[Path] = None
) -> List[IrmResult]:
    """Run iterative selection; write traces and selected tables."""
    tables = load_tables(input_path)
    print(f"\n[1/2] Loaded {len(tables)} slide(s) from {input_path}")
    preparer = SlidePreparer(settings.model_copy(update={"selection": "irm"}))
    builder = ReportBuilder()

    print(f"\n[2/2] Selecting top {settings.m} patches over {settings.t} iterations...")
    results = []
    for table in tables:
        selected, result = preparer.select(table)
        path = trace_path if trace_path and len(tables) == 1 else output_dir / "traces" / f"{table.slide_id}.csv"
        builder.build_trace(result, path)
        save_embedding_table(selected, output_dir / "selected" / f"{table.slide_id}.txt")
        results.append(result)
        print(f"       [OK] {table.slide_id}: kept {len(result.state.selected_ids)} of {len(table)}")
    return results


def cmd_train(settings: Settings, input_path: Path, output_dir: Path) -> TrainResult:
    """Train on a seeded split; write checkpoint, history and validation predictions."""
    slides = load_dataset(input_path)
    print(f"\n[1/3] Loaded {len(slides)} slides from {input_path}")

    bags = SlidePreparer(settings).bags(slides)
    train_idx, val_idx = split_indices(len(bags), settings.val_fraction, derive_seed(settings.seed, _SPLIT_STREAM))
    train, val = [bags[i] for i in train_idx], [bags[i] for i in val_idx]
    print(f"\n[2/3] Training on {len(train)} slides, validating on {len(val)}...")
    result = train_on(settings, train, val)
    print(f"       [OK] Best epoch {result.best_epoch} of {len(result.history)}")

    print(f"\n[3/3] Writing outputs to {output_dir}")
    builder = ReportBuilder()
    save_checkpoint(result.params, output_dir / "checkpoint.txt")
    builder.build_history(result.history, output_dir / "history.csv")
    probs = predict_probs(val, bundles_for(val, settings.sigma), result.params)
    labels = [bag.label.class_index for bag in val]
    builder.build_predictions([b.slide_id for b in val], probs, labels, output_dir / "val_predictions.csv")
    if len(set(labels)) >= 2:
        report = metrics_report(probs, labels, settings.kappa_weighting)
        print(f"       [OK] Validation AUC {report.auc:.3f}, kappa {report.kappa:.3f}, accuracy {report.accuracy:.3f}")
    return result


def cmd_infer(settings: Settings, input_path: Path, checkpoint: Path, output_dir: Path) -> Path:
    """Class probabilities for every slide under ``input_path``."""
    params = load_checkpoint(checkpoint)
    if Path(input_path).is_dir():
        slides = load_dataset(input_path)
        tables = [s.table for s in slides]
        labels: List[Optional[int]] = [s.label.class_index for s in slides]
    else:
        tables = load_tables(input_path)
        labels = [None] * len(tables)
    print(f"\n[1/2] Loaded {len(tables)} slide(s) and checkpoint {checkpoint}")

    preparer = SlidePreparer(settings)
    selected = [preparer.select(t)[0] for t in tables]
    _check_checkpoint(params, settings, selected[0].d)
    bags = [
        WSIBag(slide_id=t.slide_id, label=GradeLabel(class_index=0), patches=s)
        for t, s in zip(tables, selected)
    ]
    probs = predict_probs(bags, bundles_for(bags, settings.sigma), params)

    path = output_dir / "predictions.csv"
    ReportBuilder().build_predictions([t.slide_id for t in tables], probs, labels, path)
    print(f"\n[2/2] [OK] {path}")
    return path


def gla_heatmap_scores(table: EmbeddingTable, selected: EmbeddingTable, params: ModelParams, sigma) -> Dict[int, float]:
    """Attention received (column mean) by each selected patch; 0 elsewhere."""
    e = selected.embeddings()
    if params.attention == "gla":
        bundle = bundles_for(
            [WSIBag(slide_id=selected.slide_id, label=GradeLabel(class_index=0), patches=selected)], sigma
        )[0]
        attn = gla_forward(e, bundle, params.glat).attention
    else:
        attn = msa_forward(e, params.glat).attention
    received = attn.mean(axis=0)
    scores = {pid: 0.0 for pid in table.ids()}
    scores.update({pid: float(s) for pid, s in zip(selected.ids(), received)})
    return scores


def irm_heatmap_scores(result: IrmResult) -> Dict[int, float]:
    """Latest IRM importance score of every patch."""
    scores: Dict[int, float] = {}
    for step in result.trace:
        scores.update(zip(step.pool_ids, step.scores))
    return scores


def cmd_heatmap(
    settings: Settings, input_path: Path, output_dir: Path, checkpoint: Optional[Path] = None
) -> List[Path]:
    """Write score maps (CSV + PGM) for each slide."""
    tables = load_tables(input_path)
    preparer = SlidePreparer(settings.model_copy(update={"selection": "irm"}))
    params = None
    if settings.heatmap_source == "gla":
        if checkpoint is None:
            raise MissingInputError("The gla heatmap source needs --checkpoint")
        params = load_checkpoint(checkpoint)

    print(f"\n[1/1] Writing {settings.heatmap_source} heatmaps for {len(tables)} slide(s)...")
    written = []
    for table in tables:
        selected, result = preparer.select(table)
        embedded = preparer.embed(table)
        if params is None:
            scores = irm_heatmap_scores(result)
        else:
            _check_checkpoint(params, settings, selected.d)
            scores = gla_heatmap_scores(embedded, selected, params, settings.sigma)
        csv_path, pgm_path = heatmap_export(
            scores, embedded, output_dir / "heatmaps" / table.slide_id, settings.heatmap_normalization
        )
        written.extend([csv_path, pgm_path])
        print(f"       [OK] {pgm_path}")
    return written


def cmd_crossval(settings: Settings, input_path: Path, output_dir: Path) -> List[MetricsReport]:
    """K seeded folds; per-fold predictions plus mean/std metrics."""
    slides = load_dataset(input_path)
    k = settings.folds
    if len(slides) < k:
        raise ValueError(f"{len(slides)} slides cannot fill {k} folds")
    print(f"\n[1/2] Loaded {len(slides)} slides; running {k}-fold cross-validation...")

    bags = SlidePreparer(settings).bags(slides)
    perm = [int(i) for i in SplitMix64(derive_seed(settings.seed, _FOLD_STREAM)).permutation(len(bags))]
    builder = ReportBuilder()
    reports: List[MetricsReport] = []
    for fold in range(k):
        test_idx = sorted(perm[pos] for pos in range(len(perm)) if pos % k == fold)
        held_out = set(test_idx)
        rest = [i for i in range(len(bags)) if i not in held_out]
        inner_train, inner_val = split_indices(
            len(rest), settings.val_fraction, derive_seed(settings.seed, _SPLIT_STREAM, fold)
        )
        train = [bags[rest[i]] for i in inner_train]
        val = [bags[rest[i]] for i in inner_val]
        test = [bags[i] for i in test_idx]

        result = train_on(settings, train, val)
        probs = predict_probs(test, bundles_for(test, settings.sigma), result.params)
        labels = [bag.label.class_index for bag in test]
        builder.build_predictions(
            [b.slide_id for b in test], probs, labels, output_dir / f"fold_{fold}_predictions.csv"
        )
        report = metrics_report(probs, labels, settings.kappa_weighting)
        reports.append(report)
        logger.info("Fold {}: auc {:.3f} kappa {:.3f}", fold, report.auc, report.kappa)
        print(f"       [OK] Fold {fold}: AUC {report.auc:.3f}, kappa {report.kappa:.3f}")

    builder.build_crossval(reports, output_dir / "crossval.csv")
    auc = np.array([r.auc for r in reports])
    kappa = np.array([r.kappa for r in reports])
    print(f"\n[2/2] AUC {auc.mean():.3f} +/- {auc.std():.3f}, kappa {kappa.mean():.3f} +/- {kappa.std():.3f}")
    return reports


def run_pipeline(
    settings: Settings,
    command: str,
    input_path: Optional[Path] = None,
    output_dir: Optional[Path] = None,
    checkpoint: Optional[Path] = None,
    trace_path: Optional[Path] = None,
) -> int:
    """
    Dispatch one command.

    Args:
        settings: Validated settings
        command: One of :data:`COMMANDS`
        input_path: Table file or dataset directory
        output_dir: Where artifacts go (defaults to ``settings.output_dir``)
        checkpoint: Checkpoint for infer / gla heatmaps
        trace_path: Trace file for single-table select

    Returns:
        Process exit status (0 on success)
    """
    if command not in COMMANDS:
        raise ValueError(f"Unknown command: {command}")
    output_dir = Path(output_dir or settings.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    if command == "synth":
        cmd_synth(settings, output_dir)
        return 0

    if input_path is None:
        raise MissingInputError(f"The {command} command needs --input")
    input_path = Path(input_path)
    if not input_path.exists():
        raise MissingInputError(f"Input not found: {input_path}")

    if command == "select":
        cmd_select(settings, input_path, output_dir, trace_path)
    elif command == "train":
        cmd_train(settings, input_path, output_dir)
    elif command == "infer":
        if checkpoint is None:
            raise MissingInputError("The infer command needs --checkpoint")
        cmd_infer(settings, input_path, Path(checkpoint), output_dir)
    elif command == "heatmap":
        cmd_heatmap(settings, input_path, output_dir, checkpoint)
    else:
        cmd_crossval(settings, input_path, output_dir)
    return 0
