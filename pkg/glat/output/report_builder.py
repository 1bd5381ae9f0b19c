"""Build CSV reports: selection traces, training history, predictions, cross-validation."""

import csv
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from glat.models import EpochRecord, IrmResult, MetricsReport


def _fmt(value: float) -> str:
    return repr(float(value))


def _open_csv(path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


class ReportBuilder:
    """Write the CSV artifacts of each command."""

    def build_trace(self, result: IrmResult, output_path: Path) -> None:
        """
        Selection trace: one ``t,pool_size,selected_ids...`` line per iteration.

        Args:
            result: IRM result with its trace
            output_path: Path to save CSV file
        """
        with _open_csv(output_path) as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["t", "pool_size", "selected_ids"])
            for step in result.trace:
                writer.writerow([step.t, len(step.pool_ids), *step.selected_ids])

    def build_history(self, history: Sequence[EpochRecord], output_path: Path) -> None:
        """Training history: ``epoch,train_loss,val_loss,val_auc,val_kappa``."""
        with _open_csv(output_path) as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss", "val_auc", "val_kappa"])
            for r in history:
                writer.writerow(
                    [r.epoch, _fmt(r.train_loss), _fmt(r.val_loss), _fmt(r.val_auc), _fmt(r.val_kappa)]
                )

    def build_predictions(
        self,
        slide_ids: Sequence[str],
        probs: np.ndarray,
        labels: Sequence[Optional[int]],
        output_path: Path,
    ) -> None:
        """Predictions: ``slide_id,p0,p1,p2,p3,pred,label`` (label blank if unknown)."""
        n_classes = probs.shape[1] if len(probs) else 4
        with _open_csv(output_path) as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["slide_id", *[f"p{c}" for c in range(n_classes)], "pred", "label"])
            for slide_id, row, label in zip(slide_ids, probs, labels):
                writer.writerow(
                    [slide_id, *[_fmt(p) for p in row], int(np.argmax(row)), "" if label is None else label]
                )

    def build_crossval(self, folds: Sequence[MetricsReport], output_path: Path) -> None:
        """Per-fold metrics plus mean and std rows: ``fold,auc,kappa,accuracy``."""
        auc = np.array([m.auc for m in folds])
        kappa = np.array([m.kappa for m in folds])
        acc = np.array([m.accuracy for m in folds])
        with _open_csv(output_path) as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["fold", "auc", "kappa", "accuracy"])
            for i, m in enumerate(folds):
                writer.writerow([i, _fmt(m.auc), _fmt(m.kappa), _fmt(m.accuracy)])
            writer.writerow(["mean", _fmt(auc.mean()), _fmt(kappa.mean()), _fmt(acc.mean())])
            writer.writerow(["std", _fmt(auc.std()), _fmt(kappa.std()), _fmt(acc.std())])
