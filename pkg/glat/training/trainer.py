"""Mini-batch training with Adam and early stopping on validation loss."""

import math
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from loguru import logger

from glat.analyzers.graph import Sigma, build_bundle
from glat.analyzers.metrics import auc_metric, kappa_metric
from glat.exceptions import DivergenceError
from glat.models import EpochRecord, LaplacianBundle, ModelParams, TrainConfig, WSIBag
from glat.training.head import forward_slide
from glat.training.loss import backward_gradients, finite_diff_check, total_loss
from glat.training.optimizer import AdamState, adam_step
from glat.utils.prng import SplitMix64, derive_seed


class EarlyStopping:
    """Stop when the validation loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int = 10, min_delta: float = 0.0):
        """
        Initialize the tracker.

        Args:
            patience: Epochs without improvement before stopping (>= 1)
            min_delta: Smallest decrease that counts as an improvement
        """
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.min_delta = min_delta
        self.counter = 0
        self.best_loss: Optional[float] = None
        self.early_stop = False

    def __call__(self, val_loss: float) -> bool:
        """Record a validation loss; returns True if it is a new best."""
        if self.best_loss is None or self.best_loss - val_loss > self.min_delta:
            self.best_loss = val_loss
            self.counter = 0
            return True
        self.counter += 1
        if self.counter >= self.patience:
            self.early_stop = True
        return False


class TrainResult(NamedTuple):
    """Best parameters, per-epoch history and the epoch they came from."""

    params: ModelParams
    history: List[EpochRecord]
    best_epoch: int


def bundles_for(bags: Sequence[WSIBag], sigma: Sigma = "median") -> List[LaplacianBundle]:
    """Graph bundle over each bag's patches, in id order."""
    return [
        build_bundle(bag.patches.embeddings(), sigma, node_ids=bag.patches.ids())
        for bag in bags
    ]


def predict_probs(
    bags: Sequence[WSIBag], bundles: Sequence[LaplacianBundle], params: ModelParams
) -> np.ndarray:
    """N x C class probabilities."""
    return np.array(
        [forward_slide(bag.patches.embeddings(), bundle, params).probs for bag, bundle in zip(bags, bundles)]
    )


def _safe_auc(probs: np.ndarray, labels: Sequence[int]) -> float:
    if len(set(labels)) < 2:
        return float("nan")
    return auc_metric(probs, labels)


def train_loop(
    train: Sequence[WSIBag],
    val: Sequence[WSIBag],
    params: ModelParams,
    config: TrainConfig,
    sigma: Sigma = "median",
) -> TrainResult:
    """
    Train until ``max_epochs`` or until early stopping triggers.

    Batches are drawn from a per-epoch seeded shuffle; gradients are
    accumulated sequentially so reruns are bitwise identical.

    Args:
        train: Training slides
        val: Validation slides
        params: Initial parameters
        config: Optimizer and loop settings
        sigma: Kernel width for the per-slide graphs

    Returns:
        TrainResult holding the parameters of the best validation-loss epoch

    Raises:
        DivergenceError: If a loss becomes non-finite
    """
    if not train or not val:
        raise ValueError("Training and validation sets must be non-empty")

    train_bundles = bundles_for(train, sigma)
    val_bundles = bundles_for(val, sigma)
    val_labels = [bag.label.class_index for bag in val]

    if config.fd_check:
        check_ids = list(range(min(2, len(train))))
        report = finite_diff_check(
            [train[i] for i in check_ids], params, config.alpha, [train_bundles[i] for i in check_ids]
        )
        logger.info("Finite-difference check: worst relative error {:.2e}", report.worst)
        if report.worst > 1e-4:
            logger.warning("Gradient check exceeds 1e-4: {}", report.max_rel_error)

    state = AdamState()
    stopper = EarlyStopping(config.patience)
    best_params, best_epoch = params, 0
    history: List[EpochRecord] = []

    for epoch in range(1, config.max_epochs + 1):
        order = SplitMix64(derive_seed(config.seed, epoch)).permutation(len(train))
        weighted_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [train[i] for i in idx]
            bundles = [train_bundles[i] for i in idx]
            loss, grads = backward_gradients(batch, params, config.alpha, bundles)
            if not math.isfinite(loss.total):
                raise DivergenceError(epoch, loss.total)
            weighted_loss += loss.total * len(batch)
            params, state = adam_step(params, grads, state, config)
        train_loss = weighted_loss / len(train)

        val_loss = total_loss(val, params, config.alpha, val_bundles).total
        if not math.isfinite(val_loss):
            raise DivergenceError(epoch, val_loss)
        probs = predict_probs(val, val_bundles, params)
        pred = np.argmax(probs, axis=1)
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            val_auc=_safe_auc(probs, val_labels),
            val_kappa=kappa_metric(pred, val_labels, config.kappa_weighting),
        )
        history.append(record)
        logger.info(
            "Epoch {}: train {:.4f} val {:.4f} auc {:.3f} kappa {:.3f}",
            epoch, train_loss, val_loss, record.val_auc, record.val_kappa,
        )

        if stopper(val_loss):
            best_params, best_epoch = params, epoch
        if stopper.early_stop:
            logger.info("Early stopping at epoch {} (best {})", epoch, best_epoch)
            break

    return TrainResult(best_params, history, best_epoch)
