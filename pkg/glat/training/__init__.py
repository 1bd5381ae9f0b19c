"""Slide-level head, loss with analytic gradients, optimizer and training loop."""

from glat.training.head import forward_slide, init_model_params
from glat.training.loss import backward_gradients, finite_diff_check, total_loss
from glat.training.optimizer import adam_step
from glat.training.trainer import EarlyStopping, train_loop

__all__ = [
    "forward_slide",
    "init_model_params",
    "total_loss",
    "backward_gradients",
    "finite_diff_check",
    "adam_step",
    "EarlyStopping",
    "train_loop",
]
