"""Numerically stable softmax helpers."""

import numpy as np


def row_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits of a row softmax, given the gradient w.r.t. its output."""
    inner = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)
