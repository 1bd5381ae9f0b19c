"""Total loss, analytic gradients and the finite-difference check."""

import math
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from glat.analyzers.attention import head_slices
from glat.exceptions import DimensionMismatchError, NonFiniteGradientError
from glat.models import FiniteDiffReport, LaplacianBundle, ModelParams, WSIBag
from glat.training.head import SampleForward, cross_entropy, forward_slide
from glat.utils.numerics import softmax_backward

Gradients = Dict[str, np.ndarray]


class LossBreakdown(NamedTuple):
    """Batch loss and its two terms, plus per-slide values."""

    total: float
    cross_entropy: float
    smoothness: float
    per_sample_ce: List[float]
    per_sample_smoothness: List[float]


def _check_batch(batch: Sequence[WSIBag], bundles: Sequence[Optional[LaplacianBundle]]) -> None:
    if not batch:
        raise ValueError("Empty batch")
    if len(batch) != len(bundles):
        raise DimensionMismatchError(f"{len(bundles)} graph bundles for {len(batch)} slides")


def _forward_batch(
    batch: Sequence[WSIBag],
    params: ModelParams,
    bundles: Sequence[Optional[LaplacianBundle]],
) -> List[SampleForward]:
    return [
        forward_slide(bag.patches.embeddings(), bundle, params)
        for bag, bundle in zip(batch, bundles)
    ]


def _breakdown(
    batch: Sequence[WSIBag], forwards: Sequence[SampleForward], alpha: float
) -> LossBreakdown:
    ce = [cross_entropy(f.logits, bag.label.class_index) for bag, f in zip(batch, forwards)]
    smooth = [f.smoothness for f in forwards]
    mean_ce = sum(ce) / len(ce)
    mean_smooth = sum(smooth) / len(smooth)
    return LossBreakdown(mean_ce + alpha * mean_smooth, mean_ce, mean_smooth, ce, smooth)


def total_loss(
    batch: Sequence[WSIBag],
    params: ModelParams,
    alpha: float,
    bundles: Sequence[Optional[LaplacianBundle]],
) -> LossBreakdown:
    """
    Mean cross-entropy plus alpha times the mean smoothness penalty.

    Args:
        batch: Labeled slides
        params: Model parameters
        alpha: Smoothness weight
        bundles: One graph bundle per slide, same order

    Returns:
        LossBreakdown with the total, both terms and per-slide values
    """
    _check_batch(batch, bundles)
    return _breakdown(batch, _forward_batch(batch, params, bundles), alpha)


def _zeros_like(params: ModelParams) -> Gradients:
    return {name: np.zeros_like(arr) for name, arr in params.arrays().items()}


def _backward_slide(
    fwd: SampleForward,
    label: int,
    params: ModelParams,
    bundle: Optional[LaplacianBundle],
    scale: float,
    alpha: float,
    grads: Gradients,
) -> None:
    """Accumulate ``scale`` times this slide's loss gradient into ``grads``."""
    attn = fwd.attn
    m = attn.h.shape[0]

    # Classifier: softmax cross-entropy.
    dz = fwd.probs.copy()
    dz[label] -= 1.0
    dz *= scale
    grads["cls_w"] += np.outer(dz, fwd.h_wsi)
    grads["cls_b"] += dz

    # Aggregation.
    dh_wsi = params.cls_w.T @ dz
    dh = np.outer(fwd.weights, dh_wsi)
    if params.aggregation == "convex":
        dw = attn.h @ dh_wsi
        grads["agg_logits"][:m] += fwd.weights * (dw - fwd.weights @ dw)

    # Smoothness: d/dH of sum_ij W_ij ||H_i - H_j||^2 is 4 (D - W) H.
    if bundle is not None and alpha:
        w = bundle.w
        lap_w = np.diag(w.sum(axis=1)) - w
        dh += scale * alpha * 4.0 * (lap_w @ attn.h)

    # Attention heads.
    glat = params.glat
    dqf = np.zeros_like(attn.qf)
    dkf = np.zeros_like(attn.kf)
    dvf = np.zeros_like(attn.vf)
    qk_slices = head_slices(glat.d_k, glat.heads)
    v_slices = head_slices(glat.d_v, glat.heads)
    for a, qs, vs in zip(attn.heads, qk_slices, v_slices):
        dh_head = dh[:, vs]
        dvf[:, vs] += a.T @ dh_head
        d_logits = softmax_backward(a, dh_head @ attn.vf[:, vs].T)
        d_logits /= math.sqrt(qs.stop - qs.start)
        dqf[:, qs] += d_logits @ attn.kf[:, qs]
        dkf[:, qs] += d_logits.T @ attn.qf[:, qs]

    # Filter L_theta (a polynomial in the symmetric L, hence symmetric).
    if attn.l_theta is not None:
        f_t = attn.l_theta.T
        dq, dk, dv = f_t @ dqf, f_t @ dkf, f_t @ dvf
        d_filter = dqf @ attn.q.T + dkf @ attn.k.T + dvf @ attn.v.T
        grads["glat.filter"] += np.array([np.sum(d_filter * p) for p in attn.powers])
    else:
        dq, dk, dv = dqf, dkf, dvf

    grads["glat.wq"] += attn.e.T @ dq
    grads["glat.wk"] += attn.e.T @ dk
    grads["glat.wv"] += attn.e.T @ dv


def backward_gradients(
    batch: Sequence[WSIBag],
    params: ModelParams,
    alpha: float,
    bundles: Sequence[Optional[LaplacianBundle]],
):
    """
    Analytic gradients of :func:`total_loss` for every trainable array.

    Slides are accumulated sequentially in batch order. Frozen scorer
    projections are not part of ``params`` and receive nothing.

    Args:
        batch: Labeled slides
        params: Model parameters
        alpha: Smoothness weight
        bundles: One graph bundle per slide

    Returns:
        (LossBreakdown, gradients keyed like ``ModelParams.arrays()``)

    Raises:
        NonFiniteGradientError: Naming the first parameter with a non-finite entry
    """
    _check_batch(batch, bundles)
    forwards = _forward_batch(batch, params, bundles)
    grads = _zeros_like(params)
    scale = 1.0 / len(batch)
    for bag, bundle, fwd in zip(batch, bundles, forwards):
        _backward_slide(fwd, bag.label.class_index, params, bundle, scale, alpha, grads)

    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)
    return _breakdown(batch, forwards, alpha), grads


def finite_diff_check(
    batch: Sequence[WSIBag],
    params: ModelParams,
    alpha: float,
    bundles: Sequence[Optional[LaplacianBundle]],
    step: float = 1e-5,
    loss_fn=None,
    grad_fn=None,
) -> FiniteDiffReport:
    """
    Compare analytic gradients with central differences, entry by entry.

    Relative error is |a - g| / max(|a|, |g|, 1e-8).

    Args:
        batch: Labeled slides
        params: Model parameters
        alpha: Smoothness weight
        bundles: One graph bundle per slide
        step: Difference step h (> 0)
        loss_fn: Optional ``params -> float`` replacing :func:`total_loss`
        grad_fn: Optional ``params -> gradients`` replacing :func:`backward_gradients`

    Returns:
        FiniteDiffReport with the largest relative error per parameter
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if loss_fn is None:
        loss_fn = lambda p: total_loss(batch, p, alpha, bundles).total  # noqa: E731
    if grad_fn is None:
        grad_fn = lambda p: backward_gradients(batch, p, alpha, bundles)[1]  # noqa: E731

    analytic = grad_fn(params)
    errors: Dict[str, float] = {}
    for name, base in params.arrays().items():
        worst = 0.0
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += step
            minus[idx] -= step
            numeric = (
                loss_fn(params.with_arrays({name: plus}))
                - loss_fn(params.with_arrays({name: minus}))
            ) / (2.0 * step)
            a = float(analytic[name][idx])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
        errors[name] = worst
    return FiniteDiffReport(max_rel_error=errors, step=step)
