"""Convex aggregation, classification head and the per-slide forward pass."""

import math
from typing import NamedTuple, Optional

import numpy as np

from glat.analyzers.attention import AttentionPass, gla_forward, msa_forward
from glat.analyzers.graph import pairwise_sq_distances
from glat.exceptions import DimensionMismatchError
from glat.models import (
    NUM_CLASSES,
    FilterParams,
    GlatLayerParams,
    LaplacianBundle,
    ModelParams,
)
from glat.utils.numerics import row_softmax
from glat.utils.prng import SplitMix64


def convex_weights(theta: np.ndarray) -> np.ndarray:
    """w = softmax(theta): non-negative, sums to one."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size < 1:
        raise ValueError("theta must be a non-empty vector")
    return row_softmax(theta)


def aggregate_wsi(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """H_WSI = sum_i w_i H_i."""
    if h.shape[0] != w.shape[0]:
        raise DimensionMismatchError(f"{w.shape[0]} weights for {h.shape[0]} rows")
    return w @ h


def classify(h_wsi: np.ndarray, cls_w: np.ndarray, cls_b: np.ndarray) -> np.ndarray:
    """Class probabilities softmax(cls_W h + cls_b)."""
    if cls_w.shape != (cls_b.size, h_wsi.size):
        raise DimensionMismatchError(
            f"Classifier {cls_w.shape} does not fit a {h_wsi.size}-d input with {cls_b.size} classes"
        )
    return row_softmax(cls_w @ h_wsi + cls_b)


def smoothness_penalty(h: np.ndarray, w: np.ndarray) -> float:
    """sum over ordered pairs (i, j) of W_ij ||H_i - H_j||^2."""
    if w.shape != (h.shape[0], h.shape[0]):
        raise DimensionMismatchError(f"Adjacency {w.shape} does not match {h.shape[0]} rows")
    return float(np.sum(w * pairwise_sq_distances(h)))


class SampleForward(NamedTuple):
    """Forward pass of one slide."""

    attn: AttentionPass
    weights: np.ndarray
    h_wsi: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    smoothness: float


def forward_slide(
    e_sel: np.ndarray, bundle: Optional[LaplacianBundle], params: ModelParams
) -> SampleForward:
    """
    Attention, aggregation and classification for one slide.

    Args:
        e_sel: M x d embeddings of the selected patches
        bundle: Graph over the same patches (required for GLA and the penalty)
        params: Model parameters

    Returns:
        SampleForward with every intermediate needed by the backward pass
    """
    m = e_sel.shape[0]
    if m > params.m_max:
        raise DimensionMismatchError(f"Slide has {m} patches, aggregation supports {params.m_max}")

    if params.attention == "gla":
        attn = gla_forward(e_sel, bundle, params.glat)
    else:
        attn = msa_forward(e_sel, params.glat)

    if params.aggregation == "convex":
        weights = convex_weights(params.agg_logits[:m])
    else:
        weights = np.full(m, 1.0 / m)

    h_wsi = aggregate_wsi(attn.h, weights)
    logits = params.cls_w @ h_wsi + params.cls_b
    probs = row_softmax(logits)
    smoothness = smoothness_penalty(attn.h, bundle.w) if bundle is not None else 0.0
    return SampleForward(attn, weights, h_wsi, logits, probs, smoothness)


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], computed via log-sum-exp."""
    top = np.max(logits)
    return float(top + math.log(np.sum(np.exp(logits - top))) - logits[label])


def init_model_params(
    d: int,
    d_k: int = 16,
    d_v: int = 16,
    m_max: int = 32,
    seed: int = 0,
    filter_order: int = 2,
    lambda_: float = 0.1,
    graph_bias: str = "laplacian",
    heads: int = 1,
    attention: str = "gla",
    aggregation: str = "convex",
    n_classes: int = NUM_CLASSES,
) -> ModelParams:
    """
    Initial parameters: projections N(0, 1/d), identity filter, zero logits and classifier.

    At this point the model is plain self-attention with uniform aggregation.
    """
    rng = SplitMix64(seed)
    scale = 1.0 / math.sqrt(d)
    glat = GlatLayerParams(
        wq=rng.normal((d, d_k), scale=scale),
        wk=rng.normal((d, d_k), scale=scale),
        wv=rng.normal((d, d_v), scale=scale),
        filter=FilterParams.identity(filter_order),
        lambda_=lambda_,
        graph_bias=graph_bias,
        heads=heads,
    )
    return ModelParams(
        glat=glat,
        agg_logits=np.zeros(m_max),
        cls_w=np.zeros((n_classes, d_v)),
        cls_b=np.zeros(n_classes),
        attention=attention,
        aggregation=aggregation,
    )
