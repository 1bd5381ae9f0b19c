"""Graph Laplacian attention and the plain self-attention baseline."""

import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from glat.analyzers.graph import apply_filter, laplacian_powers
from glat.exceptions import DimensionMismatchError
from glat.models import GlatLayerParams, LaplacianBundle
from glat.utils.numerics import row_softmax


class AttentionPass(NamedTuple):
    """Intermediate values of one forward pass, kept for the backward pass."""

    e: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    qf: np.ndarray
    kf: np.ndarray
    vf: np.ndarray
    powers: Optional[List[np.ndarray]]
    l_theta: Optional[np.ndarray]
    heads: List[np.ndarray]
    h: np.ndarray

    @property
    def attention(self) -> np.ndarray:
        """Head-averaged attention (the attention itself when there is one head)."""
        if len(self.heads) == 1:
            return self.heads[0]
        return np.mean(self.heads, axis=0)


def graph_bias(bundle: LaplacianBundle, mode: str) -> np.ndarray:
    """Bias matrix B added (times lambda) to the attention logits."""
    if mode == "laplacian":
        return bundle.lap
    if mode == "negative-laplacian":
        return -bundle.lap
    if mode == "adjacency":
        return bundle.w
    raise ValueError(f"Unknown graph bias mode: {mode}")


def head_slices(width: int, heads: int) -> List[slice]:
    step = width // heads
    return [slice(i * step, (i + 1) * step) for i in range(heads)]


def _attend(
    qf: np.ndarray, kf: np.ndarray, vf: np.ndarray, bias: Optional[np.ndarray], heads: int
) -> Tuple[List[np.ndarray], np.ndarray]:
    qk_slices = head_slices(qf.shape[1], heads)
    v_slices = head_slices(vf.shape[1], heads)
    attn, outputs = [], []
    for qs, vs in zip(qk_slices, v_slices):
        logits = qf[:, qs] @ kf[:, qs].T
        if bias is not None:
            logits = logits + bias
        a = row_softmax(logits / math.sqrt(qs.stop - qs.start))
        attn.append(a)
        outputs.append(a @ vf[:, vs])
    return attn, np.concatenate(outputs, axis=1)


def _check_input(e: np.ndarray, params: GlatLayerParams) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] < 1:
        raise DimensionMismatchError(f"Expected a non-empty M x d matrix, got shape {e.shape}")
    if e.shape[1] != params.d:
        raise DimensionMismatchError(f"Embeddings have d={e.shape[1]}, projections expect {params.d}")
    return e


def gla_forward(
    e_sel: np.ndarray,
    bundle: LaplacianBundle,
    params: GlatLayerParams,
    node_ids: Optional[Sequence[int]] = None,
) -> AttentionPass:
    """Graph Laplacian attention, returning every intermediate value."""
    e = _check_input(e_sel, params)
    if bundle.size != e.shape[0]:
        raise DimensionMismatchError(f"Bundle has {bundle.size} nodes, embeddings have {e.shape[0]}")
    if node_ids is not None and tuple(int(i) for i in node_ids) != bundle.node_ids:
        raise DimensionMismatchError("Node order of embeddings and graph bundle differ")

    q, k, v = e @ params.wq, e @ params.wk, e @ params.wv
    powers = laplacian_powers(bundle.lap, params.filter.order)
    l_theta = sum(c * p for c, p in zip(params.filter.coeffs, powers))
    qf, kf, vf = apply_filter(l_theta, q, k, v)
    bias = params.lambda_ * graph_bias(bundle, params.graph_bias)
    heads, h = _attend(qf, kf, vf, bias, params.heads)
    return AttentionPass(e, q, k, v, qf, kf, vf, powers, l_theta, heads, h)


def msa_forward(e_sel: np.ndarray, params: GlatLayerParams) -> AttentionPass:
    """Scaled dot-product attention with the same projections, no filter, no bias."""
    e = _check_input(e_sel, params)
    q, k, v = e @ params.wq, e @ params.wk, e @ params.wv
    heads, h = _attend(q, k, v, None, params.heads)
    return AttentionPass(e, q, k, v, q, k, v, None, None, heads, h)


def gla_attention(
    e_sel: np.ndarray,
    bundle: LaplacianBundle,
    params: GlatLayerParams,
    node_ids: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    A' = softmax((Q'K'^T + lambda B) / sqrt(d_k)), H = A'V'.

    Q', K', V' are the projections filtered by L_theta; B is L, -L or W
    depending on ``params.graph_bias``.

    Args:
        e_sel: M x d embeddings of the selected patches
        bundle: Graph over the same M nodes in the same order
        params: Layer parameters
        node_ids: Optional ids of the rows of ``e_sel``, checked against the bundle

    Returns:
        (A', H) with A' M x M (head-averaged) and H M x d_v
    """
    result = gla_forward(e_sel, bundle, params, node_ids)
    return result.attention, result.h


def msa_baseline(e_sel: np.ndarray, params: GlatLayerParams) -> Tuple[np.ndarray, np.ndarray]:
    """Plain self-attention (A, H) used for the GLA-versus-MSA comparison."""
    result = msa_forward(e_sel, params)
    return result.attention, result.h
