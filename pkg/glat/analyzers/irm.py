"""Iterative refinement: frozen-attention scoring and progressive top-M selection."""

import math
from typing import List, Literal, Sequence

import numpy as np
from loguru import logger

from glat.exceptions import DimensionMismatchError
from glat.models import (
    AttentionMap,
    EmbeddingTable,
    FrozenProjections,
    IrmIteration,
    IrmResult,
    SelectionState,
)
from glat.providers.feature_provider import check_projection_dim
from glat.utils.numerics import row_softmax
from glat.utils.prng import SplitMix64

ScoreMode = Literal["received", "row-mean"]


def attention_matrix(pool: EmbeddingTable, proj: FrozenProjections) -> AttentionMap:
    """
    Frozen self-attention over a pool of patches.

    A = row-softmax(Q K^T / sqrt(d_k)) with Q = E W_Q, K = E W_K.

    Args:
        pool: Patches to attend over (non-empty)
        proj: Frozen projections

    Returns:
        AttentionMap aligned with the pool's id order
    """
    if len(pool) == 0:
        raise ValueError("Cannot score an empty pool")
    check_projection_dim(pool, proj)

    e = pool.embeddings()
    q = e @ proj.w_q
    k = e @ proj.w_k
    a = row_softmax(q @ k.T / math.sqrt(proj.d_k))
    return AttentionMap(matrix=a, pool_ids=tuple(pool.ids()))


def refine_embeddings(
    pool: EmbeddingTable, attn: AttentionMap, proj: FrozenProjections
) -> np.ndarray:
    """E' = A (E W_V): context-aggregated embeddings of the pool (P x d_v)."""
    if tuple(pool.ids()) != attn.pool_ids:
        raise DimensionMismatchError("Attention map was built over a different pool")
    check_projection_dim(pool, proj)
    return attn.matrix @ (pool.embeddings() @ proj.w_v)


def importance_scores(attn: AttentionMap, mode: ScoreMode = "received") -> np.ndarray:
    """
    Per-patch importance.

    ``received`` is the mean attention a patch receives (column mean).
    ``row-mean`` is the mean of the patch's own row, which is 1/P for every
    patch; rows are snapped to 12 decimals so the scores tie exactly.

    Args:
        attn: Row-stochastic attention
        mode: ``received`` or ``row-mean``

    Returns:
        Scores aligned with ``attn.pool_ids``
    """
    p = len(attn.pool_ids)
    if mode == "received":
        return attn.matrix.sum(axis=0) / p
    if mode == "row-mean":
        return np.round(attn.matrix.sum(axis=1), 12) / p
    raise ValueError(f"Unknown score mode: {mode}")


def select_top_m(scores: Sequence[float], pool_ids: Sequence[int], m: int) -> List[int]:
    """
    Ids of the ``m`` highest scores, ties to the smaller id, returned ascending.

    Args:
        scores: One score per pool id
        pool_ids: Patch ids
        m: Number to keep (>= 1)

    Returns:
        min(m, P) ids in ascending order
    """
    if m < 1:
        raise ValueError(f"M must be >= 1, got {m}")
    if len(scores) != len(pool_ids):
        raise DimensionMismatchError(f"{len(scores)} scores for {len(pool_ids)} ids")

    ids = np.asarray(pool_ids, dtype=np.int64)
    # lexsort keys: last is primary
    order = np.lexsort((ids, -np.asarray(scores, dtype=np.float64)))
    return sorted(int(i) for i in ids[order[:m]])


def partition_ids(ids: Sequence[int], t_total: int, shuffle_seed: int) -> List[List[int]]:
    """
    Shuffle ids with the seed, then cut into ``t_total`` contiguous subsets.

    The first T-1 subsets hold floor(N/T) ids; the last takes the remainder.
    """
    n = len(ids)
    if t_total > n:
        raise ValueError(f"T={t_total} exceeds the {n} available patches")

    perm = SplitMix64(shuffle_seed).permutation(n)
    shuffled = [int(ids[i]) for i in perm]
    size = n // t_total
    subsets = [shuffled[t * size:(t + 1) * size] for t in range(t_total - 1)]
    subsets.append(shuffled[(t_total - 1) * size:])
    return subsets


def irm_run(
    table: EmbeddingTable,
    proj: FrozenProjections,
    m: int,
    t_total: int,
    shuffle_seed: int = 0,
    mode: ScoreMode = "received",
) -> IrmResult:
    """
    Progressive top-M selection.

    Iteration 0 scores subset 0; iteration t > 0 scores the previous
    selection together with subset t. Scores are normalized by the actual
    pool size.

    Args:
        table: All patches of the slide
        proj: Frozen scorer projections
        m: Patches to keep
        t_total: Number of iterations T (<= N)
        shuffle_seed: Seed of the subset partition
        mode: Importance score mode

    Returns:
        IrmResult with the final SelectionState and the per-iteration trace
    """
    if len(table) == 0:
        raise ValueError("Cannot select from an empty table")
    if m < 1 or t_total < 1:
        raise ValueError(f"M and T must be >= 1, got M={m}, T={t_total}")

    subsets = partition_ids(table.ids(), t_total, shuffle_seed)
    selected: List[int] = []
    selected_scores: List[float] = []
    trace: List[IrmIteration] = []

    for t, subset in enumerate(subsets):
        pool = table.subset(sorted(set(selected) | set(subset)))
        attn = attention_matrix(pool, proj)
        refined = refine_embeddings(pool, attn, proj)
        scores = importance_scores(attn, mode)
        selected = select_top_m(scores, attn.pool_ids, m)

        position = {pid: i for i, pid in enumerate(attn.pool_ids)}
        selected_scores = [float(scores[position[pid]]) for pid in selected]
        trace.append(
            IrmIteration(
                t=t,
                pool_ids=attn.pool_ids,
                scores=tuple(float(s) for s in scores),
                selected_ids=tuple(selected),
                refined=refined,
            )
        )
        logger.debug(
            "IRM {} t={}: pool {} -> kept {}", table.slide_id, t, len(attn.pool_ids), len(selected)
        )

    state = SelectionState(
        t=t_total,
        selected_ids=tuple(selected),
        scores=tuple(selected_scores),
        m=m,
        t_total=t_total,
    )
    return IrmResult(state=state, trace=tuple(trace))


def random_selection(table: EmbeddingTable, m: int, seed: int = 0) -> List[int]:
    """Ablation baseline: ``m`` ids drawn by a seeded shuffle, ascending."""
    if m < 1:
        raise ValueError(f"M must be >= 1, got {m}")
    ids = table.ids()
    perm = SplitMix64(seed).permutation(len(ids))
    return sorted(int(ids[i]) for i in perm[:m])


class IterativeRefiner:
    """Frozen scorer plus selection settings, applied slide by slide."""

    def __init__(
        self,
        proj: FrozenProjections,
        m: int,
        t_total: int,
        shuffle_seed: int = 0,
        mode: ScoreMode = "received",
    ):
        """
        Initialize refiner.

        Args:
            proj: Frozen projections
            m: Patches to keep
            t_total: Iterations; capped at the slide's patch count
            shuffle_seed: Seed of the subset partition
            mode: Importance score mode
        """
        self.proj = proj
        self.m = m
        self.t_total = t_total
        self.shuffle_seed = shuffle_seed
        self.mode = mode

    def run(self, table: EmbeddingTable) -> IrmResult:
        """Run the selection loop on one slide."""
        t_total = min(self.t_total, len(table))
        return irm_run(table, self.proj, self.m, t_total, self.shuffle_seed, self.mode)

    def select(self, table: EmbeddingTable) -> EmbeddingTable:
        """The slide restricted to its selected patches."""
        return table.subset(self.run(table).state.selected_ids)
