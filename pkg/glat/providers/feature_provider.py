"""Pluggable stand-ins for the local extractor and the frozen scorer weights."""

import math

import numpy as np
from loguru import logger

from glat.exceptions import DimensionMismatchError
from glat.models import EmbeddingTable, FeatureProviderSpec, FrozenProjections
from glat.utils.prng import SplitMix64


def random_projection_matrix(seed: int, d: int, out_dim: int) -> np.ndarray:
    """Seeded d x out_dim matrix with N(0, 1/d) entries."""
    return SplitMix64(seed).normal((d, out_dim), scale=1.0 / math.sqrt(d))


def make_frozen_projections(
    seed: int, d: int, d_k: int, d_v: int, tie_qk: bool = True
) -> FrozenProjections:
    """
    Draw the fixed W_Q, W_K, W_V of the frozen scorer.

    Entries are N(0, 1/d) from one splitmix64 stream, drawn in the order
    W_Q, W_K, W_V (row-major). With ``tie_qk`` the drawn W_K is replaced by
    W_Q, so Q K^T = E W_Q W_Q^T E^T is a positive semidefinite similarity
    kernel and every patch has a non-negative affinity with its own copies.
    W_V is the same in both modes.

    Args:
        seed: Stream seed
        d: Input embedding dimension
        d_k: Query/key width
        d_v: Value width
        tie_qk: Use W_Q as W_K

    Returns:
        FrozenProjections fully determined by (seed, d, d_k, d_v, tie_qk)
    """
    if min(d, d_k, d_v) < 1:
        raise ValueError(f"Dimensions must be >= 1, got d={d}, d_k={d_k}, d_v={d_v}")

    rng = SplitMix64(seed)
    scale = 1.0 / math.sqrt(d)
    w_q = rng.normal((d, d_k), scale=scale)
    w_k = rng.normal((d, d_k), scale=scale)
    w_v = rng.normal((d, d_v), scale=scale)
    return FrozenProjections(
        w_q=w_q,
        w_k=w_q if tie_qk else w_k,
        w_v=w_v,
        seed=seed,
        d_k=d_k,
        d_v=d_v,
    )


def identity_projections(d: int) -> FrozenProjections:
    """Scorer without learned weights: Q = K = V = E, so ranking uses the local embeddings."""
    if d < 1:
        raise ValueError(f"Dimension must be >= 1, got d={d}")
    eye = np.eye(d)
    return FrozenProjections(w_q=eye, w_k=eye, w_v=eye, seed=0, d_k=d, d_v=d)


class FeatureProvider:
    """Local feature extractor selected by ``FeatureProviderSpec.kind``."""

    def __init__(self, spec: FeatureProviderSpec):
        """
        Initialize provider.

        Args:
            spec: Provider kind, seed and output dimension
        """
        self.spec = spec
        if spec.kind == "passthrough":
            self._extract = self._extract_passthrough
        elif spec.kind == "random-projection":
            self._extract = self._extract_random_projection
        else:
            raise ValueError(f"Unsupported feature provider: {spec.kind}")

    def extract(self, table: EmbeddingTable) -> EmbeddingTable:
        """Embed every patch of ``table``."""
        return self._extract(table)

    def _extract_passthrough(self, table: EmbeddingTable) -> EmbeddingTable:
        return table

    def _extract_random_projection(self, table: EmbeddingTable) -> EmbeddingTable:
        r = random_projection_matrix(self.spec.seed, table.d, self.spec.out_dim)
        logger.debug(
            "Projecting {} patches {} -> {} (seed {})",
            len(table), table.d, self.spec.out_dim, self.spec.seed,
        )
        return table.with_embeddings(table.embeddings() @ r)


def local_extract(spec: FeatureProviderSpec, table: EmbeddingTable) -> EmbeddingTable:
    """Apply the provider described by ``spec`` to ``table``."""
    return FeatureProvider(spec).extract(table)


def check_projection_dim(table: EmbeddingTable, proj: FrozenProjections) -> None:
    """Raise if the table's embeddings do not fit the frozen projections."""
    if table.d != proj.d:
        raise DimensionMismatchError(
            f"Embedding dimension {table.d} does not match frozen projections (d={proj.d})"
        )
