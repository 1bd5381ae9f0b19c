"""Similarity graph, combinatorial Laplacian and the polynomial filter L_theta."""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from glat.exceptions import DimensionMismatchError
from glat.models import FilterParams, LaplacianBundle

MAX_FILTER_ORDER = 4

Sigma = Union[float, str]


def pairwise_sq_distances(embeddings: np.ndarray) -> np.ndarray:
    """M x M squared Euclidean distances; exactly symmetric with a zero diagonal."""
    diff = embeddings[:, None, :] - embeddings[None, :, :]
    return np.sum(diff * diff, axis=-1)


def median_sigma(sq_dist: np.ndarray) -> float:
    """Median of the nonzero pairwise distances (unordered pairs), or 1.0 if none."""
    upper = np.sqrt(sq_dist[np.triu_indices(sq_dist.shape[0], k=1)])
    nonzero = upper[upper > 0]
    if nonzero.size == 0:
        return 1.0
    return float(np.median(nonzero))


def resolve_sigma(embeddings: np.ndarray, sigma: Sigma) -> float:
    """Turn ``'median'`` or a positive float into a kernel width."""
    if isinstance(sigma, str):
        if sigma != "median":
            raise ValueError(f"sigma must be 'median' or a positive float, got {sigma!r}")
        return median_sigma(pairwise_sq_distances(embeddings))
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return float(sigma)


def adjacency_gaussian(embeddings: np.ndarray, sigma: Sigma = "median") -> np.ndarray:
    """
    Gaussian-kernel adjacency W_ij = exp(-||E_i - E_j||^2 / (2 sigma^2)).

    Args:
        embeddings: M x d matrix (M >= 1)
        sigma: Kernel width or ``'median'``

    Returns:
        Symmetric M x M matrix with unit diagonal
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] < 1:
        raise ValueError(f"Expected a non-empty M x d matrix, got shape {embeddings.shape}")
    if not np.all(np.isfinite(embeddings)):
        raise ValueError("Embeddings must be finite")

    width = resolve_sigma(embeddings, sigma)
    return np.exp(-pairwise_sq_distances(embeddings) / (2.0 * width * width))


def laplacian(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Degree matrix and combinatorial Laplacian of a symmetric adjacency.

    Args:
        w: Symmetric M x M adjacency

    Returns:
        (D, L) with D_ii = sum_j W_ij and L = D - W
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionMismatchError(f"Adjacency must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("Adjacency must be finite")
    if np.max(np.abs(w - w.T), initial=0.0) > 1e-12:
        raise ValueError("Adjacency is not symmetric")

    deg = np.diag(w.sum(axis=1))
    return deg, deg - w


def build_bundle(
    embeddings: np.ndarray,
    sigma: Sigma = "median",
    node_ids: Optional[Sequence[int]] = None,
) -> LaplacianBundle:
    """Adjacency, degree and Laplacian over the given node order."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    width = resolve_sigma(embeddings, sigma) if embeddings.size else 1.0
    w = adjacency_gaussian(embeddings, width)
    deg, lap = laplacian(w)
    if node_ids is None:
        node_ids = range(w.shape[0])
    return LaplacianBundle(
        w=w, deg=deg, lap=lap, sigma=width, node_ids=tuple(int(i) for i in node_ids)
    )


def laplacian_powers(lap: np.ndarray, order: int) -> List[np.ndarray]:
    """[I, L, L^2, ..., L^order] by repeated multiplication."""
    if order > MAX_FILTER_ORDER:
        raise ValueError(f"Filter order {order} exceeds {MAX_FILTER_ORDER}")
    powers = [np.eye(lap.shape[0])]
    for _ in range(order):
        powers.append(powers[-1] @ lap)
    return powers


def filter_matrix(params: FilterParams, lap: np.ndarray) -> np.ndarray:
    """
    L_theta = c_0 I + sum_k c_k L^k.

    Args:
        params: Polynomial coefficients (order <= 4)
        lap: M x M Laplacian

    Returns:
        M x M filter matrix
    """
    powers = laplacian_powers(lap, params.order)
    return sum(c * p for c, p in zip(params.coeffs, powers))


def apply_filter(
    l_theta: np.ndarray, q: np.ndarray, k: np.ndarray, v: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(L_theta Q, L_theta K, L_theta V)."""
    m = l_theta.shape[0]
    for name, mat in (("Q", q), ("K", k), ("V", v)):
        if mat.shape[0] != m:
            raise DimensionMismatchError(f"{name} has {mat.shape[0]} rows, filter is {m} x {m}")
    return l_theta @ q, l_theta @ k, l_theta @ v
