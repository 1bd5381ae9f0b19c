"""Tests for frozen-attention scoring and iterative top-M selection."""

import numpy as np
import pytest

from glat.analyzers.irm import (
    IterativeRefiner,
    attention_matrix,
    importance_scores,
    irm_run,
    partition_ids,
    random_selection,
    refine_embeddings,
    select_top_m,
)
from glat.exceptions import DimensionMismatchError
from glat.models import AttentionMap, EmbeddingTable
from glat.providers.feature_provider import make_frozen_projections
from glat.utils.prng import SplitMix64
from tests import oracles


def _table(n: int, d: int = 4, seed: int = 0, scale: float = 1.0) -> EmbeddingTable:
    rng = SplitMix64(seed)
    return EmbeddingTable.from_arrays(
        range(n), [(i % 8, i // 8) for i in range(n)], rng.normal((n, d), scale=scale), slide_id=f"s{seed}"
    )


@pytest.fixture
def proj():
    """Frozen projection fixture (d=4, d_k=3, d_v=2)."""
    return make_frozen_projections(7, 4, 3, 2)


def test_single_patch_attention(proj):
    attn = attention_matrix(_table(1), proj)
    np.testing.assert_array_equal(attn.matrix, [[1.0]])


def test_identical_embeddings_give_uniform_attention(proj):
    table = EmbeddingTable.from_arrays(range(4), [(i, 0) for i in range(4)], np.tile([1.0, -2.0, 0.5, 3.0], (4, 1)))
    attn = attention_matrix(table, proj)
    np.testing.assert_allclose(attn.matrix, 0.25, atol=1e-15)

    refined = refine_embeddings(table, attn, proj)
    v = table.embeddings() @ proj.w_v
    np.testing.assert_allclose(refined, np.tile(v.mean(axis=0), (4, 1)), atol=1e-12)


def test_attention_matches_scalar_oracle(proj):
    table = _table(3, seed=5)
    attn = attention_matrix(table, proj)
    e = table.embeddings().tolist()
    expected = oracles.frozen_attention(e, proj.w_q.tolist(), proj.w_k.tolist())
    np.testing.assert_allclose(attn.matrix, expected, rtol=0, atol=1e-12)

    refined = refine_embeddings(table, attn, proj)
    v = oracles.matmul(e, proj.w_v.tolist())
    np.testing.assert_allclose(refined, oracles.matmul(expected, v), rtol=0, atol=1e-12)


def test_refine_single_patch_is_value_row(proj):
    table = _table(1, seed=2)
    refined = refine_embeddings(table, attention_matrix(table, proj), proj)
    np.testing.assert_array_equal(refined, table.embeddings() @ proj.w_v)


def test_received_scores_are_column_means():
    attn = AttentionMap(matrix=[[0.2, 0.5, 0.3], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]], pool_ids=(0, 1, 2))
    np.testing.assert_allclose(importance_scores(attn, "received"), [0.2, 0.4667, 0.3333], atol=1e-4)


def test_row_mean_scores_are_uniform(proj):
    attn = attention_matrix(_table(5, seed=1), proj)
    scores = importance_scores(attn, "row-mean")
    assert len(set(scores.tolist())) == 1
    assert scores[0] == pytest.approx(1 / 5)


@pytest.mark.parametrize("t_total", [1, 3])
def test_row_mean_selection_keeps_smallest_pool_ids(proj, t_total):
    table = _table(24, seed=9)
    result = irm_run(table, proj, m=5, t_total=t_total, shuffle_seed=4, mode="row-mean")

    for step in result.trace:
        assert list(step.selected_ids) == sorted(step.pool_ids)[:5]
    if t_total == 1:
        assert list(result.state.selected_ids) == [0, 1, 2, 3, 4]


def test_top_m_unambiguous():
    assert select_top_m([0.5, 0.2, 0.9, 0.9], [0, 1, 2, 3], 2) == [2, 3]


def test_top_m_tie_goes_to_smaller_id():
    assert select_top_m([0.4, 0.4, 0.1], [7, 3, 5], 1) == [3]


def test_top_m_matches_sort_oracle():
    rng = SplitMix64(21)
    scores = rng.uniform(20).tolist()
    ids = [int(i) for i in SplitMix64(22).permutation(20) * 3]
    assert select_top_m(scores, ids, 5) == oracles.top_m(scores, ids, 5)


def test_top_m_length_mismatch():
    with pytest.raises(DimensionMismatchError):
        select_top_m([0.1, 0.2], [1], 1)


def test_partition_sizes():
    subsets = partition_ids(list(range(10)), 3, shuffle_seed=4)
    assert [len(s) for s in subsets] == [3, 3, 4]
    assert sorted(sum(subsets, [])) == list(range(10))
    with pytest.raises(ValueError):
        partition_ids([1, 2], 3, 0)


def test_single_iteration_equals_one_pass(proj):
    table = _table(12, seed=3)
    result = irm_run(table, proj, m=4, t_total=1)
    scores = importance_scores(attention_matrix(table, proj), "received")
    assert list(result.state.selected_ids) == select_top_m(scores, table.ids(), 4)
    assert len(result.trace) == 1


def test_all_patches_kept_when_n_equals_m(proj):
    table = _table(6, seed=9)
    result = irm_run(table, proj, m=6, t_total=3, shuffle_seed=1)
    assert list(result.state.selected_ids) == table.ids()
    for step in result.trace:
        assert list(step.selected_ids) == list(step.pool_ids)


def test_irm_matches_step_by_step_oracle(proj):
    table = _table(12, seed=4)
    result = irm_run(table, proj, m=4, t_total=3, shuffle_seed=2)
    expected = oracles.irm_selection(
        table.ids(), table.embeddings().tolist(), proj.w_q.tolist(), proj.w_k.tolist(), 4, 3, 2
    )
    assert list(result.state.selected_ids) == expected
    assert result.state.t == 3
    assert [step.t for step in result.trace] == [0, 1, 2]


@pytest.mark.parametrize("seed", range(50))
def test_irm_random_slides_match_oracle(seed):
    rng = SplitMix64(100 + seed)
    n = int(rng.integers(8, 64))
    t_total = int(rng.integers(1, 4))
    m = int(rng.integers(1, 16))
    proj = make_frozen_projections(seed, 4, 3, 2)
    table = _table(n, seed=seed)

    result = irm_run(table, proj, m=m, t_total=t_total, shuffle_seed=seed)
    expected = oracles.irm_selection(
        table.ids(), table.embeddings().tolist(), proj.w_q.tolist(), proj.w_k.tolist(), m, t_total, seed
    )
    assert list(result.state.selected_ids) == expected


def test_pools_carry_previous_selection(proj):
    result = irm_run(_table(20, seed=6), proj, m=3, t_total=4, shuffle_seed=5)
    for previous, current in zip(result.trace, result.trace[1:]):
        assert set(previous.selected_ids) <= set(current.pool_ids)
        assert len(current.selected_ids) <= 3


def test_refiner_caps_iterations(proj):
    result = IterativeRefiner(proj, m=2, t_total=10).run(_table(4, seed=8))
    assert len(result.trace) == 4


def test_dimension_mismatch(proj):
    with pytest.raises(DimensionMismatchError):
        attention_matrix(_table(3, d=5), proj)


def test_random_selection_is_seeded():
    table = _table(30)
    first = random_selection(table, 5, seed=3)
    assert first == random_selection(table, 5, seed=3)
    assert len(first) == 5 and first == sorted(first)


def test_scores_sum_to_one_under_large_magnitudes(proj):
    for scale in (1e-6, 1e6):
        attn = attention_matrix(_table(6, seed=2, scale=scale), proj)
        assert np.all(np.isfinite(attn.matrix))
        np.testing.assert_allclose(attn.matrix.sum(axis=1), 1.0, atol=1e-9)
