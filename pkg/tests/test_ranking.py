import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgxk import Query
from kgxk.backbone import ScoreVector
from kgxk.errors import ContractError
from kgxk.graph import FilterIndex, Triple, Vocab
from kgxk.ranking import RankingMetrics, evaluate_model, rank_metrics

from conftest import chain_graph


def _sort_oracle(scores, candidates, answer):
    """Mean rank among candidates with ties averaged, 1-based."""
    sel = np.flatnonzero(candidates)
    vals = scores[sel]
    target = scores[answer]
    greater = np.sum(vals > target)
    equal = np.sum(vals == target)  # includes the answer itself
    # average position of the tied block: first tied slot is greater+1,
    # last is greater+equal; the answer sits at the block mean
    return greater + (1 + equal) / 2.0


def test_rank_hand_example_five_way_tie():
    # answer tied with 4 others at the top: positions 1..5, mean rank 3
    scores = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.2])
    q = Query(0, 0, 2)
    rank, recip = rank_metrics(ScoreVector(scores, q), q, np.ones(6, dtype=bool))
    assert rank == 3.0
    assert recip == pytest.approx(1 / 3)


def test_rank_hand_example_mrr():
    # two queries ranked 1 and 4 -> MRR (1 + 0.25) / 2 = 0.625
    s1 = np.array([5.0, 1.0, 0.0])
    s2 = np.array([1.0, 2.0, 3.0, 4.0])
    q1, q2 = Query(0, 0, 0), Query(0, 0, 0)
    _, r1 = rank_metrics(ScoreVector(s1, q1), q1, np.ones(3, dtype=bool))
    _, r2 = rank_metrics(ScoreVector(s2, q2), q2, np.ones(4, dtype=bool))
    assert (r1 + r2) / 2 == pytest.approx(0.625)


def test_rank_filtering_excludes_candidates():
    scores = np.array([9.0, 8.0, 7.0])
    q = Query(0, 0, 2)
    cand = np.array([False, True, True])  # entity 0 filtered away
    rank, _ = rank_metrics(ScoreVector(scores, q), q, cand)
    assert rank == 2.0


def test_rank_requires_answer_in_candidates():
    q = Query(0, 0, 1)
    with pytest.raises(ContractError):
        rank_metrics(ScoreVector(np.ones(3), q), q,
                     np.array([True, False, True]))
    qa = Query(0, 0, None)
    with pytest.raises(ContractError):
        rank_metrics(ScoreVector(np.ones(3), qa), qa, np.ones(3, dtype=bool))
    with pytest.raises(ContractError):
        rank_metrics(ScoreVector(np.ones(3), q), q, np.ones(4, dtype=bool))


@pytest.mark.parametrize("seed", range(10))
def test_rank_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 1000))
    # quantized scores force ties
    scores = np.round(rng.normal(size=n), 1)
    cand = rng.random(n) < 0.8
    answer = int(rng.integers(n))
    cand[answer] = True
    q = Query(0, 0, answer)
    rank, recip = rank_metrics(ScoreVector(scores, q), q, cand)
    assert rank == _sort_oracle(scores, cand, answer)
    assert recip == 1.0 / rank


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_rank_oracle_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    scores = rng.integers(0, 5, size=n).astype(float)  # heavy ties
    answer = int(rng.integers(n))
    cand = rng.random(n) < 0.7
    cand[answer] = True
    q = Query(0, 0, answer)
    rank, _ = rank_metrics(ScoreVector(scores, q), q, cand)
    assert rank == _sort_oracle(scores, cand, answer)
    assert 1.0 <= rank <= cand.sum()


def test_metrics_monotone_hits_enforced():
    with pytest.raises(ContractError):
        RankingMetrics(0.5, {1: 0.9, 3: 0.2}, 4)
    m = RankingMetrics(0.5, {1: 0.2, 3: 0.5, 10: 0.9}, 4)
    assert m.hits_at[10] == 0.9


def test_evaluate_model_full_graph_and_views(pipeline):
    g = pipeline.g
    qs = pipeline.explain_queries("valid")
    full = evaluate_model(pipeline.backbone, g, qs, pipeline.filter_index)
    assert full.n_queries == len(qs)
    assert 0.0 <= full.mrr <= 1.0
    views = [g.full_view() for _ in qs]
    per_view = evaluate_model(pipeline.backbone, views, qs, pipeline.filter_index)
    assert per_view.mrr == pytest.approx(full.mrr)
    assert np.array_equal(per_view.ranks, full.ranks)


def test_evaluate_model_rejects_single_view(pipeline):
    qs = pipeline.explain_queries("valid")
    with pytest.raises(ContractError):
        evaluate_model(pipeline.backbone, pipeline.g.full_view(), qs,
                       pipeline.filter_index)
    with pytest.raises(ContractError):
        evaluate_model(pipeline.backbone, pipeline.g, [], pipeline.filter_index)


def test_evaluate_model_view_count_mismatch(pipeline):
    g = pipeline.g
    qs = pipeline.explain_queries("valid")
    with pytest.raises(ContractError):
        evaluate_model(pipeline.backbone, [g.full_view()], qs,
                       pipeline.filter_index)


def test_evaluate_filtering_changes_rank():
    # two known answers for one (h, r): each query filters out the other
    g = chain_graph(2)
    vocab = g.vocab

    class Const:
        """Stand-in handle scoring entity ids ascending."""

    triples = [Triple(0, 0, 1), Triple(0, 0, 2)]
    fi = FilterIndex([triples], vocab)
    q = Query(0, 0, 1)
    cand = np.ones(3, dtype=bool)
    from kgxk.graph import filtered_candidates

    mask = filtered_candidates(q, fi, 3)
    assert not mask[2] and mask[1]
    scores = np.array([0.0, 1.0, 2.0])
    rank_unfiltered, _ = rank_metrics(ScoreVector(scores, q), q, cand)
    rank_filtered, _ = rank_metrics(ScoreVector(scores, q), q, mask)
    assert rank_unfiltered == 2.0 and rank_filtered == 1.0
