"""Filtered ranking metrics for link prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import ModelHandle, ScoreVector, batch_scores
from .errors import ContractError
from .graph import FilterIndex, KnowledgeGraph, Query, SubgraphView, filtered_candidates

HITS_KS = (1, 3, 10)


@dataclass
class RankingMetrics:
    mrr: float
    hits_at: dict[int, float]
    n_queries: int
    ranks: np.ndarray | None = None

    def __post_init__(self):
        ks = sorted(self.hits_at)
        for a, b in zip(ks, ks[1:]):
            if self.hits_at[a] > self.hits_at[b] + 1e-12:
                raise ContractError("hits@k must be monotone in k")


def rank_metrics(scores: ScoreVector, q: Query, candidates: np.ndarray):
    """(rank, reciprocal) under mean-rank tie handling.

    rank = 1 + #candidates scoring strictly above the answer + half the
    count of other candidates tied with it.
    """
    candidates = np.asarray(candidates, dtype=bool)
    if q.answer is None or not candidates[q.answer]:
        raise ContractError("candidate mask must include the query answer")
    s = scores.scores
    if len(s) != len(candidates):
        raise ContractError("score vector and candidate mask differ in length")
    target = s[q.answer]
    sel = s[candidates]
    greater = int(np.count_nonzero(sel > target))
    equal = int(np.count_nonzero(sel == target)) - 1
    rank = 1.0 + greater + equal / 2.0
    return rank, 1.0 / rank


def _views_to_weights(views, queries):
    views = list(views)
    if len(views) != len(queries):
        raise ContractError(f"{len(views)} views for {len(queries)} queries")
    g = views[0].base
    weights = np.empty((len(views), g.num_edges), dtype=np.float64)
    for i, view in enumerate(views):
        if view.base is not g:
            raise ContractError("all evaluation views must share one base graph")
        weights[i] = view.kept.astype(np.float64)
    return g, weights


def evaluate_model(model: ModelHandle, g_or_views, queries, filter_index: FilterIndex,
                   hits_ks=HITS_KS) -> RankingMetrics:
    """Mean filtered-ranking metrics over queries.

    The second argument is either a graph (every query scored on the full
    edge set) or one SubgraphView per query, e.g. explanation subgraphs.
    """
    queries = list(queries)
    if not queries:
        raise ContractError("evaluate_model requires at least one query")
    if isinstance(g_or_views, KnowledgeGraph):
        g, weights = g_or_views, None
    elif isinstance(g_or_views, SubgraphView):
        raise ContractError("pass a graph or one view per query, not a single view")
    else:
        g, weights = _views_to_weights(g_or_views, queries)
    scores = batch_scores(model, g, queries, weights)
    ranks = np.empty(len(queries))
    for i, q in enumerate(queries):
        candidates = filtered_candidates(q, filter_index, g.num_entities)
        ranks[i], _ = rank_metrics(ScoreVector(scores[i], q), q, candidates)
    mrr = float(np.mean(1.0 / ranks))
    hits = {int(k): float(np.mean(ranks <= k)) for k in hits_ks}
    return RankingMetrics(mrr, hits, len(queries), ranks=ranks)
