"""Mask-based explanation baselines without the connectivity signal.

Two comparison points for the protocol: a per-query free mask optimized from
scratch (slow, transductive) and the shared parameterized mask net trained
with both walk weights at zero (inductive, possibly disconnected output).
Both reuse the explainer's fidelity loss and regularizers so the only
difference under study is the structural constraint.
"""

from __future__ import annotations

import numpy as np
import torch

from .backbone import DTYPE, ModelHandle, decode, propagate
from .errors import ContractError
from .explainer import (
    EdgeMask,
    ExplainerHParams,
    Explanation,
    MaskNet,
    _require_evaluator,
    edge_scores,
    query_clean_view,
    regularizers,
)
from .graph import KnowledgeGraph, Query

__all__ = ["instance_mask_explain", "parameterized_mask_explain"]


def _top_k_by_weight(kept_ids: np.ndarray, omega: np.ndarray, k: int):
    """Indices of the k largest weights, descending, ties by ascending edge id."""
    order = np.lexsort((kept_ids, -omega))[: int(k)]
    return kept_ids[order], omega[order]


def instance_mask_explain(eval_model: ModelHandle, g: KnowledgeGraph, q: Query, k: int,
                          hparams: ExplainerHParams,
                          rng: np.random.Generator | int = 0) -> Explanation:
    """Optimize one free logit per kept edge for this query alone.

    Gradient steps on the masked fidelity objective plus the sparsity
    regularizers, then the top-k edges by final noise-free weight. No
    connectivity repair; the budget is the only structural constraint.
    """
    if k < 1:
        raise ContractError(f"budget k must be >= 1, got {k}")
    if q.answer is None:
        raise ContractError("instance explanation requires a query with an answer")
    _require_evaluator(eval_model)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))

    view = query_clean_view(g, q)
    kept_ids = view.kept_edge_ids()
    n = len(kept_ids)
    if n == 0:
        return Explanation(q, k, np.empty(0, dtype=np.int64), np.empty(0),
                           pi=None, converged=True, head_isolated=True)

    logits = torch.zeros(n, dtype=DTYPE, requires_grad=True)
    base = torch.from_numpy(view.kept.astype(np.float64))
    kept_t = torch.from_numpy(kept_ids)
    head_t = torch.tensor([q.head])
    rel_t = torch.tensor([q.relation])
    answer_t = torch.tensor([q.answer])

    opt = torch.optim.Adam([logits], lr=hparams.learning_rate)
    for epoch in range(hparams.epochs):
        temperature = hparams.temperature_at(epoch)
        u = rng.uniform(size=n)
        noise = torch.from_numpy(np.log(u) - np.log1p(-u))
        omega = torch.sigmoid((logits + noise) / temperature)
        weights = base.clone()
        weights[kept_t] = omega
        states = propagate(eval_model.params, eval_model.config, g,
                           head_t, rel_t, weights.unsqueeze(0))
        scores = decode(eval_model.params, states)
        loss = torch.nn.functional.cross_entropy(scores, answer_t)
        loss = loss + regularizers(EdgeMask(omega, view, q),
                                   hparams.lambda_size, hparams.lambda_ent)
        opt.zero_grad()
        loss.backward()
        opt.step()

    with torch.no_grad():
        omega = torch.sigmoid(logits / hparams.temp_end).numpy()
    edge_ids, weights = _top_k_by_weight(kept_ids, omega, k)
    return Explanation(q, k, edge_ids, weights, pi=None, converged=True)


def parameterized_mask_explain(net: MaskNet, eval_model: ModelHandle, g: KnowledgeGraph,
                               q: Query, k: int) -> Explanation:
    """Top-k edges by the trained mask net's noise-free weights.

    Expects a net trained with beta_in = beta_out = 0 (the shared trainer
    skips the walk entirely in that mode). Output may span several
    components; the protocol records the component count.
    """
    if k < 1:
        raise ContractError(f"budget k must be >= 1, got {k}")
    view = query_clean_view(g, q)
    kept_ids = view.kept_edge_ids()
    if len(kept_ids) == 0:
        return Explanation(q, k, np.empty(0, dtype=np.int64), np.empty(0),
                           pi=None, converged=True, head_isolated=True)
    cache_states = _embed_clean(eval_model, g, q, view)
    mask = edge_scores(net, cache_states, view, q, rng=None, hard=True)
    edge_ids, weights = _top_k_by_weight(kept_ids, mask.values_np(), k)
    return Explanation(q, k, edge_ids, weights, pi=None, converged=True)


def _embed_clean(eval_model: ModelHandle, g: KnowledgeGraph, q: Query, view):
    from .backbone import EmbeddingTable

    with torch.no_grad():
        w = torch.from_numpy(view.kept.astype(np.float64)).unsqueeze(0)
        states = propagate(eval_model.params, eval_model.config, g,
                           torch.tensor([q.head]), torch.tensor([q.relation]), w)
    return EmbeddingTable(states[0], eval_model.params["relation_emb"].clone(), q)
