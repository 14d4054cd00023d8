import numpy as np
import pytest

from kgxk import ExplainerHParams, MaskNet, Query
from kgxk.baselines import (
    _top_k_by_weight,
    instance_mask_explain,
    parameterized_mask_explain,
)
from kgxk.errors import ContractError
from kgxk.explainer import query_clean_view
from kgxk.seeding import derived_rng


def test_top_k_tie_break_ascending_id():
    ids = np.array([3, 5, 9, 11])
    omega = np.array([0.5, 0.9, 0.5, 0.1])
    got_ids, got_w = _top_k_by_weight(ids, omega, 3)
    assert list(got_ids) == [5, 3, 9]
    assert list(got_w) == [0.9, 0.5, 0.5]


def test_instance_mask_validation(pipeline):
    q = pipeline.explain_queries("valid")[0]
    hp = ExplainerHParams(epochs=1)
    with pytest.raises(ContractError):
        instance_mask_explain(pipeline.evaluator, pipeline.g, q, 0, hp)
    with pytest.raises(ContractError):
        instance_mask_explain(pipeline.evaluator, pipeline.g,
                              Query(q.head, q.relation, None), 3, hp)
    with pytest.raises(ContractError):
        instance_mask_explain(pipeline.backbone, pipeline.g, q, 3, hp)


def test_instance_mask_budget_and_determinism(pipeline):
    q = pipeline.explain_queries("valid")[0]
    hp = ExplainerHParams(epochs=5)
    a = instance_mask_explain(pipeline.evaluator, pipeline.g, q, 4, hp, rng=3)
    b = instance_mask_explain(pipeline.evaluator, pipeline.g, q, 4, hp, rng=3)
    assert len(a) <= 4
    assert np.array_equal(a.edge_ids, b.edge_ids)
    assert np.allclose(a.omega, b.omega)


def test_instance_mask_big_budget_returns_all_kept(pipeline):
    q = pipeline.explain_queries("valid")[0]
    view = query_clean_view(pipeline.g, q)
    hp = ExplainerHParams(epochs=2)
    ex = instance_mask_explain(pipeline.evaluator, pipeline.g, q,
                               view.num_kept + 10, hp, rng=0)
    assert set(ex.edge_ids) == set(view.kept_edge_ids())


def test_parameterized_mask_budget_and_determinism(pipeline):
    q = pipeline.explain_queries("valid")[0]
    a = parameterized_mask_explain(pipeline.net, pipeline.evaluator,
                                   pipeline.g, q, 6)
    b = parameterized_mask_explain(pipeline.net, pipeline.evaluator,
                                   pipeline.g, q, 6)
    assert len(a) <= 6
    assert np.array_equal(a.edge_ids, b.edge_ids)
    with pytest.raises(ContractError):
        parameterized_mask_explain(pipeline.net, pipeline.evaluator,
                                   pipeline.g, q, 0)


def test_parameterized_mask_big_budget_returns_all_kept(pipeline):
    q = pipeline.explain_queries("valid")[0]
    view = query_clean_view(pipeline.g, q)
    ex = parameterized_mask_explain(pipeline.net, pipeline.evaluator,
                                    pipeline.g, q, view.num_kept + 100)
    assert set(ex.edge_ids) == set(view.kept_edge_ids())


def test_parameterized_picks_highest_weight_edges(pipeline):
    # selection must equal a direct argsort of the net's own noise-free mask
    from kgxk.backbone import embed
    from kgxk.explainer import edge_scores

    q = pipeline.explain_queries("valid")[1]
    view = query_clean_view(pipeline.g, q)
    emb = embed(pipeline.evaluator, view, q)
    omega = edge_scores(pipeline.net, emb, view, q, rng=None, hard=True).values_np()
    ids = view.kept_edge_ids()
    expect = ids[np.lexsort((ids, -omega))][:5]
    ex = parameterized_mask_explain(pipeline.net, pipeline.evaluator,
                                    pipeline.g, q, 5)
    assert list(ex.edge_ids) == list(expect)
