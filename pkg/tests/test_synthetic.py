import numpy as np
import pytest

from kgxk import SyntheticSpec, generate
from kgxk.errors import ConfigError
from kgxk.graph import load_dataset_dir
from kgxk.synthetic import (
    NOISE_RELATION,
    TARGET_RELATION,
    hop_relation,
    write_dataset_dir,
)


def test_spec_validation():
    for kw in ({"num_instances": 0}, {"num_paths": 0}, {"path_length": 0},
               {"num_partial": -1}, {"num_pool_edges": 5},
               {"valid_fraction": 0.6, "test_fraction": 0.5}):
        with pytest.raises(ConfigError):
            SyntheticSpec(**kw)


def test_generate_deterministic():
    a = generate(SyntheticSpec(num_instances=10, seed=3))
    b = generate(SyntheticSpec(num_instances=10, seed=3))
    assert a.train == b.train and a.valid == b.valid and a.test == b.test


def test_split_sizes():
    ds = generate(SyntheticSpec(num_instances=20, valid_fraction=0.2,
                                test_fraction=0.1, seed=0))
    facts = [r for r in ds.train if r[1] == TARGET_RELATION]
    assert len(ds.test) == 2 and len(ds.valid) == 4
    assert len(facts) == 14
    assert len({i.split for i in ds.instances}) == 3


def test_planted_paths_are_edges():
    ds = generate(SyntheticSpec(num_instances=8, path_length=3, seed=1))
    g, vocab = ds.build()
    for inst in ds.instances:
        ids = ds.planted_edge_ids(g, inst)
        # path_length edges plus inverse twins
        assert len(ids) == 2 * 3
        for h, r, t in inst.path_triples():
            assert g.find_edge(vocab.entity_id(h), vocab.relation_id(r),
                               vocab.entity_id(t)) is not None


def test_noise_never_touches_answers():
    ds = generate(SyntheticSpec(num_instances=12, num_partial=4,
                                num_pool_entities=6, num_pool_edges=20, seed=2))
    answers = {i.answer for i in ds.instances}
    for h, r, t in ds.train:
        if r == NOISE_RELATION:
            assert h not in answers and t not in answers


def test_answer_reachable_only_through_planted_path():
    # the planted route is the unique evidence: removing it leaves the
    # answer with only the (held-out or leak-removed) target fact
    ds = generate(SyntheticSpec(num_instances=10, seed=4))
    g, vocab = ds.build()
    for inst in ds.instances:
        aid = vocab.entity_id(inst.answer)
        planted = set(ds.planted_edge_ids(g, inst).tolist())
        target = g.find_edge(vocab.entity_id(inst.head),
                             vocab.relation_id(TARGET_RELATION), aid)
        fact_edges = set() if target is None else {target, g.pair_id(target)}
        incident = set(g.incident_edges(aid).tolist())
        assert incident <= planted | fact_edges


def test_held_out_facts_are_not_edges():
    ds = generate(SyntheticSpec(num_instances=10, seed=5))
    g, vocab = ds.build()
    for h, r, t in [*ds.valid, *ds.test]:
        assert g.find_edge(vocab.entity_id(h), vocab.relation_id(r),
                           vocab.entity_id(t)) is None


def test_queries_split_and_direction():
    ds = generate(SyntheticSpec(num_instances=10, seed=6))
    g, vocab = ds.build()
    both = ds.queries(g, "train")
    tails = ds.queries(g, "train", tails_only=True)
    assert len(both) == 2 * len(tails)
    rid = vocab.relation_id(TARGET_RELATION)
    for q in tails:
        assert q.relation == rid
    assert both[1].relation == g.inverse_relation(rid)


def test_partial_patterns_share_hop_relations():
    ds = generate(SyntheticSpec(num_instances=4, num_partial=2, seed=7))
    h0 = hop_relation(0)
    rows = [r for r in ds.train if r[0] == "h0" and r[1] == h0]
    # the real first hop plus one decoy first hop
    assert len(rows) == 2


def test_write_and_load_round_trip(tmp_path):
    ds = generate(SyntheticSpec(num_instances=10, seed=8))
    write_dataset_dir(ds, tmp_path)
    loaded = load_dataset_dir(tmp_path)
    assert len(loaded.train) == len(ds.train)
    assert len(loaded.valid) == len(ds.valid)
    assert len(loaded.test) == len(ds.test)
    g, vocab = ds.build()
    assert loaded.graph.num_edges == g.num_edges
    assert loaded.vocab.num_entities == vocab.num_entities
