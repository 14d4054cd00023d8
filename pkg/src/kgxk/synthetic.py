"""Synthetic knowledge graphs with planted multi-hop patterns.

Every instance plants one or more relation-typed paths from a head to an
answer, plus a target fact asserting the head-answer link. The path
relations are shared across instances, so a model can learn "hop0 followed
by hop1 implies target" and an explainer can be checked against the known
ground-truth edges. Partial patterns (a correct first hop into a dead end, a
correct second hop from an unreached node) sit next to every head so that
picking the complete path is a real decision, not the only option. Answers
appear only as path endpoints and in target facts; noise never touches
them, which keeps the planted route the unique evidence.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import KnowledgeGraph, Query, Triple, Vocab, build_graph

TARGET_RELATION = "target"
NOISE_RELATION = "noise"


def hop_relation(step: int) -> str:
    return f"hop{step}"


@dataclass(frozen=True)
class SyntheticSpec:
    num_instances: int = 40
    num_paths: int = 1
    path_length: int = 2
    num_partial: int = 2  # partial patterns per instance (2 edges each)
    num_pool_entities: int = 0
    num_pool_edges: int = 0
    valid_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.num_instances < 1:
            raise ConfigError("num_instances must be >= 1")
        if self.num_paths < 1:
            raise ConfigError("num_paths must be >= 1")
        if self.path_length < 1:
            raise ConfigError("path_length must be >= 1")
        if self.num_partial < 0 or self.num_pool_entities < 0 or self.num_pool_edges < 0:
            raise ConfigError("counts must be >= 0")
        if self.num_pool_edges > 0 and self.num_pool_entities < 2:
            raise ConfigError("pool edges need at least two pool entities")
        if not 0 <= self.valid_fraction + self.test_fraction < 1:
            raise ConfigError("valid_fraction + test_fraction must stay below 1")


@dataclass
class PlantedInstance:
    head: str
    answer: str
    split: str  # which file carries the target fact
    paths: list[list[tuple[str, str, str]]]  # name-level (h, r, t) per hop

    def path_triples(self) -> list[tuple[str, str, str]]:
        return [t for path in self.paths for t in path]


@dataclass
class SyntheticDataset:
    train: list[tuple[str, str, str]]
    valid: list[tuple[str, str, str]]
    test: list[tuple[str, str, str]]
    instances: list[PlantedInstance]

    def build(self, add_inverse: bool = True):
        """Materialize the graph from train triples; returns (g, vocab)."""
        vocab = Vocab()
        triples = [
            Triple(vocab.entity_id(h, grow=True), vocab.relation_id(r, grow=True),
                   vocab.entity_id(t, grow=True))
            for h, r, t in self.train
        ]
        # register held-out names so their ids exist for queries
        for h, r, t in [*self.valid, *self.test]:
            vocab.entity_id(h, grow=True)
            vocab.relation_id(r, grow=True)
            vocab.entity_id(t, grow=True)
        g = build_graph(triples, vocab, add_inverse=add_inverse)
        return g, vocab

    def queries(self, g: KnowledgeGraph, split: str, tails_only: bool = False) -> list[Query]:
        """Fact queries for a split: tail direction, plus head direction unless disabled."""
        names = {"train": self.train, "valid": self.valid, "test": self.test}[split]
        facts = [(h, r, t) for h, r, t in names if r == TARGET_RELATION]
        vocab = g.vocab
        out = []
        for h, r, t in facts:
            hid, rid, tid = vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t)
            out.append(Query(hid, rid, tid))
            if not tails_only:
                out.append(Query(tid, g.inverse_relation(rid), hid))
        return out

    def planted_edge_ids(self, g: KnowledgeGraph, instance: PlantedInstance,
                         with_inverse: bool = True) -> np.ndarray:
        """Edge ids of the instance's planted path edges (plus inverse twins)."""
        vocab = g.vocab
        ids = []
        for h, r, t in instance.path_triples():
            e = g.find_edge(vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t))
            if e is not None:
                ids.append(e)
                if with_inverse:
                    ids.append(g.pair_id(e))
        return np.unique(np.asarray(ids, dtype=np.int64))


def generate(spec: SyntheticSpec) -> SyntheticDataset:
    rng = np.random.default_rng(spec.seed)
    train: list[tuple[str, str, str]] = []
    valid: list[tuple[str, str, str]] = []
    test: list[tuple[str, str, str]] = []
    instances: list[PlantedInstance] = []

    n = spec.num_instances
    n_test = int(round(n * spec.test_fraction))
    n_valid = int(round(n * spec.valid_fraction))
    split_of = np.array(["train"] * n, dtype=object)
    held = rng.permutation(n)
    split_of[held[:n_test]] = "test"
    split_of[held[n_test:n_test + n_valid]] = "valid"

    heads = []
    for i in range(n):
        head = f"h{i}"
        answer = f"a{i}"
        heads.append(head)
        paths = []
        for j in range(spec.num_paths):
            nodes = [head] + [f"m{i}_{j}_{s}" for s in range(spec.path_length - 1)] + [answer]
            path = [
                (nodes[s], hop_relation(s), nodes[s + 1])
                for s in range(spec.path_length)
            ]
            paths.append(path)
            train.extend(path)
        # partial patterns: alternate a broken tail and a broken head
        for c in range(spec.num_partial):
            if c % 2 == 0:
                u, u2 = f"u{i}_{c}", f"u{i}_{c}x"
                train.append((head, hop_relation(0), u))
                train.append((u, NOISE_RELATION, u2))
            else:
                v, v2 = f"v{i}_{c}", f"v{i}_{c}x"
                train.append((head, NOISE_RELATION, v))
                last = hop_relation(spec.path_length - 1)
                train.append((v, last, v2))
        fact = (head, TARGET_RELATION, answer)
        {"train": train, "valid": valid, "test": test}[split_of[i]].append(fact)
        instances.append(PlantedInstance(head, answer, str(split_of[i]), paths))

    pool = [f"p{i}" for i in range(spec.num_pool_entities)]
    attachable = pool + heads
    seen_noise: set[tuple[int, int]] = set()
    for _ in range(spec.num_pool_edges):
        a, b = rng.choice(len(attachable), size=2, replace=False)
        if (int(a), int(b)) in seen_noise:
            continue
        seen_noise.add((int(a), int(b)))
        train.append((attachable[int(a)], NOISE_RELATION, attachable[int(b)]))

    return SyntheticDataset(train, valid, test, instances)


def write_dataset_dir(ds: SyntheticDataset, directory):
    """TSV files train.txt / valid.txt / test.txt under the directory."""
    os.makedirs(directory, exist_ok=True)
    for name, rows in (("train", ds.train), ("valid", ds.valid), ("test", ds.test)):
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as fh:
            for h, r, t in rows:
                fh.write(f"{h}\t{r}\t{t}\n")
