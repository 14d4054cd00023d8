"""Knowledge graph loading, indexing, queries, and filtered candidates.

A graph is an immutable multigraph of (head, relation, tail) triples with
optional inverse-relation augmentation: the relation id space doubles and
``inv(r) = r + num_base_relations`` (mod the doubled space). Edge ids are
positions in the edge arrays, with the inverse of base edge ``i`` stored at
``i + num_base_edges``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from collections import deque
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import BoundsError, ContractError, ParseError, VocabError

log = logging.getLogger(__name__)

TRAIN, VALID, TEST = "train", "valid", "test"
SPLITS = (TRAIN, VALID, TEST)


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Query(NamedTuple):
    """An (h, r) prediction task; ``answer`` is the supervised/eval target.

    Head queries are folded into tail form through inverse relations, so a
    single (head, relation) pair describes both directions.
    """

    head: int
    relation: int
    answer: int | None = None


class Vocab:
    """Dense string<->id tables for entities and base relations."""

    def __init__(self, entity_names: Iterable[str] = (), relation_names: Iterable[str] = ()):
        self.entity_names = list(entity_names)
        self.relation_names = list(relation_names)
        self._ent_ids = {n: i for i, n in enumerate(self.entity_names)}
        self._rel_ids = {n: i for i, n in enumerate(self.relation_names)}
        if len(self._ent_ids) != len(self.entity_names):
            raise VocabError("duplicate entity names")
        if len(self._rel_ids) != len(self.relation_names):
            raise VocabError("duplicate relation names")

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_base_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str, grow: bool = False) -> int:
        eid = self._ent_ids.get(name)
        if eid is None:
            if not grow:
                raise VocabError(f"unknown entity name {name!r}")
            eid = len(self.entity_names)
            self.entity_names.append(name)
            self._ent_ids[name] = eid
        return eid

    def relation_id(self, name: str, grow: bool = False) -> int:
        rid = self._rel_ids.get(name)
        if rid is None:
            if not grow:
                raise VocabError(f"unknown relation name {name!r}")
            rid = len(self.relation_names)
            self.relation_names.append(name)
            self._rel_ids[name] = rid
        return rid

    def __repr__(self):
        return f"Vocab({self.num_entities} entities, {self.num_base_relations} relations)"


def load_triples(path, vocab: Vocab | None = None) -> tuple[list[Triple], Vocab]:
    """Read `head<TAB>relation<TAB>tail` lines and resolve names to ids.

    Without a vocab a fresh one is grown in first-seen order (train split).
    With a fixed vocab every name must already resolve; unknown names raise
    VocabError and malformed lines raise ParseError with the line number.
    """
    grow = vocab is None
    if grow:
        vocab = Vocab()
    triples: list[Triple] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts
            if not h or not r or not t:
                raise ParseError(path, lineno, "empty field")
            triples.append(
                Triple(vocab.entity_id(h, grow), vocab.relation_id(r, grow), vocab.entity_id(t, grow))
            )
    return triples, vocab


class KnowledgeGraph:
    """Immutable indexed multigraph; use :func:`build_graph` to construct.

    With inverse augmentation ``edges[i + num_base_edges]`` is the inverse of
    ``edges[i]`` and the two always share perturbation decisions (paired
    dropping). Safe for concurrent readers; never mutated after build.
    """

    def __init__(self, vocab, heads, rels, tails, num_base_edges, has_inverse, edge_split):
        self.vocab = vocab
        self.heads = heads
        self.rels = rels
        self.tails = tails
        self.num_base_edges = int(num_base_edges)
        self.has_inverse = bool(has_inverse)
        self.edge_split = edge_split
        self.num_entities = vocab.num_entities
        self.num_base_relations = vocab.num_base_relations
        self.num_relations = 2 * vocab.num_base_relations if has_inverse else vocab.num_base_relations
        self._build_indexes()
        self._triple_ids = {}
        for e in range(self.num_edges):
            self._triple_ids.setdefault((int(heads[e]), int(rels[e]), int(tails[e])), e)
        self._dist_cache: dict[int, np.ndarray] = {}

    @property
    def num_edges(self) -> int:
        return len(self.heads)

    def _build_indexes(self):
        n, m = self.num_entities, self.num_edges
        out: list[list[int]] = [[] for _ in range(n)]
        incident: list[list[int]] = [[] for _ in range(n)]
        nbr: list[list[int]] = [[] for _ in range(n)]
        for e in range(m):
            s, o = int(self.heads[e]), int(self.tails[e])
            out[s].append(e)
            incident[s].append(e)
            nbr[s].append(o)
            if o != s:
                incident[o].append(e)
                nbr[o].append(s)
        self._out = [np.asarray(a, dtype=np.int64) for a in out]
        self._incident = [np.asarray(a, dtype=np.int64) for a in incident]
        self._nbr = [np.asarray(a, dtype=np.int64) for a in nbr]

    # -- id space helpers ---------------------------------------------------

    def inverse_relation(self, r: int) -> int:
        if not self.has_inverse:
            raise ContractError("graph was built without inverse augmentation")
        return (r + self.num_base_relations) % self.num_relations

    def pair_id(self, e: int) -> int:
        """Edge id of e's inverse twin (e itself when no augmentation)."""
        if not self.has_inverse:
            return e
        return (e + self.num_base_edges) % self.num_edges

    def edge(self, e: int) -> Triple:
        return Triple(int(self.heads[e]), int(self.rels[e]), int(self.tails[e]))

    def find_edge(self, h: int, r: int, t: int) -> int | None:
        return self._triple_ids.get((h, r, t))

    def out_edges(self, v: int) -> np.ndarray:
        return self._out[v]

    def incident_edges(self, v: int) -> np.ndarray:
        return self._incident[v]

    def relation_name(self, r: int) -> str:
        if r < self.num_base_relations:
            return self.vocab.relation_names[r]
        return "inv_" + self.vocab.relation_names[r - self.num_base_relations]

    def full_view(self) -> "SubgraphView":
        return SubgraphView(self, np.ones(self.num_edges, dtype=bool))

    def view_of_edges(self, edge_ids) -> "SubgraphView":
        kept = np.zeros(self.num_edges, dtype=bool)
        kept[np.asarray(edge_ids, dtype=np.int64)] = True
        return SubgraphView(self, kept)

    # -- traversal ----------------------------------------------------------

    def bfs_distances(self, sources: Iterable[int], kept: np.ndarray | None = None) -> np.ndarray:
        """Undirected hop distances from a source set; unreachable -> inf.

        ``kept`` optionally restricts traversal to a subset of edges.
        """
        sources = list(sources)
        if not sources:
            raise ContractError("bfs_distances requires at least one source")
        dist = np.full(self.num_entities, np.inf)
        queue = deque()
        for s in sources:
            s = int(s)
            if not 0 <= s < self.num_entities:
                raise BoundsError(f"entity id {s} out of range [0, {self.num_entities})")
            if dist[s] != 0:
                dist[s] = 0.0
                queue.append(s)
        while queue:
            v = queue.popleft()
            d = dist[v] + 1.0
            edges = self._incident[v]
            nbrs = self._nbr[v]
            if kept is not None:
                sel = kept[edges]
                nbrs = nbrs[sel]
            for w in nbrs:
                if d < dist[w]:
                    dist[w] = d
                    queue.append(int(w))
        return dist

    def distances_from(self, v: int) -> np.ndarray:
        """Memoized full-graph hop distances from a single entity (read-only)."""
        v = int(v)
        hit = self._dist_cache.get(v)
        if hit is None:
            hit = self.bfs_distances([v])
            hit.setflags(write=False)
            self._dist_cache[v] = hit
        return hit

    def __repr__(self):
        return (
            f"KnowledgeGraph({self.num_entities} entities, {self.num_relations} relations, "
            f"{self.num_edges} edges)"
        )


def count_components(g: KnowledgeGraph, edge_ids) -> int:
    """Connected components of the subgraph spanned by the given edges.

    Nodes are exactly the edge endpoints; an empty edge set has 0 components.
    """
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    if len(edge_ids) == 0:
        return 0
    parent: dict[int, int] = {}

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for e in edge_ids:
        a, b = int(g.heads[e]), int(g.tails[e])
        for v in (a, b):
            parent.setdefault(v, v)
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return sum(1 for v in parent if find(v) == v)


class SubgraphView:
    """A kept-edge bit-set over a base graph; never copies node data."""

    __slots__ = ("base", "kept")

    def __init__(self, base: KnowledgeGraph, kept: np.ndarray):
        kept = np.asarray(kept, dtype=bool)
        if kept.shape != (base.num_edges,):
            raise ContractError(
                f"kept mask has shape {kept.shape}, graph has {base.num_edges} edges"
            )
        self.base = base
        self.kept = kept

    def kept_edge_ids(self) -> np.ndarray:
        return np.flatnonzero(self.kept)

    @property
    def num_kept(self) -> int:
        return int(self.kept.sum())

    def restrict(self, other: "SubgraphView") -> "SubgraphView":
        """Intersect with another view of the same base (composition never resurrects edges)."""
        if other.base is not self.base:
            raise ContractError("views built over different base graphs")
        return SubgraphView(self.base, self.kept & other.kept)

    def __repr__(self):
        return f"SubgraphView({self.num_kept}/{self.base.num_edges} edges kept)"


def build_graph(
    triples: Sequence[Triple],
    vocab: Vocab,
    add_inverse: bool = True,
    split: str | Sequence[str] = TRAIN,
) -> KnowledgeGraph:
    """Index triples into a KnowledgeGraph, doubling edges/relations when augmenting.

    Duplicate identical triples are dropped with a warning, not an error.
    ``split`` tags per-triple provenance (a single name or one per triple).
    """
    n_ent, n_rel = vocab.num_entities, vocab.num_base_relations
    if isinstance(split, str):
        splits = [split] * len(triples)
    else:
        splits = list(split)
        if len(splits) != len(triples):
            raise ContractError("per-triple split list length mismatch")
    for s in splits:
        if s not in SPLITS:
            raise ContractError(f"unknown split {s!r}")

    seen = set()
    base: list[Triple] = []
    base_split: list[str] = []
    dupes = 0
    for tr, sp in zip(triples, splits):
        h, r, t = tr
        if not (0 <= h < n_ent and 0 <= t < n_ent):
            raise BoundsError(f"entity id out of range in triple {tr}")
        if not 0 <= r < n_rel:
            raise BoundsError(f"relation id {r} out of range [0, {n_rel})")
        if tr in seen:
            dupes += 1
            continue
        seen.add(tr)
        base.append(tr)
        base_split.append(sp)
    if dupes:
        log.warning("build_graph: dropped %d duplicate triples", dupes)

    heads = np.fromiter((t.head for t in base), dtype=np.int64, count=len(base))
    rels = np.fromiter((t.relation for t in base), dtype=np.int64, count=len(base))
    tails = np.fromiter((t.tail for t in base), dtype=np.int64, count=len(base))
    edge_split = list(base_split)
    if add_inverse:
        heads = np.concatenate([heads, tails[: len(base)]])
        rels = np.concatenate([rels, rels[: len(base)] + n_rel])
        tails = np.concatenate([tails, np.fromiter((t.head for t in base), dtype=np.int64, count=len(base))])
        edge_split = base_split + base_split
    return KnowledgeGraph(vocab, heads, rels, tails, len(base), add_inverse, edge_split)


def make_queries(triples: Sequence[Triple], vocab: Vocab) -> list[Query]:
    """Each triple yields a tail query (h,r)->t and a head query (t,inv r)->h."""
    n_rel = vocab.num_base_relations
    out: list[Query] = []
    for h, r, t in triples:
        out.append(Query(h, r, t))
        out.append(Query(t, r + n_rel, h))
    return out


class FilterIndex:
    """(head, relation) -> known answers, both directions, for filtered ranking."""

    def __init__(self, triple_lists: Iterable[Sequence[Triple]], vocab: Vocab):
        n_rel = vocab.num_base_relations
        tails: dict[tuple[int, int], set[int]] = {}
        for triples in triple_lists:
            for h, r, t in triples:
                tails.setdefault((h, r), set()).add(t)
                tails.setdefault((t, r + n_rel), set()).add(h)
        self._tails = {k: np.array(sorted(v), dtype=np.int64) for k, v in tails.items()}

    def known_answers(self, head: int, relation: int) -> np.ndarray:
        return self._tails.get((head, relation), _EMPTY_IDS)


_EMPTY_IDS = np.empty(0, dtype=np.int64)


def filtered_candidates(q: Query, all_known: "FilterIndex | Iterable[Triple]", num_entities: int | None = None) -> np.ndarray:
    """Boolean candidate mask: competing known answers excluded, the true answer kept.

    ``all_known`` is a FilterIndex over the union of train/valid/test triples;
    a plain triple iterable is also accepted for small graphs (the index is
    then interpreted as already containing both directions).
    """
    if q.answer is None:
        raise ContractError("filtered_candidates requires a query with an answer")
    if isinstance(all_known, FilterIndex):
        known = all_known.known_answers(q.head, q.relation)
        if num_entities is None:
            raise ContractError("num_entities required with a FilterIndex")
        n = num_entities
    else:
        known = np.array(
            sorted({t for h, r, t in all_known if h == q.head and r == q.relation}),
            dtype=np.int64,
        )
        if num_entities is None:
            raise ContractError("num_entities required")
        n = num_entities
    mask = np.ones(n, dtype=bool)
    mask[known] = False
    mask[q.answer] = True
    return mask


@dataclass
class Dataset:
    """A dataset directory loaded end to end: graph from train edges only."""

    graph: KnowledgeGraph
    vocab: Vocab
    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    filter_index: FilterIndex

    def queries(self, split: str) -> list[Query]:
        triples = {TRAIN: self.train, VALID: self.valid, TEST: self.test}[split]
        return make_queries(triples, self.vocab)


def load_dataset_dir(directory, add_inverse: bool = True) -> Dataset:
    """Load train.txt / valid.txt / test.txt from a directory.

    Train grows the vocab; held-out splits may still introduce names (some
    benchmark splits do), so they grow it too, before the graph is built.
    Only train triples become message-passing edges.
    """
    paths = {s: os.path.join(directory, f"{s}.txt") for s in SPLITS}
    for split, path in paths.items():
        if not os.path.isfile(path):
            raise ParseError(path, 0, f"missing {split} split file")
    train, vocab = load_triples(paths[TRAIN])
    valid, _ = load_triples(paths[VALID], _GrowingVocab(vocab))
    test, _ = load_triples(paths[TEST], _GrowingVocab(vocab))
    g = build_graph(train, vocab, add_inverse=add_inverse, split=TRAIN)
    fi = FilterIndex([train, valid, test], vocab)
    return Dataset(g, vocab, train, valid, test, fi)


class _GrowingVocab:
    """Adapter forcing grow=True lookups on a shared vocab."""

    def __init__(self, vocab: Vocab):
        self._vocab = vocab

    def entity_id(self, name: str, grow: bool = False) -> int:
        return self._vocab.entity_id(name, grow=True)

    def relation_id(self, name: str, grow: bool = False) -> int:
        return self._vocab.relation_id(name, grow=True)
