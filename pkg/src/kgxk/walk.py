"""Personalized random-walk machinery over masked graphs.

Relation-collapsed pairwise weights, a teleport-smoothed stochastic
adjacency, power-iteration PPR, and the node-based edge partition that the
mask trainer turns into a connectivity signal. Everything here is plain
numpy on detached mask values; gradients never flow through the walk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .graph import KnowledgeGraph, SubgraphView

COLLAPSE_METHODS = ("max", "sum", "mean")


@dataclass(frozen=True)
class PPRConfig:
    alpha: float = 0.15
    eps: float = 1e-6
    max_iter: int = 100
    l: int | None = None  # top-node count; None -> derived as 2k at extraction
    m: int = 1  # teleport tail count
    collapse: str = "max"
    beta_in: float = 1.0
    beta_out: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha={self.alpha} outside [0, 1]")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.l is not None and self.l < 1:
            raise ConfigError(f"l must be >= 1 when set, got {self.l}")
        if self.m < 0:
            raise ConfigError(f"m must be >= 0, got {self.m}")
        if self.collapse not in COLLAPSE_METHODS:
            raise ConfigError(f"collapse must be one of {COLLAPSE_METHODS}, got {self.collapse!r}")
        if self.beta_in < 0 or self.beta_out < 0:
            raise ConfigError("beta_in and beta_out must be >= 0")


@dataclass
class PairwiseWeights:
    """One collapsed weight per ordered (source, target) pair with >= 1 kept edge."""

    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    num_nodes: int


class PairStructure:
    """Static grouping of a kept-edge set into ordered entity pairs.

    Built once per (graph, kept set); collapsing a new mask over the same
    kept set is then a single segmented reduction. Pairs come out sorted by
    (src, dst), so src groups are contiguous for the row softmax.
    """

    def __init__(self, g: KnowledgeGraph, kept_ids: np.ndarray):
        kept_ids = np.asarray(kept_ids, dtype=np.int64)
        s = g.heads[kept_ids]
        o = g.tails[kept_ids]
        order = np.lexsort((o, s))
        self.edge_order = kept_ids[order]
        self.position = order  # index into the mask's value array
        s, o = s[order], o[order]
        if len(kept_ids):
            new_pair = np.empty(len(s), dtype=bool)
            new_pair[0] = True
            new_pair[1:] = (s[1:] != s[:-1]) | (o[1:] != o[:-1])
            self.starts = np.flatnonzero(new_pair)
            self.pair_src = s[self.starts]
            self.pair_dst = o[self.starts]
            self.counts = np.diff(np.append(self.starts, len(s)))
        else:
            self.starts = np.empty(0, dtype=np.int64)
            self.pair_src = np.empty(0, dtype=np.int64)
            self.pair_dst = np.empty(0, dtype=np.int64)
            self.counts = np.empty(0, dtype=np.int64)
        self.num_nodes = g.num_entities

    def collapse(self, omega: np.ndarray, method: str) -> PairwiseWeights:
        values = np.asarray(omega, dtype=np.float64)[self.position]
        if len(self.starts) == 0:
            w = np.empty(0)
        elif method == "max":
            w = np.maximum.reduceat(values, self.starts)
        elif method == "sum":
            w = np.add.reduceat(values, self.starts)
        elif method == "mean":
            w = np.add.reduceat(values, self.starts) / self.counts
        else:
            raise ConfigError(f"collapse must be one of {COLLAPSE_METHODS}, got {method!r}")
        return PairwiseWeights(self.pair_src, self.pair_dst, w, self.num_nodes)


def pair_structure(g: KnowledgeGraph, kept_ids: np.ndarray) -> PairStructure:
    return PairStructure(g, kept_ids)


def collapse_relations(mask, method: str) -> PairwiseWeights:
    """Aggregate parallel relation edges of each (s, o) pair into one weight."""
    view = mask.view
    structure = PairStructure(view.base, view.kept_edge_ids())
    return structure.collapse(mask.values_np(), method)


@dataclass
class StochasticAdjacency:
    """Sparse transition structure: (1-alpha)-scaled row softmax plus teleport.

    ``prob`` excludes the teleport component; a non-dangling row contributes
    alpha to the teleport set, a dangling row (no outgoing pairs) teleports
    with weight 1.
    """

    src: np.ndarray
    dst: np.ndarray
    prob: np.ndarray
    alpha: float
    teleport: np.ndarray  # sorted entity ids
    num_nodes: int
    dangling: np.ndarray  # bool per node

    def row_sums(self) -> np.ndarray:
        sums = np.bincount(self.src, weights=self.prob, minlength=self.num_nodes)
        return sums + np.where(self.dangling, 1.0, self.alpha)

    def dense(self) -> np.ndarray:
        """Row-stochastic matrix, for small-instance checks."""
        m = np.zeros((self.num_nodes, self.num_nodes))
        np.add.at(m, (self.src, self.dst), self.prob)
        tele = np.zeros(self.num_nodes)
        tele[self.teleport] = 1.0 / len(self.teleport)
        m += np.where(self.dangling, 1.0, self.alpha)[:, None] * tele[None, :]
        return m


def stochastic_adjacency(pw: PairwiseWeights, teleport, alpha: float,
                         g: KnowledgeGraph | None = None) -> StochasticAdjacency:
    """Row-stochastic walk structure from collapsed weights.

    The structural part softmaxes each source's weights over its existing
    outgoing pairs only; nodes without outgoing pairs are pure teleporters.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha={alpha} outside [0, 1]")
    num_nodes = g.num_entities if g is not None else pw.num_nodes
    teleport = np.unique(np.asarray(list(teleport), dtype=np.int64))
    if len(teleport) == 0:
        raise ContractError("teleport set must be nonempty")
    if teleport[0] < 0 or teleport[-1] >= num_nodes:
        raise ContractError("teleport set contains out-of-range entity ids")

    src, dst, w = pw.src, pw.dst, pw.weight
    dangling = np.ones(num_nodes, dtype=bool)
    if len(src):
        dangling[src] = False
        # segmented softmax over contiguous src groups
        starts = np.flatnonzero(np.r_[True, src[1:] != src[:-1]])
        seg = np.repeat(np.arange(len(starts)), np.diff(np.append(starts, len(src))))
        shifted = w - np.maximum.reduceat(w, starts)[seg]
        e = np.exp(shifted)
        denom = np.add.reduceat(e, starts)[seg]
        prob = (1.0 - alpha) * e / denom
    else:
        prob = np.empty(0)
    return StochasticAdjacency(src, dst, prob, float(alpha), teleport, num_nodes, dangling)


@dataclass
class NodeDistribution:
    pi: np.ndarray
    converged: bool
    iterations: int


def ppr(adj: StochasticAdjacency, seeds, cfg: PPRConfig) -> NodeDistribution:
    """Power-iterate the walk until the L1 change drops below cfg.eps.

    Start uniform over seeds; each step pushes mass source -> target along
    the structural part and routes the rest through the teleport set. Hitting
    max_iter returns the current distribution flagged non-converged.
    """
    seeds = np.unique(np.asarray(list(seeds), dtype=np.int64))
    if len(seeds) == 0:
        raise ContractError("ppr requires a nonempty seed set")
    if not np.array_equal(seeds, adj.teleport):
        raise ContractError("ppr seeds must equal the adjacency's teleport set")
    n = adj.num_nodes
    u = np.zeros(n)
    u[adj.teleport] = 1.0 / len(adj.teleport)
    pi = u.copy()
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        direct = np.bincount(adj.dst, weights=adj.prob * pi[adj.src], minlength=n)
        structural_mass = pi[~adj.dangling].sum()
        dangling_mass = pi[adj.dangling].sum()
        tele_mass = adj.alpha * structural_mass + dangling_mass
        new = direct + tele_mass * u
        delta = np.abs(new - pi).sum()
        pi = new
        if delta < cfg.eps:
            converged = True
            break
    total = pi.sum()
    if total <= 0:
        raise ContractError("walk lost all probability mass")
    return NodeDistribution(pi / total, converged, iterations)


def top_nodes(pi: np.ndarray, l: int) -> np.ndarray:
    """Ids of the l largest-mass nodes; score ties broken by ascending id."""
    order = np.lexsort((np.arange(len(pi)), -pi))
    return order[: int(l)]


def partition_edges(view: SubgraphView, dist: NodeDistribution, l: int):
    """Split kept edges by whether both endpoints sit in the top-l node set."""
    if l < 1:
        raise ContractError(f"l must be >= 1, got {l}")
    g = view.base
    top = top_nodes(dist.pi, l)
    in_top = np.zeros(g.num_entities, dtype=bool)
    in_top[top] = True
    kept_ids = view.kept_edge_ids()
    inside = in_top[g.heads[kept_ids]] & in_top[g.tails[kept_ids]]
    return kept_ids[inside], kept_ids[~inside]
