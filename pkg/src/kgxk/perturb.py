"""Perturbation views over a knowledge graph.

Ego networks and seeded edge dropping, uniform or distance-biased. A base
triple and its inverse twin always share one drop decision so that every
view preserves the inverse-closure invariant of the augmented graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ConfigError, ContractError
from .graph import KnowledgeGraph, SubgraphView


@dataclass(frozen=True)
class DropSchedule:
    """Edge-drop distribution used to train robust evaluators.

    ``uniform`` drops every base triple with probability ``p``; ``distance``
    drops with probability ``p_max * (1 - gamma**d)`` where d is the hop
    distance of the edge from an anchor entity (unreachable edges use the
    d -> inf limit, ``p_max``).
    """

    kind: str = "uniform"
    p: float = 0.0
    p_max: float = 0.95
    gamma: float = 0.7
    resample_per_epoch: bool = True

    def __post_init__(self):
        if self.kind not in ("uniform", "distance"):
            raise ConfigError(f"unknown drop schedule kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"drop probability p={self.p} outside [0, 1]")
        if not 0.0 <= self.p_max <= 1.0:
            raise ConfigError(f"p_max={self.p_max} outside [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma={self.gamma} outside (0, 1)")

    @classmethod
    def uniform(cls, p: float, resample_per_epoch: bool = True) -> "DropSchedule":
        return cls(kind="uniform", p=p, resample_per_epoch=resample_per_epoch)

    @classmethod
    def distance(cls, p_max: float = 0.95, gamma: float = 0.7, resample_per_epoch: bool = True) -> "DropSchedule":
        return cls(kind="distance", p_max=p_max, gamma=gamma, resample_per_epoch=resample_per_epoch)

    def p_drop(self, d: float) -> float:
        """Drop probability at hop distance d (inf allowed)."""
        if self.kind == "uniform":
            return self.p
        if np.isinf(d):
            return self.p_max
        return self.p_max * (1.0 - self.gamma ** float(d))


def ego_network(g: KnowledgeGraph, seeds, radius: int) -> SubgraphView:
    """Edges whose both endpoints lie within ``radius`` undirected hops of a seed."""
    seeds = list(seeds)
    if not seeds:
        raise ContractError("ego_network requires a nonempty seed set")
    if radius < 0:
        raise ContractError(f"radius must be >= 0, got {radius}")
    dist = g.bfs_distances(seeds)
    kept = (dist[g.heads] <= radius) & (dist[g.tails] <= radius)
    return SubgraphView(g, kept)


def _paired_keep(g: KnowledgeGraph, drop_prob: np.ndarray, rng: np.random.Generator) -> SubgraphView:
    # drop_prob has one entry per base triple; the inverse twin shares the draw
    u = rng.random(g.num_base_edges)
    kept_base = u >= drop_prob
    if g.has_inverse:
        kept = np.concatenate([kept_base, kept_base])
    else:
        kept = kept_base
    return SubgraphView(g, kept)


def drop_edges_uniform(g: KnowledgeGraph, p: float, rng: np.random.Generator) -> SubgraphView:
    """Drop each base triple (with its inverse) independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise BoundsError(f"drop probability p={p} outside [0, 1]")
    return _paired_keep(g, np.full(g.num_base_edges, float(p)), rng)


def edge_distances(g: KnowledgeGraph, anchor: int) -> np.ndarray:
    """Per base edge, min over endpoints of BFS hop distance from the anchor."""
    if not 0 <= anchor < g.num_entities:
        raise BoundsError(f"anchor {anchor} out of range [0, {g.num_entities})")
    dist = g.distances_from(anchor)
    nb = g.num_base_edges
    return np.minimum(dist[g.heads[:nb]], dist[g.tails[:nb]])


def drop_edges_distance(g: KnowledgeGraph, anchor: int, schedule, rng: np.random.Generator) -> SubgraphView:
    """Drop base triples with probability schedule.p_drop(d(e)), paired with inverses.

    d(e) is the min endpoint hop distance from the anchor; unreachable edges
    have d = inf. A schedule returning a probability outside [0, 1] is a
    configuration error.
    """
    d = edge_distances(g, anchor)
    probs = np.empty(g.num_base_edges)
    for value in np.unique(d):
        p = float(schedule.p_drop(value))
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"schedule produced p={p} at distance {value}")
        probs[d == value] = p
    return _paired_keep(g, probs, rng)
