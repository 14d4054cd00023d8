"""Robustness-trained link predictors.

Same architecture and loop as the plain backbone; the only difference is the
message view each query sees during training, sampled from a DropSchedule.
With p = 0 the sampler keeps everything and training is bit-identical to the
backbone at the same seed, because view sampling draws from its own rng
stream.
"""

from __future__ import annotations

import numpy as np

from .backbone import (
    ModelHandle,
    ROLE_EVALUATOR_DISTANCE,
    ROLE_EVALUATOR_UNIFORM,
    _run_training,
)
from .errors import ConfigError
from .graph import KnowledgeGraph
from .perturb import DropSchedule, edge_distances


def _drop_prob_matrix(g: KnowledgeGraph, queries, schedule: DropSchedule) -> np.ndarray:
    """(Q, num_base_edges) drop probabilities; distance rows keyed by query head."""
    nb = g.num_base_edges
    if schedule.kind == "uniform":
        return np.full((len(queries), nb), float(schedule.p))
    rows: dict[int, np.ndarray] = {}
    probs = np.empty((len(queries), nb))
    for i, q in enumerate(queries):
        row = rows.get(q.head)
        if row is None:
            d = edge_distances(g, q.head)
            row = np.empty(nb)
            for value in np.unique(d):
                p = float(schedule.p_drop(value))
                if not 0.0 <= p <= 1.0:
                    raise ConfigError(f"schedule produced p={p} at distance {value}")
                row[d == value] = p
            rows[q.head] = row
        probs[i] = row
    return probs


def make_view_sampler(g: KnowledgeGraph, queries, schedule: DropSchedule):
    """Per-epoch (Q, E) kept-weight sampler; base and inverse share each draw."""
    probs = _drop_prob_matrix(g, queries, schedule)
    frozen: dict[str, np.ndarray] = {}

    def sampler(epoch: int, rng: np.random.Generator) -> np.ndarray:
        if not schedule.resample_per_epoch and "w" in frozen:
            return frozen["w"]
        kept_base = rng.random(probs.shape) >= probs
        if g.has_inverse:
            kept = np.concatenate([kept_base, kept_base], axis=1)
        else:
            kept = kept_base
        w = kept.astype(np.float64)
        frozen["w"] = w
        return w

    return sampler


def train_evaluator(model: ModelHandle, g: KnowledgeGraph, queries, schedule: DropSchedule,
                    *, seed: int = 0, epochs: int | None = None) -> ModelHandle:
    """Train under perturbed per-query views; returns a new frozen handle."""
    role = ROLE_EVALUATOR_UNIFORM if schedule.kind == "uniform" else ROLE_EVALUATOR_DISTANCE
    cfg = model.config
    params, history = _run_training(
        model, g, queries,
        epochs=cfg.epochs if epochs is None else epochs,
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        num_negatives=cfg.num_negatives, seed=seed,
        view_sampler=make_view_sampler(g, queries, schedule),
    )
    return ModelHandle(cfg, role, model.num_relations, params, model.history + history)
