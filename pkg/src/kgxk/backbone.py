"""Query-conditioned relational message passing for link prediction.

A compact head-anchored network: entity states are initialized from the query
(the head entity receives the relation embedding, everything else zeros) and
propagated along typed edges for a fixed number of layers. Per-edge weights
in [0, 1] scale messages; a weight of 0 is numerically identical to deleting
the edge, which is what lets soft masks and hard subgraphs share one forward
pass. All math runs in float64.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import CheckpointError, ConfigError, ContractError, TrainingError
from .graph import KnowledgeGraph, Query, SubgraphView
from .seeding import derived_rng

DTYPE = torch.float64

AGGREGATIONS = ("sum", "mean")
MESSAGES = ("distmult", "transe")

ROLE_BACKBONE = "backbone"
ROLE_EVALUATOR_UNIFORM = "evaluator_uniform"
ROLE_EVALUATOR_DISTANCE = "evaluator_distance"
ROLES = (ROLE_BACKBONE, ROLE_EVALUATOR_UNIFORM, ROLE_EVALUATOR_DISTANCE)

# mean-aggregation denominators are clamped here so a fully masked-out
# neighborhood yields a zero aggregate instead of 0/0
_DENOM_FLOOR = 1e-30

_SCORE_CHUNK = 256


@dataclass(frozen=True)
class BackboneConfig:
    embed_dim: int = 16
    num_layers: int = 2
    aggregation: str = "sum"
    message: str = "distmult"
    learning_rate: float = 0.01
    epochs: int = 60
    num_negatives: int = 32
    batch_size: int = 64

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.message not in MESSAGES:
            raise ConfigError(f"message must be one of {MESSAGES}, got {self.message!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.num_negatives < 1:
            raise ConfigError(f"num_negatives must be >= 1, got {self.num_negatives}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def replace(self, **kwargs) -> "BackboneConfig":
        return dataclasses.replace(self, **kwargs)


class ModelHandle:
    """Immutable snapshot of trained parameters plus config and role tag.

    Parameters are held with requires_grad=False and are never mutated;
    training functions clone them and return a new handle.
    """

    def __init__(self, config: BackboneConfig, role: str, num_relations: int,
                 params: dict[str, torch.Tensor], history=None):
        if role not in ROLES:
            raise ContractError(f"unknown model role {role!r}")
        self.config = config
        self.role = role
        self.num_relations = int(num_relations)
        self.params = {k: v.detach().clone().to(DTYPE) for k, v in params.items()}
        for v in self.params.values():
            v.requires_grad_(False)
        self.history: list[float] = list(history or [])

    def clone_params(self, requires_grad: bool = False) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone().requires_grad_(requires_grad) for k, v in self.params.items()}

    def param_fingerprint(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(self.params[name].numpy().tobytes())
        return h.digest()

    def with_role(self, role: str) -> "ModelHandle":
        return ModelHandle(self.config, role, self.num_relations, self.params, self.history)

    def __repr__(self):
        return f"ModelHandle(role={self.role!r}, d={self.config.embed_dim}, L={self.config.num_layers})"


@dataclass
class ScoreVector:
    """Scores over all candidate tails for one query."""

    scores: np.ndarray
    query: Query

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1:
            raise ContractError(f"scores must be 1-d, got shape {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ContractError("non-finite entries in score vector")


@dataclass
class EmbeddingTable:
    """Query-conditioned entity states and the shared relation embeddings."""

    entity: torch.Tensor  # (V, d)
    relation: torch.Tensor  # (R, d)
    query: Query


def init_model(config: BackboneConfig, g: KnowledgeGraph, rng: np.random.Generator,
               role: str = ROLE_BACKBONE) -> ModelHandle:
    """Fresh parameters drawn from ``rng``; same rng state -> same model."""
    d = config.embed_dim
    params: dict[str, torch.Tensor] = {}

    def t(a):
        return torch.from_numpy(np.asarray(a, dtype=np.float64))

    params["relation_emb"] = t(rng.normal(0.0, 1.0 / np.sqrt(d), size=(g.num_relations, d)))
    for layer in range(config.num_layers):
        bound = np.sqrt(6.0 / (d + 2 * d))
        params[f"layer{layer}_weight"] = t(rng.uniform(-bound, bound, size=(d, 2 * d)))
        params[f"layer{layer}_bias"] = t(np.zeros(d))
    bound = np.sqrt(6.0 / (d + 1))
    params["decoder_weight"] = t(rng.uniform(-bound, bound, size=(d,)))
    params["decoder_bias"] = t(np.zeros(()))
    return ModelHandle(config, role, g.num_relations, params)


def _edge_tensors(g: KnowledgeGraph):
    cached = getattr(g, "_kgxk_edge_tensors", None)
    if cached is None:
        cached = (
            torch.from_numpy(g.heads.astype(np.int64)),
            torch.from_numpy(g.rels.astype(np.int64)),
            torch.from_numpy(g.tails.astype(np.int64)),
        )
        g._kgxk_edge_tensors = cached
    return cached


def propagate(params: dict[str, torch.Tensor], config: BackboneConfig, g: KnowledgeGraph,
              query_heads: torch.Tensor, query_rels: torch.Tensor,
              weights: torch.Tensor) -> torch.Tensor:
    """Run message passing for a batch of queries; returns states (Q, V, d).

    ``weights`` is (Q, E) in [0, 1]; gradient flows through it, which is how
    mask training reaches the edge weights.
    """
    n_q = query_heads.shape[0]
    n_v = g.num_entities
    d = config.embed_dim
    src, rel, dst = _edge_tensors(g)
    rel_emb = params["relation_emb"]

    h = torch.zeros((n_q, n_v, d), dtype=DTYPE)
    h[torch.arange(n_q), query_heads] = rel_emb[query_rels]
    edge_rel = rel_emb[rel]  # (E, d)

    offsets = torch.arange(n_q, dtype=torch.long) * n_v
    flat_dst = (dst.unsqueeze(0) + offsets.unsqueeze(1)).reshape(-1)
    w = weights.unsqueeze(-1)

    mean_denom = None
    if config.aggregation == "mean":
        denom = torch.zeros(n_q * n_v, dtype=DTYPE)
        denom.index_add_(0, flat_dst, weights.reshape(-1))
        mean_denom = denom.clamp_min(_DENOM_FLOOR).reshape(n_q, n_v, 1)

    for layer in range(config.num_layers):
        hs = h[:, src, :]  # (Q, E, d)
        if config.message == "distmult":
            msg = hs * edge_rel
        else:
            msg = hs + edge_rel
        msg = msg * w
        agg = torch.zeros((n_q * n_v, d), dtype=DTYPE)
        agg.index_add_(0, flat_dst, msg.reshape(-1, d))
        agg = agg.reshape(n_q, n_v, d)
        if mean_denom is not None:
            agg = agg / mean_denom
        weight = params[f"layer{layer}_weight"]
        bias = params[f"layer{layer}_bias"]
        h = torch.relu(torch.cat([h, agg], dim=-1) @ weight.T + bias)
    return h


def decode(params: dict[str, torch.Tensor], states: torch.Tensor) -> torch.Tensor:
    """Per-entity scalar scores from final states, shape (..., V)."""
    return states @ params["decoder_weight"] + params["decoder_bias"]


def _check_view(model: ModelHandle, view: SubgraphView):
    if view.base.num_relations != model.num_relations:
        raise ContractError(
            f"graph has {view.base.num_relations} relations but model was built for {model.num_relations}"
        )


def _weights_from_view(view: SubgraphView, mask=None) -> torch.Tensor:
    w = torch.from_numpy(view.kept.astype(np.float64))
    if mask is not None:
        if mask.view.base is not view.base or not np.array_equal(mask.view.kept, view.kept):
            raise ContractError("mask is aligned to a different view than the forward pass")
        w = w.clone()
        kept_ids = torch.from_numpy(view.kept_edge_ids())
        w[kept_ids] = torch.from_numpy(np.asarray(mask.values, dtype=np.float64))
    return w


def forward(model: ModelHandle, view: SubgraphView, q: Query, mask=None) -> ScoreVector:
    """Score all candidate tails for q over the view, optionally mask-weighted.

    With no mask this is exactly the masked pass with all weights 1; the two
    share every line of arithmetic.
    """
    _check_view(model, view)
    if not 0 <= q.head < view.base.num_entities:
        raise ContractError(f"query head {q.head} out of range")
    if not 0 <= q.relation < model.num_relations:
        raise ContractError(f"query relation {q.relation} out of range")
    w = _weights_from_view(view, mask).unsqueeze(0)
    with torch.no_grad():
        states = propagate(model.params, model.config, view.base,
                           torch.tensor([q.head]), torch.tensor([q.relation]), w)
        scores = decode(model.params, states)[0]
    return ScoreVector(scores.numpy(), q)


def embed(model: ModelHandle, view: SubgraphView, q: Query) -> EmbeddingTable:
    """Final-layer entity states for q plus relation embeddings, detached."""
    _check_view(model, view)
    w = _weights_from_view(view).unsqueeze(0)
    with torch.no_grad():
        states = propagate(model.params, model.config, view.base,
                           torch.tensor([q.head]), torch.tensor([q.relation]), w)
    return EmbeddingTable(states[0], model.params["relation_emb"].clone(), q)


def batch_scores(model: ModelHandle, g: KnowledgeGraph, queries, weights: np.ndarray | None = None,
                 chunk: int = _SCORE_CHUNK) -> np.ndarray:
    """Score many queries, chunked; weights is (Q, E) or None for the full graph."""
    queries = list(queries)
    heads = torch.tensor([q.head for q in queries], dtype=torch.long)
    rels = torch.tensor([q.relation for q in queries], dtype=torch.long)
    out = np.empty((len(queries), g.num_entities), dtype=np.float64)
    with torch.no_grad():
        for lo in range(0, len(queries), chunk):
            hi = min(lo + chunk, len(queries))
            if weights is None:
                w = torch.ones((hi - lo, g.num_edges), dtype=DTYPE)
            else:
                w = torch.from_numpy(np.asarray(weights[lo:hi], dtype=np.float64))
            states = propagate(model.params, model.config, g, heads[lo:hi], rels[lo:hi], w)
            out[lo:hi] = decode(model.params, states).numpy()
    return out


def leak_edge_ids(g: KnowledgeGraph, q: Query) -> np.ndarray:
    """Edge ids carrying the query's own fact (the edge and its inverse twin)."""
    ids = []
    if q.answer is not None:
        e = g.find_edge(q.head, q.relation, q.answer)
        if e is not None:
            ids.append(e)
            ids.append(g.pair_id(e))
    return np.unique(np.asarray(ids, dtype=np.int64))


def _negative_tails(rng: np.random.Generator, answers: np.ndarray, n_entities: int,
                    k: int) -> np.ndarray:
    # sample from V-1 ids then shift past the answer so negatives never hit it
    neg = rng.integers(0, n_entities - 1, size=(len(answers), k))
    neg = neg + (neg >= answers[:, None])
    return neg


def _run_training(model: ModelHandle, g: KnowledgeGraph, queries, *, epochs: int,
                  learning_rate: float, batch_size: int, num_negatives: int, seed: int,
                  view_sampler=None, base_weights: np.ndarray | None = None):
    """Shared BCE training loop over (query, answer) pairs.

    Per query, the edge carrying the queried fact and its inverse twin are
    removed from the message view so the target is never directly visible.
    ``view_sampler(epoch, rng)`` may return per-query kept masks (Q, E) for
    perturbation training; ``base_weights`` pins static per-query views.
    Returns (params, per-epoch mean losses).
    """
    queries = list(queries)
    if not queries:
        raise ContractError("training requires at least one query")
    if g.num_entities < 2:
        raise ContractError("negative sampling needs at least two entities")
    for q in queries:
        if q.answer is None:
            raise ContractError("training queries must carry an answer")

    params = model.clone_params(requires_grad=True)
    history: list[float] = []
    if epochs == 0:
        return {k: v.detach() for k, v in params.items()}, history

    rng_order = derived_rng(seed, "order")
    rng_neg = derived_rng(seed, "neg")
    rng_views = derived_rng(seed, "views")

    n = len(queries)
    heads = np.array([q.head for q in queries], dtype=np.int64)
    rels = np.array([q.relation for q in queries], dtype=np.int64)
    answers = np.array([q.answer for q in queries], dtype=np.int64)
    leak = [leak_edge_ids(g, q) for q in queries]

    if base_weights is not None:
        base_weights = np.asarray(base_weights, dtype=np.float64)
        if base_weights.shape != (n, g.num_edges):
            raise ContractError(
                f"base_weights shape {base_weights.shape} != {(n, g.num_edges)}"
            )

    opt = torch.optim.Adam(params.values(), lr=learning_rate)
    heads_t = torch.from_numpy(heads)
    rels_t = torch.from_numpy(rels)

    for epoch in range(epochs):
        order = rng_order.permutation(n)
        epoch_weights = view_sampler(epoch, rng_views) if view_sampler is not None else None
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            b = len(idx)
            if epoch_weights is not None:
                w_np = np.array(epoch_weights[idx], dtype=np.float64)
            elif base_weights is not None:
                w_np = base_weights[idx].copy()
            else:
                w_np = np.ones((b, g.num_edges), dtype=np.float64)
            for row, qi in enumerate(idx):
                w_np[row, leak[qi]] = 0.0
            w = torch.from_numpy(w_np)

            states = propagate(params, model.config, g, heads_t[idx], rels_t[idx], w)
            scores = decode(params, states)  # (B, V)
            pos = scores[torch.arange(b), torch.from_numpy(answers[idx])]
            neg_idx = _negative_tails(rng_neg, answers[idx], g.num_entities, num_negatives)
            neg = scores.gather(1, torch.from_numpy(neg_idx))
            logits = torch.cat([pos.unsqueeze(1), neg], dim=1)
            targets = torch.zeros_like(logits)
            targets[:, 0] = 1.0
            loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, targets)
            if not torch.isfinite(loss):
                raise TrainingError("non-finite training loss", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.item()) * b
        history.append(total / n)
    return {k: v.detach() for k, v in params.items()}, history


def train_backbone(model: ModelHandle, g: KnowledgeGraph, queries, *, seed: int = 0,
                   epochs: int | None = None) -> ModelHandle:
    """Train on the full graph; returns a new handle, input handle untouched."""
    cfg = model.config
    params, history = _run_training(
        model, g, queries,
        epochs=cfg.epochs if epochs is None else epochs,
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        num_negatives=cfg.num_negatives, seed=seed,
    )
    return ModelHandle(cfg, model.role, model.num_relations, params, model.history + history)


def fine_tune(model: ModelHandle, dataset, *, seed: int = 0, epochs: int | None = None,
              learning_rate: float | None = None) -> ModelHandle:
    """Continue training on (query, view) pairs; the source handle stays frozen.

    Each query is scored against its own subgraph view. Raises on an empty
    dataset rather than silently returning a copy.
    """
    dataset = list(dataset)
    if not dataset:
        raise ContractError("fine_tune requires a nonempty dataset")
    g = dataset[0][1].base
    queries = []
    weights = np.empty((len(dataset), g.num_edges), dtype=np.float64)
    for i, (q, view) in enumerate(dataset):
        if view.base is not g:
            raise ContractError("all fine-tune views must share one base graph")
        queries.append(q)
        weights[i] = view.kept.astype(np.float64)
    cfg = model.config
    params, history = _run_training(
        model, g, queries,
        epochs=cfg.epochs if epochs is None else epochs,
        learning_rate=cfg.learning_rate if learning_rate is None else learning_rate,
        batch_size=cfg.batch_size, num_negatives=cfg.num_negatives, seed=seed,
        base_weights=weights,
    )
    return ModelHandle(cfg, model.role, model.num_relations, params, model.history + history)


def save_checkpoint(model: ModelHandle, path):
    payload = {
        "format_version": 1,
        "role": model.role,
        "num_relations": model.num_relations,
        "config": dataclasses.asdict(model.config),
        "history": list(model.history),
        "params": {k: v for k, v in model.params.items()},
    }
    torch.save(payload, path)


def _expected_shapes(config: BackboneConfig, num_relations: int) -> dict[str, tuple]:
    d = config.embed_dim
    shapes = {"relation_emb": (num_relations, d)}
    for layer in range(config.num_layers):
        shapes[f"layer{layer}_weight"] = (d, 2 * d)
        shapes[f"layer{layer}_bias"] = (d,)
    shapes["decoder_weight"] = (d,)
    shapes["decoder_bias"] = ()
    return shapes


def load_checkpoint(path, g: KnowledgeGraph | None = None) -> ModelHandle:
    """Load a handle; validates schema, shapes, and relation-count match with g."""
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != 1:
        raise CheckpointError(f"unrecognized checkpoint format in {path}")
    try:
        config = BackboneConfig(**payload["config"])
        role = payload["role"]
        num_relations = int(payload["num_relations"])
        params = payload["params"]
        history = payload.get("history", [])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    expected = _expected_shapes(config, num_relations)
    if set(params) != set(expected):
        raise CheckpointError(
            f"checkpoint {path} parameter names {sorted(params)} != expected {sorted(expected)}"
        )
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise CheckpointError(
                f"checkpoint {path} param {name} has shape {tuple(params[name].shape)}, expected {shape}"
            )
    if g is not None and g.num_relations != num_relations:
        raise CheckpointError(
            f"checkpoint built for {num_relations} relations but graph has {g.num_relations}"
        )
    if role not in ROLES:
        raise CheckpointError(f"checkpoint {path} carries unknown role {role!r}")
    return ModelHandle(config, role, num_relations, params, history)
