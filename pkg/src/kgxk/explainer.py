"""Parameterized edge-mask explainer with a random-walk connectivity signal.

A small MLP scores every kept edge from query-conditioned embeddings; the
soft mask feeds back into the frozen evaluator for a fidelity loss and into
the PPR machinery for a connectivity loss. Extraction turns the trained
scores into a budgeted connected subgraph around the query head.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .backbone import (
    DTYPE,
    EmbeddingTable,
    ModelHandle,
    ROLE_EVALUATOR_DISTANCE,
    ROLE_EVALUATOR_UNIFORM,
    batch_scores,
    decode,
    leak_edge_ids,
    propagate,
)
from .errors import CheckpointError, ConfigError, ContractError
from .graph import KnowledgeGraph, Query, SubgraphView
from .walk import (
    NodeDistribution,
    PPRConfig,
    PairStructure,
    partition_edges,
    ppr,
    stochastic_adjacency,
    top_nodes,
)

_ENTROPY_CLAMP = 1e-7


class MaskNet:
    """MLP from per-edge feature vectors [z_s; z_p; z_o; z_h; z_r] to logits."""

    def __init__(self, embed_dim: int, hidden=(64,), rng: np.random.Generator | None = None,
                 temperature: float = 1.0):
        if embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {embed_dim}")
        hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in hidden):
            raise ConfigError(f"hidden sizes must be >= 1, got {hidden}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.embed_dim = int(embed_dim)
        self.hidden = hidden
        self.temperature = float(temperature)
        self.weights: list[torch.Tensor] = []
        self.biases: list[torch.Tensor] = []
        sizes = [5 * embed_dim, *hidden, 1]
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = torch.from_numpy(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            b = torch.zeros(fan_out, dtype=DTYPE)
            w.requires_grad_(True)
            b.requires_grad_(True)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def input_dim(self) -> int:
        return 5 * self.embed_dim

    def parameters(self) -> list[torch.Tensor]:
        return [*self.weights, *self.biases]

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.input_dim:
            raise ContractError(
                f"feature width {features.shape[-1]} != 5 * embed_dim = {self.input_dim}"
            )
        h = features
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < len(self.weights) - 1:
                h = torch.relu(h)
        return h.squeeze(-1)


@dataclass
class EdgeMask:
    """Soft weights over a view's kept edges, aligned to kept_edge_ids order."""

    values: torch.Tensor
    view: SubgraphView
    query: Query

    def __post_init__(self):
        if not isinstance(self.values, torch.Tensor):
            self.values = torch.from_numpy(np.asarray(self.values, dtype=np.float64))
        self.values = self.values.to(DTYPE)
        if self.values.ndim != 1 or len(self.values) != self.view.num_kept:
            raise ContractError(
                f"mask carries {tuple(self.values.shape)} values for {self.view.num_kept} kept edges"
            )
        detached = self.values.detach()
        if len(detached) and (detached.min() < 0.0 or detached.max() > 1.0):
            raise ContractError("mask values outside [0, 1]")

    def values_np(self) -> np.ndarray:
        return self.values.detach().numpy()


@dataclass(frozen=True)
class ExplainerHParams:
    epochs: int = 80
    learning_rate: float = 0.01
    batch_size: int = 16
    lambda_size: float = 0.005
    lambda_ent: float = 0.001
    temp_start: float = 1.0
    temp_end: float = 0.1
    hidden: tuple[int, ...] = (64,)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lambda_size < 0 or self.lambda_ent < 0:
            raise ConfigError("regularizer weights must be >= 0")
        if self.temp_start <= 0 or self.temp_end <= 0:
            raise ConfigError("temperatures must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def temperature_at(self, epoch: int) -> float:
        """Geometric anneal from temp_start to temp_end across all epochs."""
        if self.epochs == 1:
            return self.temp_end
        frac = epoch / (self.epochs - 1)
        return float(self.temp_start * (self.temp_end / self.temp_start) ** frac)


@dataclass
class Explanation:
    """A budgeted edge subset for one query, in selection-priority order."""

    query: Query
    budget: int
    edge_ids: np.ndarray
    omega: np.ndarray
    pi: np.ndarray | None = None
    converged: bool = True
    head_isolated: bool = False

    def __post_init__(self):
        self.edge_ids = np.asarray(self.edge_ids, dtype=np.int64)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if len(self.edge_ids) > self.budget:
            raise ContractError(
                f"explanation holds {len(self.edge_ids)} edges over budget {self.budget}"
            )
        if len(self.omega) != len(self.edge_ids):
            raise ContractError("omega must align with edge_ids")

    def __len__(self):
        return len(self.edge_ids)


def query_clean_view(g: KnowledgeGraph, q: Query) -> SubgraphView:
    """Full graph minus the edges carrying the queried fact itself."""
    kept = np.ones(g.num_edges, dtype=bool)
    kept[leak_edge_ids(g, q)] = False
    return SubgraphView(g, kept)


def edge_scores(net: MaskNet, emb: EmbeddingTable, view: SubgraphView, q: Query,
                temperature: float | None = None, rng: np.random.Generator | None = None,
                hard: bool = False) -> EdgeMask:
    """Per-kept-edge soft weights via the binary-concrete relaxation.

    With an rng and hard=False a seeded logistic noise sample is added to the
    logits (training mode); otherwise the mask is the plain tempered sigmoid.
    """
    g = view.base
    if emb.entity.shape[0] != g.num_entities:
        raise ContractError(
            f"embedding table covers {emb.entity.shape[0]} entities, view has {g.num_entities}"
        )
    if emb.query.head != q.head or emb.query.relation != q.relation:
        raise ContractError("embedding table was conditioned on a different query")
    temperature = net.temperature if temperature is None else float(temperature)
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    kept_ids = view.kept_edge_ids()
    src = torch.from_numpy(g.heads[kept_ids])
    rel = torch.from_numpy(g.rels[kept_ids])
    dst = torch.from_numpy(g.tails[kept_ids])
    n = len(kept_ids)
    features = torch.cat(
        [
            emb.entity[src],
            emb.relation[rel],
            emb.entity[dst],
            emb.entity[q.head].unsqueeze(0).expand(n, -1),
            emb.relation[q.relation].unsqueeze(0).expand(n, -1),
        ],
        dim=-1,
    )
    logits = net.logits(features)
    if rng is not None and not hard:
        u = rng.uniform(size=n)
        noise = torch.from_numpy(np.log(u) - np.log1p(-u))
        logits = logits + noise
    omega = torch.sigmoid(logits / temperature)
    return EdgeMask(omega, view, q)


def teleport_set(eval_model: ModelHandle, g: KnowledgeGraph, q: Query, m: int) -> np.ndarray:
    """{head} plus the evaluator's top-m predicted tails.

    Scoring runs on the whole graph except the query's own fact edges; the
    evaluator never sees those during training, so leaving them in would
    feed it an out-of-distribution signal right where it matters most. For
    held-out queries the two views are identical.
    """
    if m < 0:
        raise ContractError(f"m must be >= 0, got {m}")
    if m == 0:
        return np.asarray([q.head], dtype=np.int64)
    weights = query_clean_view(g, q).kept.astype(np.float64)[None]
    scores = batch_scores(eval_model, g, [q], weights)[0]
    top = top_nodes(scores, m)
    return np.unique(np.concatenate([[q.head], top])).astype(np.int64)


def _mask_positions(view: SubgraphView, edge_ids: np.ndarray) -> np.ndarray:
    kept_ids = view.kept_edge_ids()
    pos = np.searchsorted(kept_ids, edge_ids)
    if np.any(pos >= len(kept_ids)) or np.any(kept_ids[np.minimum(pos, len(kept_ids) - 1)] != edge_ids):
        raise ContractError("edge ids outside the mask's view")
    return pos


def ppr_loss(mask: EdgeMask, e_in: np.ndarray, e_out: np.ndarray,
             beta_in: float, beta_out: float) -> torch.Tensor:
    """-beta_in * sum(omega on E_in) + beta_out * sum(omega on E_out).

    The partition must cover the mask's kept edges exactly; gradients flow
    into the mask values, the partition itself is constant.
    """
    e_in = np.asarray(e_in, dtype=np.int64)
    e_out = np.asarray(e_out, dtype=np.int64)
    combined = np.sort(np.concatenate([e_in, e_out]))
    if not np.array_equal(combined, mask.view.kept_edge_ids()):
        raise ContractError("edge partition does not cover the mask's view")
    loss = torch.zeros((), dtype=DTYPE)
    if len(e_in):
        loss = loss - beta_in * mask.values[_mask_positions(mask.view, e_in)].sum()
    if len(e_out):
        loss = loss + beta_out * mask.values[_mask_positions(mask.view, e_out)].sum()
    return loss


def regularizers(mask: EdgeMask, lambda_size: float, lambda_ent: float) -> torch.Tensor:
    """Mean-size penalty plus mean binary entropy, the usual sparsity pair."""
    if len(mask.values) == 0:
        return torch.zeros((), dtype=DTYPE)
    size = mask.values.mean()
    w = mask.values.clamp(_ENTROPY_CLAMP, 1.0 - _ENTROPY_CLAMP)
    ent = (-w * torch.log(w) - (1.0 - w) * torch.log(1.0 - w)).mean()
    return lambda_size * size + lambda_ent * ent


def _require_evaluator(model: ModelHandle):
    if model.role not in (ROLE_EVALUATOR_UNIFORM, ROLE_EVALUATOR_DISTANCE):
        raise ContractError(
            f"mask training requires an evaluator-role model, got role {model.role!r}"
        )


class _QueryCache:
    """Static per-query state reused every training step (evaluator frozen)."""

    def __init__(self, eval_model: ModelHandle, g: KnowledgeGraph, q: Query, cfg: PPRConfig):
        self.query = q
        self.view = query_clean_view(g, q)
        self.kept_ids = self.view.kept_edge_ids()
        self.structure = PairStructure(g, self.kept_ids)
        self.teleport = teleport_set(eval_model, g, q, cfg.m)
        with torch.no_grad():
            w = torch.from_numpy(self.view.kept.astype(np.float64)).unsqueeze(0)
            states = propagate(eval_model.params, eval_model.config, g,
                               torch.tensor([q.head]), torch.tensor([q.relation]), w)
        self.emb = EmbeddingTable(states[0], eval_model.params["relation_emb"].clone(), q)
        self.base_weights = torch.from_numpy(self.view.kept.astype(np.float64))
        self.kept_ids_t = torch.from_numpy(self.kept_ids)


def _connectivity_partition(cache: _QueryCache, omega_np: np.ndarray, cfg: PPRConfig, l: int):
    pw = cache.structure.collapse(omega_np, cfg.collapse)
    adj = stochastic_adjacency(pw, cache.teleport, cfg.alpha, cache.view.base)
    dist = ppr(adj, cache.teleport, cfg)
    e_in, e_out = partition_edges(cache.view, dist, l)
    return dist, e_in, e_out


def objective_terms(net: MaskNet, eval_model: ModelHandle, g: KnowledgeGraph, q: Query,
                    cfg: PPRConfig, hparams: ExplainerHParams, temperature: float | None = None,
                    rng: np.random.Generator | None = None) -> dict[str, torch.Tensor]:
    """One query's loss terms: fidelity, ppr, regularizers, and their total.

    The trainer optimizes exactly this sum; exposed so the decomposition can
    be audited from outside.
    """
    if q.answer is None:
        raise ContractError("objective requires a query with an answer")
    use_walk = cfg.beta_in != 0.0 or cfg.beta_out != 0.0
    if use_walk and cfg.l is None:
        raise ConfigError("cfg.l must be set for mask training (extraction derives l = 2k)")
    cache = _QueryCache(eval_model, g, q, cfg)
    mask = edge_scores(net, cache.emb, cache.view, q, temperature, rng)
    weights = cache.base_weights.clone()
    weights[cache.kept_ids_t] = mask.values
    states = propagate(eval_model.params, eval_model.config, g,
                       torch.tensor([q.head]), torch.tensor([q.relation]), weights.unsqueeze(0))
    scores = decode(eval_model.params, states)
    fidelity = torch.nn.functional.cross_entropy(scores, torch.tensor([q.answer]))
    if use_walk:
        _, e_in, e_out = _connectivity_partition(cache, mask.values_np(), cfg, cfg.l)
        ppr_term = ppr_loss(mask, e_in, e_out, cfg.beta_in, cfg.beta_out)
    else:
        ppr_term = torch.zeros((), dtype=DTYPE)
    reg_term = regularizers(mask, hparams.lambda_size, hparams.lambda_ent)
    return {
        "fidelity": fidelity,
        "ppr": ppr_term,
        "regularizers": reg_term,
        "total": fidelity + ppr_term + reg_term,
    }


def train_explainer(net: MaskNet, eval_model: ModelHandle, g: KnowledgeGraph, train_queries,
                    cfg: PPRConfig, hparams: ExplainerHParams,
                    rng: np.random.Generator | int = 0) -> MaskNet:
    """Optimize the mask MLP against a frozen evaluator; returns the same net.

    Per step and query: soft mask from noisy edge scores, fidelity
    cross-entropy of the true answer under the masked forward pass, the
    walk-based connectivity loss (walk treated as a constant for gradients),
    and the sparsity regularizers. Each query's own fact edges are excluded
    from its view. Setting beta_in = beta_out = 0 recovers a plain
    parameterized mask trainer.
    """
    queries = list(train_queries)
    if not queries:
        raise ContractError("train_explainer requires at least one query")
    _require_evaluator(eval_model)
    use_walk = cfg.beta_in != 0.0 or cfg.beta_out != 0.0
    if use_walk and cfg.l is None:
        raise ConfigError("cfg.l must be set for mask training (extraction derives l = 2k)")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    order_rng, noise_rng = rng.spawn(2)
    before = eval_model.param_fingerprint()
    caches = [_QueryCache(eval_model, g, q, cfg) for q in queries]
    answers = torch.tensor([q.answer for q in queries], dtype=torch.long)
    heads = torch.tensor([q.head for q in queries], dtype=torch.long)
    rels = torch.tensor([q.relation for q in queries], dtype=torch.long)
    if torch.any(answers < 0):
        raise ContractError("train_explainer requires queries with answers")

    opt = torch.optim.Adam(net.parameters(), lr=hparams.learning_rate)
    n = len(queries)
    for epoch in range(hparams.epochs):
        temperature = hparams.temperature_at(epoch)
        net.temperature = temperature
        order = order_rng.permutation(n)
        for lo in range(0, n, hparams.batch_size):
            idx = order[lo:lo + hparams.batch_size]
            masks = []
            rows = []
            for qi in idx:
                cache = caches[qi]
                mask = edge_scores(net, cache.emb, cache.view, cache.query,
                                   temperature, noise_rng)
                row = cache.base_weights.clone()
                row[cache.kept_ids_t] = mask.values
                masks.append(mask)
                rows.append(row)
            weights = torch.stack(rows)
            states = propagate(eval_model.params, eval_model.config, g,
                               heads[idx], rels[idx], weights)
            scores = decode(eval_model.params, states)
            loss = torch.nn.functional.cross_entropy(scores, answers[idx])
            extra = torch.zeros((), dtype=DTYPE)
            for mask, qi in zip(masks, idx):
                cache = caches[qi]
                if use_walk:
                    _, e_in, e_out = _connectivity_partition(
                        cache, mask.values_np(), cfg, cfg.l)
                    extra = extra + ppr_loss(mask, e_in, e_out, cfg.beta_in, cfg.beta_out)
                extra = extra + regularizers(mask, hparams.lambda_size, hparams.lambda_ent)
            loss = loss + extra / len(idx)
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.temperature = hparams.temp_end

    if eval_model.param_fingerprint() != before:
        raise ContractError("evaluator parameters changed during mask training")
    return net


def extract_explanation(net: MaskNet, eval_model: ModelHandle, g: KnowledgeGraph, q: Query,
                        k: int, cfg: PPRConfig) -> Explanation:
    """Greedy connected growth from the head over walk-and-mask ranked edges.

    Edges inside the top-l node set come first (by descending mask weight),
    then the rest by descending endpoint walk mass, then weight; all ties
    fall back to ascending edge id. Growth admits the best-ranked edge
    touching the current component until the budget is spent.
    """
    if k < 1:
        raise ContractError(f"budget k must be >= 1, got {k}")
    view = query_clean_view(g, q)
    kept = view.kept
    incident = g.incident_edges(q.head)
    if not np.any(kept[incident]):
        return Explanation(q, k, np.empty(0, dtype=np.int64), np.empty(0),
                           pi=None, converged=True, head_isolated=True)

    emb_states = _QueryCache(eval_model, g, q, cfg)
    mask = edge_scores(net, emb_states.emb, view, q, rng=None, hard=True)
    omega = mask.values_np()
    kept_ids = emb_states.kept_ids
    _pos = {int(e): i for i, e in enumerate(kept_ids)}

    l = cfg.l if cfg.l is not None else 2 * k
    dist, e_in, e_out = _connectivity_partition(emb_states, omega, cfg, l)
    pi = dist.pi

    omega_in = omega[np.searchsorted(kept_ids, e_in)]
    in_order = e_in[np.lexsort((e_in, -omega_in))]
    omega_out = omega[np.searchsorted(kept_ids, e_out)]
    pi_sum = pi[g.heads[e_out]] + pi[g.tails[e_out]]
    out_order = e_out[np.lexsort((e_out, -omega_out, -pi_sum))]
    priority = np.empty(g.num_edges, dtype=np.int64)
    ranked = np.concatenate([in_order, out_order])
    priority[ranked] = np.arange(len(ranked))

    chosen: list[int] = []
    in_component = np.zeros(g.num_entities, dtype=bool)
    pushed = np.zeros(g.num_edges, dtype=bool)
    heap: list[tuple[int, int]] = []

    def admit(v: int):
        in_component[v] = True
        for e in g.incident_edges(v):
            if kept[e] and not pushed[e]:
                pushed[e] = True
                heapq.heappush(heap, (int(priority[e]), int(e)))

    admit(q.head)
    while heap and len(chosen) < k:
        _, e = heapq.heappop(heap)
        chosen.append(e)
        for v in (int(g.heads[e]), int(g.tails[e])):
            if not in_component[v]:
                admit(v)

    edge_ids = np.asarray(chosen, dtype=np.int64)
    return Explanation(q, k, edge_ids, omega[[_pos[int(e)] for e in chosen]],
                       pi=pi, converged=dist.converged, head_isolated=False)


# -- persistence --------------------------------------------------------------


def explanation_record(g: KnowledgeGraph, ex: Explanation) -> dict:
    tail = g.vocab.entity_names[ex.query.answer] if ex.query.answer is not None else None
    edges = []
    for rank, (e, w) in enumerate(zip(ex.edge_ids, ex.omega), start=1):
        t = g.edge(int(e))
        edges.append([
            g.vocab.entity_names[t.head],
            g.relation_name(t.relation),
            g.vocab.entity_names[t.tail],
            float(w),
            rank,
        ])
    return {
        "query": {
            "head": g.vocab.entity_names[ex.query.head],
            "relation": g.relation_name(ex.query.relation),
            "tail": tail,
        },
        "budget": int(ex.budget),
        "edges": edges,
        "converged": bool(ex.converged),
    }


def write_explanations(path, g: KnowledgeGraph, explanations):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in explanations:
            fh.write(json.dumps(explanation_record(g, ex)) + "\n")


def read_explanations(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def save_masknet(net: MaskNet, path):
    payload = {
        "format_version": 1,
        "embed_dim": net.embed_dim,
        "hidden": list(net.hidden),
        "temperature": net.temperature,
        "weights": [w.detach() for w in net.weights],
        "biases": [b.detach() for b in net.biases],
    }
    torch.save(payload, path)


def load_masknet(path) -> MaskNet:
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read mask checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != 1:
        raise CheckpointError(f"unrecognized mask checkpoint format in {path}")
    net = MaskNet(payload["embed_dim"], payload["hidden"], temperature=payload["temperature"])
    expected = [tuple(w.shape) for w in net.weights]
    got = [tuple(w.shape) for w in payload["weights"]]
    if expected != got:
        raise CheckpointError(f"mask checkpoint shapes {got} != expected {expected}")
    for slot, w in zip(net.weights, payload["weights"]):
        with torch.no_grad():
            slot.copy_(w)
    for slot, b in zip(net.biases, payload["biases"]):
        with torch.no_grad():
            slot.copy_(b)
    return net
