"""Fine-tune-based explanation evaluation and distribution-shift sweeps.

For each explainer and budget: explain validation and test queries,
fine-tune a fresh copy of the backbone on the validation explanation
subgraphs, then score test queries where each query's message view is its
own explanation. Reference arms bracket every explainer from below (empty
subgraphs) and above (the head's whole component).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .backbone import ModelHandle, ScoreVector, batch_scores, fine_tune
from .errors import ConfigError, ContractError, ProtocolError
from .explainer import (
    ExplainerHParams,
    Explanation,
    MaskNet,
    extract_explanation,
    query_clean_view,
)
from .baselines import instance_mask_explain, parameterized_mask_explain
from .graph import FilterIndex, KnowledgeGraph, Query, count_components, filtered_candidates
from .perturb import drop_edges_uniform, ego_network
from .ranking import RankingMetrics, evaluate_model, rank_metrics
from .seeding import derived_rng
from .walk import PPRConfig

FULL_ARM = "full"
EMPTY_ARM = "empty"


# -- explainer arms -----------------------------------------------------------


class RawArm:
    """Connected budgeted extraction from a walk-trained mask net."""

    def __init__(self, net: MaskNet, eval_model: ModelHandle, cfg: PPRConfig):
        self.net = net
        self.eval_model = eval_model
        self.cfg = cfg

    def explain(self, g: KnowledgeGraph, queries, budget: int) -> list[Explanation]:
        return [extract_explanation(self.net, self.eval_model, g, q, budget, self.cfg)
                for q in queries]


class ParameterizedArm:
    """Top-k mask-weight selection from a net trained without the walk loss."""

    def __init__(self, net: MaskNet, eval_model: ModelHandle):
        self.net = net
        self.eval_model = eval_model

    def explain(self, g: KnowledgeGraph, queries, budget: int) -> list[Explanation]:
        return [parameterized_mask_explain(self.net, self.eval_model, g, q, budget)
                for q in queries]


class InstanceArm:
    """Per-query free-mask optimization; slow by construction."""

    def __init__(self, eval_model: ModelHandle, hparams: ExplainerHParams, seed: int = 0):
        self.eval_model = eval_model
        self.hparams = hparams
        self.seed = seed

    def explain(self, g: KnowledgeGraph, queries, budget: int) -> list[Explanation]:
        out = []
        for i, q in enumerate(queries):
            rng = derived_rng(self.seed, "instance", str(q.head), str(q.relation), str(i))
            out.append(instance_mask_explain(self.eval_model, g, q, budget, self.hparams, rng))
        return out


class FullComponentArm:
    """Upper reference: the head's entire component, ignoring the budget knob."""

    compute_once = True

    def explain(self, g: KnowledgeGraph, queries, budget: int) -> list[Explanation]:
        out = []
        for q in queries:
            view = query_clean_view(g, q)
            dist = g.bfs_distances([q.head], kept=view.kept)
            reachable = np.isfinite(dist)
            kept_ids = view.kept_edge_ids()
            sel = kept_ids[reachable[g.heads[kept_ids]] & reachable[g.tails[kept_ids]]]
            out.append(Explanation(q, len(sel), sel, np.ones(len(sel)),
                                   pi=None, converged=True))
        return out


class EmptyArm:
    """Lower reference: no message edges at all."""

    compute_once = True

    def explain(self, g: KnowledgeGraph, queries, budget: int) -> list[Explanation]:
        return [Explanation(q, 0, np.empty(0, dtype=np.int64), np.empty(0),
                            pi=None, converged=True) for q in queries]


# -- protocol -----------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolHParams:
    ft_epochs: int = 20
    ft_learning_rate: float | None = None
    seed: int = 0
    include_reference_arms: bool = True

    def __post_init__(self):
        if self.ft_epochs < 0:
            raise ConfigError(f"ft_epochs must be >= 0, got {self.ft_epochs}")


@dataclass
class ArmResult:
    explainer: str
    budget: int
    metrics: RankingMetrics
    seconds: float
    components: float


@dataclass
class ProtocolReport:
    rows: list[ArmResult]
    budgets: list[int]

    def row(self, explainer: str, budget: int) -> ArmResult:
        for r in self.rows:
            if r.explainer == explainer and r.budget == budget:
                return r
        raise KeyError((explainer, budget))


def _mean_components(g: KnowledgeGraph, explanations) -> float:
    counts = [count_components(g, ex.edge_ids) for ex in explanations]
    return float(np.mean(counts)) if counts else 0.0


def _check_budget(name: str, explanations, budget: int):
    for ex in explanations:
        if len(ex) > budget:
            raise ProtocolError(
                f"explainer {name!r} produced {len(ex)} edges over budget {budget}"
            )


def run_protocol(backbone: ModelHandle, evaluator: ModelHandle, explainers: dict,
                 g: KnowledgeGraph, val_queries, test_queries, budgets,
                 filter_index: FilterIndex,
                 hparams: ProtocolHParams = ProtocolHParams()) -> ProtocolReport:
    """One ArmResult per (explainer, budget), plus reference arms.

    Fine-tuning always starts from a fresh clone of ``backbone``; neither the
    backbone nor the evaluator is ever mutated (audited by fingerprint).
    Reference arms ignore the budget, are computed once, and their numbers
    are replicated across budgets so every budget row can be bracketed.
    """
    budgets = [int(k) for k in budgets]
    if not budgets:
        raise ContractError("run_protocol requires at least one budget")
    val_queries = list(val_queries)
    test_queries = list(test_queries)
    backbone_before = backbone.param_fingerprint()
    evaluator_before = evaluator.param_fingerprint()

    arms = dict(explainers)
    if hparams.include_reference_arms:
        arms.setdefault(FULL_ARM, FullComponentArm())
        arms.setdefault(EMPTY_ARM, EmptyArm())

    rows: list[ArmResult] = []
    for name, arm in arms.items():
        once = getattr(arm, "compute_once", False)
        cached: ArmResult | None = None
        for budget in budgets:
            if once and cached is not None:
                rows.append(ArmResult(name, budget, cached.metrics, cached.seconds,
                                      cached.components))
                continue
            t0 = time.perf_counter()
            val_ex = arm.explain(g, val_queries, budget)
            test_ex = arm.explain(g, test_queries, budget)
            seconds = time.perf_counter() - t0
            if not once:
                _check_budget(name, val_ex, budget)
                _check_budget(name, test_ex, budget)
            dataset = [(q, g.view_of_edges(ex.edge_ids))
                       for q, ex in zip(val_queries, val_ex)]
            tuned = fine_tune(
                backbone, dataset, seed=hparams.seed, epochs=hparams.ft_epochs,
                learning_rate=hparams.ft_learning_rate,
            )
            views = [g.view_of_edges(ex.edge_ids) for ex in test_ex]
            metrics = evaluate_model(tuned, views, test_queries, filter_index)
            result = ArmResult(name, budget, metrics, seconds,
                               _mean_components(g, test_ex))
            rows.append(result)
            cached = result

    if backbone.param_fingerprint() != backbone_before:
        raise ContractError("protocol mutated the shared backbone")
    if evaluator.param_fingerprint() != evaluator_before:
        raise ContractError("protocol mutated the shared evaluator")
    return ProtocolReport(rows, budgets)


# -- sweeps -------------------------------------------------------------------


@dataclass
class SweepReport:
    rows: list[tuple[str, float, float]]  # (model name, x, mrr)

    def curve(self, name: str) -> list[tuple[float, float]]:
        return [(x, m) for n, x, m in self.rows if n == name]


def _named_models(models) -> list[tuple[str, ModelHandle]]:
    if isinstance(models, dict):
        named = list(models.items())
    else:
        named = [(m.role, m) for m in models]
    seen = set()
    for name, _ in named:
        if name in seen:
            raise ContractError(f"duplicate model name {name!r} in sweep")
        seen.add(name)
    return named


def edge_drop_sweep(models, g: KnowledgeGraph, queries, probs,
                    filter_index: FilterIndex, seed: int = 0) -> SweepReport:
    """MRR per model per drop probability, on shared per-query dropped views.

    At each p every query gets one freshly seeded view, reused for all
    models so curves differ only by model.
    """
    queries = list(queries)
    named = _named_models(models)
    rows = []
    for p in probs:
        weights = np.empty((len(queries), g.num_edges), dtype=np.float64)
        for i in range(len(queries)):
            rng = derived_rng(seed, "sweep-drop", f"{float(p):.6f}", str(i))
            weights[i] = drop_edges_uniform(g, float(p), rng).kept.astype(np.float64)
        for name, model in named:
            scores = batch_scores(model, g, queries, weights)
            recip = np.empty(len(queries))
            for i, q in enumerate(queries):
                cand = filtered_candidates(q, filter_index, g.num_entities)
                _, recip[i] = rank_metrics(ScoreVector(scores[i], q), q, cand)
            rows.append((name, float(p), float(recip.mean())))
    return SweepReport(rows)


def ego_radius_sweep(models, g: KnowledgeGraph, queries, radii,
                     filter_index: FilterIndex) -> SweepReport:
    """MRR per model per radius, each query on the ego net around its head."""
    queries = list(queries)
    named = _named_models(models)
    rows = []
    for r in radii:
        views = [ego_network(g, [q.head], int(r)) for q in queries]
        for name, model in named:
            metrics = evaluate_model(model, views, queries, filter_index)
            rows.append((name, float(r), metrics.mrr))
    return SweepReport(rows)


# -- report files -------------------------------------------------------------

REPORT_HEADER = ["explainer", "budget", "mrr", "hits1", "hits3", "hits10",
                 "seconds", "components"]
METRICS_HEADER = ["explainer", "budget", "mrr", "hits1", "hits3", "hits10", "components"]


def _metric_fields(r: ArmResult) -> list[str]:
    return [
        f"{r.metrics.mrr:.6f}",
        f"{r.metrics.hits_at[1]:.6f}",
        f"{r.metrics.hits_at[3]:.6f}",
        f"{r.metrics.hits_at[10]:.6f}",
    ]


def write_report_csv(report: ProtocolReport, path):
    """Full report including wall-clock seconds (not run-to-run stable)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in report.rows:
            w.writerow([r.explainer, r.budget, *_metric_fields(r),
                        f"{r.seconds:.3f}", f"{r.components:.3f}"])


def write_metrics_csv(report: ProtocolReport, path):
    """Deterministic columns only; byte-identical across equal-seed runs."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for r in report.rows:
            w.writerow([r.explainer, r.budget, *_metric_fields(r),
                        f"{r.components:.3f}"])


def write_report_json(report: ProtocolReport, path):
    payload = {
        "budgets": report.budgets,
        "rows": [
            {
                "explainer": r.explainer,
                "budget": r.budget,
                "mrr": r.metrics.mrr,
                "hits": {str(k): v for k, v in sorted(r.metrics.hits_at.items())},
                "n_queries": r.metrics.n_queries,
                "seconds": r.seconds,
                "components": r.components,
            }
            for r in report.rows
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_sweep_csv(report: SweepReport, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "x", "mrr"])
        for name, x, mrr in report.rows:
            w.writerow([name, f"{x:g}", f"{mrr:.6f}"])
