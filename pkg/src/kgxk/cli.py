"""Command-line front end.

One executable, ten subcommands covering preparation, training, explanation,
evaluation, sweeps, and the protocol. Every run reads a RunConfig (YAML file
plus flag overrides), writes its artifacts under <out>/<run-id>/, and drops
a manifest there that reproduces the run. Exit codes: 0 ok, 1 usage, 2
data or contract problem, 3 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
import torch

from . import __version__
from .backbone import (
    BackboneConfig,
    ModelHandle,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train_backbone,
)
from .config import RunConfig, config_to_dict, load_config
from .errors import ConfigError, KgxkError, TrainingError
from .evaluator import train_evaluator
from .explainer import (
    MaskNet,
    extract_explanation,
    load_masknet,
    save_masknet,
    train_explainer,
    write_explanations,
)
from .graph import SPLITS, Dataset, Query, load_dataset_dir, make_queries
from .protocol import (
    ArmResult,
    InstanceArm,
    ParameterizedArm,
    ProtocolHParams,
    ProtocolReport,
    RawArm,
    edge_drop_sweep,
    ego_radius_sweep,
    run_protocol,
    write_metrics_csv,
    write_report_csv,
    write_report_json,
    write_sweep_csv,
)
from .ranking import RankingMetrics, evaluate_model
from .seeding import derived_rng

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sp: argparse.ArgumentParser):
    sp.add_argument("--config", default=None, help="YAML run configuration")
    sp.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE", help="dotted config override, repeatable")
    sp.add_argument("--dataset", default=None, help="dataset directory")
    sp.add_argument("--out", default=None, help="output root (default $KGXK_OUT or ./runs)")
    sp.add_argument("--run-id", default=None, help="run directory name")
    sp.add_argument("--seed", type=int, default=None)


def build_parser() -> _Parser:
    p = _Parser(prog="kgxk", description="link prediction with budgeted connected explanations")
    p.add_argument("--version", action="version", version=f"kgxk-{__version__}")
    sub = p.add_subparsers(dest="command", metavar="<command>")

    def add(name: str, help_text: str):
        sp = sub.add_parser(name, help=help_text)
        _add_common(sp)
        return sp

    add("prepare", "load a dataset directory and write its statistics")
    sp = add("train-backbone", "train the link predictor on the full graph")
    sp.add_argument("--epochs", type=int, default=None)
    sp = add("train-evaluator", "train a perturbation-robust evaluator")
    sp.add_argument("--kind", choices=("uniform", "distance"), default=None)
    sp.add_argument("--drop-p", type=float, default=None, help="uniform drop probability")
    sp.add_argument("--epochs", type=int, default=None)
    sp = add("train-explainer", "train the mask net against a frozen evaluator")
    sp.add_argument("--evaluator", required=True, help="evaluator checkpoint path")
    sp.add_argument("--no-walk", action="store_true",
                    help="zero both walk-loss weights (plain parameterized masks)")
    sp = add("explain", "extract one budgeted explanation")
    sp.add_argument("--query", required=True, metavar="HEAD,RELATION")
    sp.add_argument("--budget", type=int, required=True)
    sp.add_argument("--masknet", required=True, help="mask net checkpoint path")
    sp.add_argument("--evaluator", required=True, help="evaluator checkpoint path")
    sp = add("evaluate", "filtered ranking metrics for a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=SPLITS, default="test")
    sp = add("sweep-drop", "ranking under random edge removal")
    sp.add_argument("--models", required=True,
                    help="comma list of checkpoints, each PATH or NAME=PATH")
    sp.add_argument("--probs", default="0,0.1,0.2,0.3,0.5")
    sp.add_argument("--split", choices=SPLITS, default="valid")
    sp = add("sweep-ego", "ranking on head-centered ego networks")
    sp.add_argument("--models", required=True,
                    help="comma list of checkpoints, each PATH or NAME=PATH")
    sp.add_argument("--radii", default="1,2,3")
    sp.add_argument("--split", choices=SPLITS, default="valid")
    sp = add("protocol", "fine-tune evaluation of explainers across budgets")
    sp.add_argument("--budgets", default=None, help="comma list, e.g. 25,50")
    sp.add_argument("--backbone", default=None, help="reuse a backbone checkpoint")
    sp.add_argument("--evaluator", default=None, help="reuse an evaluator checkpoint")
    sp.add_argument("--raw-net", default=None, help="reuse a trained mask net")
    sp.add_argument("--pg-net", default=None, help="reuse a no-walk mask net")
    sp.add_argument("--with-instance", action="store_true",
                    help="include the per-query optimization baseline")
    sp = add("report", "rewrite and print the tables of a finished protocol run")
    sp.add_argument("--run", required=True, help="protocol run directory")
    return p


def _make_config(args) -> RunConfig:
    overrides = []
    for kv in args.overrides:
        if "=" not in kv:
            raise UsageError(f"--set expects KEY=VALUE, got {kv!r}")
        key, value = kv.split("=", 1)
        overrides.append((key, value))
    for name in ("dataset", "out", "run_id", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides.append((name, value))
    if getattr(args, "epochs", None) is not None:
        target = "backbone.epochs"
        overrides.append((target, args.epochs))
    if getattr(args, "kind", None) is not None:
        overrides.append(("evaluator.kind", args.kind))
    if getattr(args, "drop_p", None) is not None:
        overrides.append(("evaluator.p", args.drop_p))
    if getattr(args, "budgets", None) is not None:
        values = [int(x) for x in str(args.budgets).split(",") if x.strip()]
        overrides.append(("budgets", values))
    if getattr(args, "no_walk", False):
        overrides.append(("ppr.beta_in", 0.0))
        overrides.append(("ppr.beta_out", 0.0))
    return load_config(args.config, overrides)


def _run_dir(cfg: RunConfig, command: str) -> str:
    out = cfg.out or os.environ.get("KGXK_OUT") or "runs"
    run_id = cfg.run_id or f"{command}-seed{cfg.seed}"
    path = os.path.join(out, run_id)
    os.makedirs(path, exist_ok=True)
    return path


def _write_manifest(rd: str, cfg: RunConfig, command: str):
    manifest = {
        "version": f"kgxk-{__version__}",
        "command": command,
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
    }
    with open(os.path.join(rd, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _metrics_payload(metrics: RankingMetrics) -> dict:
    return {
        "mrr": metrics.mrr,
        "hits": {str(k): v for k, v in sorted(metrics.hits_at.items())},
        "n_queries": metrics.n_queries,
    }


def _parse_models(spec: str, ds: Dataset) -> dict[str, ModelHandle]:
    models: dict[str, ModelHandle] = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            name, path = part.split("=", 1)
        else:
            name, path = None, part
        handle = load_checkpoint(path, ds.graph)
        name = name or handle.role
        if name in models:
            raise UsageError(f"duplicate model name {name!r} in --models")
        models[name] = handle
    if not models:
        raise UsageError("--models must name at least one checkpoint")
    return models


def _parse_query(ds: Dataset, text: str) -> Query:
    if "," not in text:
        raise UsageError(f"--query expects HEAD,RELATION, got {text!r}")
    head_name, rel_name = text.split(",", 1)
    head = ds.vocab.entity_id(head_name)
    g = ds.graph
    if rel_name.startswith("inv_") and rel_name[4:] in ds.vocab.relation_names:
        rel = g.inverse_relation(ds.vocab.relation_id(rel_name[4:]))
    else:
        rel = ds.vocab.relation_id(rel_name)
    return Query(head, rel, None)


# -- subcommands --------------------------------------------------------------


def _cmd_prepare(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "prepare")
    _write_manifest(rd, cfg, "prepare")
    stats = {
        "entities": ds.vocab.num_entities,
        "base_relations": ds.vocab.num_base_relations,
        "relations_with_inverse": ds.graph.num_relations,
        "train_triples": len(ds.train),
        "valid_triples": len(ds.valid),
        "test_triples": len(ds.test),
        "message_edges": ds.graph.num_edges,
    }
    _write_json(os.path.join(rd, "stats.json"), stats)
    print(f"{stats['entities']} entities, {stats['base_relations']} relations, "
          f"{stats['train_triples']}/{stats['valid_triples']}/{stats['test_triples']} triples")
    print(f"wrote {os.path.join(rd, 'stats.json')}")
    return EXIT_OK


def _train_backbone_model(cfg: RunConfig, ds: Dataset) -> ModelHandle:
    model = init_model(cfg.backbone, ds.graph, derived_rng(cfg.seed, "init"))
    queries = make_queries(ds.train, ds.vocab)
    return train_backbone(model, ds.graph, queries, seed=cfg.seed)


def _cmd_train_backbone(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "train-backbone")
    _write_manifest(rd, cfg, "train-backbone")
    trained = _train_backbone_model(cfg, ds)
    path = os.path.join(rd, "backbone.pt")
    save_checkpoint(trained, path)
    metrics = evaluate_model(trained, ds.graph, ds.queries("valid"), ds.filter_index)
    _write_json(os.path.join(rd, "metrics.json"), _metrics_payload(metrics))
    print(f"valid MRR {metrics.mrr:.4f}  hits@1 {metrics.hits_at[1]:.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_train_evaluator(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "train-evaluator")
    _write_manifest(rd, cfg, "train-evaluator")
    model = init_model(cfg.backbone, ds.graph, derived_rng(cfg.seed, "init"))
    queries = make_queries(ds.train, ds.vocab)
    trained = train_evaluator(model, ds.graph, queries, cfg.evaluator, seed=cfg.seed)
    path = os.path.join(rd, "evaluator.pt")
    save_checkpoint(trained, path)
    metrics = evaluate_model(trained, ds.graph, ds.queries("valid"), ds.filter_index)
    _write_json(os.path.join(rd, "metrics.json"), _metrics_payload(metrics))
    print(f"valid MRR {metrics.mrr:.4f}  role {trained.role}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_train_explainer(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "train-explainer")
    _write_manifest(rd, cfg, "train-explainer")
    evaluator = load_checkpoint(args.evaluator, ds.graph)
    net = MaskNet(evaluator.config.embed_dim, cfg.explainer.hidden,
                  derived_rng(cfg.seed, "masknet"))
    queries = make_queries(ds.train, ds.vocab)
    train_explainer(net, evaluator, ds.graph, queries, cfg.ppr, cfg.explainer,
                    rng=derived_rng(cfg.seed, "explainer-train"))
    path = os.path.join(rd, "masknet.pt")
    save_masknet(net, path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_explain(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "explain")
    _write_manifest(rd, cfg, "explain")
    if args.budget < 1:
        raise UsageError(f"--budget must be >= 1, got {args.budget}")
    evaluator = load_checkpoint(args.evaluator, ds.graph)
    net = load_masknet(args.masknet)
    q = _parse_query(ds, args.query)
    ex = extract_explanation(net, evaluator, ds.graph, q, args.budget, cfg.ppr)
    path = os.path.join(rd, "explanations.jsonl")
    write_explanations(path, ds.graph, [ex])
    print(f"{len(ex)} edges within budget {args.budget}, converged={ex.converged}")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "evaluate")
    _write_manifest(rd, cfg, "evaluate")
    model = load_checkpoint(args.checkpoint, ds.graph)
    metrics = evaluate_model(model, ds.graph, ds.queries(args.split), ds.filter_index)
    _write_json(os.path.join(rd, "metrics.json"), _metrics_payload(metrics))
    print(f"{args.split} MRR {metrics.mrr:.4f}  hits@1 {metrics.hits_at[1]:.4f}  "
          f"hits@3 {metrics.hits_at[3]:.4f}  hits@10 {metrics.hits_at[10]:.4f}")
    return EXIT_OK


def _cmd_sweep_drop(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "sweep-drop")
    _write_manifest(rd, cfg, "sweep-drop")
    models = _parse_models(args.models, ds)
    try:
        probs = [float(x) for x in args.probs.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--probs expects comma-separated floats, got {args.probs!r}")
    report = edge_drop_sweep(models, ds.graph, ds.queries(args.split), probs,
                             ds.filter_index, seed=cfg.seed)
    path = os.path.join(rd, "sweep_drop.csv")
    write_sweep_csv(report, path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_sweep_ego(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "sweep-ego")
    _write_manifest(rd, cfg, "sweep-ego")
    models = _parse_models(args.models, ds)
    try:
        radii = [int(x) for x in args.radii.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--radii expects comma-separated integers, got {args.radii!r}")
    report = ego_radius_sweep(models, ds.graph, ds.queries(args.split), radii,
                              ds.filter_index)
    path = os.path.join(rd, "sweep_ego.csv")
    write_sweep_csv(report, path)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_protocol(args) -> int:
    cfg = _make_config(args)
    ds = load_dataset_dir(cfg.dataset)
    rd = _run_dir(cfg, "protocol")
    _write_manifest(rd, cfg, "protocol")
    g = ds.graph
    train_queries = make_queries(ds.train, ds.vocab)

    if args.backbone:
        backbone = load_checkpoint(args.backbone, g)
    else:
        backbone = _train_backbone_model(cfg, ds)
    if args.evaluator:
        evaluator = load_checkpoint(args.evaluator, g)
    else:
        model = init_model(cfg.backbone, g, derived_rng(cfg.seed, "init"))
        evaluator = train_evaluator(model, g, train_queries, cfg.evaluator, seed=cfg.seed)

    if args.raw_net:
        raw_net = load_masknet(args.raw_net)
    else:
        raw_net = MaskNet(cfg.backbone.embed_dim, cfg.explainer.hidden,
                          derived_rng(cfg.seed, "masknet"))
        train_explainer(raw_net, evaluator, g, train_queries, cfg.ppr, cfg.explainer,
                        rng=derived_rng(cfg.seed, "explainer-train"))
    if args.pg_net:
        pg_net = load_masknet(args.pg_net)
    else:
        pg_cfg = dataclasses.replace(cfg.ppr, beta_in=0.0, beta_out=0.0)
        pg_net = MaskNet(cfg.backbone.embed_dim, cfg.explainer.hidden,
                         derived_rng(cfg.seed, "masknet"))
        train_explainer(pg_net, evaluator, g, train_queries, pg_cfg, cfg.explainer,
                        rng=derived_rng(cfg.seed, "explainer-train"))

    explainers = {
        "raw": RawArm(raw_net, evaluator, cfg.ppr),
        "pg": ParameterizedArm(pg_net, evaluator),
    }
    if args.with_instance:
        explainers["instance"] = InstanceArm(evaluator, cfg.explainer, seed=cfg.seed)

    hparams = dataclasses.replace(cfg.protocol, seed=cfg.seed)
    report = run_protocol(backbone, evaluator, explainers, g,
                          ds.queries("valid"), ds.queries("test"),
                          cfg.budgets, ds.filter_index, hparams)
    write_report_csv(report, os.path.join(rd, "report.csv"))
    write_metrics_csv(report, os.path.join(rd, "metrics.csv"))
    write_report_json(report, os.path.join(rd, "report.json"))
    for r in report.rows:
        print(f"{r.explainer:>10} k={r.budget:<5} mrr={r.metrics.mrr:.4f} "
              f"components={r.components:.2f}")
    print(f"wrote {os.path.join(rd, 'report.csv')}")
    return EXIT_OK


def _cmd_report(args) -> int:
    path = os.path.join(args.run, "report.json")
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no report.json under {args.run}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"unreadable report {path}: {exc}")
    rows = []
    try:
        for row in payload["rows"]:
            metrics = RankingMetrics(
                row["mrr"], {int(k): v for k, v in row["hits"].items()}, row["n_queries"]
            )
            rows.append(ArmResult(row["explainer"], int(row["budget"]), metrics,
                                  float(row["seconds"]), float(row["components"])))
        report = ProtocolReport(rows, [int(b) for b in payload["budgets"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed report {path}: {exc}")
    out_csv = os.path.join(args.run, "report.csv")
    write_report_csv(report, out_csv)
    write_metrics_csv(report, os.path.join(args.run, "metrics.csv"))
    header = f"{'explainer':>10} {'budget':>6} {'mrr':>8} {'h@1':>8} {'h@3':>8} {'h@10':>8} {'comp':>6}"
    print(header)
    for r in report.rows:
        print(f"{r.explainer:>10} {r.budget:>6} {r.metrics.mrr:>8.4f} "
              f"{r.metrics.hits_at[1]:>8.4f} {r.metrics.hits_at[3]:>8.4f} "
              f"{r.metrics.hits_at[10]:>8.4f} {r.components:>6.2f}")
    print(f"wrote {out_csv}")
    return EXIT_OK


_COMMANDS = {
    "prepare": _cmd_prepare,
    "train-backbone": _cmd_train_backbone,
    "train-evaluator": _cmd_train_evaluator,
    "train-explainer": _cmd_train_explainer,
    "explain": _cmd_explain,
    "evaluate": _cmd_evaluate,
    "sweep-drop": _cmd_sweep_drop,
    "sweep-ego": _cmd_sweep_ego,
    "protocol": _cmd_protocol,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    # a fixed thread count keeps float reductions identical across processes
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see kgxk --help)")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ERROR {EXIT_USAGE}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"ERROR {EXIT_TRAINING}: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (KgxkError, FileNotFoundError) as exc:
        print(f"ERROR {EXIT_DATA}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
