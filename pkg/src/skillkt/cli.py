"""Command-line entry point wiring all pipeline stages.

Subcommands: embed, synth, train, eval, experiment.  Option precedence is
CLI flag > config file (key=value lines) > built-in default; the output
directory alone can also come from the SKILLKT_OUT_DIR environment variable
(between CLI and config file in precedence).  Exit codes are a stable
contract: 0 success, 2 usage/config error, 3 numerical failure, 4 undefined
metric.

Every artifact carries the fully resolved run configuration: structured
files embed it directly, fixed-format files (embeddings, interaction logs)
get a ``<name>.meta.json`` sidecar.  Metric files contain no timestamps, so
re-running a command with its echoed configuration reproduces them byte for
byte; wall-clock timings go to ``run_info.json`` instead.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (InteractionSchema, SplitSpec, build_sequences, make_batches,
                   parse_interactions, split_records, subsample_records,
                   write_interactions)
from .embeddings import EmbeddingTable, export_embeddings, import_embeddings
from .errors import (CheckpointError, ConfigError, DataError, MetricError,
                     NumericalError, ShapeError, SkillKTError)
from .graph import load_edge_list, random_skill_graph, save_edge_list
from .model import ModelConfig, init_parameters
from .node2vec import WalkConfig, generate_walks
from .skipgram import train_skipgram
from .synth import synthesize_students
from .trainer import (TrainConfig, evaluate, run_ablation_suite,
                      run_limited_data_study, summarize_results, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_METRIC = 4

OUT_DIR_ENV = "SKILLKT_OUT_DIR"


@dataclass
class Opt:
    name: str                      # long flag without leading dashes
    type: Callable[[str], Any]
    default: Any
    help: str
    dest: str | None = None

    @property
    def key(self) -> str:
        return (self.dest or self.name).replace("-", "_")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


_COMMON = [Opt("config", str, None, "key=value config file")]

_DATA_OPTS = [
    Opt("col-user", str, "user_id", "user id column name"),
    Opt("col-skill", str, "skill_id", "skill id column name"),
    Opt("col-correct", str, "correct", "correctness column name"),
    Opt("delimiter", str, ",", "field delimiter"),
]

_SPLIT_OPTS = [
    Opt("train-fraction", float, 0.9, "record-level train fraction"),
    Opt("subsample", float, 1.0, "fraction of train records kept"),
    Opt("split-seed", int, 0, "seed for the record split and subsampling"),
]

_MODEL_OPTS = [
    Opt("d-model", int, 100, "model width"),
    Opt("n-heads", int, 1, "attention heads"),
    Opt("n-encoder-layers", int, 4, "encoder depth"),
    Opt("n-decoder-layers", int, 4, "decoder depth"),
    Opt("dropout", float, 0.05, "dropout probability"),
    Opt("ffn-dim", int, None, "feedforward width (default 4*d_model)"),
    Opt("max-len", int, 200, "maximum sequence length"),
    Opt("skill-dim", int, None, "skill vector dim (default: embedding file dim)"),
]

_TRAIN_OPTS = [
    Opt("lambda", float, 1.0, "projection-loss weight (0 disables it)", dest="lam"),
    Opt("epochs", int, 100, "maximum training epochs"),
    Opt("batch-size", int, 64, "sequences per batch"),
    Opt("lr", float, 2e-4, "Adam learning rate"),
    Opt("patience", int, 10, "evaluations without improvement before stopping"),
    Opt("eval-every", int, 1, "epochs between evaluations"),
    Opt("seed", int, 0, "training seed"),
]

_WALK_OPTS = [
    Opt("dim", int, 25, "embedding dimension"),
    Opt("walk-length", int, 128, "nodes per walk"),
    Opt("num-walks", int, 300_000, "total walks"),
    Opt("window", int, 4, "skip-gram context radius"),
    Opt("p", float, 1.0, "return parameter"),
    Opt("q", float, 1.0, "in-out parameter"),
    Opt("negatives", int, 5, "negative samples per positive"),
    Opt("sg-epochs", int, 5, "skip-gram epochs"),
    Opt("sg-lr", float, 0.025, "skip-gram initial learning rate"),
]

COMMAND_OPTS: dict[str, list[Opt]] = {
    "embed": _COMMON + [
        Opt("edges", str, None, "edge-list file (one 'u v' pair per line)"),
        Opt("random-graph", _bool, False, "embed a random control graph instead"),
        Opt("edges-count", int, None, "edge count for --random-graph"),
        Opt("n-skills", int, None, "number of skill nodes (required)"),
        Opt("seed", int, 0, "walk/skip-gram seed"),
        Opt("out", str, None, "output embedding file (required)"),
    ] + _WALK_OPTS,
    "synth": _COMMON + [
        Opt("students", int, 50, "number of students"),
        Opt("skills", int, 16, "number of skills"),
        Opt("clusters", int, 2, "number of skill clusters"),
        Opt("interactions", int, 100, "interactions per student"),
        Opt("ability-lr", float, 0.02, "ability gain per practiced interaction"),
        Opt("ability-std", float, 1.0, "spread of per-cluster abilities"),
        Opt("difficulty-std", float, 1.0, "spread of per-skill difficulties"),
        Opt("seed", int, 0, "generator seed"),
        Opt("out-interactions", str, "interactions.csv", "interaction log path"),
        Opt("out-edges", str, "edges.txt", "ground-truth edge list path"),
    ],
    "train": _COMMON + [
        Opt("interactions", str, None, "interaction log (required)"),
        Opt("embeddings", str, None, "skill embedding file (required when lambda > 0)"),
        Opt("out-dir", str, ".", "output directory"),
    ] + _DATA_OPTS + _SPLIT_OPTS + _MODEL_OPTS + _TRAIN_OPTS,
    "eval": _COMMON + [
        Opt("checkpoint", str, None, "checkpoint file (required)"),
        Opt("interactions", str, None, "interaction log (required)"),
        Opt("on", str, "eval", "partition to score: eval, train or all"),
        Opt("out-dir", str, ".", "output directory"),
    ] + _DATA_OPTS,
    "experiment": _COMMON + [
        Opt("interactions", str, None, "interaction log (required)"),
        Opt("edges", str, None, "expert/ground-truth edge list (required)"),
        Opt("arms", _str_list, ["ours", "noproj", "random"],
            "comma-separated ablation arms"),
        Opt("fractions", _float_list, None,
            "comma-separated train fractions; enables the limited-data study"),
        Opt("seeds", int, 5, "number of paired seeds"),
        Opt("out-dir", str, ".", "output directory"),
    ] + _DATA_OPTS + _SPLIT_OPTS + _MODEL_OPTS + _TRAIN_OPTS + _WALK_OPTS,
}


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"--config: cannot read {path}: {e}") from e
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"--config {path} line {lineno}: expected key=value, "
                              f"got {raw.strip()!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_options(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    """Merge CLI flags, the optional config file, the output-dir environment
    variable, and built-in defaults into one fully resolved mapping."""
    opts = COMMAND_OPTS[command]
    file_cfg = _load_config_file(ns.config) if getattr(ns, "config", None) else {}
    known = {o.key for o in opts}
    for key in file_cfg:
        if key not in known:
            raise ConfigError(f"--config: unknown key {key!r} for command {command}")
    resolved: dict[str, Any] = {"command": command}
    for opt in opts:
        if opt.key == "config":
            continue
        value = getattr(ns, opt.key, None)
        if value is None and opt.key == "out_dir" and os.environ.get(OUT_DIR_ENV):
            value = os.environ[OUT_DIR_ENV]
        if value is None and opt.key in file_cfg:
            try:
                value = opt.type(file_cfg[opt.key])
            except ValueError as e:
                raise ConfigError(f"--config: bad value for {opt.key}: {e}") from e
        if value is None:
            value = opt.default
        resolved[opt.key] = value
    return resolved


def _require(resolved: dict[str, Any], key: str) -> Any:
    if resolved.get(key) is None:
        raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    return resolved[key]


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2,
                               default=_json_default) + "\n", encoding="utf-8")


def _fmt(x: Any) -> str:
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def _echo_lines(resolved: dict[str, Any]) -> list[str]:
    return [f"# {k}={_fmt(v)}" for k, v in sorted(resolved.items())]


def _write_metrics_tsv(path: Path, results, resolved: dict[str, Any]) -> None:
    lines = _echo_lines(resolved)
    lines.append("arm\tfraction\tseed\tepoch\ttrain_kt_loss\ttrain_proj_loss\teval_auc")
    for r in results:
        for m in r.epochs:
            lines.append("\t".join([
                r.arm or "-", _fmt(r.fraction), str(r.seed), str(m.epoch),
                _fmt(m.train_kt_loss),
                _fmt(m.train_proj_loss) if m.train_proj_loss is not None else "-",
                _fmt(m.eval_auc) if m.eval_auc is not None else "-",
            ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_grid_tsv(path: Path, results, resolved: dict[str, Any]) -> None:
    lines = _echo_lines(resolved)
    lines.append("fraction\tarm\tseed\tauc\tepochs_run")
    for r in results:
        row = r.to_row()
        lines.append("\t".join([_fmt(row["fraction"]), row["arm"] or "-",
                                str(row["seed"]), _fmt(row["auc"]),
                                str(row["epochs_run"])]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _schema(resolved: dict[str, Any]) -> InteractionSchema:
    return InteractionSchema(user_col=resolved["col_user"],
                             skill_col=resolved["col_skill"],
                             correct_col=resolved["col_correct"],
                             delimiter=resolved["delimiter"])


def _walk_config(resolved: dict[str, Any]) -> WalkConfig:
    return WalkConfig(walk_length=resolved["walk_length"],
                      num_walks=resolved["num_walks"],
                      p=resolved["p"], q=resolved["q"],
                      window=resolved["window"], dim=resolved["dim"],
                      negatives=resolved["negatives"],
                      epochs=resolved["sg_epochs"],
                      learning_rate=resolved["sg_lr"],
                      seed=resolved["seed"])


def _model_config(resolved: dict[str, Any], skill_dim: int) -> ModelConfig:
    return ModelConfig(d_model=resolved["d_model"], n_heads=resolved["n_heads"],
                       n_encoder_layers=resolved["n_encoder_layers"],
                       n_decoder_layers=resolved["n_decoder_layers"],
                       dropout=resolved["dropout"], skill_dim=skill_dim,
                       max_len=resolved["max_len"], ffn_dim=resolved["ffn_dim"])


def _train_config(resolved: dict[str, Any]) -> TrainConfig:
    return TrainConfig(epochs=resolved["epochs"], batch_size=resolved["batch_size"],
                       learning_rate=resolved["lr"], lam=resolved["lam"],
                       patience=resolved["patience"],
                       eval_every=resolved["eval_every"], seed=resolved["seed"])


def _load_data(resolved: dict[str, Any], skill_map=None):
    records, report = parse_interactions(_require(resolved, "interactions"),
                                         _schema(resolved), skill_map=skill_map)
    if not records:
        raise DataError(f"no usable records in {resolved['interactions']}")
    return records, report


# ---------------------------------------------------------------------------
# subcommands


def cmd_embed(resolved: dict[str, Any]) -> int:
    n_skills = _require(resolved, "n_skills")
    out = Path(_require(resolved, "out"))
    if resolved["random_graph"]:
        edge_count = _require(resolved, "edges_count")
        graph = random_skill_graph(n_skills, edge_count, seed=resolved["seed"])
        source = f"random graph ({edge_count} edges, seed {resolved['seed']})"
    else:
        if resolved["edges"] is None:
            raise ConfigError("missing --edges (or pass --random-graph with --edges-count)")
        graph = load_edge_list(resolved["edges"], n_skills)
        source = resolved["edges"]
    isolated = graph.n_nodes - len(graph.non_isolated_nodes())
    print(f"graph: {graph.n_nodes} nodes, {graph.n_edges} edges, "
          f"{isolated} isolated skill(s) [{source}]")
    config = _walk_config(resolved)
    walks = generate_walks(graph, config)
    table = train_skipgram(walks, config, graph.n_nodes)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_embeddings(table, out)
    _write_json(out.with_suffix(out.suffix + ".meta.json"),
                {"run_config": resolved,
                 "graph": {"nodes": graph.n_nodes, "edges": graph.n_edges,
                           "isolated": isolated}})
    print(f"wrote {table.count}x{table.dim} embeddings to {out}")
    return EXIT_OK


def cmd_synth(resolved: dict[str, Any]) -> int:
    records, graph = synthesize_students(
        n_students=resolved["students"], n_skills=resolved["skills"],
        cluster_spec=resolved["clusters"], seed=resolved["seed"],
        interactions_per_student=resolved["interactions"],
        ability_lr=resolved["ability_lr"], ability_std=resolved["ability_std"],
        difficulty_std=resolved["difficulty_std"])
    out_inter = Path(resolved["out_interactions"])
    out_edges = Path(resolved["out_edges"])
    out_inter.parent.mkdir(parents=True, exist_ok=True)
    out_edges.parent.mkdir(parents=True, exist_ok=True)
    write_interactions(records, out_inter)
    save_edge_list(graph, out_edges, header="synthetic ground-truth skill graph")
    for path in (out_inter, out_edges):
        _write_json(path.with_suffix(path.suffix + ".meta.json"),
                    {"run_config": resolved})
    print(f"wrote {len(records)} interactions to {out_inter} and "
          f"{graph.n_edges} truth edges to {out_edges}")
    return EXIT_OK


def _prepare_batches(records, resolved, n_problems):
    sequences = build_sequences(records, max_len=resolved["max_len"])
    return make_batches(sequences, resolved["batch_size"], n_problems)


def cmd_train(resolved: dict[str, Any]) -> int:
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    records, report = _load_data(resolved)
    n_problems = report.n_skills
    spec = SplitSpec(train_fraction=resolved["train_fraction"],
                     subsample=resolved["subsample"], seed=resolved["split_seed"])
    train_records, eval_records = split_records(records, spec)
    train_batches = _prepare_batches(train_records, resolved, n_problems)
    eval_batches = _prepare_batches(eval_records, resolved, n_problems)
    if not eval_batches:
        raise DataError("evaluation partition has no usable sequences")

    skill_vectors = None
    skill_dim = resolved["skill_dim"]
    if resolved["lam"] > 0:
        table = import_embeddings(_require(resolved, "embeddings"))
        if table.count != n_problems:
            raise DataError(f"embedding table has {table.count} rows but the data "
                            f"has {n_problems} skills")
        if skill_dim is not None and skill_dim != table.dim:
            raise ConfigError(f"--skill-dim {skill_dim} != embedding file dim {table.dim}")
        skill_dim = table.dim
        skill_vectors = table.vectors
    model_config = _model_config(resolved, skill_dim if skill_dim is not None else 25)
    model = init_parameters(model_config, n_problems, seed=resolved["seed"])

    run_config = dict(resolved)
    run_config["skill_map"] = report.skill_map
    checkpoint_path = out_dir / "checkpoint.npz"

    def on_best(m, adam, epoch, best):
        save_checkpoint(checkpoint_path, m, adam=adam, epoch=epoch,
                        best_auc=best, run_config=run_config)

    started = time.perf_counter()
    try:
        model, result = train(model, train_batches, eval_batches,
                              _train_config(resolved),
                              skill_vectors=skill_vectors, on_best=on_best)
    except NumericalError as e:
        partial = getattr(e, "partial_result", None)
        if partial is not None:
            _write_metrics_tsv(out_dir / "metrics.tsv", [partial], resolved)
            _write_json(out_dir / "summary.json",
                        {"run_config": resolved, "aborted": str(e)})
        print(f"numerical failure: {e}", file=sys.stderr)
        print(f"last good checkpoint kept at {checkpoint_path}", file=sys.stderr)
        return EXIT_NUMERICAL

    _write_metrics_tsv(out_dir / "metrics.tsv", [result], resolved)
    _write_json(out_dir / "summary.json",
                {"run_config": resolved, "n_skills": n_problems,
                 "n_train_records": len(train_records),
                 "n_eval_records": len(eval_records),
                 "best_auc": result.best_auc, "best_epoch": result.best_epoch,
                 "final_auc": result.final_auc, "epochs_run": result.epochs_run})
    _write_json(out_dir / "run_info.json",
                {"wall_clock_s": time.perf_counter() - started})
    print(f"best eval AUC {result.best_auc:.4f} at epoch {result.best_epoch} "
          f"({result.epochs_run} epochs run); artifacts in {out_dir}")
    return EXIT_OK


def cmd_eval(resolved: dict[str, Any]) -> int:
    ckpt = load_checkpoint(_require(resolved, "checkpoint"))
    run_cfg = ckpt.run_config
    skill_map = run_cfg.get("skill_map")
    records, report = _load_data(resolved, skill_map=skill_map)
    spec = SplitSpec(train_fraction=float(run_cfg.get("train_fraction", 0.9)),
                     subsample=float(run_cfg.get("subsample", 1.0)),
                     seed=int(run_cfg.get("split_seed", 0)))
    train_records, eval_records = split_records(records, spec)
    part = resolved["on"]
    if part not in ("eval", "train", "all"):
        raise ConfigError(f"--on must be eval, train or all, got {part!r}")
    chosen = {"eval": eval_records, "train": train_records, "all": records}[part]
    sequences = build_sequences(chosen, max_len=ckpt.model.config.max_len)
    batches = make_batches(sequences, int(run_cfg.get("batch_size", 64)),
                           ckpt.model.n_problems)
    if not batches:
        raise DataError(f"no usable sequences in the {part} partition")
    value = evaluate(ckpt.model, batches)
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "eval_report.json",
                {"run_config": resolved, "checkpoint_config": run_cfg,
                 "partition": part, "auc": value,
                 "n_sequences": len(sequences)})
    print(f"AUC ({part}): {value:.6f}")
    return EXIT_OK


def cmd_experiment(resolved: dict[str, Any]) -> int:
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    records, report = _load_data(resolved)
    n_problems = report.n_skills
    graph = load_edge_list(_require(resolved, "edges"), n_problems)
    spec = SplitSpec(train_fraction=resolved["train_fraction"],
                     subsample=resolved["subsample"], seed=resolved["split_seed"])
    train_records, eval_records = split_records(records, spec)
    eval_batches = _prepare_batches(eval_records, resolved, n_problems)
    if not eval_batches:
        raise DataError("evaluation partition has no usable sequences")
    skill_dim = resolved["skill_dim"] if resolved["skill_dim"] else resolved["dim"]
    if skill_dim != resolved["dim"]:
        raise ConfigError(f"--skill-dim {skill_dim} != walk --dim {resolved['dim']}")
    model_config = _model_config(resolved, skill_dim)
    train_config = _train_config(resolved)
    walk_config = _walk_config(resolved)
    seeds = list(range(resolved["seeds"]))

    started = time.perf_counter()
    results = []
    if resolved["fractions"]:
        by_fraction = {}
        for fraction in resolved["fractions"]:
            subset = (train_records if fraction >= 1.0 else
                      subsample_records(train_records, fraction, spec.seed))
            by_fraction[fraction] = _prepare_batches(subset, resolved, n_problems)
            if not by_fraction[fraction]:
                raise DataError(f"fraction {fraction} leaves no usable sequences")
        results += run_limited_data_study(by_fraction, eval_batches, graph,
                                          n_problems, model_config, train_config,
                                          walk_config, seeds)
    else:
        train_batches = _prepare_batches(train_records, resolved, n_problems)
        results += run_ablation_suite(train_batches, eval_batches, graph,
                                      n_problems, model_config, train_config,
                                      walk_config, seeds,
                                      arms=tuple(resolved["arms"]))

    _write_grid_tsv(out_dir / "grid.tsv", results, resolved)
    _write_metrics_tsv(out_dir / "metrics.tsv", results, resolved)
    summary = summarize_results(results)
    (out_dir / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    _write_json(out_dir / "summary.json",
                {"run_config": resolved,
                 "cells": [r.to_row() for r in results]})
    _write_json(out_dir / "run_info.json",
                {"wall_clock_s": time.perf_counter() - started})
    print(summary)
    print(f"grid written to {out_dir / 'grid.tsv'}")
    return EXIT_OK


_HANDLERS = {
    "embed": cmd_embed,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillkt",
        description="Knowledge tracing with skill-graph embeddings and a projection loss")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command, opts in COMMAND_OPTS.items():
        p = sub.add_parser(command, help=f"{command} stage")
        for opt in opts:
            kwargs: dict[str, Any] = {"dest": opt.key, "help": opt.help, "default": None}
            if opt.type is _bool:
                kwargs.update(action="store_const", const=True)
            else:
                kwargs.update(type=opt.type, metavar=opt.key.upper())
            p.add_argument(f"--{opt.name}", **kwargs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if not ns.command:
        parser.print_help()
        return EXIT_CONFIG
    try:
        resolved = resolve_options(ns.command, ns)
        return _HANDLERS[ns.command](resolved)
    except (ConfigError, DataError, CheckpointError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MetricError as e:
        print(f"metric undefined: {e}", file=sys.stderr)
        return EXIT_METRIC


if __name__ == "__main__":
    sys.exit(main())
