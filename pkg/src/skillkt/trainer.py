"""Training loop, AUC evaluation, and the ablation / limited-data harness."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import model as M
from .data import Batch
from .errors import ConfigError, MetricError, NumericalError
from .graph import SkillGraph, random_skill_graph
from .node2vec import WalkConfig, generate_walks
from .optim import AdamState, adam_step
from .skipgram import train_skipgram
from .tensor import Tape, backward

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 2e-4
    lam: float = 1.0
    patience: int = 10
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.patience < 1 or self.eval_every < 1:
            raise ConfigError("patience and eval_every must be >= 1")


@dataclass
class EpochMetrics:
    epoch: int
    train_kt_loss: float
    train_proj_loss: float | None
    eval_auc: float | None


@dataclass
class ExperimentResult:
    seed: int
    arm: str = ""
    fraction: float = 1.0
    epochs: list[EpochMetrics] = field(default_factory=list)
    best_auc: float = float("nan")
    best_epoch: int = -1
    final_auc: float = float("nan")
    epochs_run: int = 0
    wall_clock_s: float = 0.0
    config: dict = field(default_factory=dict)

    def to_row(self) -> dict:
        return {"fraction": self.fraction, "arm": self.arm, "seed": self.seed,
                "auc": self.best_auc, "epochs_run": self.epochs_run}


def auc(scores, labels) -> float:
    """Rank-based AUC (Mann-Whitney statistic) with average ranks for ties."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise MetricError(f"scores shape {s.shape} != labels shape {y.shape}")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: labels contain a single class")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(model: M.KTModel, batches: list[Batch]) -> float:
    """Pool every valid (prediction, label) pair across the batches into one AUC."""
    scores, labels = [], []
    for batch in batches:
        out = M.forward(model, batch, mode="eval")
        valid = batch.valid_mask > 0
        scores.append(out.r_hat.data[valid])
        labels.append(batch.labels[valid])
    if not scores:
        raise MetricError("no evaluation batches")
    return auc(np.concatenate(scores), np.concatenate(labels))


def train(model: M.KTModel, train_batches: list[Batch], eval_batches: list[Batch],
          config: TrainConfig, skill_vectors: np.ndarray | None = None,
          on_best=None) -> tuple[M.KTModel, ExperimentResult]:
    """Optimize the combined objective with Adam and early stopping.

    Evaluates every ``eval_every`` epochs, keeps the best-AUC parameter
    snapshot (restored into the returned model), and stops after ``patience``
    evaluations without improvement.  A non-finite loss aborts with
    NumericalError after restoring the best snapshot, so the last good
    checkpoint survives.  ``on_best(model, adam, epoch, auc)`` fires on every
    improvement.
    """
    if not train_batches:
        raise ConfigError("train: no training batches")
    use_projection = config.lam > 0
    if use_projection and skill_vectors is None:
        raise ConfigError("lambda > 0 requires skill vectors")
    params = model.parameter_list()
    adam = AdamState.for_params(params, lr=config.learning_rate)
    rng_dropout = np.random.default_rng([config.seed, 1])
    rng_shuffle = np.random.default_rng([config.seed, 2])

    result = ExperimentResult(seed=config.seed, config=asdict(config))
    best_auc, best_epoch = -np.inf, -1
    best_arrays = model.export_arrays()
    since_improvement = 0
    started = time.perf_counter()

    def abort(message: str):
        model.load_arrays(best_arrays)
        result.epochs_run = len(result.epochs)
        result.wall_clock_s = time.perf_counter() - started
        err = NumericalError(message)
        err.partial_result = result
        raise err

    for epoch in range(config.epochs):
        kt_sum, proj_sum, n_sum = 0.0, 0.0, 0
        for bi in rng_shuffle.permutation(len(train_batches)):
            batch = train_batches[bi]
            n_valid = batch.n_valid
            if n_valid == 0:
                continue
            with Tape() as tape:
                out = M.forward(model, batch, mode="train", rng=rng_dropout,
                                with_projection=use_projection)
                l_k = M.kt_loss(out.r_hat, batch.labels, batch.valid_mask)
                l_p = None
                if use_projection:
                    l_p = M.projection_loss(out.projected, skill_vectors,
                                            batch.encoder_ids, batch.valid_mask)
                loss = M.total_loss(l_k, l_p, config.lam)
                if not np.isfinite(loss.item()):
                    abort(f"non-finite loss at epoch {epoch}")
                grads = backward(tape, loss, params)
            try:
                adam_step(params, grads, adam)
            except NumericalError as e:
                abort(f"{e} at epoch {epoch}")
            kt_sum += l_k.item() * n_valid
            proj_sum += (l_p.item() if l_p is not None else 0.0) * n_valid
            n_sum += n_valid
        metrics = EpochMetrics(
            epoch=epoch,
            train_kt_loss=kt_sum / max(n_sum, 1),
            train_proj_loss=(proj_sum / max(n_sum, 1)) if use_projection else None,
            eval_auc=None)
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            metrics.eval_auc = evaluate(model, eval_batches)
            if metrics.eval_auc > best_auc:
                best_auc, best_epoch = metrics.eval_auc, epoch
                best_arrays = model.export_arrays()
                since_improvement = 0
                if on_best is not None:
                    on_best(model, adam, epoch, best_auc)
            else:
                since_improvement += 1
        result.epochs.append(metrics)
        if since_improvement >= config.patience:
            logger.info("early stop at epoch %d (best %.4f at %d)",
                        epoch, best_auc, best_epoch)
            break

    model.load_arrays(best_arrays)
    result.best_auc = float(best_auc)
    result.best_epoch = best_epoch
    result.final_auc = next((m.eval_auc for m in reversed(result.epochs)
                             if m.eval_auc is not None), float("nan"))
    result.epochs_run = len(result.epochs)
    result.wall_clock_s = time.perf_counter() - started
    return model, result


ABLATION_ARMS = ("noproj", "random", "ours")


def _embed_graph(graph: SkillGraph, walk_config: WalkConfig, seed: int) -> np.ndarray:
    cfg = replace(walk_config, seed=seed)
    walks = generate_walks(graph, cfg)
    return train_skipgram(walks, cfg, graph.n_nodes).vectors


def run_ablation_suite(train_batches: list[Batch], eval_batches: list[Batch],
                       skill_graph: SkillGraph, n_problems: int,
                       model_config: M.ModelConfig, train_config: TrainConfig,
                       walk_config: WalkConfig, seeds: list[int],
                       arms: tuple[str, ...] = ABLATION_ARMS
                       ) -> list[ExperimentResult]:
    """Three-arm comparison on the same data with paired seeds:
    no projection loss, projection against a random graph of matched edge
    count, and projection against the given graph."""
    for arm in arms:
        if arm not in ABLATION_ARMS:
            raise ConfigError(f"unknown arm {arm!r}; choose from {ABLATION_ARMS}")
    results = []
    for seed in seeds:
        for arm in arms:
            if arm == "noproj":
                vectors, lam = None, 0.0
            elif arm == "random":
                control = random_skill_graph(skill_graph.n_nodes,
                                             skill_graph.n_edges, seed=seed)
                vectors, lam = _embed_graph(control, walk_config, seed), train_config.lam
            else:
                vectors, lam = _embed_graph(skill_graph, walk_config, seed), train_config.lam
            cfg = replace(train_config, seed=seed, lam=lam)
            model = M.init_parameters(model_config, n_problems, seed=seed)
            _, result = train(model, train_batches, eval_batches, cfg,
                              skill_vectors=vectors)
            result.arm = arm
            logger.info("ablation arm=%s seed=%d auc=%.4f", arm, seed, result.best_auc)
            results.append(result)
    return results


def run_limited_data_study(train_batches_by_fraction: dict[float, list[Batch]],
                           eval_batches: list[Batch], skill_graph: SkillGraph,
                           n_problems: int, model_config: M.ModelConfig,
                           train_config: TrainConfig, walk_config: WalkConfig,
                           seeds: list[int]) -> list[ExperimentResult]:
    """Train with and without the projection loss at every data fraction,
    with paired seeds, on a shared evaluation set."""
    results = []
    for seed in seeds:
        vectors = _embed_graph(skill_graph, walk_config, seed)
        for fraction in sorted(train_batches_by_fraction):
            batches = train_batches_by_fraction[fraction]
            for arm, vec, lam in (("noproj", None, 0.0),
                                  ("ours", vectors, train_config.lam)):
                cfg = replace(train_config, seed=seed, lam=lam)
                model = M.init_parameters(model_config, n_problems, seed=seed)
                _, result = train(model, batches, eval_batches, cfg,
                                  skill_vectors=vec)
                result.arm = arm
                result.fraction = fraction
                logger.info("limited fraction=%.2f arm=%s seed=%d auc=%.4f",
                            fraction, arm, seed, result.best_auc)
                results.append(result)
    return results


def summarize_results(results: list[ExperimentResult]) -> str:
    """Human-readable mean/std AUC per (fraction, arm) cell."""
    cells: dict[tuple[float, str], list[float]] = {}
    for r in results:
        cells.setdefault((r.fraction, r.arm), []).append(r.best_auc)
    lines = [f"{'fraction':>8}  {'arm':<8} {'seeds':>5} {'mean_auc':>9} {'std':>7}"]
    for (fraction, arm), aucs in sorted(cells.items()):
        lines.append(f"{fraction:>8.3g}  {arm:<8} {len(aucs):>5} "
                     f"{np.mean(aucs):>9.4f} {np.std(aucs):>7.4f}")
    return "\n".join(lines)
