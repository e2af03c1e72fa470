"""Skip-gram with negative sampling over a walk corpus.

Per positive pair (center, context) the objective is
log sigmoid(u_center . v_context) + sum over negatives of
log sigmoid(-u_center . v_negative), negatives drawn from the
unigram^(3/4) distribution.  Updates are plain SGD with a linearly
decaying learning rate; all contexts of one center are updated as a
block, which keeps the math identical per pair but lets numpy do the
work.  Returns the input-side (center) vectors.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingTable
from .errors import ConfigError, DataError
from .node2vec import WalkConfig

logger = logging.getLogger(__name__)

_MIN_LR_FRACTION = 1e-4


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    # -log(1 + exp(-x)) computed stably for both signs
    return np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))),
                    x - np.log1p(np.exp(-np.abs(x))))


def train_skipgram(corpus, config: WalkConfig, n_nodes: int,
                   on_epoch: Callable[[int, float], None] | None = None) -> EmbeddingTable:
    """Train node vectors on a walk corpus.

    corpus: 2-D int array or sequence of integer sequences.
    on_epoch: optional callback receiving (epoch_index, mean_pair_loss).
    Nodes that never appear in the corpus get a zero vector (and a log line).
    """
    if config.dim <= 0:
        raise ConfigError(f"embedding dim must be positive, got {config.dim}")
    walks: list[np.ndarray] = [np.asarray(w, dtype=np.int64) for w in corpus]
    if not walks or all(len(w) == 0 for w in walks):
        raise DataError("empty walk corpus")

    counts = np.zeros(n_nodes, dtype=np.float64)
    for w in walks:
        if w.size and (w.min() < 0 or w.max() >= n_nodes):
            raise DataError(f"corpus token outside [0, {n_nodes})")
        np.add.at(counts, w, 1.0)
    noise = counts ** 0.75
    total = noise.sum()
    if total == 0:
        raise DataError("empty walk corpus")
    noise_cdf = np.cumsum(noise / total)

    rng = np.random.default_rng([config.seed, 1])
    dim = config.dim
    w_in = (rng.random((n_nodes, dim)) - 0.5) / dim
    w_out = np.zeros((n_nodes, dim), dtype=np.float64)

    window, negatives = config.window, config.negatives
    lr0 = config.learning_rate
    total_centers = config.epochs * sum(len(w) for w in walks)
    processed = 0

    for epoch in range(config.epochs):
        epoch_loss = 0.0
        epoch_pairs = 0
        for walk in walks:
            n = len(walk)
            for i in range(n):
                lr = lr0 * max(_MIN_LR_FRACTION, 1.0 - processed / total_centers)
                processed += 1
                lo, hi = max(0, i - window), min(n, i + window + 1)
                ctx = np.concatenate([walk[lo:i], walk[i + 1:hi]])
                k = len(ctx)
                if k == 0:
                    continue
                center = walk[i]
                negs = np.searchsorted(noise_cdf, rng.random(k * negatives))
                targets = np.concatenate([ctx, negs])
                labels = np.zeros(k * (1 + negatives))
                labels[:k] = 1.0
                # a negative that collides with its own positive is dropped
                weight = np.ones_like(labels)
                weight[k:] = (negs != np.repeat(ctx, negatives)).astype(np.float64)

                u = w_in[center]
                rows = w_out[targets]
                dots = rows @ u
                sig = 1.0 / (1.0 + np.exp(-np.clip(dots, -60, 60)))
                g = lr * weight * (labels - sig)
                du = g @ rows
                np.add.at(w_out, targets, g[:, None] * u[None, :])
                w_in[center] += du

                losses = np.where(labels == 1.0, _log_sigmoid(dots), _log_sigmoid(-dots))
                epoch_loss += float(-(weight * losses).sum())
                epoch_pairs += k
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss / max(epoch_pairs, 1))

    absent = np.flatnonzero(counts == 0)
    if absent.size:
        w_in[absent] = 0.0
        logger.info("skipgram: %d isolated node(s) received zero vectors: %s",
                    absent.size, absent.tolist())
    return EmbeddingTable(count=n_nodes, dim=dim, vectors=w_in)


def mean_cosine(table: EmbeddingTable, pairs: Iterable[tuple[int, int]]) -> float:
    """Mean cosine similarity over node pairs (zero vectors count as 0)."""
    sims = []
    for u, v in pairs:
        a, b = table.vectors[u], table.vectors[v]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        sims.append(float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0)
    if not sims:
        raise ConfigError("mean_cosine needs at least one pair")
    return float(np.mean(sims))


def cosine_spread(table: EmbeddingTable, nodes: Sequence[int]) -> float:
    """Max minus min pairwise cosine similarity among the given nodes."""
    sims = [mean_cosine(table, [(u, v)])
            for i, u in enumerate(nodes) for v in nodes[i + 1:]]
    return float(max(sims) - min(sims))
