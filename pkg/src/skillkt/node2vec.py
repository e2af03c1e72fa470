"""Second-order biased random walks over a skill graph.

The return parameter p and in-out parameter q bias each step the usual way:
going back to the previous node weighs 1/p, moving to a common neighbor of
the previous node weighs 1, and moving further out weighs 1/q.  Walks are
generated for all lanes simultaneously with per-edge alias tables, so the
walk count can be large without a Python-level inner loop per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .graph import SkillGraph


@dataclass
class WalkConfig:
    """Walk and skip-gram hyperparameters (defaults follow the reference
    setup: 128-step walks, p = q = 1, 300k walks, window 4, 25 dims)."""

    walk_length: int = 128
    num_walks: int = 300_000
    p: float = 1.0
    q: float = 1.0
    window: int = 4
    dim: int = 25
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if self.walk_length < 2:
            raise ConfigError(f"walk_length must be >= 2, got {self.walk_length}")
        if self.num_walks < 1:
            raise ConfigError(f"num_walks must be >= 1, got {self.num_walks}")
        if self.p <= 0 or self.q <= 0:
            raise ConfigError(f"p and q must be positive, got p={self.p} q={self.q}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.negatives < 1:
            raise ConfigError(f"negatives must be >= 1, got {self.negatives}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


def node2vec_transition(graph: SkillGraph, prev: int, cur: int,
                        p: float, q: float) -> tuple[list[int], np.ndarray]:
    """Normalized next-step distribution over neighbors(cur) given the
    previous node.  Returns (candidates, probabilities)."""
    nbrs = graph.neighbors(cur)
    if not nbrs:
        raise DataError(f"node {cur} has no neighbors")
    weights = np.empty(len(nbrs), dtype=np.float64)
    for i, x in enumerate(nbrs):
        if x == prev:
            weights[i] = 1.0 / p
        elif graph.has_edge(x, prev):
            weights[i] = 1.0
        else:
            weights[i] = 1.0 / q
    return list(nbrs), weights / weights.sum()


def _alias_setup(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Build an alias table: sample i uniformly, keep it with probability
    accept[i], otherwise return alias[i]."""
    k = len(probs)
    accept = np.zeros(k, dtype=np.float64)
    alias = np.zeros(k, dtype=np.int64)
    scaled = probs * k
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        accept[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] - (1.0 - scaled[s])
        (small if scaled[l] < 1.0 else large).append(l)
    for i in small + large:
        accept[i] = 1.0
    return accept, alias


class _WalkTables:
    """Flattened adjacency plus per-directed-edge alias tables.

    Directed edge (prev -> cur) is identified by the position of cur inside
    prev's neighbor list, so the next edge id comes straight out of each
    sampling step with no lookups.
    """

    def __init__(self, graph: SkillGraph, p: float, q: float):
        n = graph.n_nodes
        self.deg = np.array([graph.degree(v) for v in range(n)], dtype=np.int64)
        self.nbr_off = np.concatenate([[0], np.cumsum(self.deg)])
        self.nbr_flat = (np.concatenate([graph.adjacency[v] for v in range(n)])
                         if self.nbr_off[-1] else np.zeros(0, dtype=np.int64)).astype(np.int64)
        self.uniform = (p == 1.0 and q == 1.0)
        if self.uniform:
            return
        total_slots = int(np.sum(self.deg[self.nbr_flat]))
        self.trans_off = np.zeros(self.nbr_off[-1] + 1, dtype=np.int64)
        self.accept = np.zeros(total_slots, dtype=np.float64)
        self.alias = np.zeros(total_slots, dtype=np.int64)
        pos = 0
        for prev in range(n):
            for j, cur in enumerate(graph.adjacency[prev]):
                edge_id = self.nbr_off[prev] + j
                self.trans_off[edge_id] = pos
                _, probs = node2vec_transition(graph, prev, cur, p, q)
                acc, ali = _alias_setup(probs)
                d = len(probs)
                self.accept[pos:pos + d] = acc
                self.alias[pos:pos + d] = ali
                pos += d
        self.trans_off[-1] = pos


def generate_walks(graph: SkillGraph, config: WalkConfig) -> np.ndarray:
    """Generate the walk corpus as an (num_walks, walk_length) int array.

    Start nodes cycle round-robin over non-isolated nodes; the first step is
    uniform over neighbors, later steps follow the second-order transition.
    Deterministic given the config seed.
    """
    starts_pool = graph.non_isolated_nodes()
    if not starts_pool:
        raise DataError("no walkable nodes: the graph has zero edges")
    rng = np.random.default_rng([config.seed, 0])
    tables = _WalkTables(graph, config.p, config.q)
    num, length = config.num_walks, config.walk_length
    pool = np.array(starts_pool, dtype=np.int64)
    cur = pool[np.arange(num) % len(pool)]
    walks = np.empty((num, length), dtype=np.int64)
    walks[:, 0] = cur
    idx = rng.integers(0, tables.deg[cur])
    edge_id = tables.nbr_off[cur] + idx
    cur = tables.nbr_flat[edge_id]
    walks[:, 1] = cur
    for t in range(2, length):
        if tables.uniform:
            idx = rng.integers(0, tables.deg[cur])
        else:
            j = rng.integers(0, tables.deg[cur])
            u = rng.random(num)
            slot = tables.trans_off[edge_id] + j
            idx = np.where(u < tables.accept[slot], j, tables.alias[slot])
        edge_id = tables.nbr_off[cur] + idx
        cur = tables.nbr_flat[edge_id]
        walks[:, t] = cur
    return walks
