"""Synthetic student generator with a known skill-cluster structure.

Students have one latent ability per skill cluster; skills have a scalar
difficulty.  P(correct) = sigmoid(ability - difficulty), and practicing any
skill in a cluster bumps that cluster's ability by a fixed increment.  The
ground-truth graph connects every intra-cluster skill pair, which gives the
training pipeline a graph whose structure is correct by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionRecord
from .errors import ConfigError
from .graph import SkillGraph


@dataclass
class ClusterSpec:
    """Partition of skill ids into clusters."""

    n_skills: int
    clusters: list[list[int]]

    def __post_init__(self):
        seen: set[int] = set()
        if not self.clusters:
            raise ConfigError("cluster spec needs at least one cluster")
        for c in self.clusters:
            if not c:
                raise ConfigError("empty cluster in cluster spec")
            seen.update(c)
        if seen != set(range(self.n_skills)):
            raise ConfigError(f"clusters must partition skills [0, {self.n_skills}); "
                              f"got {sorted(seen)}")

    @classmethod
    def even(cls, n_skills: int, n_clusters: int) -> "ClusterSpec":
        if n_clusters < 1 or n_clusters > n_skills:
            raise ConfigError(f"cannot split {n_skills} skills into {n_clusters} clusters")
        base, extra = divmod(n_skills, n_clusters)
        clusters, at = [], 0
        for c in range(n_clusters):
            size = base + (1 if c < extra else 0)
            clusters.append(list(range(at, at + size)))
            at += size
        return cls(n_skills=n_skills, clusters=clusters)

    def cluster_of(self) -> np.ndarray:
        out = np.zeros(self.n_skills, dtype=np.int64)
        for ci, skills in enumerate(self.clusters):
            out[skills] = ci
        return out


def truth_graph(spec: ClusterSpec) -> SkillGraph:
    """All intra-cluster pairs connected; nothing across clusters."""
    edges = [(u, v) for skills in spec.clusters
             for i, u in enumerate(skills) for v in skills[i + 1:]]
    return SkillGraph.from_edges(spec.n_skills, edges)


def synthesize_students(n_students: int, n_skills: int,
                        cluster_spec: ClusterSpec | int, seed: int,
                        interactions_per_student: int = 100,
                        ability_lr: float = 0.02,
                        ability_std: float = 1.0,
                        difficulty_std: float = 1.0,
                        difficulties: np.ndarray | None = None
                        ) -> tuple[list[InteractionRecord], SkillGraph]:
    """Generate interaction records plus the ground-truth skill graph.

    difficulties overrides the per-skill difficulty draw when given (used by
    tests that pin the answer distribution).
    """
    if n_students < 1:
        raise ConfigError(f"n_students must be >= 1, got {n_students}")
    if interactions_per_student < 1:
        raise ConfigError(f"interactions_per_student must be >= 1, "
                          f"got {interactions_per_student}")
    spec = (ClusterSpec.even(n_skills, cluster_spec)
            if isinstance(cluster_spec, int) else cluster_spec)
    if spec.n_skills != n_skills:
        raise ConfigError(f"cluster spec is for {spec.n_skills} skills, not {n_skills}")
    rng = np.random.default_rng([seed, 0])
    if difficulties is None:
        diff = rng.normal(0.0, 1.0, size=n_skills) * difficulty_std
    else:
        diff = np.asarray(difficulties, dtype=np.float64)
        if diff.shape != (n_skills,):
            raise ConfigError(f"difficulties shape {diff.shape} != ({n_skills},)")
    cluster_of = spec.cluster_of()
    records = []
    order = 0
    for user in range(n_students):
        ability = rng.normal(0.0, 1.0, size=len(spec.clusters)) * ability_std
        skills = rng.integers(0, n_skills, size=interactions_per_student)
        draws = rng.random(interactions_per_student)
        for s, u in zip(skills, draws):
            c = cluster_of[s]
            p = 1.0 / (1.0 + np.exp(-(ability[c] - diff[s])))
            correct = int(u < p)
            records.append(InteractionRecord(user_id=user, order_key=order,
                                             skill_id=int(s), correct=correct))
            order += 1
            ability[c] += ability_lr
    return records, truth_graph(spec)
