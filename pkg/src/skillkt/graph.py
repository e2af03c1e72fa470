"""Undirected skill-relationship graphs and edge-list I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class SkillGraph:
    """Simple undirected graph over node ids [0, n_nodes).

    Adjacency lists are kept sorted; no self-loops, no parallel edges.
    """

    n_nodes: int
    adjacency: list[list[int]]
    labels: list[str] | None = None
    _neighbor_sets: list[set[int]] = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_nodes < 0:
            raise ConfigError(f"n_nodes must be non-negative, got {self.n_nodes}")
        if len(self.adjacency) != self.n_nodes:
            raise ConfigError(f"adjacency has {len(self.adjacency)} lists "
                              f"for {self.n_nodes} nodes")
        self._neighbor_sets = [set(nbrs) for nbrs in self.adjacency]
        for u, nbrs in enumerate(self.adjacency):
            for v in nbrs:
                if u == v:
                    raise ConfigError(f"self-loop at node {u}")
                if not 0 <= v < self.n_nodes:
                    raise ConfigError(f"neighbor {v} of node {u} out of range")
                if u not in self._neighbor_sets[v]:
                    raise ConfigError(f"edge ({u}, {v}) is not symmetric")

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[tuple[int, int]],
                   labels: list[str] | None = None) -> "SkillGraph":
        seen: set[tuple[int, int]] = set()
        adjacency: list[list[int]] = [[] for _ in range(n_nodes)]
        for u, v in edges:
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise DataError(f"edge ({u}, {v}) outside [0, {n_nodes})")
            if u == v:
                raise DataError(f"self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                continue
            seen.add(key)
            adjacency[u].append(v)
            adjacency[v].append(u)
        for nbrs in adjacency:
            nbrs.sort()
        return cls(n_nodes=n_nodes, adjacency=adjacency, labels=labels)

    def neighbors(self, v: int) -> list[int]:
        return self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def has_edge(self, u: int, v: int) -> bool:
        return v in self._neighbor_sets[u]

    @property
    def n_edges(self) -> int:
        return sum(len(nbrs) for nbrs in self.adjacency) // 2

    def edges(self) -> Iterator[tuple[int, int]]:
        for u, nbrs in enumerate(self.adjacency):
            for v in nbrs:
                if u < v:
                    yield u, v

    def non_isolated_nodes(self) -> list[int]:
        return [v for v in range(self.n_nodes) if self.adjacency[v]]

    def degree_sequence(self) -> list[int]:
        return [len(nbrs) for nbrs in self.adjacency]


def load_edge_list(source, n_skills: int) -> SkillGraph:
    """Parse whitespace-separated integer pairs, one edge per line.

    ``#`` starts a comment (whole line or trailing); blank lines are skipped;
    duplicate edges collapse.  ``source`` may be a path or an iterable of
    lines.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_edge_list(fh.readlines(), n_skills)
    edges = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise DataError(f"line {lineno}: expected two node ids, got {raw.strip()!r}")
        try:
            u, v = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise DataError(f"line {lineno}: non-integer token in {raw.strip()!r}") from None
        if not (0 <= u < n_skills and 0 <= v < n_skills):
            raise DataError(f"line {lineno}: node id outside [0, {n_skills})")
        if u == v:
            raise DataError(f"line {lineno}: self-loop at node {u}")
        edges.append((u, v))
    return SkillGraph.from_edges(n_skills, edges)


def save_edge_list(graph: SkillGraph, path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for u, v in graph.edges():
            fh.write(f"{u} {v}\n")


def random_skill_graph(n_skills: int, edge_count: int, seed: int) -> SkillGraph:
    """Uniformly sampled simple undirected graph with exactly edge_count edges."""
    max_edges = n_skills * (n_skills - 1) // 2
    if edge_count < 0 or edge_count > max_edges:
        raise ConfigError(f"edge_count {edge_count} infeasible for {n_skills} nodes "
                          f"(max {max_edges})")
    rng = np.random.default_rng(seed)
    if max_edges <= 2_000_000:
        rows, cols = np.triu_indices(n_skills, k=1)
        chosen = rng.choice(max_edges, size=edge_count, replace=False)
        edges = [(int(rows[i]), int(cols[i])) for i in chosen]
    else:
        # rejection sampling for very large node counts
        picked: set[tuple[int, int]] = set()
        while len(picked) < edge_count:
            u, v = rng.integers(0, n_skills, size=2)
            if u != v:
                picked.add((int(min(u, v)), int(max(u, v))))
        edges = sorted(picked)
    return SkillGraph.from_edges(n_skills, edges)
