"""Fixed-dimension embedding tables and their text serialization.

File format (word2vec-style text): a header line "count dim", then one line
per row "id v1 ... v_dim" with 9 significant digits.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class EmbeddingTable:
    count: int
    dim: int
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (self.count, self.dim):
            raise DataError(f"vectors shape {self.vectors.shape} != "
                            f"({self.count}, {self.dim})")
        if not np.all(np.isfinite(self.vectors)):
            raise DataError("embedding table contains non-finite entries")

    def row(self, node_id: int) -> np.ndarray:
        return self.vectors[node_id]


def export_embeddings(table: EmbeddingTable, sink) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            export_embeddings(table, fh)
        return
    sink.write(f"{table.count} {table.dim}\n")
    for i in range(table.count):
        values = " ".join(format(v, ".9g") for v in table.vectors[i])
        sink.write(f"{i} {values}\n")


def import_embeddings(source) -> EmbeddingTable:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return import_embeddings(fh.readlines())
    lines = [ln for ln in source]
    if not lines:
        raise DataError("empty embedding file")
    header = lines[0].split()
    if len(header) != 2:
        raise DataError(f"malformed header {lines[0].strip()!r}; expected 'count dim'")
    try:
        count, dim = int(header[0]), int(header[1])
    except ValueError:
        raise DataError(f"non-integer header {lines[0].strip()!r}") from None
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != count:
        raise DataError(f"header declares {count} rows, found {len(rows)}")
    vectors = np.zeros((count, dim), dtype=np.float64)
    seen = np.zeros(count, dtype=bool)
    for lineno, ln in enumerate(rows, start=2):
        parts = ln.split()
        if len(parts) != dim + 1:
            raise DataError(f"line {lineno}: expected id plus {dim} values, "
                            f"got {len(parts)} fields")
        try:
            idx = int(parts[0])
            values = [float(x) for x in parts[1:]]
        except ValueError:
            raise DataError(f"line {lineno}: non-numeric field") from None
        if not 0 <= idx < count:
            raise DataError(f"line {lineno}: row id {idx} outside [0, {count})")
        if seen[idx]:
            raise DataError(f"line {lineno}: duplicate row id {idx}")
        seen[idx] = True
        vectors[idx] = values
    return EmbeddingTable(count=count, dim=dim, vectors=vectors)
