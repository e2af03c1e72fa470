"""Interaction logs: parsing, sequencing, splitting, batching.

A record is (user, order, skill, correct).  The combined interaction index
j = skill + correct * n_problems encodes a (skill, correctness) pair in a
single id; problems are identified with skills throughout, so n_problems
equals the number of distinct skills.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

PAD_ID = -1
_SKILL_TAG_SEPARATORS = (",", ";")


@dataclass
class InteractionRecord:
    user_id: int
    order_key: int
    skill_id: int
    correct: int


@dataclass
class StudentSequence:
    user_id: int
    skill_ids: np.ndarray
    corrects: np.ndarray

    def __len__(self) -> int:
        return len(self.skill_ids)


@dataclass
class Batch:
    """Padded training batch.

    decoder_ids at position i hold the interaction index of step i-1 (with a
    reserved start token at position 0), so predicting position i never sees
    its own correctness.  Padded slots hold PAD_ID and are masked out of
    every loss and metric.
    """

    encoder_ids: np.ndarray
    decoder_ids: np.ndarray
    labels: np.ndarray
    valid_mask: np.ndarray
    pad_id: int = PAD_ID

    def __post_init__(self):
        shapes = {self.encoder_ids.shape, self.decoder_ids.shape,
                  self.labels.shape, self.valid_mask.shape}
        if len(shapes) != 1:
            raise DataError(f"batch arrays disagree on shape: {shapes}")

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())


@dataclass
class SplitSpec:
    train_fraction: float = 0.9
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError(f"subsample must be in (0, 1], got {self.subsample}")


@dataclass
class InteractionSchema:
    user_col: str = "user_id"
    skill_col: str = "skill_id"
    correct_col: str = "correct"
    delimiter: str = ","


@dataclass
class ParseReport:
    n_rows: int = 0
    n_records: int = 0
    n_dropped_skill: int = 0
    n_dropped_correct: int = 0
    skill_map: dict[str, int] = field(default_factory=dict)
    user_map: dict[str, int] = field(default_factory=dict)

    @property
    def n_skills(self) -> int:
        return len(self.skill_map)

    @property
    def n_users(self) -> int:
        return len(self.user_map)


def _sort_key(token: str):
    try:
        return (0, float(token), token)
    except ValueError:
        return (1, 0.0, token)


def parse_interactions(source, schema: InteractionSchema | None = None,
                       skill_map: dict[str, int] | None = None
                       ) -> tuple[list[InteractionRecord], ParseReport]:
    """Parse a delimited interaction log with a header row.

    Rows with a missing or unmapped skill are dropped and counted; rows with
    a non-binary correctness value likewise.  Skill and user tokens are
    re-indexed densely (sorted, numeric-aware) unless a fixed skill_map is
    supplied, in which case unknown skills are dropped.  A cell holding
    several comma/semicolon-separated skill tags expands to one record per
    tag, order preserved.
    """
    schema = schema or InteractionSchema()
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", errors="replace", newline="") as fh:
            return parse_interactions(fh, schema, skill_map)
    reader = csv.reader(source, delimiter=schema.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty interaction file") from None
    header = [h.strip() for h in header]
    cols = {}
    for name in (schema.user_col, schema.skill_col, schema.correct_col):
        if name not in header:
            raise DataError(f"missing mandatory column {name!r}; header has {header}")
        cols[name] = header.index(name)

    report = ParseReport()
    raw_rows: list[tuple[str, str, int]] = []  # (user, skill_tag, correct)
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        report.n_rows += 1
        try:
            user = row[cols[schema.user_col]].strip()
            skill_cell = row[cols[schema.skill_col]].strip()
            correct_raw = row[cols[schema.correct_col]].strip()
        except IndexError:
            report.n_dropped_skill += 1
            continue
        if not skill_cell or not user:
            report.n_dropped_skill += 1
            continue
        try:
            correct = int(float(correct_raw))
            if correct not in (0, 1) or float(correct_raw) not in (0.0, 1.0):
                raise ValueError
        except ValueError:
            report.n_dropped_correct += 1
            logger.debug("dropped row with non-binary correctness %r", correct_raw)
            continue
        tags = [skill_cell]
        for sep in _SKILL_TAG_SEPARATORS:
            tags = [t.strip() for tag in tags for t in tag.split(sep)]
        for tag in tags:
            if tag:
                raw_rows.append((user, tag, correct))

    if skill_map is None:
        skills = sorted({tag for _, tag, _ in raw_rows}, key=_sort_key)
        skill_map = {tag: i for i, tag in enumerate(skills)}
    users = sorted({u for u, _, _ in raw_rows}, key=_sort_key)
    report.user_map = {u: i for i, u in enumerate(users)}
    report.skill_map = dict(skill_map)

    records = []
    for order, (user, tag, correct) in enumerate(raw_rows):
        if tag not in skill_map:
            report.n_dropped_skill += 1
            continue
        records.append(InteractionRecord(user_id=report.user_map[user],
                                         order_key=order,
                                         skill_id=skill_map[tag],
                                         correct=correct))
    report.n_records = len(records)
    return records, report


def write_interactions(records: list[InteractionRecord], sink,
                       schema: InteractionSchema | None = None) -> None:
    schema = schema or InteractionSchema()
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="") as fh:
            write_interactions(records, fh, schema)
        return
    writer = csv.writer(sink, delimiter=schema.delimiter)
    writer.writerow([schema.user_col, schema.skill_col, schema.correct_col])
    for r in sorted(records, key=lambda r: r.order_key):
        writer.writerow([r.user_id, r.skill_id, r.correct])


def interaction_index(skill_id: int, correct: int, n_problems: int) -> int:
    """Combined id j = skill + correct * n_problems, in [0, 2*n_problems)."""
    if not 0 <= skill_id < n_problems:
        raise DataError(f"skill id {skill_id} outside [0, {n_problems})")
    if correct not in (0, 1):
        raise DataError(f"correctness must be 0 or 1, got {correct}")
    return skill_id + correct * n_problems


def interaction_components(index: int, n_problems: int) -> tuple[int, int]:
    """Inverse of interaction_index: j -> (skill, correct)."""
    if not 0 <= index < 2 * n_problems:
        raise DataError(f"interaction index {index} outside [0, {2 * n_problems})")
    return index % n_problems, index // n_problems


def start_token_id(n_problems: int) -> int:
    """Reserved decoder start token, one past the largest interaction index."""
    return 2 * n_problems


def build_sequences(records: list[InteractionRecord], max_len: int = 200
                    ) -> list[StudentSequence]:
    """Group records per user (ordered by order_key), chunk runs longer than
    max_len into consecutive windows, drop anything shorter than 2."""
    if max_len < 2:
        raise ConfigError(f"max_len must be >= 2, got {max_len}")
    by_user: dict[int, list[InteractionRecord]] = {}
    for r in records:
        by_user.setdefault(r.user_id, []).append(r)
    sequences = []
    for user_id in sorted(by_user):
        rows = sorted(by_user[user_id], key=lambda r: r.order_key)
        for lo in range(0, len(rows), max_len):
            chunk = rows[lo:lo + max_len]
            if len(chunk) < 2:
                continue
            sequences.append(StudentSequence(
                user_id=user_id,
                skill_ids=np.array([r.skill_id for r in chunk], dtype=np.int64),
                corrects=np.array([r.correct for r in chunk], dtype=np.int64)))
    return sequences


def split_records(records: list[InteractionRecord], spec: SplitSpec
                  ) -> tuple[list[InteractionRecord], list[InteractionRecord]]:
    """Record-level split by shuffled order with a fixed seed.  A student may
    appear on both sides; subsampling (applied to the train side only) is a
    shuffled prefix, so smaller fractions nest inside larger ones."""
    rng = np.random.default_rng([spec.seed, 0])
    perm = rng.permutation(len(records))
    n_train = int(np.floor(spec.train_fraction * len(records)))
    train_idx = sorted(perm[:n_train].tolist())
    eval_idx = sorted(perm[n_train:].tolist())
    train = [records[i] for i in train_idx]
    eval_ = [records[i] for i in eval_idx]
    if spec.subsample < 1.0:
        train = subsample_records(train, spec.subsample, spec.seed)
    return train, eval_


def subsample_records(records: list[InteractionRecord], fraction: float,
                      seed: int) -> list[InteractionRecord]:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng([seed, 1])
    perm = rng.permutation(len(records))
    keep = int(np.floor(fraction * len(records)))
    return [records[i] for i in sorted(perm[:keep].tolist())]


def make_batches(sequences: list[StudentSequence], batch_size: int,
                 n_problems: int, pad_id: int = PAD_ID) -> list[Batch]:
    """Pad sequences into batches (each padded to its own longest member).

    Encoder ids are the skill ids; decoder ids are the shifted interaction
    indices with the reserved start token first; labels align with each
    position's own correctness.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if pad_id >= 0 and pad_id < 2 * n_problems + 1:
        raise ConfigError(f"pad_id {pad_id} collides with valid id ranges")
    start = start_token_id(n_problems)
    batches = []
    for lo in range(0, len(sequences), batch_size):
        group = sequences[lo:lo + batch_size]
        width = max(len(s) for s in group)
        b = len(group)
        enc = np.full((b, width), pad_id, dtype=np.int64)
        dec = np.full((b, width), pad_id, dtype=np.int64)
        lab = np.zeros((b, width), dtype=np.float64)
        mask = np.zeros((b, width), dtype=np.float64)
        for row, seq in enumerate(group):
            n = len(seq)
            if seq.skill_ids.min() < 0 or seq.skill_ids.max() >= n_problems:
                raise DataError(f"skill id outside [0, {n_problems}) in user "
                                f"{seq.user_id}")
            enc[row, :n] = seq.skill_ids
            dec[row, 0] = start
            dec[row, 1:n] = seq.skill_ids[:-1] + seq.corrects[:-1] * n_problems
            lab[row, :n] = seq.corrects
            mask[row, :n] = 1.0
        batches.append(Batch(encoder_ids=enc, decoder_ids=dec,
                             labels=lab, valid_mask=mask, pad_id=pad_id))
    return batches


def unbatch(batches: list[Batch], n_problems: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Recover (skill_ids, corrects) per row from batches (mask-filtered)."""
    out = []
    for b in batches:
        for row in range(b.encoder_ids.shape[0]):
            m = b.valid_mask[row] > 0
            out.append((b.encoder_ids[row, m].copy(),
                        b.labels[row, m].astype(np.int64)))
    return out
