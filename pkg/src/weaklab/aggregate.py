"""Label matrix construction, vote aggregation, and per-source statistics.

The label matrix is the samples-by-sources grid of votes every weak source
casts over a dataset. Aggregation reduces each row to a training signal:
``majority_vote`` counts non-abstain votes (confidences ignored) and returns
the unique plurality winner or abstains on ties, while ``soft_aggregate``
produces a confidence-weighted class distribution. Per-source statistics
report coverage and Macro-F1 computed only over the samples the source
actually labeled.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import ClassLabel, Dataset, LabelSchema, Utterance
from .metrics import per_class_f1_from_confusion
from .rules import LabelVote

logger = logging.getLogger(__name__)

__all__ = [
    "WeakSource",
    "AggregateError",
    "LabelMatrix",
    "AggregatedLabels",
    "SourceStats",
    "build_matrix",
    "majority_vote",
    "soft_aggregate",
    "aggregate_labels",
    "append_majority_source",
    "source_stats",
    "write_matrix",
    "read_matrix",
]


class AggregateError(ValueError):
    """A matrix, row or statistics request violates its contract."""


class WeakSource(Protocol):
    source_id: str

    def label(self, utterance: Utterance) -> LabelVote: ...


@dataclass(frozen=True)
class LabelMatrix:
    """Votes of every source on every sample; rows are samples."""

    sample_ids: tuple[str, ...]
    source_ids: tuple[str, ...]
    votes: tuple[tuple[LabelVote, ...], ...]

    def __post_init__(self) -> None:
        if len(self.votes) != len(self.sample_ids):
            raise AggregateError(
                f"{len(self.votes)} vote rows for {len(self.sample_ids)} samples"
            )
        for row in self.votes:
            if len(row) != len(self.source_ids):
                raise AggregateError(
                    f"row width {len(row)} does not match {len(self.source_ids)} sources"
                )
            for vote, source_id in zip(row, self.source_ids):
                if vote.source_id != source_id:
                    raise AggregateError(
                        f"vote from {vote.source_id!r} sits in column {source_id!r}"
                    )

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_sources(self) -> int:
        return len(self.source_ids)

    def row(self, i: int) -> tuple[LabelVote, ...]:
        return self.votes[i]

    def column(self, source_id: str) -> tuple[LabelVote, ...]:
        try:
            j = self.source_ids.index(source_id)
        except ValueError:
            raise AggregateError(f"no source {source_id!r} in matrix") from None
        return tuple(row[j] for row in self.votes)


@dataclass(frozen=True)
class AggregatedLabels:
    """Per-sample aggregation result under one mode.

    ``soft`` rows are distributions over schema classes (or None when every
    source abstained); a present ``hard`` label is always the unique argmax
    of the matching soft row.
    """

    sample_ids: tuple[str, ...]
    hard: tuple[ClassLabel | None, ...]
    soft: tuple[tuple[float, ...] | None, ...]
    mode: str

    def __post_init__(self) -> None:
        if not (len(self.sample_ids) == len(self.hard) == len(self.soft)):
            raise AggregateError("aggregated label columns must align with sample ids")
        for sample_id, hard, soft in zip(self.sample_ids, self.hard, self.soft):
            if hard is not None:
                if soft is None:
                    raise AggregateError(f"{sample_id}: hard label without distribution")
                top = max(soft)
                if soft[hard.index] != top or soft.count(top) != 1:
                    raise AggregateError(
                        f"{sample_id}: hard label must be the unique argmax of soft"
                    )

    @property
    def covered_indices(self) -> list[int]:
        return [i for i, h in enumerate(self.hard) if h is not None]


@dataclass(frozen=True)
class SourceStats:
    """Coverage and covered-only quality of one source."""

    source_id: str
    coverage: float
    covered_macro_f1: float | None
    per_class: dict[str, dict[str, float]]

    def __post_init__(self) -> None:
        if not (0.0 <= self.coverage <= 1.0):
            raise AggregateError(f"coverage {self.coverage} outside [0, 1]")
        if self.covered_macro_f1 is not None and not (0.0 <= self.covered_macro_f1 <= 1.0):
            raise AggregateError(f"macro-F1 {self.covered_macro_f1} outside [0, 1]")


def build_matrix(
    dataset: Dataset,
    sources: Sequence[WeakSource],
    max_workers: int | None = None,
) -> LabelMatrix:
    """Evaluate every source on every sample.

    A source that raises on a sample contributes an abstain vote annotated
    with the error instead of aborting the matrix. Rows may be computed in
    parallel; the assembled matrix is identical either way because sources
    are pure and rows are keyed by position.
    """
    if not sources:
        raise AggregateError("build_matrix needs at least one source")
    source_ids = tuple(s.source_id for s in sources)
    if len(set(source_ids)) != len(source_ids):
        raise AggregateError(f"duplicate source ids: {sorted(source_ids)}")

    def label_row(utterance: Utterance) -> tuple[LabelVote, ...]:
        row = []
        for source in sources:
            try:
                row.append(source.label(utterance))
            except Exception as exc:  # noqa: BLE001 - any source failure becomes an abstain
                logger.warning(
                    "source %r failed on sample %r: %s", source.source_id, utterance.id, exc
                )
                row.append(
                    LabelVote.abstain(source.source_id, note=f"error: {exc}")
                )
        return tuple(row)

    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = tuple(pool.map(label_row, dataset.utterances))
    else:
        rows = tuple(label_row(utt) for utt in dataset.utterances)
    return LabelMatrix(dataset.ids, source_ids, rows)


def majority_vote(row: Sequence[LabelVote], schema: LabelSchema) -> ClassLabel | None:
    """Unique plurality winner by vote count; ties and empty rows abstain.

    Confidences are deliberately ignored: this is plain counting.
    """
    counts = np.zeros(len(schema), dtype=int)
    for vote in row:
        if vote.label is not None:
            counts[vote.label.index] += 1
    top = counts.max()
    if top == 0 or (counts == top).sum() != 1:
        return None
    return schema.classes[int(counts.argmax())]


def soft_aggregate(row: Sequence[LabelVote], schema: LabelSchema) -> np.ndarray | None:
    """Confidence-weighted class mass, normalized; None when all abstain."""
    mass = np.zeros(len(schema), dtype=float)
    for vote in row:
        if vote.label is not None:
            mass[vote.label.index] += vote.confidence
    total = mass.sum()
    if total <= 0.0:
        return None
    return mass / total


def _count_distribution(row: Sequence[LabelVote], schema: LabelSchema) -> np.ndarray | None:
    counts = np.zeros(len(schema), dtype=float)
    for vote in row:
        if vote.label is not None:
            counts[vote.label.index] += 1.0
    total = counts.sum()
    if total <= 0.0:
        return None
    return counts / total


def aggregate_labels(
    matrix: LabelMatrix, schema: LabelSchema, mode: str = "majority"
) -> AggregatedLabels:
    """Reduce each matrix row to a hard label and a class distribution.

    ``majority`` mode counts votes: the distribution is the normalized count
    vector and the hard label the unique plurality winner. ``soft`` mode
    weights votes by confidence and takes the unique argmax. Ties leave the
    hard label absent in both modes.
    """
    if mode not in ("majority", "soft"):
        raise AggregateError(f"unknown aggregation mode {mode!r}")
    hard: list[ClassLabel | None] = []
    soft: list[tuple[float, ...] | None] = []
    for row in matrix.votes:
        dist = (
            _count_distribution(row, schema)
            if mode == "majority"
            else soft_aggregate(row, schema)
        )
        if dist is None:
            hard.append(None)
            soft.append(None)
            continue
        soft.append(tuple(float(x) for x in dist))
        top = dist.max()
        if (dist == top).sum() == 1:
            hard.append(schema.classes[int(dist.argmax())])
        else:
            hard.append(None)
    return AggregatedLabels(matrix.sample_ids, tuple(hard), tuple(soft), mode)


def append_majority_source(
    matrix: LabelMatrix, schema: LabelSchema, source_id: str = "majority_rule"
) -> LabelMatrix:
    """Add the majority vote as one more source column.

    The synthetic column votes the plurality winner with the winner's share
    of non-abstain votes as confidence, and abstains on ties.
    """
    if source_id in matrix.source_ids:
        raise AggregateError(f"matrix already has a source {source_id!r}")
    new_rows = []
    for row in matrix.votes:
        winner = majority_vote(row, schema)
        if winner is None:
            extra = LabelVote.abstain(source_id)
        else:
            total = sum(1 for v in row if v.label is not None)
            share = sum(1 for v in row if v.label == winner) / total
            extra = LabelVote(source_id, winner, share)
        new_rows.append(row + (extra,))
    return LabelMatrix(matrix.sample_ids, matrix.source_ids + (source_id,), tuple(new_rows))


def source_stats(
    matrix: LabelMatrix,
    gold: Sequence[ClassLabel | None] | None,
    schema: LabelSchema,
) -> list[SourceStats]:
    """Coverage per source, plus covered-only Macro-F1 when gold is given.

    F1 is computed over exactly the samples each source labeled; abstentions
    reduce coverage but never count against accuracy here.
    """
    if gold is not None and len(gold) != matrix.n_samples:
        raise AggregateError(
            f"{len(gold)} gold labels for {matrix.n_samples} samples"
        )
    stats = []
    n_classes = len(schema)
    for j, source_id in enumerate(matrix.source_ids):
        column = [row[j] for row in matrix.votes]
        covered = sum(1 for v in column if v.label is not None)
        coverage = covered / matrix.n_samples if matrix.n_samples else 0.0
        macro: float | None = None
        per_class: dict[str, dict[str, float]] = {}
        if gold is not None:
            confusion = np.zeros((n_classes, n_classes), dtype=int)
            scored = 0
            for vote, gold_label in zip(column, gold):
                if vote.label is None or gold_label is None:
                    continue
                confusion[gold_label.index, vote.label.index] += 1
                scored += 1
            if scored:
                f1s, details = per_class_f1_from_confusion(confusion)
                macro = float(np.mean(f1s))
                per_class = {
                    cls.name: details[cls.index] for cls in schema.classes
                }
        stats.append(SourceStats(source_id, coverage, macro, per_class))
    return stats


def _vote_to_record(vote: LabelVote) -> dict:
    rec: dict = {
        "source": vote.source_id,
        "label": vote.label.name if vote.label is not None else None,
        "confidence": vote.confidence,
    }
    if vote.note is not None:
        rec["note"] = vote.note
    return rec


def write_matrix(
    matrix: LabelMatrix,
    path: str | Path,
    schema: LabelSchema,
    include_aggregates: bool = True,
) -> None:
    """Write the line-per-sample matrix artifact.

    Each record carries the sample id and full vote provenance; with
    ``include_aggregates`` the per-sample majority label and soft
    distribution are filled in as well (the label stage writes them null,
    the aggregate stage fills them).
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, sample_id in enumerate(matrix.sample_ids):
            majority: str | None = None
            soft: list[float] | None = None
            if include_aggregates:
                winner = majority_vote(matrix.votes[i], schema)
                majority = winner.name if winner is not None else None
                dist = soft_aggregate(matrix.votes[i], schema)
                soft = [float(x) for x in dist] if dist is not None else None
            rec = {
                "id": sample_id,
                "votes": [_vote_to_record(v) for v in matrix.votes[i]],
                "majority": majority,
                "soft": soft,
            }
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


def read_matrix(path: str | Path, schema: LabelSchema) -> LabelMatrix:
    """Rebuild a LabelMatrix from its artifact (votes only; aggregates are derived)."""
    path = Path(path)
    sample_ids: list[str] = []
    rows: list[tuple[LabelVote, ...]] = []
    source_ids: tuple[str, ...] | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AggregateError(f"{path}:{lineno}: malformed record: {exc}") from exc
            sample_ids.append(rec["id"])
            row = []
            for v in rec["votes"]:
                label = schema.by_name(v["label"]) if v["label"] is not None else None
                row.append(LabelVote(v["source"], label, v["confidence"], v.get("note")))
            ids = tuple(v.source_id for v in row)
            if source_ids is None:
                source_ids = ids
            elif ids != source_ids:
                raise AggregateError(f"{path}:{lineno}: inconsistent source columns")
            rows.append(tuple(row))
    if source_ids is None:
        raise AggregateError(f"{path}: empty matrix artifact")
    return LabelMatrix(tuple(sample_ids), source_ids, tuple(rows))
