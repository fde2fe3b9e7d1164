"""Evaluation metrics and reporting conventions.

Macro-F1 is the unweighted mean of per-class F1 over every schema class,
with the 0/0 -> 0 convention throughout. Two evaluation modes exist:

- ``macro_f1``: plain predictions vs gold over fully covered samples.
- ``rule_baseline_eval``: for abstaining sources; an abstention counts as a
  false negative for the sample's gold class (hurting recall) but emits no
  prediction (leaving precision over emitted votes only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import ClassLabel, LabelSchema
from .rules import LabelVote

__all__ = [
    "MetricsError",
    "EvalReport",
    "macro_f1",
    "rule_baseline_eval",
    "per_class_f1_from_confusion",
]


class MetricsError(ValueError):
    """Predictions, votes and gold labels do not line up."""


def _prf(tp: float, fp: float, fn: float) -> dict[str, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall > 0
        else 0.0
    )
    return {"precision": precision, "recall": recall, "f1": f1}


def per_class_f1_from_confusion(
    confusion: np.ndarray,
) -> tuple[np.ndarray, list[dict[str, float]]]:
    """Per-class F1 (and precision/recall) from a gold-by-predicted confusion matrix."""
    confusion = np.asarray(confusion)
    n = confusion.shape[0]
    details = []
    f1s = np.zeros(n)
    for c in range(n):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        detail = _prf(tp, fp, fn)
        details.append(detail)
        f1s[c] = detail["f1"]
    return f1s, details


@dataclass(frozen=True)
class EvalReport:
    """Macro-F1 plus the per-class metrics and confusion counts behind it.

    The confusion matrix is gold-by-predicted and covers emitted predictions
    only; per-class abstention counts (when present) account for the rest,
    so confusion totals plus abstentions always equal the sample count.
    """

    macro_f1: float
    per_class: dict[str, dict[str, float]]
    confusion: tuple[tuple[int, ...], ...]
    sample_count: int
    coverage: float | None = None
    abstained: dict[str, int] | None = None

    def __post_init__(self) -> None:
        emitted = sum(sum(row) for row in self.confusion)
        held_out = sum(self.abstained.values()) if self.abstained else 0
        if emitted + held_out != self.sample_count:
            raise MetricsError(
                f"confusion counts ({emitted}) plus abstentions ({held_out}) "
                f"must equal sample count ({self.sample_count})"
            )
        mean_f1 = float(np.mean([d["f1"] for d in self.per_class.values()]))
        if abs(mean_f1 - self.macro_f1) > 1e-9:
            raise MetricsError("macro-F1 must be the mean of per-class F1")

    def to_dict(self) -> dict:
        out: dict = {
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "confusion": [list(row) for row in self.confusion],
            "sample_count": self.sample_count,
        }
        if self.coverage is not None:
            out["coverage"] = self.coverage
        if self.abstained is not None:
            out["abstained"] = self.abstained
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            macro_f1=obj["macro_f1"],
            per_class=obj["per_class"],
            confusion=tuple(tuple(row) for row in obj["confusion"]),
            sample_count=obj["sample_count"],
            coverage=obj.get("coverage"),
            abstained=obj.get("abstained"),
        )


def _resolve(labels: Sequence[ClassLabel | str], schema: LabelSchema) -> list[ClassLabel]:
    out = []
    for lab in labels:
        out.append(schema.by_name(lab) if isinstance(lab, str) else lab)
    return out


def macro_f1(
    preds: Sequence[ClassLabel | str],
    gold: Sequence[ClassLabel | str],
    schema: LabelSchema,
) -> EvalReport:
    """Macro-F1 of full-coverage predictions against gold.

    Every schema class participates in the mean, including classes absent
    from gold (their F1 is 0 unless never predicted either, in which case
    the 0/0 -> 0 convention applies).
    """
    if len(preds) != len(gold):
        raise MetricsError(f"{len(preds)} predictions vs {len(gold)} gold labels")
    if not preds:
        raise MetricsError("cannot evaluate an empty prediction list")
    preds_r = _resolve(preds, schema)
    gold_r = _resolve(gold, schema)
    n = len(schema)
    confusion = np.zeros((n, n), dtype=int)
    for p, g in zip(preds_r, gold_r):
        confusion[g.index, p.index] += 1
    f1s, details = per_class_f1_from_confusion(confusion)
    per_class = {cls.name: details[cls.index] for cls in schema.classes}
    return EvalReport(
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
        confusion=tuple(tuple(int(x) for x in row) for row in confusion),
        sample_count=len(preds_r),
    )


def rule_baseline_eval(
    votes: Sequence[LabelVote | ClassLabel | None],
    gold: Sequence[ClassLabel | str],
    schema: LabelSchema,
) -> EvalReport:
    """Evaluate an abstaining source with abstentions as false negatives.

    Recall denominators count every gold sample of a class, covered or not;
    precision uses only emitted predictions. With full coverage this is
    identical to ``macro_f1``.
    """
    if len(votes) != len(gold):
        raise MetricsError(f"{len(votes)} votes vs {len(gold)} gold labels")
    if not votes:
        raise MetricsError("cannot evaluate an empty vote list")
    gold_r = _resolve(gold, schema)
    n = len(schema)
    confusion = np.zeros((n, n), dtype=int)
    abstained = np.zeros(n, dtype=int)
    for vote, g in zip(votes, gold_r):
        label = vote.label if isinstance(vote, LabelVote) else vote
        if label is None:
            abstained[g.index] += 1
        else:
            confusion[g.index, label.index] += 1
    per_class: dict[str, dict[str, float]] = {}
    f1s = []
    for cls in schema.classes:
        c = cls.index
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp + abstained[c]
        detail = _prf(float(tp), float(fp), float(fn))
        per_class[cls.name] = detail
        f1s.append(detail["f1"])
    covered = int(confusion.sum())
    return EvalReport(
        macro_f1=float(np.mean(f1s)),
        per_class=per_class,
        confusion=tuple(tuple(int(x) for x in row) for row in confusion),
        sample_count=len(votes),
        coverage=covered / len(votes),
        abstained={cls.name: int(abstained[cls.index]) for cls in schema.classes},
    )
