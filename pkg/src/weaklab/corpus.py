"""Data model and ingestion: label schemas, utterances, datasets, lexicons.

The loaders here read the line-oriented on-disk formats shared by every
weak source and by the pipeline stages:

- dataset: one JSON object per line with ``id``, ``text`` and optional
  ``gold`` fields (UTF-8),
- lexicon: ``token<TAB>score`` lines,
- schema: a single JSON object listing ``task_name`` and ordered ``classes``.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import logging
import math
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

logger = logging.getLogger(__name__)

__all__ = [
    "ClassLabel",
    "LabelSchema",
    "Utterance",
    "Dataset",
    "Lexicon",
    "TokenSequence",
    "CorpusError",
    "load_schema",
    "load_dataset",
    "dump_dataset",
    "load_lexicon",
    "normalize_text",
]


class CorpusError(ValueError):
    """A dataset, schema or lexicon file violates its format contract."""


@dataclass(frozen=True)
class ClassLabel:
    """One class of a labeling task, identified by name and schema position."""

    name: str
    index: int

    def __post_init__(self) -> None:
        if not self.name:
            raise CorpusError("class label name must be non-empty")
        if self.index < 0:
            raise CorpusError(f"class label index must be >= 0, got {self.index}")


@dataclass(frozen=True)
class LabelSchema:
    """Ordered class inventory of a task.

    The class order is canonical: demonstrations, vote distributions and
    tie-breaking all follow it.
    """

    task_name: str
    classes: tuple[ClassLabel, ...]

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise CorpusError(
                f"schema {self.task_name!r} needs at least 2 classes, "
                f"got {len(self.classes)}"
            )
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise CorpusError(f"duplicate class names in schema {self.task_name!r}")
        for position, cls in enumerate(self.classes):
            if cls.index != position:
                raise CorpusError(
                    f"class indices must be contiguous from 0; "
                    f"{cls.name!r} has index {cls.index} at position {position}"
                )

    @classmethod
    def from_names(cls, task_name: str, names: Sequence[str]) -> "LabelSchema":
        return cls(task_name, tuple(ClassLabel(n, i) for i, n in enumerate(names)))

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self) -> Iterator[ClassLabel]:
        return iter(self.classes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    def by_name(self, name: str) -> ClassLabel:
        for cls in self.classes:
            if cls.name == name:
                return cls
        raise CorpusError(
            f"unknown class {name!r} for schema {self.task_name!r} "
            f"(expected one of {list(self.names)})"
        )

    def __contains__(self, label: ClassLabel) -> bool:
        return 0 <= label.index < len(self.classes) and self.classes[label.index] == label


@dataclass(frozen=True)
class Utterance:
    """A single identified text sample, optionally carrying a gold label."""

    id: str
    text: str
    gold: ClassLabel | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("utterance id must be non-empty")
        if not self.text.strip():
            raise CorpusError(f"utterance {self.id!r} has empty text")


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of utterances under one schema."""

    schema: LabelSchema
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for utt in self.utterances:
            if utt.id in seen:
                raise CorpusError(f"duplicate utterance id {utt.id!r}")
            seen.add(utt.id)
            if utt.gold is not None and utt.gold not in self.schema:
                raise CorpusError(
                    f"utterance {utt.id!r} has gold label {utt.gold.name!r} "
                    f"not in schema {self.schema.task_name!r}"
                )

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(u.id for u in self.utterances)

    def gold_labels(self) -> list[ClassLabel | None]:
        return [u.gold for u in self.utterances]


@dataclass(frozen=True)
class TokenSequence:
    """Lowercased, punctuation-stripped tokens of one utterance."""

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        for tok in self.tokens:
            if not tok or tok != tok.strip():
                raise CorpusError(f"malformed token {tok!r} in token sequence")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]


@dataclass(frozen=True)
class Lexicon:
    """Token polarity scores; positive means positive-class evidence."""

    entries: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for token, score in self.entries.items():
            if not token or any(ch.isspace() for ch in token):
                raise CorpusError(f"lexicon token {token!r} must be non-empty, no whitespace")
            if token != token.lower():
                raise CorpusError(f"lexicon token {token!r} must be lowercase")
            if not math.isfinite(score):
                raise CorpusError(f"lexicon score for {token!r} must be finite")

    def score(self, token: str) -> float | None:
        return self.entries.get(token)

    def negated(self) -> "Lexicon":
        """Lexicon with every polarity score sign-flipped."""
        return Lexicon({t: -s for t, s in self.entries.items()})

    def __len__(self) -> int:
        return len(self.entries)


def normalize_text(text: str) -> TokenSequence:
    """Lowercase and tokenize raw text.

    Splits on whitespace and strips surrounding punctuation from each token.
    Intra-word apostrophes and hyphens survive ("don't", "uh-oh"); tokens
    that are pure punctuation are dropped. Empty input yields an empty
    sequence. Idempotent on its own output joined by spaces.
    """
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            tokens.append(tok)
    return TokenSequence(tuple(tokens))


def load_schema(path: str | Path) -> LabelSchema:
    """Read a schema config: ``{"task_name": ..., "classes": [...]}``."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: malformed schema file: {exc}") from exc
    if not isinstance(obj, dict) or "task_name" not in obj or "classes" not in obj:
        raise CorpusError(f"{path}: schema file needs 'task_name' and 'classes'")
    classes = obj["classes"]
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise CorpusError(f"{path}: 'classes' must be a list of class names")
    return LabelSchema.from_names(obj["task_name"], classes)


def load_dataset(path: str | Path, schema: LabelSchema) -> Dataset:
    """Read a line-per-record dataset file, preserving input order.

    Each non-blank line is a JSON object with string fields ``id`` and
    ``text`` and an optional ``gold`` class name, resolved against the
    schema. Raises :class:`CorpusError` naming the offending line for
    malformed records, duplicate ids and unknown gold labels.
    """
    path = Path(path)
    utterances: list[Utterance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}:{lineno}: record must be a JSON object")
            for key in ("id", "text"):
                if key not in rec or not isinstance(rec[key], str):
                    raise CorpusError(f"{path}:{lineno}: missing or non-string {key!r} field")
            if rec["id"] in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
            seen.add(rec["id"])
            gold = None
            if rec.get("gold") is not None:
                if not isinstance(rec["gold"], str):
                    raise CorpusError(f"{path}:{lineno}: 'gold' must be a class name")
                try:
                    gold = schema.by_name(rec["gold"])
                except CorpusError as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            try:
                utterances.append(Utterance(rec["id"], rec["text"], gold))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return Dataset(schema, tuple(utterances))


def dumps_record(utterance: Utterance) -> str:
    """Canonical single-line serialization of one utterance."""
    rec: dict[str, str] = {"id": utterance.id, "text": utterance.text}
    if utterance.gold is not None:
        rec["gold"] = utterance.gold.name
    return json.dumps(rec, ensure_ascii=False)


def dump_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset in the canonical line-per-record form.

    ``load_dataset`` followed by ``dump_dataset`` round-trips canonical
    input byte-identically (modulo line endings).
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for utt in dataset:
            fh.write(dumps_record(utt))
            fh.write("\n")


def load_lexicon(path: str | Path) -> Lexicon:
    """Read a ``token<TAB>score`` lexicon file.

    Tokens are lowercased. A token appearing more than once keeps its last
    score, with a warning, so layered lexicon files can override earlier
    entries.
    """
    path = Path(path)
    entries: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            token, sep, score_text = line.partition("\t")
            if not sep:
                raise CorpusError(f"{path}:{lineno}: expected token<TAB>score")
            token = token.strip().lower()
            if not token:
                raise CorpusError(f"{path}:{lineno}: empty token")
            if any(ch.isspace() for ch in token):
                raise CorpusError(f"{path}:{lineno}: token {token!r} contains whitespace")
            try:
                score = float(score_text)
            except ValueError:
                raise CorpusError(
                    f"{path}:{lineno}: non-numeric score {score_text.strip()!r}"
                ) from None
            if not math.isfinite(score):
                raise CorpusError(f"{path}:{lineno}: score must be finite")
            if token in entries:
                logger.warning(
                    "%s:%d: duplicate lexicon token %r: overriding %s with %s",
                    path, lineno, token, entries[token], score,
                )
            entries[token] = score
    return Lexicon(entries)
