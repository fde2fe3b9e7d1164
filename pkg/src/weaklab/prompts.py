"""Prompt-based weak sources.

A prompt template turns a classification task into something a language
model already does: either entailment scoring (one hypothesis per class,
built by substituting each class's verbalizer into the pattern) or mask
filling (the pattern carries a mask slot, and the class whose verbalizer is
most probable there wins). Templates can be task-specific ("The sentiment
of the speaker is {mask}") or task-agnostic ("The text can be classified as
{mask}"), the latter reusable across tasks by swapping the verbalizer map.

Cloze prompts optionally append one demonstration per class after the query,
giving the model an in-context example of each verbalizer in use.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends import (
    CAP_ENTAILMENT,
    CAP_MASK_FILL,
    BackendError,
    EntailmentQuery,
    LMBackend,
    MaskFillQuery,
    PermanentBackendError,
    TransientBackendError,
)
from .corpus import ClassLabel, LabelSchema, Utterance
from .rules import LabelVote

logger = logging.getLogger(__name__)

__all__ = [
    "STYLE_NLI",
    "STYLE_CLOZE",
    "PromptError",
    "PromptTemplate",
    "Demonstration",
    "render_nli_hypotheses",
    "render_cloze",
    "nli_label",
    "cloze_label",
    "ensemble_prompt_label",
    "load_prompt_specs",
    "PromptSource",
    "EnsemblePromptSource",
]

STYLE_NLI = "nli"
STYLE_CLOZE = "cloze"

MASK_SLOT = "{mask}"
TEXT_SLOT = "{text}"
DEMO_SEPARATOR = " "


class PromptError(ValueError):
    """A template, demonstration set or prompt-spec file is invalid."""


@dataclass(frozen=True)
class PromptTemplate:
    """A pattern string plus the verbalizer standing in for each class."""

    id: str
    style: str
    pattern: str
    verbalizer_map: dict[str, str]  # class name -> single verbalizer token

    def __post_init__(self) -> None:
        if self.style not in (STYLE_NLI, STYLE_CLOZE):
            raise PromptError(
                f"template {self.id!r}: style must be '{STYLE_NLI}' or '{STYLE_CLOZE}', "
                f"got {self.style!r}"
            )
        if self.pattern.count(MASK_SLOT) != 1:
            raise PromptError(
                f"template {self.id!r}: pattern must contain exactly one {MASK_SLOT}"
            )
        if self.pattern.count(TEXT_SLOT) > 1:
            raise PromptError(
                f"template {self.id!r}: pattern may contain at most one {TEXT_SLOT}"
            )
        for cls_name, verbalizer in self.verbalizer_map.items():
            if not verbalizer or len(verbalizer.split()) != 1:
                raise PromptError(
                    f"template {self.id!r}: verbalizer for {cls_name!r} must be a "
                    f"single token, got {verbalizer!r}"
                )
        tokens = list(self.verbalizer_map.values())
        if len(set(tokens)) != len(tokens):
            raise PromptError(f"template {self.id!r}: verbalizers must be pairwise distinct")

    def validate_for_schema(self, schema: LabelSchema) -> None:
        missing = [c.name for c in schema if c.name not in self.verbalizer_map]
        if missing:
            raise PromptError(
                f"template {self.id!r} lacks verbalizers for classes {missing} "
                f"of schema {schema.task_name!r}"
            )

    def verbalizer(self, label: ClassLabel) -> str:
        try:
            return self.verbalizer_map[label.name]
        except KeyError:
            raise PromptError(
                f"template {self.id!r} has no verbalizer for class {label.name!r}"
            ) from None

    def with_verbalizers(self, verbalizer_map: dict[str, str]) -> "PromptTemplate":
        return replace(self, verbalizer_map=dict(verbalizer_map))


@dataclass(frozen=True)
class Demonstration:
    """One worked example of a class, appended to cloze prompts for context."""

    class_name: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise PromptError(f"demonstration for {self.class_name!r} has empty text")


def _fill(pattern: str, text: str, mask_replacement: str) -> str:
    """Instantiate a pattern for one piece of text.

    Patterns without a {text} slot get the text prepended, which matches the
    utterance-then-instruction layout the templates are written for.
    """
    if TEXT_SLOT in pattern:
        out = pattern.replace(TEXT_SLOT, text)
    else:
        out = f"{text} {pattern}"
    return out.replace(MASK_SLOT, mask_replacement)


def render_nli_hypotheses(
    template: PromptTemplate, schema: LabelSchema
) -> list[tuple[ClassLabel, str]]:
    """One hypothesis per class, in schema order.

    The mask slot takes the class's verbalizer; the text slot is dropped
    because the utterance travels as the premise.
    """
    template.validate_for_schema(schema)
    hypotheses = []
    for cls in schema:
        raw = template.pattern.replace(TEXT_SLOT, " ").replace(
            MASK_SLOT, template.verbalizer(cls)
        )
        hypotheses.append((cls, " ".join(raw.split())))
    return hypotheses


def _check_demos(
    demos: Sequence[Demonstration], schema: LabelSchema
) -> list[Demonstration]:
    """Demos must be empty (zero-demo mode) or exactly one per schema class."""
    if not demos:
        return []
    by_class: dict[str, Demonstration] = {}
    for demo in demos:
        if demo.class_name not in schema.names:
            raise PromptError(f"demonstration class {demo.class_name!r} not in schema")
        if demo.class_name in by_class:
            raise PromptError(f"duplicate demonstration for class {demo.class_name!r}")
        by_class[demo.class_name] = demo
    missing = [name for name in schema.names if name not in by_class]
    if missing:
        raise PromptError(f"missing demonstration for class {missing[0]!r}")
    return [by_class[name] for name in schema.names]


def render_cloze(
    template: PromptTemplate,
    utterance: Utterance,
    demos: Sequence[Demonstration],
    schema: LabelSchema,
    mask_marker: str,
) -> str:
    """Build the full cloze query string.

    The utterance segment keeps the mask marker for the backend to fill;
    each demonstration segment (one per class, schema order) shows the
    pattern with that class's verbalizer already substituted. The output
    contains exactly one mask marker regardless of demo count.
    """
    template.validate_for_schema(schema)
    ordered = _check_demos(demos, schema)
    segments = [_fill(template.pattern, utterance.text, mask_marker)]
    for demo in ordered:
        verbalizer = template.verbalizer_map[demo.class_name]
        segments.append(_fill(template.pattern, demo.text, verbalizer))
    return DEMO_SEPARATOR.join(segments)


def _renormalize(scores: np.ndarray) -> np.ndarray:
    total = float(scores.sum())
    if total <= 0.0:
        return np.full(len(scores), 1.0 / len(scores))
    return scores / total


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _nli_distribution(
    utterance: Utterance,
    template: PromptTemplate,
    schema: LabelSchema,
    backend: LMBackend,
) -> np.ndarray:
    if not backend.supports(CAP_ENTAILMENT):
        raise PermanentBackendError(
            f"backend {type(backend).__name__} cannot score NLI template {template.id!r}"
        )
    hypotheses = render_nli_hypotheses(template, schema)
    query = EntailmentQuery(utterance.text, tuple(h for _, h in hypotheses))
    result = backend.entail(query)
    return _renormalize(np.asarray(result.scores, dtype=float))


def _cloze_distribution(
    utterance: Utterance,
    template: PromptTemplate,
    demos: Sequence[Demonstration],
    schema: LabelSchema,
    backend: LMBackend,
) -> np.ndarray:
    if not backend.supports(CAP_MASK_FILL):
        raise PermanentBackendError(
            f"backend {type(backend).__name__} cannot score cloze template {template.id!r}"
        )
    text = render_cloze(template, utterance, demos, schema, backend.mask_marker)
    candidates = tuple(template.verbalizer(cls) for cls in schema)
    query = MaskFillQuery(text, backend.mask_marker, candidates)
    result = backend.mask_fill(query)
    return _softmax(np.asarray(result.log_probs, dtype=float))


def template_distribution(
    utterance: Utterance,
    template: PromptTemplate,
    demos: Sequence[Demonstration],
    schema: LabelSchema,
    backend: LMBackend,
) -> np.ndarray:
    """Per-class probability vector one template assigns to one utterance."""
    if template.style == STYLE_NLI:
        return _nli_distribution(utterance, template, schema, backend)
    return _cloze_distribution(utterance, template, demos, schema, backend)


def _vote_from_distribution(
    source_id: str, distribution: np.ndarray, schema: LabelSchema
) -> LabelVote:
    # np.argmax breaks exact ties toward the first (schema-order) class.
    winner = int(np.argmax(distribution))
    return LabelVote(source_id, schema.classes[winner], float(distribution[winner]))


def nli_label(
    utterance: Utterance,
    template: PromptTemplate,
    schema: LabelSchema,
    backend: LMBackend,
    source_id: str | None = None,
) -> LabelVote:
    """Label by entailment: the class whose hypothesis scores highest wins.

    Confidence is the winning score renormalized over the per-class scores,
    so hypotheses of different lengths stay comparable within an utterance.
    """
    source_id = source_id or f"nli:{template.id}"
    distribution = _nli_distribution(utterance, template, schema, backend)
    return _vote_from_distribution(source_id, distribution, schema)


def cloze_label(
    utterance: Utterance,
    template: PromptTemplate,
    demos: Sequence[Demonstration],
    schema: LabelSchema,
    backend: LMBackend,
    source_id: str | None = None,
) -> LabelVote:
    """Label by mask filling: softmax over the verbalizers' log-probs, argmax wins."""
    source_id = source_id or f"cloze:{template.id}"
    distribution = _cloze_distribution(utterance, template, demos, schema, backend)
    return _vote_from_distribution(source_id, distribution, schema)


def ensemble_prompt_label(
    utterance: Utterance,
    templates: Sequence[PromptTemplate],
    demos: Sequence[Demonstration],
    schema: LabelSchema,
    backend: LMBackend,
    source_id: str = "prompt_ensemble",
) -> LabelVote:
    """Average the class distributions of several templates and vote the argmax.

    Transient backend failures on individual templates are skipped as long
    as at least one template succeeds (noted on the vote); a permanent
    failure propagates. If every template fails transiently the ensemble
    abstains with confidence 0.
    """
    if not templates:
        raise PromptError("ensemble needs at least one template")
    distributions = []
    skipped = []
    for template in templates:
        try:
            distributions.append(
                template_distribution(utterance, template, demos, schema, backend)
            )
        except TransientBackendError as exc:
            logger.warning(
                "template %r failed transiently on %r: %s", template.id, utterance.id, exc
            )
            skipped.append(template.id)
    if not distributions:
        return LabelVote.abstain(
            source_id, note=f"all {len(templates)} templates failed transiently"
        )
    mean = np.mean(np.stack(distributions), axis=0)
    vote = _vote_from_distribution(source_id, mean, schema)
    if skipped:
        vote = LabelVote(
            source_id, vote.label, vote.confidence,
            note=f"skipped transient failures: {','.join(skipped)}",
        )
    return vote


def _parse_prompt_spec(obj: dict, origin: str) -> tuple[PromptTemplate, list[Demonstration]]:
    for key in ("id", "style", "pattern", "verbalizers"):
        if key not in obj:
            raise PromptError(f"{origin}: prompt spec missing {key!r}")
    if not isinstance(obj["verbalizers"], dict):
        raise PromptError(f"{origin}: 'verbalizers' must map class names to tokens")
    template = PromptTemplate(
        id=str(obj["id"]),
        style=str(obj["style"]),
        pattern=str(obj["pattern"]),
        verbalizer_map={str(k): str(v) for k, v in obj["verbalizers"].items()},
    )
    demos = []
    if obj.get("demos"):
        if not isinstance(obj["demos"], dict):
            raise PromptError(f"{origin}: 'demos' must map class names to example texts")
        demos = [Demonstration(str(k), str(v)) for k, v in obj["demos"].items()]
    return template, demos


def load_prompt_specs(path: str | Path) -> list[tuple[PromptTemplate, list[Demonstration]]]:
    """Read a prompt-spec file: one spec object or a list of them."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PromptError(f"{path}: malformed prompt-spec file: {exc}") from exc
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list):
        raise PromptError(f"{path}: expected a prompt-spec object or list")
    return [_parse_prompt_spec(obj, str(path)) for obj in payload]


class PromptSource:
    """One template bound to a backend, usable as a label-matrix column."""

    def __init__(
        self,
        template: PromptTemplate,
        schema: LabelSchema,
        backend: LMBackend,
        demos: Sequence[Demonstration] = (),
        source_id: str | None = None,
    ):
        template.validate_for_schema(schema)
        _check_demos(demos, schema)
        self.template = template
        self.schema = schema
        self.backend = backend
        self.demos = tuple(demos)
        self.source_id = source_id or f"{template.style}:{template.id}"

    def label(self, utterance: Utterance) -> LabelVote:
        if self.template.style == STYLE_NLI:
            return nli_label(
                utterance, self.template, self.schema, self.backend, self.source_id
            )
        return cloze_label(
            utterance, self.template, self.demos, self.schema, self.backend, self.source_id
        )


class EnsemblePromptSource:
    """Several templates averaged into a single label-matrix column."""

    def __init__(
        self,
        templates: Sequence[PromptTemplate],
        schema: LabelSchema,
        backend: LMBackend,
        demos: Sequence[Demonstration] = (),
        source_id: str = "prompt_ensemble",
    ):
        if not templates:
            raise PromptError("ensemble needs at least one template")
        for template in templates:
            template.validate_for_schema(schema)
        self.templates = tuple(templates)
        self.schema = schema
        self.backend = backend
        self.demos = tuple(demos)
        self.source_id = source_id

    def label(self, utterance: Utterance) -> LabelVote:
        return ensemble_prompt_label(
            utterance, self.templates, self.demos, self.schema, self.backend, self.source_id
        )
