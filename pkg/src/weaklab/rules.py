"""Rule-based weak sources.

Lexicon polarity labeling for sentiment-style tasks, plus three disfluency
labeling functions: filler words, immediately repeated n-grams, and phonetic
(soundex) collisions between adjacent tokens that flag word restarts such as
"wan- want". Each labeling function either votes for its bound class with a
fixed confidence or abstains; none of them guesses on missing evidence. A
low-confidence fluent-default source supplies the opposite class for
utterances where every disfluency detector stays silent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .corpus import (
    ClassLabel,
    CorpusError,
    LabelSchema,
    Lexicon,
    TokenSequence,
    Utterance,
    normalize_text,
)

__all__ = [
    "LabelVote",
    "SoundexCode",
    "ClassBindings",
    "RuleSourceConfig",
    "RuleError",
    "DEFAULT_FILLERS",
    "soundex",
    "lexicon_label",
    "filler_label",
    "repetition_label",
    "soundex_repeat_label",
    "fluent_default_label",
    "load_filler_set",
    "load_precomputed_votes",
    "LexiconSource",
    "FillerSource",
    "RepetitionSource",
    "SoundexRepeatSource",
    "FluentDefaultSource",
    "PrecomputedSource",
    "FunctionSource",
]


class RuleError(ValueError):
    """A rule source was configured or invoked outside its contract."""


@dataclass(frozen=True)
class LabelVote:
    """One weak source's decision on one sample: a class or an abstention."""

    source_id: str
    label: ClassLabel | None
    confidence: float
    note: str | None = None

    def __post_init__(self) -> None:
        if self.label is None:
            if self.confidence != 0.0:
                raise RuleError(
                    f"abstain vote from {self.source_id!r} must have confidence 0, "
                    f"got {self.confidence}"
                )
        elif not (0.0 < self.confidence <= 1.0):
            raise RuleError(
                f"labeled vote from {self.source_id!r} needs confidence in (0, 1], "
                f"got {self.confidence}"
            )

    @property
    def is_abstain(self) -> bool:
        return self.label is None

    @classmethod
    def abstain(cls, source_id: str, note: str | None = None) -> "LabelVote":
        return cls(source_id, None, 0.0, note)


_SOUNDEX_PATTERN = re.compile(r"^[A-Z][0-9]{3}$")


@dataclass(frozen=True)
class SoundexCode:
    """A phonetic code: one uppercase letter followed by three digits."""

    code: str

    def __post_init__(self) -> None:
        if not _SOUNDEX_PATTERN.match(self.code):
            raise RuleError(f"invalid soundex code {self.code!r}")

    @property
    def digits(self) -> str:
        """Significant digit sequence, trailing zero-padding removed."""
        return self.code[1:].rstrip("0")

    def __str__(self) -> str:
        return self.code


_SOUNDEX_DIGIT = {}
for _letters, _digit in (
    ("BFPV", "1"), ("CGJKQSXZ", "2"), ("DT", "3"),
    ("L", "4"), ("MN", "5"), ("R", "6"),
):
    for _ch in _letters:
        _SOUNDEX_DIGIT[_ch] = _digit


def soundex(token: str) -> SoundexCode:
    """American soundex code of a token.

    Keeps the first letter; codes the consonants b f p v -> 1,
    c g j k q s x z -> 2, d t -> 3, l -> 4, m n -> 5, r -> 6. Vowels and y
    separate duplicates, h and w do not (equal codes collapse across them),
    and the first letter's own code absorbs an equal-coded second letter.
    Non-letter characters are ignored; a token with no ASCII letters is an
    error.
    """
    letters = [ch for ch in token.upper() if "A" <= ch <= "Z"]
    if not letters:
        raise RuleError(f"cannot soundex-encode {token!r}: no ASCII letters")
    first = letters[0]
    digits: list[str] = []
    prev = _SOUNDEX_DIGIT.get(first)
    for ch in letters[1:]:
        if ch in "HW":
            continue
        digit = _SOUNDEX_DIGIT.get(ch)
        if digit is None:  # vowel or y: resets adjacency
            prev = None
            continue
        if digit != prev:
            digits.append(digit)
            if len(digits) == 3:
                break
        prev = digit
    return SoundexCode(first + "".join(digits).ljust(3, "0"))


@dataclass(frozen=True)
class ClassBindings:
    """Maps the roles rule sources vote for onto schema classes."""

    positive: ClassLabel | None = None
    negative: ClassLabel | None = None
    fluent: ClassLabel | None = None
    disfluent: ClassLabel | None = None

    @classmethod
    def from_names(cls, schema: LabelSchema, **roles: str) -> "ClassBindings":
        allowed = {"positive", "negative", "fluent", "disfluent"}
        unknown = set(roles) - allowed
        if unknown:
            raise RuleError(f"unknown binding roles {sorted(unknown)}")
        return cls(**{role: schema.by_name(name) for role, name in roles.items()})

    def require(self, role: str) -> ClassLabel:
        label = getattr(self, role)
        if label is None:
            raise RuleError(f"rule source needs a class bound to role {role!r}")
        return label


DEFAULT_FILLERS = frozenset({
    "uh", "um", "er", "ah", "hmm", "mm", "huh",
    "you know", "i mean", "well", "like", "so",
})


@dataclass(frozen=True)
class RuleSourceConfig:
    """Configuration shared by the rule sources of one pipeline."""

    bindings: ClassBindings
    lexicon_paths: tuple[str, ...] = ()
    threshold: float = 0.0
    fillers: frozenset[str] = DEFAULT_FILLERS
    n_max: int = 2
    filler_confidence: float = 1.0
    repetition_confidence: float = 1.0
    soundex_confidence: float = 0.8
    fluent_confidence: float = 0.6
    fluent_min_tokens: int = 3

    def __post_init__(self) -> None:
        if self.threshold < 0:
            raise RuleError(f"polarity threshold must be >= 0, got {self.threshold}")
        if self.n_max < 1:
            raise RuleError(f"n_max must be >= 1, got {self.n_max}")
        if not self.fillers:
            raise RuleError("filler set must be non-empty")


def lexicon_label(
    tokens: TokenSequence,
    lexicon: Lexicon,
    threshold: float,
    bindings: ClassBindings,
    source_id: str = "lexicon",
) -> LabelVote:
    """Vote by summed token polarity.

    A summed score above the threshold votes the positive-bound class, below
    the negated threshold the negative-bound class, and anything in between
    abstains. Confidence grows linearly with the margin, capped at 1.
    """
    if threshold < 0:
        raise RuleError(f"polarity threshold must be >= 0, got {threshold}")
    total = 0.0
    for tok in tokens:
        score = lexicon.score(tok)
        if score is not None:
            total += score
    if total > threshold:
        label = bindings.require("positive")
    elif total < -threshold:
        label = bindings.require("negative")
    else:
        return LabelVote.abstain(source_id)
    confidence = min(1.0, abs(total) / (threshold + 3.0))
    return LabelVote(source_id, label, confidence)


def _filler_hit(tokens: TokenSequence, fillers: Iterable[str]) -> bool:
    singles = set()
    phrases = []
    for filler in fillers:
        parts = tuple(filler.split())
        if len(parts) == 1:
            singles.add(parts[0])
        elif parts:
            phrases.append(parts)
    toks = tuple(tokens)
    if any(tok in singles for tok in toks):
        return True
    for phrase in phrases:
        width = len(phrase)
        for i in range(len(toks) - width + 1):
            if toks[i:i + width] == phrase:
                return True
    return False


def filler_label(
    tokens: TokenSequence,
    fillers: Iterable[str],
    bindings: ClassBindings,
    confidence: float = 1.0,
    source_id: str = "filler",
) -> LabelVote:
    """Vote disfluent when any filler token or contiguous filler phrase occurs."""
    fillers = set(fillers)
    if not fillers:
        raise RuleError("filler set must be non-empty")
    if _filler_hit(tokens, fillers):
        return LabelVote(source_id, bindings.require("disfluent"), confidence)
    return LabelVote.abstain(source_id)


def _has_adjacent_repeat(tokens: tuple[str, ...], n_max: int) -> bool:
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - 2 * n + 1):
            if tokens[i:i + n] == tokens[i + n:i + 2 * n]:
                return True
    return False


def repetition_label(
    tokens: TokenSequence,
    n_max: int,
    bindings: ClassBindings,
    confidence: float = 1.0,
    source_id: str = "repetition",
) -> LabelVote:
    """Vote disfluent when some n-gram (n <= n_max) is immediately repeated."""
    if n_max < 1:
        raise RuleError(f"n_max must be >= 1, got {n_max}")
    if _has_adjacent_repeat(tuple(tokens), n_max):
        return LabelVote(source_id, bindings.require("disfluent"), confidence)
    return LabelVote.abstain(source_id)


def _codes_collide(a: SoundexCode, b: SoundexCode) -> bool:
    # Equal codes collide; so do codes whose significant digits agree up to
    # truncation, which is what a restart fragment ("wan-" vs "want") leaves
    # behind. Fragments with no consonant digits stay ambiguous and never
    # collide with longer words.
    if a.code == b.code:
        return True
    if a.code[0] != b.code[0]:
        return False
    da, db = a.digits, b.digits
    if not da or not db:
        return False
    return da.startswith(db) or db.startswith(da)


def soundex_repeat_label(
    tokens: TokenSequence,
    bindings: ClassBindings,
    confidence: float = 0.8,
    source_id: str = "soundex_repeat",
) -> LabelVote:
    """Vote disfluent when two adjacent, non-identical tokens collide phonetically.

    Tokens without ASCII letters are skipped before adjacency is checked.
    """
    encodable = [tok for tok in tokens if any("a" <= ch <= "z" for ch in tok.lower())]
    codes = [soundex(tok) for tok in encodable]
    for (tok_a, code_a), (tok_b, code_b) in zip(
        zip(encodable, codes), zip(encodable[1:], codes[1:])
    ):
        if tok_a != tok_b and _codes_collide(code_a, code_b):
            return LabelVote(source_id, bindings.require("disfluent"), confidence)
    return LabelVote.abstain(source_id)


def fluent_default_label(
    tokens: TokenSequence,
    cfg: RuleSourceConfig,
    bindings: ClassBindings | None = None,
    source_id: str = "fluent_default",
) -> LabelVote:
    """Weak fluent vote when no disfluency detector fires on a long-enough utterance.

    Absence of evidence is only weak evidence, hence the low default
    confidence. Utterances below the length floor abstain outright.
    """
    bindings = bindings if bindings is not None else cfg.bindings
    if len(tokens) < cfg.fluent_min_tokens:
        return LabelVote.abstain(source_id)
    detectors = (
        filler_label(tokens, cfg.fillers, bindings, cfg.filler_confidence),
        repetition_label(tokens, cfg.n_max, bindings, cfg.repetition_confidence),
        soundex_repeat_label(tokens, bindings, cfg.soundex_confidence),
    )
    if all(vote.is_abstain for vote in detectors):
        return LabelVote(source_id, bindings.require("fluent"), cfg.fluent_confidence)
    return LabelVote.abstain(source_id)


def load_filler_set(path: str | Path) -> frozenset[str]:
    """Read a filler inventory: one lowercase token or phrase per line."""
    fillers = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        entry = " ".join(line.lower().split())
        if entry:
            fillers.add(entry)
    if not fillers:
        raise RuleError(f"{path}: filler file is empty")
    return frozenset(fillers)


def load_precomputed_votes(
    path: str | Path,
    schema: LabelSchema,
    source_id: str,
) -> dict[str, LabelVote]:
    """Read externally computed votes: ``id<TAB>label-or-ABSTAIN<TAB>confidence``.

    This is how scores from systems outside the pipeline (an external
    sentiment scorer, for instance) enter the label matrix.
    """
    votes: dict[str, LabelVote] = {}
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise RuleError(f"{path}:{lineno}: expected id<TAB>label<TAB>confidence")
            sample_id, label_name, conf_text = parts
            if not sample_id:
                raise RuleError(f"{path}:{lineno}: empty sample id")
            if sample_id in votes:
                raise RuleError(f"{path}:{lineno}: duplicate sample id {sample_id!r}")
            try:
                confidence = float(conf_text)
            except ValueError:
                raise RuleError(
                    f"{path}:{lineno}: non-numeric confidence {conf_text!r}"
                ) from None
            if label_name == "ABSTAIN":
                label = None
            else:
                try:
                    label = schema.by_name(label_name)
                except CorpusError as exc:
                    raise RuleError(f"{path}:{lineno}: {exc}") from exc
            try:
                votes[sample_id] = LabelVote(source_id, label, confidence)
            except RuleError as exc:
                raise RuleError(f"{path}:{lineno}: {exc}") from exc
    return votes


class FunctionSource:
    """Adapts a tokens -> LabelVote function into a matrix-buildable source."""

    def __init__(self, source_id: str, fn: Callable[[TokenSequence], LabelVote]):
        self.source_id = source_id
        self._fn = fn

    def label(self, utterance: Utterance) -> LabelVote:
        return self._fn(normalize_text(utterance.text))


class LexiconSource(FunctionSource):
    def __init__(
        self,
        source_id: str,
        lexicon: Lexicon,
        threshold: float,
        bindings: ClassBindings,
    ):
        super().__init__(
            source_id,
            lambda toks: lexicon_label(toks, lexicon, threshold, bindings, source_id),
        )


class FillerSource(FunctionSource):
    def __init__(
        self,
        source_id: str,
        fillers: Iterable[str],
        bindings: ClassBindings,
        confidence: float = 1.0,
    ):
        filler_set = frozenset(fillers)
        super().__init__(
            source_id,
            lambda toks: filler_label(toks, filler_set, bindings, confidence, source_id),
        )


class RepetitionSource(FunctionSource):
    def __init__(
        self,
        source_id: str,
        n_max: int,
        bindings: ClassBindings,
        confidence: float = 1.0,
    ):
        super().__init__(
            source_id,
            lambda toks: repetition_label(toks, n_max, bindings, confidence, source_id),
        )


class SoundexRepeatSource(FunctionSource):
    def __init__(self, source_id: str, bindings: ClassBindings, confidence: float = 0.8):
        super().__init__(
            source_id,
            lambda toks: soundex_repeat_label(toks, bindings, confidence, source_id),
        )


class FluentDefaultSource(FunctionSource):
    def __init__(self, source_id: str, cfg: RuleSourceConfig):
        super().__init__(
            source_id,
            lambda toks: fluent_default_label(toks, cfg, cfg.bindings, source_id),
        )


class PrecomputedSource:
    """Serves votes loaded from a precomputed-votes file; unknown ids abstain."""

    def __init__(self, source_id: str, votes: Mapping[str, LabelVote]):
        self.source_id = source_id
        self._votes = dict(votes)

    @classmethod
    def from_file(cls, source_id: str, path: str | Path, schema: LabelSchema):
        return cls(source_id, load_precomputed_votes(path, schema, source_id))

    def label(self, utterance: Utterance) -> LabelVote:
        vote = self._votes.get(utterance.id)
        if vote is None:
            return LabelVote.abstain(self.source_id, note="no precomputed vote")
        return vote
