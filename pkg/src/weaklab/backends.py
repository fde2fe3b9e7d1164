"""Language-model backends for prompt-based labeling.

A backend answers two kinds of scoring queries: entailment of hypothesis
strings against a premise, and log-probabilities of candidate tokens at a
mask position. The deterministic :class:`MockBackend` drives tests, demos
and fixtures; :class:`RemoteBackend` speaks a small JSON-over-HTTP protocol
to whatever service actually hosts a model:

- ``POST <endpoint>/v1/entail`` with ``{"premise": ..., "hypotheses": [...]}``
  returns ``{"scores": [...]}`` (one score in [0, 1] per hypothesis).
- ``POST <endpoint>/v1/mask_fill`` with ``{"text": ..., "mask_marker": ...,
  "candidates": [...]}`` returns ``{"log_probs": [...]}``.

Non-2xx responses carry a ``retryable`` flag separating transient failures
(retried with exponential backoff) from permanent ones.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Mapping

import requests

from .corpus import normalize_text

logger = logging.getLogger(__name__)

__all__ = [
    "BackendError",
    "TransientBackendError",
    "PermanentBackendError",
    "EntailmentQuery",
    "EntailmentResult",
    "MaskFillQuery",
    "MaskFillResult",
    "LMBackend",
    "MockBackend",
    "RemoteBackend",
]

CAP_ENTAILMENT = "entailment"
CAP_MASK_FILL = "mask_fill"


class BackendError(RuntimeError):
    """A backend query failed."""

    retryable = False


class TransientBackendError(BackendError):
    """Failure worth retrying: timeouts, connection resets, 5xx responses."""

    retryable = True


class PermanentBackendError(BackendError):
    """Failure that will not go away on retry: bad request, unknown token."""


@dataclass(frozen=True)
class EntailmentQuery:
    premise: str
    hypotheses: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.hypotheses:
            raise ValueError("entailment query needs at least one hypothesis")


@dataclass(frozen=True)
class EntailmentResult:
    query: EntailmentQuery
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.query.hypotheses):
            raise ValueError(
                f"got {len(self.scores)} scores for {len(self.query.hypotheses)} hypotheses"
            )
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"entailment score {s} outside [0, 1]")


@dataclass(frozen=True)
class MaskFillQuery:
    text: str
    mask_marker: str
    candidates: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("mask-fill query needs at least one candidate")
        if self.text.count(self.mask_marker) != 1:
            raise ValueError(
                f"mask-fill text must contain exactly one {self.mask_marker!r}"
            )


@dataclass(frozen=True)
class MaskFillResult:
    query: MaskFillQuery
    log_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.log_probs) != len(self.query.candidates):
            raise ValueError(
                f"got {len(self.log_probs)} log-probs for {len(self.query.candidates)} candidates"
            )
        for lp in self.log_probs:
            if not math.isfinite(lp):
                raise ValueError(f"non-finite log-prob {lp}")


class LMBackend:
    """Abstract scorer. Implementations must be deterministic within a session."""

    capabilities: frozenset[str] = frozenset()
    mask_marker: str = "<MASK>"

    def supports(self, capability: str) -> bool:
        return capability in self.capabilities

    def entail(self, query: EntailmentQuery) -> EntailmentResult:
        raise PermanentBackendError(f"{type(self).__name__} does not score entailment")

    def mask_fill(self, query: MaskFillQuery) -> MaskFillResult:
        raise PermanentBackendError(f"{type(self).__name__} does not score mask fills")


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


class MockBackend(LMBackend):
    """Deterministic keyword-table backend.

    The table maps lowercase keywords to additive scores for target tokens
    (the verbalizers). An entailment query scores each hypothesis as
    logistic(sum of keyword scores of the premise toward the target tokens
    present in that hypothesis); a mask-fill query scores each candidate as
    the plain additive sum. With an empty table every score is neutral.

    An optional vocabulary restricts which candidates are scoreable; a
    candidate outside it raises a permanent error naming the token.
    """

    capabilities = frozenset({CAP_ENTAILMENT, CAP_MASK_FILL})

    def __init__(
        self,
        keyword_table: Mapping[str, Mapping[str, float]],
        vocabulary: set[str] | frozenset[str] | None = None,
        mask_marker: str = "<MASK>",
    ):
        self.keyword_table = {
            kw.lower(): {tok: float(sc) for tok, sc in targets.items()}
            for kw, targets in keyword_table.items()
        }
        self.vocabulary = frozenset(vocabulary) if vocabulary is not None else None
        self.mask_marker = mask_marker

    def _additive_score(self, context_tokens, target_tokens) -> float:
        total = 0.0
        for kw in context_tokens:
            targets = self.keyword_table.get(kw)
            if not targets:
                continue
            for tok in target_tokens:
                total += targets.get(tok, 0.0)
        return total

    def entail(self, query: EntailmentQuery) -> EntailmentResult:
        premise_tokens = tuple(normalize_text(query.premise))
        scores = []
        for hypothesis in query.hypotheses:
            hyp_tokens = tuple(normalize_text(hypothesis))
            scores.append(_logistic(self._additive_score(premise_tokens, hyp_tokens)))
        return EntailmentResult(query, tuple(scores))

    def mask_fill(self, query: MaskFillQuery) -> MaskFillResult:
        if self.vocabulary is not None:
            for cand in query.candidates:
                if cand not in self.vocabulary:
                    raise PermanentBackendError(
                        f"verbalizer {cand!r} not in backend vocabulary"
                    )
        context = query.text.replace(query.mask_marker, " ")
        context_tokens = tuple(normalize_text(context))
        log_probs = tuple(
            self._additive_score(context_tokens, (cand,)) for cand in query.candidates
        )
        return MaskFillResult(query, log_probs)


class RemoteBackend(LMBackend):
    """HTTP client for a remote scoring service.

    Transient failures (connection errors, timeouts, and non-2xx responses
    flagged retryable) are retried up to ``max_retries`` times with
    exponential backoff; anything else raises a permanent error. Responses
    missing the flag default to retryable for 5xx status codes only.
    """

    capabilities = frozenset({CAP_ENTAILMENT, CAP_MASK_FILL})

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        mask_marker: str = "<mask>",
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.mask_marker = mask_marker
        self._session = session or requests.Session()

    def _post(self, route: str, payload: dict) -> dict:
        url = f"{self.endpoint}{route}"
        last_error: BackendError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff * (2 ** (attempt - 1))
                logger.debug("retrying %s (attempt %d) after %.2fs", url, attempt, delay)
                time.sleep(delay)
            try:
                response = self._session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = TransientBackendError(f"request to {url} failed: {exc}")
                continue
            if 200 <= response.status_code < 300:
                try:
                    return response.json()
                except ValueError as exc:
                    raise PermanentBackendError(
                        f"{url}: response is not valid JSON: {exc}"
                    ) from exc
            retryable, message = self._classify(response)
            if retryable:
                last_error = TransientBackendError(
                    f"{url}: HTTP {response.status_code}: {message}"
                )
                continue
            raise PermanentBackendError(f"{url}: HTTP {response.status_code}: {message}")
        assert last_error is not None
        raise last_error

    @staticmethod
    def _classify(response) -> tuple[bool, str]:
        message = response.text[:200]
        try:
            body = response.json()
        except ValueError:
            body = None
        if isinstance(body, dict):
            message = str(body.get("error", message))
            if "retryable" in body:
                return bool(body["retryable"]), message
        return response.status_code >= 500, message

    def entail(self, query: EntailmentQuery) -> EntailmentResult:
        body = self._post(
            "/v1/entail",
            {"premise": query.premise, "hypotheses": list(query.hypotheses)},
        )
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(query.hypotheses):
            raise PermanentBackendError(
                f"malformed /v1/entail response: expected {len(query.hypotheses)} scores"
            )
        try:
            return EntailmentResult(query, tuple(float(s) for s in scores))
        except (TypeError, ValueError) as exc:
            raise PermanentBackendError(f"malformed /v1/entail response: {exc}") from exc

    def mask_fill(self, query: MaskFillQuery) -> MaskFillResult:
        body = self._post(
            "/v1/mask_fill",
            {
                "text": query.text,
                "mask_marker": query.mask_marker,
                "candidates": list(query.candidates),
            },
        )
        log_probs = body.get("log_probs")
        if not isinstance(log_probs, list) or len(log_probs) != len(query.candidates):
            raise PermanentBackendError(
                f"malformed /v1/mask_fill response: expected {len(query.candidates)} log-probs"
            )
        try:
            return MaskFillResult(query, tuple(float(lp) for lp in log_probs))
        except (TypeError, ValueError) as exc:
            raise PermanentBackendError(f"malformed /v1/mask_fill response: {exc}") from exc
