"""Shared fixtures: schemas, a planted keyword corpus, and pipeline configs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from weaklab.corpus import Dataset, LabelSchema, Utterance

POSITIVE_KEYWORDS = ("happy", "great", "love", "wonderful", "glad")
NEGATIVE_KEYWORDS = ("sad", "terrible", "hate", "awful", "angry")

_TEMPLATES = (
    "i am {kw} about the trip",
    "that was {kw} honestly",
    "the whole thing felt {kw} to me",
    "what a {kw} experience that was",
)


@pytest.fixture
def sentiment_schema() -> LabelSchema:
    return LabelSchema.from_names("sentiment", ["positive", "negative"])


@pytest.fixture
def disfluency_schema() -> LabelSchema:
    return LabelSchema.from_names("disfluency", ["fluent", "disfluent"])


def planted_corpus(schema: LabelSchema, n_per_class: int = 20) -> Dataset:
    """Deterministic corpus where one planted keyword decides the class."""
    utterances = []
    for cls, keywords, prefix in (
        (schema.classes[0], POSITIVE_KEYWORDS, "p"),
        (schema.classes[1], NEGATIVE_KEYWORDS, "n"),
    ):
        for i in range(n_per_class):
            kw = keywords[i % len(keywords)]
            text = _TEMPLATES[i % len(_TEMPLATES)].format(kw=kw)
            utterances.append(Utterance(f"{prefix}{i:02d}", text, cls))
    return Dataset(schema, tuple(utterances))


def planted_keyword_table(
    positive_token: str = "positive", negative_token: str = "negative", weight: float = 2.0
) -> dict[str, dict[str, float]]:
    table: dict[str, dict[str, float]] = {}
    for kw in POSITIVE_KEYWORDS:
        table[kw] = {positive_token: weight}
    for kw in NEGATIVE_KEYWORDS:
        table[kw] = {negative_token: weight}
    return table


@pytest.fixture
def planted(sentiment_schema):
    return planted_corpus(sentiment_schema), planted_keyword_table()


def make_noisy_benchmark(
    seed: int,
    n_train: int = 500,
    n_test: int = 300,
    noise: float = 0.3,
    coverage: float = 0.7,
    n_vocab: int = 8,
    n_shared: int = 10,
):
    """Separable two-class token corpus with corrupted, partial weak labels.

    Returns (train_tokens, y_train, test_tokens, y_test, weak_labels,
    covered_mask); weak labels are the true ones with ``noise`` of them
    flipped, observable only where ``covered_mask`` is True.
    """
    rng = np.random.default_rng(seed)

    def draw(n):
        texts, labels = [], []
        for _ in range(n):
            y = int(rng.integers(2))
            vocab = (
                [f"alpha{j}" for j in range(n_vocab)]
                if y == 0
                else [f"beta{j}" for j in range(n_vocab)]
            )
            toks = list(rng.choice(vocab, size=4)) + list(
                rng.choice([f"w{j}" for j in range(n_shared)], size=3)
            )
            rng.shuffle(toks)
            texts.append(toks)
            labels.append(y)
        return texts, np.array(labels)

    train_tokens, y_train = draw(n_train)
    test_tokens, y_test = draw(n_test)
    covered = rng.random(n_train) < coverage
    weak = y_train.copy()
    flip = rng.random(n_train) < noise
    weak[flip] = 1 - weak[flip]
    return train_tokens, y_train, test_tokens, y_test, weak, covered


def write_dataset_file(path: Path, dataset: Dataset, with_gold: bool = True) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for utt in dataset:
            rec = {"id": utt.id, "text": utt.text}
            if with_gold and utt.gold is not None:
                rec["gold"] = utt.gold.name
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return path


def write_fixture_pipeline(tmp_path: Path, seed: int = 7) -> Path:
    """Materialize a complete, self-contained pipeline config in tmp_path.

    Train split is unlabeled; valid and test carry gold. Sources: the demo
    lexicon, one NLI and one cloze prompt against an inline mock backend,
    and a precomputed-votes file covering a few samples.
    """
    schema = LabelSchema.from_names("sentiment", ["positive", "negative"])
    train = planted_corpus(schema, n_per_class=20)
    valid = planted_corpus(schema, n_per_class=8)
    test = planted_corpus(schema, n_per_class=8)

    schema_path = tmp_path / "schema.json"
    schema_path.write_text(
        json.dumps({"task_name": "sentiment", "classes": ["positive", "negative"]})
    )
    write_dataset_file(tmp_path / "train.jsonl", train, with_gold=False)
    write_dataset_file(tmp_path / "valid.jsonl", valid, with_gold=True)
    write_dataset_file(tmp_path / "test.jsonl", test, with_gold=True)

    lexicon_path = tmp_path / "polarity.tsv"
    lines = [f"{kw}\t2" for kw in POSITIVE_KEYWORDS] + [
        f"{kw}\t-2" for kw in NEGATIVE_KEYWORDS
    ]
    lexicon_path.write_text("\n".join(lines) + "\n")

    prompts_path = tmp_path / "prompts.json"
    prompts_path.write_text(
        json.dumps(
            [
                {
                    "id": "speaker-nli",
                    "style": "nli",
                    "pattern": "{text} The sentiment of the speaker is {mask}.",
                    "verbalizers": {"positive": "positive", "negative": "negative"},
                },
                {
                    "id": "speaker-cloze",
                    "style": "cloze",
                    "pattern": "{text} The sentiment of the speaker is {mask}.",
                    "verbalizers": {"positive": "positive", "negative": "negative"},
                },
            ]
        )
    )

    votes_path = tmp_path / "external_votes.tsv"
    vote_lines = []
    for utt in list(train)[:10]:
        label = "positive" if utt.id.startswith("p") else "negative"
        vote_lines.append(f"{utt.id}\t{label}\t0.9")
    vote_lines.append(f"{list(train)[10].id}\tABSTAIN\t0")
    votes_path.write_text("\n".join(vote_lines) + "\n")

    config = {
        "schema": "schema.json",
        "data": {"train": "train.jsonl", "valid": "valid.jsonl", "test": "test.jsonl"},
        "bindings": {"positive": "positive", "negative": "negative"},
        "sources": {
            "lexicons": [{"id": "polarity", "path": "polarity.tsv", "threshold": 0.0}],
            "prompts": [{"path": "prompts.json"}],
            "precomputed": [{"id": "external", "path": "external_votes.tsv"}],
        },
        "backend": {"kind": "mock", "keyword_table": planted_keyword_table()},
        "aggregation": {"mode": "majority"},
        "trainer": {
            "dim": 4096,
            "hidden": 16,
            "learning_rate": 0.3,
            "epochs": 10,
            "rounds": 3,
            "threshold": 0.6,
            "reg_weight": 1.0,
            "batch_size": 16,
        },
        "output_dir": "out",
        "seed": seed,
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config, indent=2))
    return config_path
