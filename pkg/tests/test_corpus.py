"""Corpus ingestion, schema validation and tokenization."""

from __future__ import annotations

import string

import numpy as np
import pytest

from weaklab.corpus import (
    ClassLabel,
    CorpusError,
    Dataset,
    LabelSchema,
    Lexicon,
    Utterance,
    dump_dataset,
    load_dataset,
    load_lexicon,
    load_schema,
    normalize_text,
)


class TestSchema:
    def test_from_names(self):
        schema = LabelSchema.from_names("sentiment", ["positive", "negative"])
        assert schema.names == ("positive", "negative")
        assert schema.by_name("negative").index == 1

    def test_needs_two_classes(self):
        with pytest.raises(CorpusError, match="at least 2"):
            LabelSchema.from_names("t", ["only"])

    def test_duplicate_names_rejected(self):
        with pytest.raises(CorpusError, match="duplicate"):
            LabelSchema.from_names("t", ["a", "a"])

    def test_indices_must_be_contiguous(self):
        with pytest.raises(CorpusError, match="contiguous"):
            LabelSchema("t", (ClassLabel("a", 0), ClassLabel("b", 2)))

    def test_unknown_class_lookup(self):
        schema = LabelSchema.from_names("t", ["a", "b"])
        with pytest.raises(CorpusError, match="joyful"):
            schema.by_name("joyful")

    def test_load_schema_file(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text('{"task_name": "emotion", "classes": ["positive", "negative"]}')
        schema = load_schema(path)
        assert schema.task_name == "emotion"
        assert len(schema) == 2


class TestNormalizeText:
    def test_basic_sentence(self):
        assert list(normalize_text("I am Happy.")) == ["i", "am", "happy"]

    def test_empty_input(self):
        assert list(normalize_text("")) == []

    def test_hand_traced_disfluent_line(self):
        assert list(normalize_text("You know, uh-- don't")) == [
            "you", "know", "uh", "don't",
        ]

    def test_keeps_intra_word_marks(self):
        assert list(normalize_text("uh-oh 'tis")) == ["uh-oh", "tis"]

    def test_idempotent_on_own_output(self):
        rng = np.random.default_rng(42)
        pool = list("abcde") + list(string.punctuation) + [" ", "'"]
        for _ in range(300):
            raw = "".join(rng.choice(pool, size=rng.integers(0, 40)))
            once = normalize_text(raw)
            again = normalize_text(" ".join(once))
            assert list(once) == list(again)

    def test_tokens_lowercase_and_nonempty(self):
        rng = np.random.default_rng(7)
        pool = list("AbC.xY!? -दे'") + [" "]
        for _ in range(300):
            raw = "".join(rng.choice(pool, size=rng.integers(0, 30)))
            for tok in normalize_text(raw):
                assert tok == tok.lower()
                assert tok


class TestLoadDataset:
    def _schema(self):
        return LabelSchema.from_names("sentiment", ["positive", "negative"])

    def test_preserves_order(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"id": "u1", "text": "fine"}\n{"id": "u2", "text": "bad day"}\n'
        )
        ds = load_dataset(path, self._schema())
        assert ds.ids == ("u1", "u2")
        assert ds.utterances[0].gold is None

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "u1", "text": "a"}\n{"id": "u1", "text": "b"}\n')
        with pytest.raises(CorpusError, match="u1"):
            load_dataset(path, self._schema())

    def test_unknown_gold_label(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "u1", "text": "a", "gold": "joyful"}\n')
        with pytest.raises(CorpusError, match="joyful"):
            load_dataset(path, self._schema())

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "u1", "text": "a"}\nnot json\n')
        with pytest.raises(CorpusError, match=":2"):
            load_dataset(path, self._schema())

    def test_round_trip_is_byte_identical(self, tmp_path):
        schema = self._schema()
        original = tmp_path / "d.jsonl"
        ds = Dataset(
            schema,
            (
                Utterance("u1", "I am happy", schema.by_name("positive")),
                Utterance("u2", "meh — fine…", None),
            ),
        )
        dump_dataset(ds, original)
        reloaded = load_dataset(original, schema)
        rewritten = tmp_path / "d2.jsonl"
        dump_dataset(reloaded, rewritten)
        assert original.read_bytes() == rewritten.read_bytes()


class TestLexicon:
    def test_load_two_entries(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("good\t3\nbad\t-3\n")
        lex = load_lexicon(path)
        assert len(lex) == 2
        assert lex.score("bad") == -3.0

    def test_non_numeric_score(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("good\tx\n")
        with pytest.raises(CorpusError, match=":1"):
            load_lexicon(path)

    def test_last_wins_with_warning(self, tmp_path, caplog):
        path = tmp_path / "lex.tsv"
        path.write_text("good\t3\ngood\t2\n")
        with caplog.at_level("WARNING"):
            lex = load_lexicon(path)
        assert lex.score("good") == 2.0
        assert any("duplicate" in rec.message for rec in caplog.records)

    def test_rejects_uppercase_entries(self):
        with pytest.raises(CorpusError, match="lowercase"):
            Lexicon({"Good": 1.0})

    def test_negated(self):
        lex = Lexicon({"good": 2.0, "bad": -3.0})
        assert lex.negated().entries == {"good": -2.0, "bad": 3.0}


class TestUtterance:
    def test_empty_text_rejected(self):
        with pytest.raises(CorpusError, match="empty text"):
            Utterance("u1", "   ")

    def test_dataset_rejects_foreign_gold(self):
        schema = LabelSchema.from_names("t", ["a", "b"])
        foreign = ClassLabel("c", 1)
        with pytest.raises(CorpusError, match="gold"):
            Dataset(schema, (Utterance("u1", "x", foreign),))
