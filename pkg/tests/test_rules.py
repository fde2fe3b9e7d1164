"""Rule-based weak sources: lexicon polarity, disfluency detectors, soundex."""

from __future__ import annotations

import re

import numpy as np
import pytest

from weaklab.corpus import LabelSchema, Lexicon, TokenSequence, Utterance, normalize_text
from weaklab.rules import (
    ClassBindings,
    DEFAULT_FILLERS,
    LabelVote,
    PrecomputedSource,
    RuleError,
    RuleSourceConfig,
    SoundexCode,
    filler_label,
    fluent_default_label,
    lexicon_label,
    load_filler_set,
    load_precomputed_votes,
    repetition_label,
    soundex,
    soundex_repeat_label,
)


@pytest.fixture
def polarity_bindings(sentiment_schema):
    return ClassBindings.from_names(
        sentiment_schema, positive="positive", negative="negative"
    )


@pytest.fixture
def fluency_bindings(disfluency_schema):
    return ClassBindings.from_names(
        disfluency_schema, fluent="fluent", disfluent="disfluent"
    )


def toks(*tokens: str) -> TokenSequence:
    return TokenSequence(tuple(tokens))


class TestLabelVote:
    def test_abstain_requires_zero_confidence(self, sentiment_schema):
        with pytest.raises(RuleError, match="confidence 0"):
            LabelVote("s", None, 0.5)

    def test_label_requires_positive_confidence(self, sentiment_schema):
        with pytest.raises(RuleError, match=r"\(0, 1\]"):
            LabelVote("s", sentiment_schema.classes[0], 0.0)


class TestLexiconLabel:
    def test_single_positive_entry(self, polarity_bindings):
        vote = lexicon_label(toks("great", "movie"), Lexicon({"great": 3.0}), 0.0, polarity_bindings)
        assert vote.label.name == "positive"
        assert vote.confidence == 1.0

    def test_no_hits_abstains(self, polarity_bindings):
        vote = lexicon_label(toks("the", "a"), Lexicon({"great": 3.0}), 0.0, polarity_bindings)
        assert vote.is_abstain

    def test_hand_summed_negative(self, polarity_bindings):
        # s = 2 - 3 = -1; confidence = min(1, 1 / (0 + 3)) = 1/3
        vote = lexicon_label(
            toks("good", "not", "bad"), Lexicon({"good": 2.0, "bad": -3.0}), 0.0, polarity_bindings
        )
        assert vote.label.name == "negative"
        assert vote.confidence == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_threshold_dead_zone(self, polarity_bindings):
        vote = lexicon_label(toks("good"), Lexicon({"good": 1.0}), 1.0, polarity_bindings)
        assert vote.is_abstain

    def test_negation_antisymmetry_random(self, polarity_bindings):
        rng = np.random.default_rng(11)
        vocab = [f"t{i}" for i in range(12)]
        for _ in range(300):
            entries = {
                w: float(rng.normal()) for w in rng.choice(vocab, size=6, replace=False)
            }
            lex = Lexicon(entries)
            seq = toks(*rng.choice(vocab, size=rng.integers(0, 10)))
            theta = float(rng.random())
            a = lexicon_label(seq, lex, theta, polarity_bindings)
            b = lexicon_label(seq, lex.negated(), theta, polarity_bindings)
            if a.is_abstain:
                assert b.is_abstain
            else:
                assert {a.label.name, b.label.name} == {"positive", "negative"}
                assert a.confidence == pytest.approx(b.confidence, abs=1e-12)


class TestFillerLabel:
    def test_single_filler(self, fluency_bindings):
        vote = filler_label(toks("i", "uh", "went"), DEFAULT_FILLERS, fluency_bindings)
        assert vote.label.name == "disfluent"
        assert vote.confidence == 1.0

    def test_clean_utterance_abstains(self, fluency_bindings):
        assert filler_label(toks("i", "went", "home"), DEFAULT_FILLERS, fluency_bindings).is_abstain

    def test_phrase_window(self, fluency_bindings):
        vote = filler_label(
            toks("you", "know", "i", "left"), {"you know"}, fluency_bindings
        )
        assert vote.label.name == "disfluent"

    def test_phrase_must_be_contiguous(self, fluency_bindings):
        assert filler_label(
            toks("you", "always", "know"), {"you know"}, fluency_bindings
        ).is_abstain


class TestRepetitionLabel:
    def test_unigram_repeat(self, fluency_bindings):
        assert repetition_label(toks("i", "i", "went"), 1, fluency_bindings).label.name == "disfluent"

    def test_bigram_repeat(self, fluency_bindings):
        vote = repetition_label(toks("i", "went", "i", "went"), 2, fluency_bindings)
        assert vote.label.name == "disfluent"

    def test_no_adjacent_repeat(self, fluency_bindings):
        assert repetition_label(toks("i", "went", "i", "ran"), 2, fluency_bindings).is_abstain

    def test_matches_brute_force(self, fluency_bindings):
        def brute_force(seq: tuple[str, ...], n_max: int) -> bool:
            hits = []
            for n in range(1, n_max + 1):
                for i in range(len(seq)):
                    if i + 2 * n <= len(seq):
                        hits.append(seq[i:i + n] == seq[i + n:i + 2 * n])
            return any(hits)

        rng = np.random.default_rng(5)
        alphabet = ["a", "b", "c", "d"]
        for _ in range(500):
            seq = tuple(rng.choice(alphabet, size=rng.integers(0, 13)))
            n_max = int(rng.integers(1, 4))
            vote = repetition_label(TokenSequence(seq), n_max, fluency_bindings)
            assert (not vote.is_abstain) == brute_force(seq, n_max)


class TestSoundex:
    def test_hand_traced_codes(self):
        assert soundex("robert").code == "R163"
        assert soundex("tymczak").code == "T522"
        assert soundex("a").code == "A000"

    def test_case_insensitive(self):
        rng = np.random.default_rng(3)
        letters = list("abcdefghijklmnopqrstuvwxyz")
        for _ in range(200):
            word = "".join(rng.choice(letters, size=rng.integers(1, 10)))
            assert soundex(word).code == soundex(word.upper()).code

    def test_code_shape(self):
        rng = np.random.default_rng(4)
        letters = list("abcdefghijklmnopqrstuvwxyz")
        for _ in range(200):
            word = "".join(rng.choice(letters, size=rng.integers(1, 12)))
            assert re.match(r"^[A-Z][0-9]{3}$", soundex(word).code)

    def test_no_letters_is_an_error(self):
        with pytest.raises(RuleError, match="no ASCII letters"):
            soundex("1234!")

    def test_non_letters_ignored(self):
        assert soundex("o'brien").code == soundex("obrien").code

    def test_code_type_validates(self):
        with pytest.raises(RuleError):
            SoundexCode("r163")


class TestSoundexRepeatLabel:
    def test_restart_fragment_fires(self, fluency_bindings):
        vote = soundex_repeat_label(toks("i", "wan", "want", "tea"), fluency_bindings)
        assert vote.label.name == "disfluent"
        assert vote.confidence == 0.8

    def test_clean_utterance_abstains(self, fluency_bindings):
        assert soundex_repeat_label(toks("i", "want", "tea"), fluency_bindings).is_abstain

    def test_empty_abstains(self, fluency_bindings):
        assert soundex_repeat_label(toks(), fluency_bindings).is_abstain

    def test_identical_tokens_do_not_fire(self, fluency_bindings):
        # verbatim repeats belong to repetition_label, not the phonetic rule
        assert soundex_repeat_label(toks("want", "want"), fluency_bindings).is_abstain

    def test_homophone_pair_fires(self, fluency_bindings):
        assert not soundex_repeat_label(toks("to", "too", "late"), fluency_bindings).is_abstain

    def test_skips_non_alphabetic_tokens(self, fluency_bindings):
        vote = soundex_repeat_label(toks("wan", "123", "want"), fluency_bindings)
        assert vote.label.name == "disfluent"


class TestFluentDefault:
    def _cfg(self, fluency_bindings):
        return RuleSourceConfig(bindings=fluency_bindings)

    def test_clean_long_utterance(self, fluency_bindings):
        vote = fluent_default_label(toks("i", "went", "home"), self._cfg(fluency_bindings))
        assert vote.label.name == "fluent"
        assert vote.confidence == 0.6

    def test_detector_hit_blocks_default(self, fluency_bindings):
        assert fluent_default_label(toks("i", "i", "went"), self._cfg(fluency_bindings)).is_abstain

    def test_below_length_floor(self, fluency_bindings):
        assert fluent_default_label(toks("ok"), self._cfg(fluency_bindings)).is_abstain


class TestRuleSourceConfig:
    def test_rejects_negative_threshold(self, fluency_bindings):
        with pytest.raises(RuleError):
            RuleSourceConfig(bindings=fluency_bindings, threshold=-1.0)

    def test_rejects_zero_n_max(self, fluency_bindings):
        with pytest.raises(RuleError):
            RuleSourceConfig(bindings=fluency_bindings, n_max=0)


class TestDeterminism:
    def test_rule_sources_are_pure(self, fluency_bindings, polarity_bindings):
        lex = Lexicon({"good": 2.0, "bad": -1.0})
        seqs = [
            toks("good", "uh", "good", "good"),
            toks("i", "i", "mean", "wan", "want"),
            toks(),
        ]
        for seq in seqs:
            for _ in range(3):
                assert lexicon_label(seq, lex, 0.0, polarity_bindings) == lexicon_label(
                    seq, lex, 0.0, polarity_bindings
                )
                assert filler_label(seq, DEFAULT_FILLERS, fluency_bindings) == filler_label(
                    seq, DEFAULT_FILLERS, fluency_bindings
                )
                assert repetition_label(seq, 2, fluency_bindings) == repetition_label(
                    seq, 2, fluency_bindings
                )
                assert soundex_repeat_label(seq, fluency_bindings) == soundex_repeat_label(
                    seq, fluency_bindings
                )


class TestFillerFile:
    def test_load_filler_set(self, tmp_path):
        path = tmp_path / "fillers.txt"
        path.write_text("Uh\nyou  know\n\num\n")
        fillers = load_filler_set(path)
        assert fillers == frozenset({"uh", "you know", "um"})

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "fillers.txt"
        path.write_text("\n\n")
        with pytest.raises(RuleError):
            load_filler_set(path)


class TestPrecomputedVotes:
    def test_load_and_serve(self, tmp_path, sentiment_schema):
        path = tmp_path / "votes.tsv"
        path.write_text("u1\tpositive\t0.9\nu2\tABSTAIN\t0\n")
        votes = load_precomputed_votes(path, sentiment_schema, "ext")
        assert votes["u1"].label.name == "positive"
        assert votes["u2"].is_abstain
        source = PrecomputedSource("ext", votes)
        assert source.label(Utterance("u1", "x")).confidence == 0.9
        assert source.label(Utterance("unseen", "x")).is_abstain

    def test_bad_confidence(self, tmp_path, sentiment_schema):
        path = tmp_path / "votes.tsv"
        path.write_text("u1\tpositive\thigh\n")
        with pytest.raises(RuleError, match="non-numeric"):
            load_precomputed_votes(path, sentiment_schema, "ext")

    def test_abstain_with_confidence_rejected(self, tmp_path, sentiment_schema):
        path = tmp_path / "votes.tsv"
        path.write_text("u1\tABSTAIN\t0.4\n")
        with pytest.raises(RuleError, match=":1"):
            load_precomputed_votes(path, sentiment_schema, "ext")

    def test_unknown_label_rejected(self, tmp_path, sentiment_schema):
        path = tmp_path / "votes.tsv"
        path.write_text("u1\tjoyful\t0.4\n")
        with pytest.raises(RuleError, match="joyful"):
            load_precomputed_votes(path, sentiment_schema, "ext")
