import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from accentlid.corpus import LabelSet, Utterance
from accentlid.ngram_nb import (NGramFeatureConfig, NGramProfile, classify_nb, extract_ngrams,
                                score_nb, train_nb)
from oracles import brute_counts, brute_log_posteriors, brute_ngrams

words = st.text(alphabet="abcdeéõü", min_size=1, max_size=9)
texts = st.lists(words, max_size=6).map(" ".join)


def utts(pairs, asr="et"):
    return [Utterance(f"u{i}", {asr: t}, lab) for i, (lab, t) in enumerate(pairs)]


def two_lang_profile(alpha=0.95):
    return train_nb(utts([("A", "aa bb"), ("B", "cc dd")]), "et", alpha=alpha)


class TestExtract:
    def test_there(self):
        assert extract_ngrams("there") == [" the", "ther", "here", "ere "]

    def test_empty(self):
        assert extract_ngrams("") == []
        assert extract_ngrams("   \t ") == []

    def test_short_words_emit_whole_padded_word(self):
        assert Counter(extract_ngrams("a a")) == Counter({" a ": 2})

    def test_normalization(self):
        assert extract_ngrams("  THERE\n") == extract_ngrams("there")

    def test_no_cross_word_grams(self):
        assert "e th" not in extract_ngrams("the there")

    @given(words, st.integers(1, 6))
    def test_multiset_size(self, w, n):
        grams = extract_ngrams(w, NGramFeatureConfig(n=n))
        expected = len(w) + 3 - n if len(w) >= n - 2 else 1
        assert len(grams) == expected
        assert all(len(g) == n for g in grams) or len(w) + 2 < n

    @given(texts)
    def test_matches_brute_force(self, t):
        assert extract_ngrams(t) == brute_ngrams(t)


class TestTrain:
    def test_two_language_counts(self):
        p = two_lang_profile()
        assert set(p.vocab) == {" aa ", " bb ", " cc ", " dd "}
        assert p.count("A", " aa ") == 1
        assert p.count("A", " cc ") == 0
        assert p.totals[p.labels.index("A")] == 2
        np.testing.assert_allclose(p.priors, [0.5, 0.5])

    def test_one_language(self):
        p = train_nb(utts([("et", "tere tere")]), "et")
        assert p.priors.tolist() == [1.0]

    def test_missing_transcript(self):
        data = utts([("A", "aa")]) + [Utterance("u9", {"en": "x"}, "B")]
        with pytest.raises(KeyError, match="u9"):
            train_nb(data, "et")

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            train_nb([], "et")

    def test_unlabeled_rejected(self):
        with pytest.raises(ValueError, match="no label"):
            train_nb([Utterance("u1", {"et": "x"})], "et")

    def test_declared_language_without_data(self):
        with pytest.raises(ValueError, match="C"):
            train_nb(utts([("A", "aa"), ("B", "bb")]), "et", labels=LabelSet(["A", "B", "C"]))

    def test_empirical_priors(self):
        p = train_nb(utts([("A", "x"), ("A", "y"), ("A", "z"), ("B", "w")]), "et", prior_mode="empirical")
        np.testing.assert_allclose(p.priors, [0.75, 0.25], atol=1e-15)

    def test_invariants(self):
        p = two_lang_profile()
        assert np.array_equal(p.totals, p.counts.sum(axis=1))
        assert set(p.vocab) == {g for g in p.vocab if p.counts[:, p.vocab.index(g)].sum() > 0}


class TestScore:
    def test_hand_arithmetic(self):
        s = score_nb(two_lang_profile(), "aa")
        # P(" aa "|A) = 1.95/5.8, P(" aa "|B) = 0.95/5.8
        assert math.exp(s.values[0]) == pytest.approx(1.95 / 2.9, abs=1e-12)
        assert math.exp(s.values[0]) == pytest.approx(0.6724, abs=1e-4)

    def test_empty_text_gives_priors(self):
        s = score_nb(two_lang_profile(), "")
        np.testing.assert_allclose(np.exp(s.values), [0.5, 0.5], atol=1e-15)

    def test_oov_skipped(self):
        p = two_lang_profile()
        np.testing.assert_array_equal(score_nb(p, "zzz qqq").values, score_nb(p, "").values)

    def test_small_alpha_follows_support(self):
        p = train_nb(utts([("A", "kala maja"), ("B", "house tree")]), "et", alpha=1e-6)
        assert classify_nb(p, "kala kala maja").code == "A"

    def test_tie_break_lowest_index(self):
        assert classify_nb(two_lang_profile(), "").index == 0

    def test_large_alpha_is_uniform(self):
        p = train_nb(utts([("A", "aa bb aa"), ("B", "cc dd"), ("C", "ee")]), "et", alpha=1e9)
        np.testing.assert_allclose(np.exp(score_nb(p, "aa aa bb").values), 1 / 3, atol=1e-3)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("ABC"), texts), min_size=3, max_size=12), texts,
           st.floats(0.01, 10))
    def test_normalized_and_matches_oracle(self, pairs, text, alpha):
        pairs = pairs + [("A", "aa"), ("B", "bb"), ("C", "cc")]
        p = train_nb(utts(pairs), "et", alpha=alpha)
        s = score_nb(p, text)
        assert abs(logsumexp(s.values)) < 1e-9
        np.testing.assert_allclose(s.values, brute_log_posteriors(pairs, ["A", "B", "C"], text, alpha),
                                   atol=1e-10)

    def test_label_permutation_equivariance(self):
        pairs = [("A", "kala maja"), ("B", "house tree"), ("C", "talo puu")]
        p1 = train_nb(utts(pairs), "et", labels=LabelSet("ABC"))
        p2 = train_nb(utts(pairs), "et", labels=LabelSet("CAB"))
        s1, s2 = score_nb(p1, "kala puu"), score_nb(p2, "kala puu")
        np.testing.assert_allclose(s2.values, s1.values[[2, 0, 1]], atol=1e-12)


def test_brute_counts_agree():
    pairs = [("A", "Tere tulemast"), ("B", "hello there"), ("A", "tere")]
    p = train_nb(utts(pairs), "et")
    table = brute_counts(pairs)
    for code in "AB":
        for g in p.vocab:
            assert p.count(code, g) == table[code].get(g, 0)


def test_profile_round_trip(tmp_path):
    p = train_nb(utts([("A", "kala maja õun"), ("B", "house tree"), ("A", "KALA")]), "et",
                 alpha=0.95, prior_mode="empirical")
    p.save(tmp_path / "p.json")
    q = NGramProfile.load(tmp_path / "p.json")
    assert q.alpha == 0.95 and q.vocab == p.vocab and q.labels == p.labels
    assert np.array_equal(q.counts, p.counts)
    assert np.array_equal(q.priors, p.priors)
    assert (tmp_path / "p.json").read_text() == q.to_text()
    np.testing.assert_array_equal(score_nb(q, "kala").values, score_nb(p, "kala").values)
