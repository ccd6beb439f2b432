import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capfill.evaluation import (
    MetricReport,
    ReplayCase,
    bleu4,
    char_tokens,
    cider,
    one_sided_sign_test,
    oov_rate,
    rouge_l,
    simulated_compare,
)

token_lists = st.lists(st.sampled_from(list("abcdef")), min_size=1, max_size=12)


class TestBleu4:
    def test_identical_is_one(self):
        toks = char_tokens("abcdef")
        assert bleu4(toks, [toks]) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint_is_tiny(self):
        assert bleu4(char_tokens("aaaa"), [char_tokens("bbbb")]) < 1e-6

    def test_hand_computed_precisions(self):
        cand = "a b c d e".split()
        ref = "a b c d f".split()
        expected = (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25  # BP = 1 (equal lengths)
        assert bleu4(cand, [ref]) == pytest.approx(expected, rel=1e-12)

    def test_brevity_penalty(self):
        cand = char_tokens("abcd")
        ref = char_tokens("abcdefgh")
        assert bleu4(cand, [ref]) < bleu4(char_tokens("abcdefgh"), [ref])

    def test_empty_candidate(self):
        assert bleu4([], [char_tokens("ab")]) == 0.0

    def test_no_references(self):
        with pytest.raises(ValueError):
            bleu4(char_tokens("ab"), [])

    @given(token_lists, st.lists(token_lists, min_size=1, max_size=3))
    def test_bounded(self, cand, refs):
        assert 0.0 <= bleu4(cand, refs) <= 1.0 + 1e-12

    @given(token_lists, st.lists(token_lists, min_size=2, max_size=4))
    def test_reference_permutation_invariant(self, cand, refs):
        shuffled = list(refs)
        random.Random(0).shuffle(shuffled)
        assert bleu4(cand, refs) == pytest.approx(bleu4(cand, shuffled), abs=1e-12)


class TestRougeL:
    def test_identical_is_one(self):
        toks = char_tokens("abcde")
        assert rouge_l(toks, [toks]) == pytest.approx(1.0, abs=1e-9)

    def test_hand_computed(self):
        # LCS("a c", "a b c") = 2; P = 1, R = 2/3
        p, r, beta_sq = 1.0, 2 / 3, 1.2
        expected = ((1 + beta_sq) * p * r) / (r + beta_sq * p)
        assert rouge_l("a c".split(), ["a b c".split()]) == pytest.approx(expected, rel=1e-12)

    def test_empty_candidate(self):
        assert rouge_l([], [char_tokens("ab")]) == 0.0

    @given(token_lists, st.lists(token_lists, min_size=1, max_size=3))
    def test_bounded(self, cand, refs):
        assert 0.0 <= rouge_l(cand, refs) <= 1.0 + 1e-12

    @given(token_lists, st.lists(token_lists, min_size=2, max_size=4))
    def test_reference_permutation_invariant(self, cand, refs):
        shuffled = list(refs)
        random.Random(1).shuffle(shuffled)
        assert rouge_l(cand, refs) == pytest.approx(rouge_l(cand, shuffled), abs=1e-12)


class TestCider:
    def test_identical_pair_distinct_corpus(self):
        sentences = ["abcde", "fghij", "klmno"]
        corpus = [[char_tokens(s)] for s in sentences]
        score = cider([char_tokens("abcde")], [[char_tokens("abcde")]], corpus)
        assert score == pytest.approx(10.0, abs=1e-6)

    def test_disjoint_near_zero(self):
        corpus = [[char_tokens("abcde")], [char_tokens("fghij")]]
        score = cider([char_tokens("zzzzz")], [[char_tokens("abcde")]], corpus)
        assert score == pytest.approx(0.0, abs=1e-9)

    def test_non_negative_random(self):
        rng = random.Random(2)
        corpus = [[[rng.choice("abc") for _ in range(6)]] for _ in range(5)]
        for _ in range(20):
            cand = [rng.choice("abc") for _ in range(6)]
            assert cider([cand], [corpus[0]], corpus) >= 0.0

    def test_reference_group_permutation_invariant(self):
        refs = [char_tokens("abcd"), char_tokens("abce")]
        corpus = [refs, [char_tokens("wxyz")]]
        a = cider([char_tokens("abcd")], [refs], corpus)
        b = cider([char_tokens("abcd")], [refs[::-1]], corpus)
        assert a == pytest.approx(b, abs=1e-12)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            cider([char_tokens("ab")], [[char_tokens("ab")]], [])


class TestOovRate:
    def test_no_unk(self):
        assert oov_rate([[1, 2], [3]], unk_id=0) == 0.0

    def test_quarter(self):
        seqs = [[0, 1], [1], [2], [3]]
        assert oov_rate(seqs, unk_id=0) == 25.0

    def test_all(self):
        assert oov_rate([[0], [0, 1]], unk_id=0) == 100.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            oov_rate([], unk_id=0)


class TestSignTest:
    def test_no_information(self):
        assert one_sided_sign_test(0, 0) == 1.0

    def test_balanced(self):
        assert one_sided_sign_test(5, 5) == pytest.approx(0.623, abs=1e-3)

    def test_strong_signal(self):
        assert one_sided_sign_test(20, 2) < 1e-3

    def test_symmetric_total(self):
        # P(X >= w) + P(X >= l+1) = 1 for w + l = n
        assert one_sided_sign_test(3, 7) + one_sided_sign_test(8, 2) == pytest.approx(1.0)


class FixedModel:
    """Completion stub: always proposes the same texts after the prefix."""

    def __init__(self, suffixes):
        self.suffixes = suffixes

    def complete(self, req):
        from capfill.completion import Candidate

        left = req.text[: req.cursor]
        return [
            Candidate(text=left + sfx, score=-float(i), rank=i + 1)
            for i, sfx in enumerate(self.suffixes[: req.k])
        ]


class TestSimulatedCompare:
    def make_features(self):
        from capfill.training import FeatureStore

        return FeatureStore(dim=2, vectors={"a": np.zeros(2), "b": np.ones(2)})

    def test_identical_models_identical_rows(self):
        model = FixedModel(["xy", "xz", "zz"])
        cases = [
            ReplayCase("a", "pre", 3, "prexy"),
            ReplayCase("b", "pr", 2, "przz"),
        ]
        rep = simulated_compare(cases, model, model, k=3, features=self.make_features())
        assert rep["model_a"] == rep["model_b"]
        assert rep["cases"] == 2 and rep["skipped"] == 0

    def test_exact_match_rank1_zero(self):
        model = FixedModel(["xy"])
        cases = [ReplayCase("a", "pre", 3, "prexy")]
        rep = simulated_compare(cases, model, model, k=1, features=self.make_features())
        assert rep["model_a"]["mean_levd"][0] == 0.0

    def test_missing_feature_skipped(self):
        model = FixedModel(["x"])
        cases = [ReplayCase("ghost", "a", 1, "ab"), ReplayCase("a", "a", 1, "ax")]
        rep = simulated_compare(cases, model, model, k=1, features=self.make_features())
        assert rep["skipped"] == 1 and rep["cases"] == 1


def test_metric_report_doc_headers():
    doc = MetricReport(bleu4=0.5, rouge_l=0.6, cider=7.0, oov_rate=0.0).to_doc()
    assert doc["tokenization"] == "character"
    assert "cider_variant" in doc
