"""Hand-computed metric fixtures plus brute-force oracle agreement."""

import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from alignforge.metrics import bleu, bleu1, rouge_l, rouge_n, tokenize

# Independent re-implementations used as oracles. These deliberately avoid
# collections.Counter and the rolling-row LCS used by the library.


def oracle_ngram_counts(tokens, n):
    counts = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def oracle_clipped_overlap(cand_tokens, ref_tokens, n):
    cand = oracle_ngram_counts(cand_tokens, n)
    ref = oracle_ngram_counts(ref_tokens, n)
    return sum(min(c, ref.get(g, 0)) for g, c in cand.items()), sum(cand.values())


def oracle_rouge_n(candidate, reference, n):
    cand_tokens, ref_tokens = tokenize(candidate), tokenize(reference)
    overlap, cand_total = oracle_clipped_overlap(cand_tokens, ref_tokens, n)
    ref_total = max(0, len(ref_tokens) - n + 1)
    if cand_total == 0 or ref_total == 0:
        return 0.0
    p, r = overlap / cand_total, overlap / ref_total
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def oracle_lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


def oracle_rouge_l(candidate, reference):
    cand, ref = tokenize(candidate), tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = oracle_lcs(cand, ref)
    p, r = lcs / len(cand), lcs / len(ref)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def oracle_bleu(candidates, references, max_n=4):
    cand_len = sum(len(tokenize(c)) for c in candidates)
    ref_len = sum(len(tokenize(r)) for r in references)
    if cand_len == 0:
        return 0.0
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    logs = 0.0
    for n in range(1, max_n + 1):
        matched = total = 0
        for c, r in zip(candidates, references):
            m, t = oracle_clipped_overlap(tokenize(c), tokenize(r), n)
            matched += m
            total += t
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            precision = (matched + 1) / (total + 1) if matched == 0 else matched / total
        logs += math.log(precision)
    return 100.0 * bp * math.exp(logs / max_n)


def oracle_bleu1(candidates, references):
    cand_len = sum(len(tokenize(c)) for c in candidates)
    ref_len = sum(len(tokenize(r)) for r in references)
    if cand_len == 0:
        return 0.0
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    matched = total = 0
    for c, r in zip(candidates, references):
        m, t = oracle_clipped_overlap(tokenize(c), tokenize(r), 1)
        matched += m
        total += t
    return 100.0 * bp * matched / total


class TestTokenize:
    def test_lowercase_and_punctuation_stripping(self):
        assert tokenize("Hello, World!") == ["hello", "world"]

    def test_inner_apostrophe_kept(self):
        assert tokenize("Don't worry.") == ["don't", "worry"]

    def test_empty(self):
        assert tokenize("  ") == []


class TestHandFixtures:
    """Frozen hand computations, one assertion per worked example."""

    def test_rouge1_identity(self):
        assert rouge_n("rest and fluids", "rest and fluids", 1) == 1.0

    def test_rouge1_two_of_three(self):
        assert rouge_n("a b c", "a b d", 1) == pytest.approx(2 / 3, abs=1e-12)

    def test_rouge1_disjoint(self):
        assert rouge_n("alpha beta", "gamma delta", 1) == 0.0

    def test_rouge2_hand_count(self):
        # cand bigrams: (a,b) (b,c); ref bigrams: (a,b) (b,d) -> overlap 1
        # P = 1/2, R = 1/2, F1 = 1/2
        assert rouge_n("a b c", "a b d", 2) == pytest.approx(0.5, abs=1e-12)

    def test_rouge_l_identity(self):
        assert rouge_l("the same text", "the same text") == 1.0

    def test_rouge_l_swapped_middle(self):
        assert rouge_l("a b c d", "a c b d") == pytest.approx(0.75, abs=1e-12)

    def test_rouge_l_empty_candidate(self):
        assert rouge_l("", "reference words") == 0.0

    def test_rouge_l_asymmetric_lengths(self):
        # LCS("a b", "a x b y") = 2 -> P = 1, R = 1/2, F1 = 2/3
        assert rouge_l("a b", "a x b y") == pytest.approx(2 / 3, abs=1e-12)

    def test_bleu_identity(self):
        assert bleu(["the cat sat down"], ["the cat sat down"]) == pytest.approx(100.0, abs=1e-9)

    def test_bleu_disjoint_is_zero(self):
        assert bleu(["aa bb cc dd"], ["ee ff gg hh"]) == 0.0

    def test_bleu_brevity_fixture(self):
        # unigram and bigram precision 1, BP = exp(1 - 3/2)
        got = bleu(["the cat"], ["the cat sat"], max_n=2)
        assert got == pytest.approx(100 * math.exp(-0.5), abs=1e-9)

    def test_bleu_smoothing_fixture(self):
        # cand "a b", ref "a c": unigram 1/2; bigram matched 0 of 1 -> smoothed 1/2
        # lengths equal -> BP 1; score = 100 * sqrt(1/4) = 50
        assert bleu(["a b"], ["a c"], max_n=2) == pytest.approx(50.0, abs=1e-9)

    def test_bleu1_identity(self):
        assert bleu1(["same words here"], ["same words here"]) == pytest.approx(100.0, abs=1e-9)

    def test_bleu1_clipping_fixture(self):
        # clipped count min(3, 1) = 1 of 3; candidate longer than reference -> BP 1
        assert bleu1(["a a a"], ["a b"]) == pytest.approx(100 / 3, abs=1e-9)

    def test_bleu1_brevity_applies(self):
        # precision 1, BP = exp(1 - 4/2)
        assert bleu1(["a b"], ["a b c d"]) == pytest.approx(100 * math.exp(-1.0), abs=1e-9)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            bleu([], [])
        with pytest.raises(ValueError):
            bleu1([], [])

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            bleu(["a"], ["a", "b"])


WORDS = ["a", "b", "c", "ab", "bc", "ca", "abc", "x"]


def random_text(rng, max_words=24):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randrange(0, max_words)))


class TestOracleAgreement:
    def test_500_random_pairs_match_brute_force(self):
        rng = random.Random(20240817)
        for trial in range(500):
            cand, ref = random_text(rng), random_text(rng)
            for n in (1, 2, 3):
                assert rouge_n(cand, ref, n) == pytest.approx(
                    oracle_rouge_n(cand, ref, n), abs=1e-12
                ), (trial, n, cand, ref)
            assert rouge_l(cand, ref) == pytest.approx(oracle_rouge_l(cand, ref), abs=1e-12)
            if tokenize(cand):
                assert bleu([cand], [ref]) == pytest.approx(oracle_bleu([cand], [ref]), abs=1e-12)
                assert bleu1([cand], [ref]) == pytest.approx(
                    oracle_bleu1([cand], [ref]), abs=1e-12
                )

    def test_corpus_level_agreement(self):
        rng = random.Random(7)
        cands = [random_text(rng) or "a" for _ in range(20)]
        refs = [random_text(rng) or "b" for _ in range(20)]
        assert bleu(cands, refs) == pytest.approx(oracle_bleu(cands, refs), abs=1e-12)
        assert bleu1(cands, refs) == pytest.approx(oracle_bleu1(cands, refs), abs=1e-12)


text_strategy = st.text(
    alphabet=st.sampled_from("abc x"), min_size=0, max_size=40
)


class TestProperties:
    @given(cand=text_strategy, ref=text_strategy, n=st.integers(1, 3))
    @settings(max_examples=120, deadline=None)
    def test_rouge_f1_symmetric_under_swap(self, cand, ref, n):
        assert rouge_n(cand, ref, n) == pytest.approx(rouge_n(ref, cand, n), abs=1e-12)
        assert rouge_l(cand, ref) == pytest.approx(rouge_l(ref, cand), abs=1e-12)

    @given(cand=text_strategy, ref=text_strategy)
    @settings(max_examples=120, deadline=None)
    def test_metrics_bounded(self, cand, ref):
        assert 0.0 <= rouge_n(cand, ref, 1) <= 1.0
        assert 0.0 <= rouge_l(cand, ref) <= 1.0
        assert 0.0 <= bleu([cand], [ref]) <= 100.0
        assert 0.0 <= bleu1([cand], [ref]) <= 100.0

    @given(data=st.lists(st.tuples(text_strategy, text_strategy), min_size=2, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_bleu_invariant_under_pair_permutation(self, data):
        cands = [c or "a" for c, _ in data]
        refs = [r or "b" for _, r in data]
        rng = random.Random(0)
        order = list(range(len(data)))
        rng.shuffle(order)
        assert bleu(cands, refs) == pytest.approx(
            bleu([cands[i] for i in order], [refs[i] for i in order]), abs=1e-10
        )
        assert bleu1(cands, refs) == pytest.approx(
            bleu1([cands[i] for i in order], [refs[i] for i in order]), abs=1e-10
        )
