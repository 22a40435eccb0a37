"""N-gram text metrics: ROUGE-N, ROUGE-L, corpus BLEU and BLEU-1.

Tokenization is declared here so scores are reproducible: lowercase,
whitespace split, leading/trailing punctuation stripped per token.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from typing import Sequence

_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    tokens = []
    for raw in text.lower().split():
        token = raw.strip(_PUNCT)
        if token:
            tokens.append(token)
    return tokens


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def rouge_n(candidate: str, reference: str, n: int) -> float:
    """F1 of clipped n-gram overlap; 0 when either side has no n-grams."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(tokenize(candidate), n)
    ref = _ngrams(tokenize(reference), n)
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    if cand_total == 0 or ref_total == 0:
        return 0.0
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    return _f1(overlap / cand_total, overlap / ref_total)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            curr.append(prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """F1 from longest-common-subsequence length."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    return _f1(lcs / len(cand), lcs / len(ref))


def _corpus_counts(
    candidates: Sequence[str], references: Sequence[str], n: int
) -> tuple[int, int]:
    matched = 0
    total = 0
    for cand_text, ref_text in zip(candidates, references):
        cand = _ngrams(tokenize(cand_text), n)
        ref = _ngrams(tokenize(ref_text), n)
        matched += sum(min(count, ref[gram]) for gram, count in cand.items())
        total += sum(cand.values())
    return matched, total


def _brevity_penalty(candidates: Sequence[str], references: Sequence[str]) -> tuple[float, int]:
    cand_len = sum(len(tokenize(c)) for c in candidates)
    ref_len = sum(len(tokenize(r)) for r in references)
    if cand_len == 0:
        return 0.0, 0
    return math.exp(min(0.0, 1.0 - ref_len / cand_len)), cand_len


def _check_corpus(candidates: Sequence[str], references: Sequence[str]) -> None:
    if len(candidates) != len(references):
        raise ValueError(
            f"candidates and references differ in length: {len(candidates)} vs {len(references)}"
        )
    if not candidates:
        raise ValueError("candidate corpus must be non-empty")


def bleu(candidates: Sequence[str], references: Sequence[str], max_n: int = 4) -> float:
    """Corpus BLEU on a 0-100 scale.

    Geometric mean of clipped modified n-gram precisions for n = 1..max_n,
    with add-one smoothing applied to zero counts for n >= 2, times the
    brevity penalty. A zero unigram precision yields exactly 0.0.
    """
    _check_corpus(candidates, references)
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    bp, cand_len = _brevity_penalty(candidates, references)
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched, total = _corpus_counts(candidates, references, n)
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        elif matched == 0:
            precision = (matched + 1) / (total + 1)
        else:
            precision = matched / total
        log_sum += math.log(precision)
    return 100.0 * bp * math.exp(log_sum / max_n)


def bleu1(candidates: Sequence[str], references: Sequence[str]) -> float:
    """Corpus-level clipped unigram precision times brevity penalty, 0-100."""
    _check_corpus(candidates, references)
    bp, cand_len = _brevity_penalty(candidates, references)
    if cand_len == 0:
        return 0.0
    matched, total = _corpus_counts(candidates, references, 1)
    return 100.0 * bp * (matched / total)
