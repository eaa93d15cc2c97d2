"""Corpus-level BLEU-4: modified n-gram precision with brevity penalty.

Case-sensitive, whitespace tokens, single reference. No smoothing by
default (a zero precision at any order zeroes the score); optional add-one
smoothing for orders >= 2 helps tiny test sets where 4-gram counts vanish.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .data import read_tokenized
from .errors import DataError

MAX_ORDER = 4


@dataclass
class BleuReport:
    bleu: float                  # in [0, 100]
    precisions: list[float]      # modified n-gram precisions, n = 1..4
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    effective_orders: int = MAX_ORDER  # orders with any hypothesis n-grams


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_sentences(hyps, refs, smooth: bool = False) -> BleuReport:
    """Score token-list hypotheses against aligned token-list references."""
    if len(hyps) != len(refs):
        raise DataError(f"line count mismatch: {len(hyps)} hypotheses vs "
                        f"{len(refs)} references")
    if not hyps:
        raise DataError("empty hypothesis corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    if hyp_len == 0:
        raise DataError("empty hypothesis corpus (no tokens)")

    # Orders with no hypothesis n-grams at all (corpus shorter than n) are
    # vacuous: they report precision 1 and drop out of the geometric mean,
    # so an identical corpus scores 100 regardless of sentence lengths.
    precisions = []
    included = []
    for n in range(MAX_ORDER):
        m, t = matches[n], totals[n]
        if smooth and n >= 1:
            m, t = m + 1, t + 1
        if t > 0:
            precisions.append(m / t)
            included.append(n)
        else:
            precisions.append(1.0)

    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    scored = [precisions[n] for n in included]
    if any(p == 0.0 for p in scored):
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in scored) / len(scored)) * 100.0
    return BleuReport(bleu=score, precisions=precisions, brevity_penalty=bp,
                      hyp_len=hyp_len, ref_len=ref_len,
                      effective_orders=len(included))


def bleu_corpus(hyp_path, ref_path, smooth: bool = False) -> BleuReport:
    """Score a hypothesis file against a reference file, line-aligned."""
    return bleu_sentences(read_tokenized(hyp_path), read_tokenized(ref_path),
                          smooth=smooth)
