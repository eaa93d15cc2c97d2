import math

import numpy as np
import pytest

from rewe.bleu import bleu_corpus, bleu_sentences
from rewe.errors import DataError


def toks(*sentences):
    return [s.split() for s in sentences]


def test_identity_corpus_scores_100(tmp_path):
    text = "the cat sat on the mat\na quick brown fox\n"
    h = tmp_path / "h.txt"
    r = tmp_path / "r.txt"
    h.write_text(text)
    r.write_text(text)
    report = bleu_corpus(h, r)
    assert report.bleu == pytest.approx(100.0)
    assert report.brevity_penalty == 1.0


def test_clipped_unigram_hand_case():
    # "the" appears 7 times in the hypothesis but only 2 in the reference
    report = bleu_sentences(toks("the the the the the the the"),
                            toks("the cat is on the mat"))
    assert report.precisions[0] == pytest.approx(2.0 / 7.0)
    assert report.bleu == 0.0  # higher orders have no matches, no smoothing


def test_brevity_penalty_half_length():
    # hypothesis half the reference length with perfect precisions
    report = bleu_sentences(toks("a b"), toks("a b c d"))
    assert report.brevity_penalty == pytest.approx(math.exp(1.0 - 2.0), abs=1e-9)


def test_brevity_penalty_formula_exact():
    for hyp_len, ref_len in [(3, 4), (2, 6), (5, 5), (7, 3)]:
        hyp = [["w"] * hyp_len]
        ref = [["w"] * ref_len]
        report = bleu_sentences(hyp, ref)
        expected = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
        assert report.brevity_penalty == pytest.approx(expected, abs=1e-9)


def test_zero_precision_zeroes_bleu():
    report = bleu_sentences(toks("x y z"), toks("a b c"))
    assert report.bleu == 0.0


def test_identity_with_short_sentences_still_100():
    # sentences too short for 4-grams: vacuous orders drop out of the mean
    report = bleu_sentences(toks("a b c", "d e"), toks("a b c", "d e"))
    assert report.bleu == pytest.approx(100.0)
    assert report.effective_orders == 3


def test_permutation_invariance():
    hyps = toks("a b c d", "e f g h", "a a b b")
    refs = toks("a b c e", "e f g h", "a b a b")
    fwd = bleu_sentences(hyps, refs)
    perm = [2, 0, 1]
    rev = bleu_sentences([hyps[i] for i in perm], [refs[i] for i in perm])
    assert fwd.bleu == pytest.approx(rev.bleu, abs=1e-12)
    assert fwd.precisions == pytest.approx(rev.precisions)


def test_bleu_100_iff_identical():
    hyps = toks("a b c d e", "f g h i j")
    refs = toks("a b c d e", "f g h i x")
    assert bleu_sentences(hyps, refs).bleu < 100.0
    assert bleu_sentences(hyps, hyps).bleu == pytest.approx(100.0)


def test_smoothing_keeps_identity_at_100():
    hyps = toks("a b c d e")
    assert bleu_sentences(hyps, hyps, smooth=True).bleu == pytest.approx(100.0)


def test_smoothing_rescues_tiny_sets():
    report = bleu_sentences(toks("a b c"), toks("a b d"))
    assert report.bleu == 0.0
    smoothed = bleu_sentences(toks("a b c"), toks("a b d"), smooth=True)
    assert 0.0 < smoothed.bleu < 100.0


def test_line_count_mismatch_errors(tmp_path):
    h = tmp_path / "h.txt"
    r = tmp_path / "r.txt"
    h.write_text("a b\n")
    r.write_text("a b\nc d\n")
    with pytest.raises(DataError, match="mismatch"):
        bleu_corpus(h, r)


def test_empty_hypothesis_corpus_errors(tmp_path):
    h = tmp_path / "h.txt"
    r = tmp_path / "r.txt"
    h.write_text("")
    r.write_text("")
    with pytest.raises(DataError, match="empty"):
        bleu_corpus(h, r)


def test_all_empty_lines_error():
    with pytest.raises(DataError, match="empty"):
        bleu_sentences([[], []], [["a"], ["b"]])


def test_report_fields_consistent():
    rng = np.random.default_rng(0)
    vocab = [f"w{i}" for i in range(10)]
    hyps = [[vocab[i] for i in rng.integers(0, 10, size=8)] for _ in range(20)]
    refs = [[vocab[i] for i in rng.integers(0, 10, size=9)] for _ in range(20)]
    rep = bleu_sentences(hyps, refs, smooth=True)
    assert rep.hyp_len == 160 and rep.ref_len == 180
    assert 0.0 < rep.brevity_penalty <= 1.0
    if all(p > 0 for p in rep.precisions):
        expected = rep.brevity_penalty * math.exp(
            sum(math.log(p) for p in rep.precisions) / 4) * 100
        assert rep.bleu == pytest.approx(expected, abs=1e-9)
