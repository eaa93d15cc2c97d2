import itertools

import numpy as np
import pytest

from conftest import make_toy_corpus, toy_config
from rewe.autodiff import Graph
from rewe.data import BOS_ID, EOS_ID, UNK_ID, Vocabulary, random_embeddings
from rewe.errors import DataError
from rewe.inference import (
    Hypothesis,
    beam_search,
    greedy_decode,
    nearest_neighbor_decode,
    nearest_row,
    replace_unk,
    translate_corpus,
)
from rewe.model import DecoderState, Seq2SeqModel, decode_step, encode
from rewe.pipeline import build_model, prepare_data
from rewe.training import train


def random_model(seed, tgt_vocab_size=5, src_vocab_size=6, hidden=4):
    return Seq2SeqModel(src_vocab_size=src_vocab_size,
                        tgt_vocab_size=tgt_vocab_size, hidden_size=hidden,
                        emb_dim=4, rewe_mid_dim=3, dropout=0.0, seed=seed)


def exhaustive_best_sequence(model, src_ids, max_len):
    """Enumerate every token sequence up to max_len; return the best finished
    one by summed log probability (best unfinished if none finish)."""
    graph = Graph(seed=0)
    bound = model.bind(graph)
    src = np.asarray([src_ids], dtype=np.intp)
    enc, st0 = encode(model, graph, bound, src, np.ones_like(src, dtype=bool))
    V = model.tgt_vocab_size
    best_finished = (None, -np.inf)
    best_unfinished = (None, -np.inf)

    def expand(prefix, logp, state, depth):
        nonlocal best_finished, best_unfinished
        if prefix and prefix[-1] == EOS_ID:
            if logp > best_finished[1]:
                best_finished = (list(prefix), logp)
            return
        if depth == max_len:
            if logp > best_unfinished[1]:
                best_unfinished = (list(prefix), logp)
            return
        y_prev = [prefix[-1] if prefix else BOS_ID]
        st = DecoderState(graph.leaf(state[0][None, :]), graph.leaf(state[1][None, :]))
        out = decode_step(model, graph, bound, st, y_prev, enc)
        logs = np.log(out.probs.values[0])
        new_state = (out.state.h.values[0].copy(), out.state.c.values[0].copy())
        for tok in range(V):
            expand(prefix + [tok], logp + float(logs[tok]), new_state, depth + 1)

    expand([], 0.0, (st0.h.values[0].copy(), st0.c.values[0].copy()), 0)
    return best_finished if best_finished[0] is not None else best_unfinished


def test_beam_one_equals_greedy():
    for seed in range(5):
        m = random_model(seed, tgt_vocab_size=7)
        src = [4, 5, 3]
        b = beam_search(m, src, beam=1)
        g = greedy_decode(m, src)
        assert b.token_ids == g.token_ids
        assert b.log_prob == pytest.approx(g.log_prob, abs=1e-12)


def test_beam_matches_exhaustive_enumeration():
    max_len = 4
    for seed in range(12):
        m = random_model(seed, tgt_vocab_size=5)
        src = [4, 2]
        hyp = beam_search(m, src, beam=5 ** max_len, max_decode_len=max_len)
        expected_ids, expected_logp = exhaustive_best_sequence(m, src, max_len)
        assert hyp.token_ids == expected_ids, f"seed {seed}"
        assert hyp.log_prob == pytest.approx(expected_logp, abs=1e-9)


def test_beam_never_below_greedy():
    for seed in range(8):
        m = random_model(seed + 100, tgt_vocab_size=6)
        src = [3, 4, 5]
        g = greedy_decode(m, src)
        b = beam_search(m, src, beam=4)
        if g.finished and b.finished:
            assert b.log_prob >= g.log_prob - 1e-12


def test_rewe_head_randomization_changes_nothing():
    m = random_model(3, tgt_vocab_size=8)
    src = [4, 5]
    base = beam_search(m, src, beam=3)
    rng = np.random.default_rng(0)
    for name in ("rewe_W1", "rewe_b1", "rewe_W2", "rewe_b2"):
        m.params[name][...] = rng.normal(size=m.params[name].shape)
    scrambled = beam_search(m, src, beam=3)
    assert base.token_ids == scrambled.token_ids
    assert base.log_prob == scrambled.log_prob


def test_greedy_deterministic():
    m = random_model(9)
    a = greedy_decode(m, [4, 3])
    b = greedy_decode(m, [4, 3])
    assert a.token_ids == b.token_ids and a.log_prob == b.log_prob


def test_decode_empty_source_errors():
    m = random_model(1)
    with pytest.raises(DataError):
        beam_search(m, [], beam=2)
    with pytest.raises(DataError):
        greedy_decode(m, [])


def test_hypothesis_logprob_nonpositive():
    m = random_model(2)
    hyp = beam_search(m, [3, 4], beam=3)
    assert hyp.log_prob <= 0.0


def _vocab(n):
    return Vocabulary([f"w{i}" for i in range(n)], 100)


def test_replace_unk_identity_without_unks():
    v = _vocab(4)
    hyp = Hypothesis([4, 5, EOS_ID], -1.0, np.zeros(2), np.zeros(2),
                     attn_argmax=[0, 1, 1])
    assert replace_unk(hyp, ["a", "b"], v) == ["w0", "w1"]


def test_replace_unk_substitutes_attended_source():
    v = _vocab(4)
    hyp = Hypothesis([4, UNK_ID, EOS_ID], -1.0, np.zeros(2), np.zeros(2),
                     attn_argmax=[0, 2, 0])
    assert replace_unk(hyp, ["x", "y", "z"], v) == ["w0", "z"]


def test_replace_unk_all_unks_follow_attention():
    v = _vocab(4)
    hyp = Hypothesis([UNK_ID, UNK_ID, UNK_ID], -1.0, np.zeros(2), np.zeros(2),
                     attn_argmax=[2, 0, 1])
    assert replace_unk(hyp, ["a", "b", "c"], v) == ["c", "a", "b"]


def test_replace_unk_requires_attention_record():
    v = _vocab(4)
    hyp = Hypothesis([UNK_ID], -1.0, np.zeros(2), np.zeros(2), attn_argmax=[])
    with pytest.raises(DataError):
        replace_unk(hyp, ["a"], v)


def test_nearest_row_exact_match_and_orthogonal():
    v = _vocab(6)
    table = random_embeddings(v, 8, seed=5)
    for k in range(len(v)):
        assert nearest_row(table, table.vectors[k].copy()) == k
    eye = np.eye(5)
    table.vectors = np.vstack([eye, np.zeros((5, 5))])[:10]
    table.dim = 5
    for k in range(5):
        assert nearest_row(table, eye[k]) == k


def test_nearest_neighbor_zero_vector_falls_back():
    m = random_model(4, tgt_vocab_size=6)
    # force the regression head to emit exactly zero
    m.params["rewe_W2"][...] = 0.0
    m.params["rewe_b2"][...] = 0.0
    v = _vocab(2)
    table = random_embeddings(v, 4, seed=1)
    tokens, meta = nearest_neighbor_decode(m, [3, 4], table, v, max_decode_len=3)
    assert meta.fallback_steps  # every step fell back
    assert len(tokens) <= 3


def test_nearest_neighbor_embedding_feedback_mode_runs():
    m = random_model(5, tgt_vocab_size=6)
    v = _vocab(2)
    table = random_embeddings(v, 4, seed=2)
    tokens, _ = nearest_neighbor_decode(m, [3, 4], table, v, max_decode_len=4,
                                        feedback="embedding")
    assert isinstance(tokens, list)


@pytest.fixture(scope="module")
def trained_toy():
    src, tgt = make_toy_corpus(150, n_symbols=9, seed=11, min_len=2, max_len=5)
    cfg = toy_config(hidden_size=48, emb_dim=24, rewe_mid_dim=16, lr=0.02,
                     loss_kind="cel", lam=1.0, max_epochs=25, eval_every=600,
                     batch_size=10, patience=100, final_patience=100)
    prep = prepare_data(cfg, src, tgt, src[:15], tgt[:15])
    model = build_model(cfg, prep)
    train(model, cfg, prep.train_pairs, prep.val_pairs, prep.frozen_table)
    return cfg, prep, model, (src, tgt)


def test_greedy_reproduces_memorized_pairs(trained_toy):
    cfg, prep, model, (src, tgt) = trained_toy
    hits = 0
    for s, t in zip(src[:20], tgt[:20]):
        hyp = greedy_decode(model, prep.src_vocab.ids(s))
        got = [prep.tgt_vocab.token(i) for i in hyp.output_ids]
        hits += got == t
    assert hits >= 18


def test_translate_corpus_end_to_end(tmp_path, trained_toy):
    cfg, prep, model, (src, tgt) = trained_toy
    src_path = tmp_path / "in.txt"
    out_path = tmp_path / "out.txt"
    src_path.write_text("\n".join(" ".join(s) for s in src[:10]) + "\n\n",
                        encoding="utf-8")
    stats = translate_corpus(model, prep.src_vocab, prep.tgt_vocab,
                             src_path, out_path, beam=cfg.beam)
    lines = out_path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 11  # line count preserved, incl. the empty line
    assert stats["sentences"] == 11
    assert lines[10] == ""


def test_translate_corpus_empty_file(tmp_path):
    m = random_model(1)
    v_src, v_tgt = _vocab(2), _vocab(2)
    src_path = tmp_path / "empty.txt"
    src_path.write_text("", encoding="utf-8")
    out_path = tmp_path / "out.txt"
    stats = translate_corpus(m, v_src, v_tgt, src_path, out_path, beam=2)
    assert stats["sentences"] == 0
    assert out_path.read_text(encoding="utf-8") == ""
