import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rewe.autodiff import Graph, backward
from rewe.data import EmbeddingTable, pack_batch, random_embeddings, Vocabulary
from rewe.errors import DataError
from rewe.losses import (
    cel_loss,
    combined_loss,
    contrastive_a_loss,
    mse_loss,
    nll_loss,
    rewe_loss,
)
from rewe.model import Seq2SeqModel, forward_teacher_forced


def _probs_steps(graph, rows_per_step):
    return [graph.constant(np.asarray(rows)) for rows in rows_per_step]


def test_nll_perfect_prediction_is_zero():
    g = Graph()
    probs = _probs_steps(g, [[[1.0, 0.0, 0.0]]])
    ids = np.array([[0]])
    mask = np.array([[True]])
    assert nll_loss(g, probs, ids, mask).item() == pytest.approx(0.0)


def test_nll_uniform_is_log_v():
    g = Graph()
    probs = _probs_steps(g, [[[0.25] * 4], [[0.25] * 4]])
    ids = np.array([[1, 3]])
    mask = np.array([[True, True]])
    assert nll_loss(g, probs, ids, mask).item() == pytest.approx(math.log(4))


def test_nll_two_token_hand_case():
    g = Graph()
    probs = _probs_steps(g, [[[0.5, 0.5]], [[0.25, 0.75]]])
    ids = np.array([[0, 0]])
    mask = np.array([[True, True]])
    expected = (-math.log(0.5) - math.log(0.25)) / 2
    assert nll_loss(g, probs, ids, mask).item() == pytest.approx(expected, abs=1e-12)


def test_nll_all_masked_errors():
    g = Graph()
    probs = _probs_steps(g, [[[0.5, 0.5]]])
    with pytest.raises(DataError):
        nll_loss(g, probs, np.array([[0]]), np.array([[False]]))


def test_mse_identity_and_unit_offset():
    g = Graph()
    a = g.leaf([1.0, 1.0])
    b = g.leaf([0.0, 0.0])
    assert mse_loss(a, a).item() == 0.0
    assert mse_loss(a, b).item() == pytest.approx(1.0)


def test_mse_random_matches_direct():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=7), rng.normal(size=7)
    g = Graph()
    got = mse_loss(g.leaf(x), g.leaf(y)).item()
    assert got == pytest.approx(np.mean((x - y) ** 2), abs=1e-15)


def test_cel_identity_orthogonal_opposite():
    g = Graph()
    x = g.leaf([3.0, 4.0])
    assert cel_loss(x, x).item() == pytest.approx(0.0, abs=1e-12)
    e1, e2 = g.leaf([1.0, 0.0]), g.leaf([0.0, 1.0])
    assert cel_loss(e1, e2).item() == pytest.approx(1.0)
    y = g.leaf([-3.0, -4.0])
    assert cel_loss(x, y).item() == pytest.approx(2.0, abs=1e-12)


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_cel_range_property(seed):
    rng = np.random.default_rng(seed)
    g = Graph()
    x = g.leaf(rng.normal(scale=rng.uniform(0.01, 10), size=6))
    y = g.leaf(rng.normal(scale=rng.uniform(0.01, 10), size=6))
    val = cel_loss(x, y).item()
    assert 0.0 <= val <= 2.0


def test_cel_zero_vector_guard():
    g = Graph()
    z = g.leaf([0.0, 0.0])
    x = g.leaf([1.0, 2.0])
    val = cel_loss(z, x)
    assert np.isfinite(val.item())
    backward(val)
    assert np.all(np.isfinite(z.grad)) and np.all(np.isfinite(x.grad))


def _frozen(dim=5, n=8, seed=2):
    vocab = Vocabulary([f"t{i}" for i in range(n - 4)], 100)
    return random_embeddings(vocab, dim, seed=seed)


@pytest.mark.parametrize("kind", ["mse", "cel"])
def test_rewe_loss_zero_at_frozen_rows(kind):
    table = _frozen()
    g = Graph()
    ids = np.array([[4, 6], [5, 7]])
    mask = np.ones((2, 2), dtype=bool)
    steps = [g.leaf(table.vectors[ids[:, t]]) for t in range(2)]
    val = rewe_loss(g, steps, ids, mask, table, kind).item()
    assert val == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["mse", "cel"])
def test_rewe_loss_single_token_equals_vector_op(kind):
    table = _frozen()
    rng = np.random.default_rng(8)
    pred = rng.normal(size=5)
    ids = np.array([[6]])
    mask = np.array([[True]])
    g = Graph()
    batched = rewe_loss(g, [g.leaf(pred[None, :])], ids, mask, table, kind).item()
    g2 = Graph()
    op = mse_loss if kind == "mse" else cel_loss
    single = op(g2.leaf(pred), g2.leaf(table.vectors[6])).item()
    assert batched == pytest.approx(single, abs=1e-15)


def test_rewe_loss_three_token_cel_mean_of_oracle():
    table = _frozen()
    rng = np.random.default_rng(3)
    vecs = rng.normal(size=(3, 5))
    ids = np.array([[4, 5, 6]])
    mask = np.ones((1, 3), dtype=bool)
    g = Graph()
    steps = [g.leaf(vecs[t][None, :]) for t in range(3)]
    got = rewe_loss(g, steps, ids, mask, table, "cel").item()

    def one_minus_cos(a, b):
        na = max(np.linalg.norm(a), 1e-8)
        nb = max(np.linalg.norm(b), 1e-8)
        return 1.0 - float(a @ b) / (na * nb)

    expected = np.mean([one_minus_cos(vecs[t], table.vectors[ids[0, t]])
                        for t in range(3)])
    assert got == pytest.approx(expected, abs=1e-12)


def test_combined_loss_arithmetic():
    g = Graph()
    nll = g.constant(2.0)
    reg = g.constant(0.1)
    bd = combined_loss(nll, reg, 20.0, token_count=3)
    assert bd.total == pytest.approx(4.0)
    assert bd.total == bd.nll + bd.rewe_scaled  # exact same-precision identity

    bd0 = combined_loss(g.constant(1.5), g.constant(0.5), 0.2, token_count=1)
    assert bd0.total == pytest.approx(1.6)


def test_combined_loss_lambda_zero_recovers_nll():
    g = Graph()
    nll = g.constant(1.25)
    bd = combined_loss(nll, g.constant(9.0), 0.0, token_count=1)
    assert bd.total == 1.25
    bd_none = combined_loss(nll, None, 0.0, token_count=1)
    assert bd_none.total == 1.25 and bd_none.total_node is nll


def test_combined_loss_negative_lambda_rejected():
    g = Graph()
    with pytest.raises(DataError):
        combined_loss(g.constant(1.0), g.constant(1.0), -0.5, token_count=1)


def test_contrastive_a_zero_when_argmax_hits_target():
    table = _frozen()
    g = Graph()
    probs = _probs_steps(g, [[[0.1, 0.1, 0.1, 0.1, 0.4, 0.1, 0.05, 0.05]]])
    ids = np.array([[4]])
    mask = np.array([[True]])
    val = contrastive_a_loss(g, probs, ids, mask, table, "cel").item()
    assert val == pytest.approx(0.0, abs=1e-12)


def test_contrastive_a_single_token_definition():
    table = _frozen()
    g = Graph()
    row = [0.0] * 8
    row[5] = 1.0
    probs = _probs_steps(g, [[row]])
    ids = np.array([[6]])
    mask = np.array([[True]])
    got = contrastive_a_loss(g, probs, ids, mask, table, "cel").item()
    a, b = table.vectors[5], table.vectors[6]
    expected = 1.0 - (a @ b) / (max(np.linalg.norm(a), 1e-8) * max(np.linalg.norm(b), 1e-8))
    assert got == pytest.approx(expected, abs=1e-12)


def test_contrastive_a_two_token_mean():
    table = _frozen()
    g = Graph()
    r1 = [0.0] * 8; r1[4] = 1.0
    r2 = [0.0] * 8; r2[7] = 1.0
    probs = _probs_steps(g, [[r1], [r2]])
    ids = np.array([[5, 6]])
    mask = np.array([[True, True]])
    got = contrastive_a_loss(g, probs, ids, mask, table, "mse").item()
    expected = np.mean([np.mean((table.vectors[4] - table.vectors[5]) ** 2),
                        np.mean((table.vectors[7] - table.vectors[6]) ** 2)])
    assert got == pytest.approx(expected, abs=1e-12)


def test_contrastive_a_contributes_no_gradient():
    table = _frozen()
    g = Graph()
    logits = g.leaf(np.random.default_rng(1).normal(size=(1, 8)))
    from rewe.autodiff import softmax
    probs = softmax(logits)
    ids = np.array([[5]])
    mask = np.array([[True]])
    val = contrastive_a_loss(g, [probs], ids, mask, table, "cel")
    backward(val)
    assert np.array_equal(logits.grad, np.zeros_like(logits.values))


def test_masking_invariance_appending_pads():
    # appending pad steps (masked out) must not change any loss value
    table = _frozen()
    rng = np.random.default_rng(12)
    p1 = rng.dirichlet(np.ones(8), size=1)
    ids = np.array([[5]])
    g = Graph()
    base_nll = nll_loss(g, _probs_steps(g, [p1]), ids, np.array([[True]])).item()
    base_rewe = rewe_loss(g, [g.leaf(rng.normal(size=(1, 5)))], ids,
                          np.array([[True]]), table, "cel").item()

    g2 = Graph()
    ids2 = np.array([[5, 0]])
    mask2 = np.array([[True, False]])
    padded_probs = _probs_steps(g2, [p1, rng.dirichlet(np.ones(8), size=1)])
    got_nll = nll_loss(g2, padded_probs, ids2, mask2).item()
    vec_steps = [g2.leaf(rng.normal(size=(1, 5))) for _ in range(2)]
    g3 = Graph()
    vec0 = g3.leaf(vec_steps[0].values)
    base_rewe = rewe_loss(g3, [vec0], ids, np.array([[True]]), table, "cel").item()
    got_rewe = rewe_loss(g2, vec_steps, ids2, mask2, table, "cel").item()
    assert got_nll == base_nll
    assert got_rewe == base_rewe


def _grads_for_lambda(lam, kind="cel"):
    m = Seq2SeqModel(src_vocab_size=9, tgt_vocab_size=11, hidden_size=8,
                     emb_dim=6, rewe_mid_dim=4, dropout=0.0, seed=21)
    table = _frozen(dim=6, n=11, seed=5)
    batch = pack_batch([([4, 5], [6, 7])])
    g = Graph(seed=0)
    fwd = forward_teacher_forced(m, g, batch, train_mode=True)
    nll = nll_loss(g, fwd.probs_steps, batch.tgt_out, batch.out_mask)
    reg = rewe_loss(g, fwd.rewe_steps, batch.tgt_out, batch.out_mask, table, kind)
    bd = combined_loss(nll, reg, lam, int(batch.out_mask.sum()))
    backward(bd.total_node)
    return {n: fwd.bound[n].grad.copy() for n in ("rewe_W1", "rewe_W2", "gen_W")}


def test_gradient_scales_linearly_in_lambda():
    g1 = _grads_for_lambda(1.0)
    g4 = _grads_for_lambda(4.0)
    assert np.allclose(g4["rewe_W1"], 4.0 * g1["rewe_W1"], atol=1e-12)
    assert np.allclose(g4["rewe_W2"], 4.0 * g1["rewe_W2"], atol=1e-12)
    # generator gradient does not depend on lambda: heads only share s_j
    assert np.allclose(g4["gen_W"], g1["gen_W"], atol=1e-12)
