"""Attentional encoder-decoder with a categorical head and a regression head.

Single-layer bidirectional LSTM encoder, unidirectional LSTM decoder,
additive attention. The decoder state feeds two heads: a softmax generator
over the target vocabulary and a two-layer ReLU stack regressing the target
word's embedding. Both heads share the same state node, so their gradients
only meet upstream of it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Node


class Seq2SeqModel:
    """All trainable parameters, stored as float64 arrays in (in, out) layout."""

    def __init__(self, src_vocab_size: int, tgt_vocab_size: int,
                 hidden_size: int = 1024, emb_dim: int = 300,
                 rewe_mid_dim: int = 200, dropout: float = 0.2, seed: int = 0,
                 src_embed_init: np.ndarray | None = None,
                 tgt_embed_init: np.ndarray | None = None,
                 trainable_embeddings: bool = True):
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size
        self.hidden_size = hidden_size
        self.emb_dim = emb_dim
        self.rewe_mid_dim = rewe_mid_dim
        self.dropout_p = dropout
        self.seed = seed

        H, E, M = hidden_size, emb_dim, rewe_mid_dim
        rng = np.random.default_rng(seed)
        def u(*shape):
            return rng.uniform(-0.1, 0.1, size=shape)

        p: dict[str, np.ndarray] = {}
        p["src_embed"] = u(src_vocab_size, E)
        p["tgt_embed"] = u(tgt_vocab_size, E)
        for name, in_dim in (("enc_fwd", E + H), ("enc_bwd", E + H),
                             ("dec", E + 2 * H + H)):
            p[f"{name}_W"] = u(in_dim, 4 * H)
            b = u(4 * H)
            b[H : 2 * H] = 1.0  # forget-gate bias
            p[f"{name}_b"] = b
        p["attn_W"] = u(2 * H, H)
        p["attn_U"] = u(H, H)
        p["attn_v"] = u(H)
        p["bridge_h_W"] = u(2 * H, H)
        p["bridge_h_b"] = u(H)
        p["bridge_c_W"] = u(2 * H, H)
        p["bridge_c_b"] = u(H)
        p["gen_W"] = u(H, tgt_vocab_size)
        p["gen_b"] = u(tgt_vocab_size)
        p["rewe_W1"] = u(H, M)
        p["rewe_b1"] = u(M)
        p["rewe_W2"] = u(M, E)
        p["rewe_b2"] = u(E)
        if src_embed_init is not None:
            p["src_embed"] = np.array(src_embed_init, dtype=np.float64)
        if tgt_embed_init is not None:
            p["tgt_embed"] = np.array(tgt_embed_init, dtype=np.float64)
        self.params = p
        self.trainable = {name: True for name in p}
        if not trainable_embeddings:
            self.trainable["src_embed"] = False
            self.trainable["tgt_embed"] = False

    def bind(self, graph: Graph) -> dict[str, Node]:
        """Wrap every parameter as a leaf of `graph` (shared per graph)."""
        return {name: graph.leaf(arr) for name, arr in self.params.items()}

    def trainable_params(self) -> dict[str, np.ndarray]:
        return {n: a for n, a in self.params.items() if self.trainable[n]}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: a.copy() for n, a in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, a in snap.items():
            self.params[n][...] = a


@dataclass
class EncoderOutput:
    states: Node      # (B, Ls, 2H) bidirectional states per position
    attn_proj: Node   # (B, Ls, H) precomputed attn_W projection of states
    src_mask: np.ndarray


@dataclass
class DecoderState:
    h: Node
    c: Node


@dataclass
class DecoderStepOutput:
    state: DecoderState
    probs: Node       # (B, V)
    rewe_vec: Node    # (B, emb_dim)
    attn_weights: Node  # (B, Ls)


@dataclass
class ForwardOutput:
    probs_steps: list[Node]
    rewe_steps: list[Node]
    attn_steps: list[Node]
    bound: dict[str, Node]


def _lstm_step(W: Node, b: Node, x: Node, h: Node, c: Node, hidden: int):
    z = ad.concat([x, h], axis=1) @ W + b
    i = z[:, 0:hidden].sigmoid()
    f = z[:, hidden : 2 * hidden].sigmoid()
    g = z[:, 2 * hidden : 3 * hidden].tanh()
    o = z[:, 3 * hidden : 4 * hidden].sigmoid()
    c_new = f * c + i * g
    h_new = o * c_new.tanh()
    return h_new, c_new


def _gate(graph: Graph, mask_col: np.ndarray, new: Node, old: Node) -> Node:
    # Pass-through recurrence at pad positions so padding never leaks into
    # states at real positions.
    m = graph.constant(mask_col)
    return m * new + (1.0 - m) * old


def encode(model: Seq2SeqModel, graph: Graph, bound: dict[str, Node],
           src_ids, src_mask, train_mode: bool = False):
    """Run both encoder directions; returns (EncoderOutput, DecoderState)."""
    ids = np.asarray(src_ids, dtype=np.intp)
    mask = np.asarray(src_mask, dtype=bool)
    B, Ls = ids.shape
    H = model.hidden_size
    keep = 1.0 - model.dropout_p
    use_dropout = train_mode and model.dropout_p > 0.0

    def run_direction(order, W, b):
        h = graph.constant(np.zeros((B, H)))
        c = graph.constant(np.zeros((B, H)))
        states = [None] * Ls
        for t in order:
            emb = ad.embedding(bound["src_embed"], ids[:, t])
            if use_dropout:
                emb = ad.dropout(emb, keep)
            h_new, c_new = _lstm_step(W, b, emb, h, c, H)
            col = mask[:, t : t + 1]
            if col.all():
                h, c = h_new, c_new
            else:
                mc = col.astype(np.float64)
                h = _gate(graph, mc, h_new, h)
                c = _gate(graph, mc, c_new, c)
            states[t] = h
        return states, h

    fwd_states, fwd_final = run_direction(
        range(Ls), bound["enc_fwd_W"], bound["enc_fwd_b"])
    bwd_states, bwd_final = run_direction(
        range(Ls - 1, -1, -1), bound["enc_bwd_W"], bound["enc_bwd_b"])

    per_pos = [
        ad.concat([fwd_states[t], bwd_states[t]], axis=1).reshape((B, 1, 2 * H))
        for t in range(Ls)
    ]
    states3 = ad.concat(per_pos, axis=1) if Ls > 1 else per_pos[0]

    flat = states3.reshape((B * Ls, 2 * H))
    attn_proj = (flat @ bound["attn_W"]).reshape((B, Ls, H))

    final = ad.concat([fwd_final, bwd_final], axis=1)
    h0 = (final @ bound["bridge_h_W"] + bound["bridge_h_b"]).tanh()
    c0 = (final @ bound["bridge_c_W"] + bound["bridge_c_b"]).tanh()
    return EncoderOutput(states3, attn_proj, mask), DecoderState(h0, c0)


def attend(model: Seq2SeqModel, graph: Graph, bound: dict[str, Node],
           s_prev: Node, enc: EncoderOutput):
    """Additive attention: score_i = v . tanh(W h_i + U s_prev).

    Returns (context (B, 2H), weights (B, Ls)); masked positions get weight
    exactly zero. Broadcasting lets a (1, Ls, *) encoding serve any number
    of decoder rows, which beam search uses to batch live hypotheses.
    """
    B = s_prev.shape[0]
    H = model.hidden_size
    Ls = enc.states.shape[1]
    proj = (s_prev @ bound["attn_U"]).reshape((B, 1, H))
    act = (enc.attn_proj + proj).tanh()                      # (B, Ls, H)
    scores = (act * bound["attn_v"]).sum(axis=2)             # (B, Ls)
    mask = enc.src_mask
    if mask.shape[0] != B:
        mask = np.broadcast_to(mask, (B, Ls))
    weights = ad.softmax(scores, mask=mask)
    ctx = (weights.reshape((B, Ls, 1)) * enc.states).sum(axis=1)  # (B, 2H)
    return ctx, weights


def decode_step(model: Seq2SeqModel, graph: Graph, bound: dict[str, Node],
                state: DecoderState, y_prev_ids, enc: EncoderOutput,
                train_mode: bool = False,
                emb_override: Node | None = None) -> DecoderStepOutput:
    """One decoder step: attention, LSTM cell, both output heads.

    `emb_override` replaces the previous-token embedding lookup (used by the
    nearest-neighbor decoder's embedding-feedback mode).
    """
    keep = 1.0 - model.dropout_p
    use_dropout = train_mode and model.dropout_p > 0.0

    if emb_override is not None:
        emb = emb_override
    else:
        emb = ad.embedding(bound["tgt_embed"], np.asarray(y_prev_ids, dtype=np.intp))
    if use_dropout:
        emb = ad.dropout(emb, keep)
    ctx, weights = attend(model, graph, bound, state.h, enc)
    x = ad.concat([emb, ctx], axis=1)
    h, c = _lstm_step(bound["dec_W"], bound["dec_b"], x, state.h, state.c,
                      model.hidden_size)
    if use_dropout:
        h = ad.dropout(h, keep)
    probs = ad.softmax(h @ bound["gen_W"] + bound["gen_b"])
    mid = (h @ bound["rewe_W1"] + bound["rewe_b1"]).relu()
    rewe = mid @ bound["rewe_W2"] + bound["rewe_b2"]
    return DecoderStepOutput(DecoderState(h, c), probs, rewe, weights)


def forward_teacher_forced(model: Seq2SeqModel, graph: Graph, batch,
                           train_mode: bool = False) -> ForwardOutput:
    """Feed ground-truth previous tokens (bos-shifted) at every step."""
    bound = model.bind(graph)
    enc, state = encode(model, graph, bound, batch.src_ids, batch.src_mask,
                        train_mode=train_mode)
    probs_steps, rewe_steps, attn_steps = [], [], []
    tgt_in = batch.tgt_in
    for t in range(tgt_in.shape[1]):
        out = decode_step(model, graph, bound, state, tgt_in[:, t], enc,
                          train_mode=train_mode)
        state = out.state
        probs_steps.append(out.probs)
        rewe_steps.append(out.rewe_vec)
        attn_steps.append(out.attn_weights)
    return ForwardOutput(probs_steps, rewe_steps, attn_steps, bound)
