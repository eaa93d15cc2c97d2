"""Decoding: beam search, greedy, unk replacement, nearest-neighbor mode.

The regression head is never consulted by beam or greedy decoding; it only
drives the nearest-neighbor mode. Beam scores are raw summed log
probabilities with no length normalization, so hypothesis scores only
decrease and search can stop as soon as the best finished hypothesis beats
every live one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph
from .data import (
    BOS_ID,
    EOS_ID,
    UNK_ID,
    BpeModel,
    EmbeddingTable,
    Vocabulary,
    apply_bpe,
    join_bpe,
    tokenize,
)
from .errors import DataError
from .model import DecoderState, Seq2SeqModel, decode_step, encode


@dataclass
class Hypothesis:
    """A (partial) translation: generated ids, score, state, attention trail."""

    token_ids: list[int]
    log_prob: float
    state_h: np.ndarray
    state_c: np.ndarray
    attn_argmax: list[int] = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return bool(self.token_ids) and self.token_ids[-1] == EOS_ID

    @property
    def output_ids(self) -> list[int]:
        return self.token_ids[:-1] if self.finished else self.token_ids


def _prepare(model: Seq2SeqModel, graph: Graph, src_ids):
    src = np.asarray([list(src_ids)], dtype=np.intp)
    mask = np.ones_like(src, dtype=bool)
    bound = model.bind(graph)
    enc, state = encode(model, graph, bound, src, mask, train_mode=False)
    return bound, enc, state


def default_decode_cap(src_len: int) -> int:
    return 2 * src_len + 5


def beam_search(model: Seq2SeqModel, src_ids, beam: int = 5,
                max_decode_len: int | None = None) -> Hypothesis:
    """Return the best finished hypothesis (best live one if none finish)."""
    src_ids = list(src_ids)
    if not src_ids:
        raise DataError("cannot decode an empty source sentence")
    if beam < 1:
        raise DataError(f"beam must be >= 1, got {beam}")
    cap = max_decode_len if max_decode_len is not None else default_decode_cap(len(src_ids))

    graph = Graph(seed=0)
    bound, enc, st0 = _prepare(model, graph, src_ids)
    live = [Hypothesis([], 0.0, st0.h.values[0].copy(), st0.c.values[0].copy())]
    finished: list[Hypothesis] = []

    for _ in range(cap):
        n = len(live)
        state = DecoderState(graph.leaf(np.stack([h.state_h for h in live])),
                             graph.leaf(np.stack([h.state_c for h in live])))
        y_prev = [h.token_ids[-1] if h.token_ids else BOS_ID for h in live]
        out = decode_step(model, graph, bound, state, y_prev, enc, train_mode=False)
        logp = np.log(out.probs.values)                   # (n, V)
        attn_am = np.argmax(out.attn_weights.values, axis=1)

        k = min(beam, logp.shape[1])
        candidates = []
        for i in range(n):
            # stable sort on -logp: ties resolve to the lowest token id
            top = np.argsort(-logp[i], kind="stable")[:k]
            for tok in top:
                candidates.append((live[i].log_prob + logp[i, tok], i, int(tok)))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

        new_live = []
        for score, i, tok in candidates[:beam]:
            hyp = Hypothesis(
                token_ids=live[i].token_ids + [tok],
                log_prob=float(score),
                state_h=out.state.h.values[i].copy(),
                state_c=out.state.c.values[i].copy(),
                attn_argmax=live[i].attn_argmax + [int(attn_am[i])],
            )
            (finished if tok == EOS_ID else new_live).append(hyp)
        live = new_live
        if not live:
            break
        if finished and max(f.log_prob for f in finished) >= live[0].log_prob:
            break  # scores only decrease, so no live hypothesis can win

    pool = finished if finished else live
    return max(pool, key=lambda h: h.log_prob)


def greedy_decode(model: Seq2SeqModel, src_ids,
                  max_decode_len: int | None = None) -> Hypothesis:
    """Argmax decoding (ties to the lowest id); stops at eos or the cap."""
    src_ids = list(src_ids)
    if not src_ids:
        raise DataError("cannot decode an empty source sentence")
    cap = max_decode_len if max_decode_len is not None else default_decode_cap(len(src_ids))

    graph = Graph(seed=0)
    bound, enc, state = _prepare(model, graph, src_ids)
    hyp = Hypothesis([], 0.0, state.h.values[0].copy(), state.c.values[0].copy())
    for _ in range(cap):
        st = DecoderState(graph.leaf(hyp.state_h[None, :]),
                          graph.leaf(hyp.state_c[None, :]))
        y_prev = [hyp.token_ids[-1] if hyp.token_ids else BOS_ID]
        out = decode_step(model, graph, bound, st, y_prev, enc, train_mode=False)
        probs = out.probs.values[0]
        tok = int(np.argmax(probs))
        hyp.token_ids.append(tok)
        hyp.log_prob += float(np.log(probs[tok]))
        hyp.attn_argmax.append(int(np.argmax(out.attn_weights.values[0])))
        hyp.state_h = out.state.h.values[0].copy()
        hyp.state_c = out.state.c.values[0].copy()
        if tok == EOS_ID:
            break
    return hyp


def replace_unk(hyp: Hypothesis, src_tokens, tgt_vocab: Vocabulary) -> list[str]:
    """Render output tokens, mapping each unk to the most-attended source token."""
    out_ids = hyp.output_ids
    if len(hyp.attn_argmax) < len(out_ids):
        raise DataError("hypothesis has no attention record for unk replacement")
    tokens = []
    for step, tok_id in enumerate(out_ids):
        if tok_id == UNK_ID:
            pos = hyp.attn_argmax[step]
            if pos >= len(src_tokens):
                raise DataError(f"attention argmax {pos} outside the source sentence")
            tokens.append(src_tokens[pos])
        else:
            tokens.append(tgt_vocab.token(tok_id))
    return tokens


@dataclass
class NearestNeighborMeta:
    fallback_steps: list[int] = field(default_factory=list)


def nearest_row(table: EmbeddingTable, vec: np.ndarray) -> int:
    """Row id maximizing cosine similarity with vec; ties to the lowest id."""
    norms = np.sqrt(np.maximum(np.sum(table.vectors ** 2, axis=1), 1e-16))
    vnorm = max(float(np.sqrt(np.sum(vec * vec))), 1e-8)
    sims = (table.vectors @ vec) / (np.maximum(norms, 1e-8) * vnorm)
    return int(np.argmax(sims))


def nearest_neighbor_decode(model: Seq2SeqModel, src_ids,
                            frozen_table: EmbeddingTable, tgt_vocab: Vocabulary,
                            max_decode_len: int | None = None,
                            feedback: str = "token"):
    """Decode by nearest-cosine lookup of the regressed embedding.

    A step whose predicted embedding is exactly zero falls back to the
    generator argmax and is flagged in the returned metadata. `feedback`
    selects whether the chosen token's embedding ("token") or the raw
    regressed vector ("embedding") feeds the next step.
    """
    src_ids = list(src_ids)
    if not src_ids:
        raise DataError("cannot decode an empty source sentence")
    if feedback not in ("token", "embedding"):
        raise DataError(f"feedback must be 'token' or 'embedding', got {feedback!r}")
    cap = max_decode_len if max_decode_len is not None else default_decode_cap(len(src_ids))

    graph = Graph(seed=0)
    bound, enc, state = _prepare(model, graph, src_ids)
    meta = NearestNeighborMeta()
    ids: list[int] = []
    prev_vec: np.ndarray | None = None
    for step in range(cap):
        y_prev = [ids[-1] if ids else BOS_ID]
        emb_override = None
        if feedback == "embedding" and prev_vec is not None:
            emb_override = graph.leaf(prev_vec[None, :])
        out = decode_step(model, graph, bound, state, y_prev, enc,
                          train_mode=False, emb_override=emb_override)
        state = DecoderState(graph.leaf(out.state.h.values),
                             graph.leaf(out.state.c.values))
        vec = out.rewe_vec.values[0]
        if float(np.sqrt(np.sum(vec * vec))) == 0.0:
            tok = int(np.argmax(out.probs.values[0]))
            meta.fallback_steps.append(step)
        else:
            tok = nearest_row(frozen_table, vec)
        ids.append(tok)
        prev_vec = vec
        if tok == EOS_ID:
            break
    out_ids = ids[:-1] if ids and ids[-1] == EOS_ID else ids
    return [tgt_vocab.token(i) for i in out_ids], meta


def translate_corpus(model: Seq2SeqModel, src_vocab: Vocabulary,
                     tgt_vocab: Vocabulary, src_path, out_path, beam: int = 5,
                     bpe: BpeModel | None = None, stats_stream=None) -> dict:
    """Translate a file line by line; returns {"sentences", "mean_length"}.

    Pipeline per line: tokenize, optional BPE, beam search, unk replacement,
    optional BPE marker join. Empty lines pass through empty.
    """
    with open(src_path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    n, total_len = 0, 0
    with open(out_path, "w", encoding="utf-8") as out:
        for num, line in enumerate(lines, start=1):
            try:
                tokens = tokenize(line)
                if bpe is not None:
                    tokens = apply_bpe(bpe, tokens)
                if not tokens:
                    out.write("\n")
                    n += 1
                    continue
                hyp = beam_search(model, src_vocab.ids(tokens), beam=beam)
                words = replace_unk(hyp, tokens, tgt_vocab)
                if bpe is not None:
                    words = join_bpe(words, bpe.continuation_marker)
                out.write(" ".join(words) + "\n")
                n += 1
                total_len += len(words)
            except DataError as exc:
                raise DataError(f"{src_path}: line {num}: {exc}") from None
    stats = {"sentences": n, "mean_length": (total_len / n) if n else 0.0}
    if stats_stream is not None:
        print(json.dumps(stats), file=stats_stream)
    return stats
