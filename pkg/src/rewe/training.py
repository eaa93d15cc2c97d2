"""Adam optimization with halving-and-restart annealing, validation, logging.

The learning rate halves after `patience` consecutive validation evaluations
without perplexity improvement, up to `max_halvings` times; after the final
halving, `final_patience` consecutive non-improvements stop the run. Each
halving optionally restarts the optimizer by resetting its moments.
"""
from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .autodiff import Graph, backward
from .config import TrainConfig
from .data import EmbeddingTable, make_batches
from .errors import DataError, NumericError
from .losses import (
    PROB_FLOOR,
    combined_loss,
    contrastive_a_loss,
    nll_loss,
    rewe_loss,
)
from .model import Seq2SeqModel, forward_teacher_forced
from .seeding import derive_seed

TRAIN_LOG_HEADER = ("sentences", "nll", "rewe_raw", "rewe_scaled", "total",
                    "val_ppl", "lr")


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    lr_base: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict[str, np.ndarray], lr_base: float) -> "AdamState":
        return cls(step=0,
                   m={n: np.zeros_like(a) for n, a in params.items()},
                   v={n: np.zeros_like(a) for n, a in params.items()},
                   lr_base=lr_base)

    def reset(self) -> None:
        """Optimizer restart: drop moments and bias-correction progress."""
        self.step = 0
        for arr in self.m.values():
            arr[...] = 0.0
        for arr in self.v.values():
            arr[...] = 0.0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr_effective: float) -> None:
    """Standard bias-corrected Adam update; zeroes gradients afterwards."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr_effective * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        g[...] = 0.0


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place to a global norm cap; returns the raw norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if max_norm and max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def validate(model: Seq2SeqModel, val_batches) -> float:
    """Perplexity = exp(per-token mean NLL) with dropout disabled."""
    if not val_batches:
        raise DataError("validation set is empty")
    total, count = 0.0, 0
    for batch in val_batches:
        graph = Graph(seed=0)
        fwd = forward_teacher_forced(model, graph, batch, train_mode=False)
        tgt_out, mask = batch.tgt_out, batch.out_mask
        for t, probs in enumerate(fwd.probs_steps):
            p = probs.values[np.arange(batch.size), tgt_out[:, t]]
            p = np.maximum(p, PROB_FLOOR)
            total += float(-np.log(p)[mask[:, t]].sum())
            count += int(mask[:, t].sum())
    if count == 0:
        raise DataError("validation set has no unmasked target tokens")
    return float(np.exp(total / count))


@dataclass
class AnnealState:
    halvings: int = 0
    evals_without_improvement: int = 0
    best_val_perplexity: float = float("inf")
    post_final_halving_strikes: int = 0
    max_halvings: int = 5
    patience: int = 3
    final_patience: int = 20

    def lr_effective(self, lr_base: float) -> float:
        return lr_base / (2 ** self.halvings)


def anneal_update(state: AnnealState, new_perplexity: float) -> str:
    """Returns "continue", "halve" or "stop" for one validation result."""
    if new_perplexity < state.best_val_perplexity:
        state.best_val_perplexity = new_perplexity
        state.evals_without_improvement = 0
        state.post_final_halving_strikes = 0
        return "continue"
    if state.halvings < state.max_halvings:
        state.evals_without_improvement += 1
        if state.evals_without_improvement >= state.patience:
            state.halvings += 1
            state.evals_without_improvement = 0
            return "halve"
        return "continue"
    state.post_final_halving_strikes += 1
    if state.post_final_halving_strikes >= state.final_patience:
        return "stop"
    return "continue"


@dataclass
class TrainRecord:
    sentences: int
    nll: float
    rewe_raw: float
    rewe_scaled: float
    total: float
    val_ppl: float | None
    lr: float
    wall_time: float


class TrainLog:
    """Append-only interval records; the CSV matches the documented header."""

    def __init__(self):
        self.records: list[TrainRecord] = []

    def append(self, record: TrainRecord) -> None:
        if self.records and record.sentences < self.records[-1].sentences:
            raise DataError("train log sentences must be non-decreasing")
        self.records.append(record)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAIN_LOG_HEADER)
            for r in self.records:
                writer.writerow([
                    r.sentences,
                    repr(r.nll), repr(r.rewe_raw), repr(r.rewe_scaled),
                    repr(r.total),
                    "" if r.val_ppl is None else repr(r.val_ppl),
                    repr(r.lr),
                ])


@dataclass
class TrainResult:
    best_params: dict[str, np.ndarray]
    best_ppl: float
    log: TrainLog
    stop_reason: str
    sentences_seen: int
    checkpoint_path: str | None = None


def _batch_objective(model: Seq2SeqModel, cfg: TrainConfig, graph: Graph, batch,
                     frozen_table: EmbeddingTable | None):
    fwd = forward_teacher_forced(model, graph, batch, train_mode=True)
    tgt_out, mask = batch.tgt_out, batch.out_mask
    nll = nll_loss(graph, fwd.probs_steps, tgt_out, mask, cfg.loss_normalization)
    count = int(mask.sum())
    if cfg.loss_kind == "none":
        reg = None
    elif cfg.loss_kind == "contrastive_a":
        reg = contrastive_a_loss(graph, fwd.probs_steps, tgt_out, mask,
                                 frozen_table, "cel", cfg.loss_normalization)
    else:
        reg = rewe_loss(graph, fwd.rewe_steps, tgt_out, mask, frozen_table,
                        cfg.loss_kind, cfg.loss_normalization)
    return fwd, combined_loss(nll, reg, cfg.lam, count)


def train(model: Seq2SeqModel, cfg: TrainConfig, train_pairs, val_pairs,
          frozen_table: EmbeddingTable | None = None, src_vocab=None,
          tgt_vocab=None, out_dir=None, bpe=None, on_batch=None,
          quiet=True) -> TrainResult:
    """Run the full training loop; the model ends up at its best checkpoint.

    Per batch: teacher-forced forward, combined loss, backward, clipped Adam
    step. Every `eval_every` sentences the model is validated, the interval's
    mean losses are logged, and the annealer may halve the learning rate
    (optionally restarting the optimizer) or stop the run. When `out_dir` is
    given, the best checkpoint and the loss-curve CSV are written there.
    """
    if cfg.loss_kind != "none" and frozen_table is None:
        raise DataError(f"loss_kind {cfg.loss_kind!r} requires a frozen embedding table")
    if out_dir is not None and (src_vocab is None or tgt_vocab is None):
        raise DataError("writing checkpoints requires both vocabularies")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    val_batches = make_batches(val_pairs, cfg.batch_size, cfg.max_len,
                               seed=derive_seed(cfg.seed, "val"))
    params = model.trainable_params()
    adam = AdamState.init(params, cfg.lr)
    anneal = AnnealState(max_halvings=cfg.max_halvings, patience=cfg.patience,
                         final_patience=cfg.final_patience)
    log = TrainLog()
    t0 = time.monotonic()

    best_ppl = float("inf")
    best_params = model.snapshot()
    ckpt_path = os.path.join(out_dir, "checkpoint.npz") if out_dir else None
    sentences_seen = 0
    next_eval = cfg.eval_every
    acc = {"nll": 0.0, "rewe": 0.0, "tokens": 0}
    stop_reason = "epochs"
    global_step = 0

    def flush_interval(val_ppl):
        tokens = max(acc["tokens"], 1)
        mean_nll = acc["nll"] / tokens
        mean_rewe = acc["rewe"] / tokens
        lam = cfg.lam if cfg.loss_kind != "none" else 0.0
        scaled = lam * mean_rewe
        log.append(TrainRecord(
            sentences=sentences_seen, nll=mean_nll, rewe_raw=mean_rewe,
            rewe_scaled=scaled, total=mean_nll + scaled, val_ppl=val_ppl,
            lr=anneal.lr_effective(cfg.lr), wall_time=time.monotonic() - t0))
        acc["nll"] = acc["rewe"] = 0.0
        acc["tokens"] = 0

    def save_best():
        if ckpt_path is not None:
            model_snapshot = model.snapshot()
            model.restore(best_params)
            ckpt.save_checkpoint(ckpt_path, model, src_vocab, tgt_vocab,
                                 frozen_table or _zero_table(model), cfg,
                                 extra={"best_val_ppl": best_ppl}, bpe=bpe)
            model.restore(model_snapshot)

    stopping = False
    for epoch in range(cfg.max_epochs):
        if stopping:
            break
        batches = make_batches(train_pairs, cfg.batch_size, cfg.max_len,
                               seed=derive_seed(cfg.seed, epoch))
        for batch_idx, batch in enumerate(batches):
            graph = Graph(seed=derive_seed(cfg.seed, epoch, batch_idx))
            fwd, bd = _batch_objective(model, cfg, graph, batch, frozen_table)
            if not np.isfinite(bd.total):
                model.restore(best_params)
                raise NumericError(
                    f"non-finite training loss at step {global_step}; "
                    "best checkpoint retained")
            backward(bd.total_node)
            grads = {name: fwd.bound[name].grad for name in params}
            clip_gradients(grads, cfg.clip_norm)
            adam_step(params, grads, adam, anneal.lr_effective(cfg.lr))
            global_step += 1
            sentences_seen += batch.size
            # interval means are per-token regardless of training normalization:
            # in sum mode, value * batch_size is the token-sum of the batch.
            weight = bd.token_count if cfg.loss_normalization == "token" else batch.size
            acc["nll"] += bd.nll * weight
            acc["rewe"] += bd.rewe_raw * weight
            acc["tokens"] += bd.token_count
            if on_batch is not None:
                on_batch(global_step, model)

            if sentences_seen >= next_eval:
                ppl = validate(model, val_batches)
                flush_interval(ppl)
                if not quiet:
                    print(f"[train] sentences={sentences_seen} val_ppl={ppl:.4f} "
                          f"lr={anneal.lr_effective(cfg.lr):.6g}")
                if ppl < best_ppl:
                    best_ppl = ppl
                    best_params = model.snapshot()
                    save_best()
                decision = anneal_update(anneal, ppl)
                if decision == "halve" and cfg.restart_on_halve:
                    adam.reset()
                if decision == "stop":
                    stop_reason = "anneal"
                    stopping = True
                    break
                next_eval += cfg.eval_every

    if acc["tokens"] > 0:
        ppl = validate(model, val_batches)
        flush_interval(ppl)
        if ppl < best_ppl:
            best_ppl = ppl
            best_params = model.snapshot()
            save_best()

    if not np.isfinite(best_ppl):
        # never validated (budget smaller than eval_every and no leftovers)
        best_ppl = validate(model, val_batches)
        best_params = model.snapshot()
        save_best()

    model.restore(best_params)
    if out_dir is not None:
        log.to_csv(os.path.join(out_dir, "train_log.csv"))
    return TrainResult(best_params=best_params, best_ppl=best_ppl, log=log,
                       stop_reason=stop_reason, sentences_seen=sentences_seen,
                       checkpoint_path=ckpt_path)


def _zero_table(model: Seq2SeqModel) -> EmbeddingTable:
    # Placeholder frozen table for pure-NLL checkpoints.
    return EmbeddingTable(dim=model.emb_dim,
                          vectors=np.zeros((model.tgt_vocab_size, model.emb_dim)),
                          trainable=False)
