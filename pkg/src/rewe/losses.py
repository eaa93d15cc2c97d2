"""Training objectives: NLL, the two regression losses, and their combination.

All losses are per-token means by default; a "sum" mode (per-sentence sums
averaged over the batch) is available for the classical formulation. Pad
positions never contribute.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node, pick
from .data import EmbeddingTable
from .errors import DataError

PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-8  # cosine denominators are clamped at this norm


@dataclass
class LossBreakdown:
    nll: float
    rewe_raw: float
    rewe_scaled: float
    total: float
    token_count: int
    total_node: Node

    def __post_init__(self):
        # total == nll + rewe_scaled holds exactly: total_node is the float64
        # sum of the same two scalars.
        pass


def _token_count(mask: np.ndarray) -> int:
    count = int(mask.sum())
    if count == 0:
        raise DataError("loss over a fully masked target: no unmasked tokens")
    return count


def _normalize(graph: Graph, total: Node, mask: np.ndarray, normalization: str) -> Node:
    if normalization == "token":
        return total * (1.0 / _token_count(mask))
    if normalization == "sum":
        _token_count(mask)
        return total * (1.0 / mask.shape[0])
    raise DataError(f"unknown loss normalization {normalization!r}")


def nll_loss(graph: Graph, probs_steps, tgt_out: np.ndarray, out_mask: np.ndarray,
             normalization: str = "token") -> Node:
    """-sum(log p_j(y_j)) over unmasked positions, normalized.

    Probabilities are clamped at 1e-12 before the log.
    """
    mask = np.asarray(out_mask, dtype=bool)
    total = None
    for t, probs in enumerate(probs_steps):
        chosen = pick(probs, tgt_out[:, t])
        logp = chosen.clamp_min(PROB_FLOOR).log()
        masked = logp * graph.constant(mask[:, t].astype(np.float64))
        total = masked.sum() if total is None else total + masked.sum()
    return _normalize(graph, -total, mask, normalization)


def mse_loss(pred: Node, target: Node) -> Node:
    """Mean over coordinates of squared differences."""
    diff = pred - target
    return (diff * diff).mean()


def cel_loss(pred: Node, target: Node) -> Node:
    """1 - cos(pred, target) with norm denominators clamped at 1e-8."""
    dot = (pred * target).sum()
    # max(sqrt(x), a) == sqrt(max(x, a^2)); clamping the squared norm keeps
    # the sqrt gradient finite at the zero vector.
    norm_p = (pred * pred).sum().clamp_min(NORM_FLOOR**2).sqrt()
    norm_t = (target * target).sum().clamp_min(NORM_FLOOR**2).sqrt()
    return 1.0 - dot / (norm_p * norm_t)


def _per_token_regression(graph: Graph, vecs: Node, target_rows: np.ndarray,
                          kind: str) -> Node:
    """Per-row loss between (B, d) predictions and constant target rows."""
    tgt = graph.constant(target_rows)
    if kind == "mse":
        diff = vecs - tgt
        return (diff * diff).mean(axis=1)
    if kind == "cel":
        dot = (vecs * tgt).sum(axis=1)
        norm_p = (vecs * vecs).sum(axis=1).clamp_min(NORM_FLOOR**2).sqrt()
        norm_t = graph.constant(
            np.sqrt(np.maximum(np.sum(target_rows * target_rows, axis=1),
                               NORM_FLOOR**2)))
        return 1.0 - dot / (norm_p * norm_t)
    raise DataError(f"unknown regression loss kind {kind!r}")


def rewe_loss(graph: Graph, rewe_steps, tgt_out: np.ndarray, out_mask: np.ndarray,
              frozen_table: EmbeddingTable, kind: str,
              normalization: str = "token") -> Node:
    """Regression loss of predicted vectors against frozen ground-truth rows."""
    mask = np.asarray(out_mask, dtype=bool)
    total = None
    for t, vecs in enumerate(rewe_steps):
        rows = frozen_table.vectors[tgt_out[:, t]]
        per = _per_token_regression(graph, vecs, rows, kind)
        masked = per * graph.constant(mask[:, t].astype(np.float64))
        total = masked.sum() if total is None else total + masked.sum()
    return _normalize(graph, total, mask, normalization)


def contrastive_a_loss(graph: Graph, probs_steps, tgt_out: np.ndarray,
                       out_mask: np.ndarray, frozen_table: EmbeddingTable,
                       kind: str, normalization: str = "token") -> Node:
    """Loss between the argmax word's frozen embedding and the target's.

    The argmax is hard, so this term is constant with respect to the model:
    gradient reaches the parameters only through the NLL part of the
    combined objective. Argmax ties break to the lowest index.
    """
    mask = np.asarray(out_mask, dtype=bool)
    count = _token_count(mask)
    table = frozen_table.vectors
    total = 0.0
    for t, probs in enumerate(probs_steps):
        pred_ids = np.argmax(probs.values, axis=1)
        pv = table[pred_ids]
        tv = table[tgt_out[:, t]]
        if kind == "mse":
            per = np.mean((pv - tv) ** 2, axis=1)
        elif kind == "cel":
            dot = np.sum(pv * tv, axis=1)
            na = np.sqrt(np.maximum(np.sum(pv * pv, axis=1), NORM_FLOOR**2))
            nb = np.sqrt(np.maximum(np.sum(tv * tv, axis=1), NORM_FLOOR**2))
            per = 1.0 - dot / (na * nb)
        else:
            raise DataError(f"unknown regression loss kind {kind!r}")
        total += float(per[mask[:, t]].sum())
    denom = count if normalization == "token" else mask.shape[0]
    return graph.constant(total / denom)


def combined_loss(nll_node: Node, rewe_node: Node | None, lam: float,
                  token_count: int) -> LossBreakdown:
    """total = nll + lambda * rewe; rewe_node None means a pure-NLL objective."""
    if lam < 0:
        raise DataError(f"lambda must be >= 0, got {lam}")
    nll = float(nll_node.values.reshape(()))
    if rewe_node is None:
        return LossBreakdown(nll, 0.0, 0.0, nll, token_count, nll_node)
    scaled = rewe_node * float(lam)
    total_node = nll_node + scaled
    return LossBreakdown(
        nll=nll,
        rewe_raw=float(rewe_node.values.reshape(())),
        rewe_scaled=float(scaled.values.reshape(())),
        total=float(total_node.values.reshape(())),
        token_count=token_count,
        total_node=total_node,
    )
