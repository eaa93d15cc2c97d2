"""Trade-off-coefficient sweep: one training run per (lambda, kind, seed).

Each point is fully isolated (its own vocabularies, embeddings and model);
failed runs are recorded with a marker and the sweep continues. Results are
written as per-seed and per-point-mean CSVs suitable for replotting the
lambda-vs-BLEU curve.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .bleu import bleu_sentences
from .config import TrainConfig
from .data import BpeModel, Vocabulary, apply_bpe, join_bpe
from .errors import ReweError
from .inference import beam_search, replace_unk
from .model import Seq2SeqModel
from .pipeline import build_model, prepare_data
from .training import train

SWEEP_HEADER = ("lambda", "kind", "seed", "bleu")
MEANS_HEADER = ("lambda", "kind", "mean_bleu", "n_seeds")
FAILURE_MARKER = "FAILED"


@dataclass
class SweepPoint:
    lam: float
    kind: str
    seed: int
    bleu: float | None          # None marks a failed run
    error: str | None = None


@dataclass
class SweepResult:
    rows: list[SweepPoint]

    def mean_rows(self):
        """(lambda, kind, mean over successful seeds, n successful)."""
        groups: dict[tuple, list[float]] = {}
        order = []
        for row in self.rows:
            key = (row.lam, row.kind)
            if key not in groups:
                groups[key] = []
                order.append(key)
            if row.bleu is not None:
                groups[key].append(row.bleu)
        out = []
        for key in sorted(order):
            scores = groups[key]
            mean = sum(scores) / len(scores) if scores else float("nan")
            out.append((key[0], key[1], mean, len(scores)))
        return out

    def write_csv(self, rows_path, means_path) -> None:
        with open(rows_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(SWEEP_HEADER)
            for r in self.rows:
                writer.writerow([r.lam, r.kind, r.seed,
                                 FAILURE_MARKER if r.bleu is None else repr(r.bleu)])
        with open(means_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(MEANS_HEADER)
            for lam, kind, mean, n in self.mean_rows():
                writer.writerow([lam, kind, repr(mean), n])


def corpus_bleu_of_model(model: Seq2SeqModel, src_vocab: Vocabulary,
                         tgt_vocab: Vocabulary, bpe: BpeModel | None,
                         val_src, val_tgt, beam: int,
                         smooth: bool = True) -> float:
    """Decode raw validation sentences and score against raw references."""
    hyps = []
    for tokens in val_src:
        pieces = apply_bpe(bpe, tokens) if bpe is not None else list(tokens)
        if not pieces:
            hyps.append([])
            continue
        hyp = beam_search(model, src_vocab.ids(pieces), beam=beam)
        words = replace_unk(hyp, pieces, tgt_vocab)
        if bpe is not None:
            words = join_bpe(words, bpe.continuation_marker)
        hyps.append(words)
    return bleu_sentences(hyps, list(val_tgt), smooth=smooth).bleu


def run_sweep_point(args) -> SweepPoint:
    """Train and score one (lambda, kind, seed) grid point."""
    (base_cfg, lam, kind, seed, train_src, train_tgt, val_src, val_tgt,
     src_emb, tgt_emb) = args
    raw = dict(base_cfg)
    raw.update({"lambda": lam, "loss_kind": kind, "seed": seed})
    try:
        cfg = TrainConfig.from_dict(raw)
        prep = prepare_data(cfg, train_src, train_tgt, val_src, val_tgt,
                            src_embeddings_path=src_emb,
                            tgt_embeddings_path=tgt_emb)
        model = build_model(cfg, prep)
        train(model, cfg, prep.train_pairs, prep.val_pairs, prep.frozen_table)
        score = corpus_bleu_of_model(model, prep.src_vocab, prep.tgt_vocab,
                                     prep.bpe, val_src, val_tgt, cfg.beam)
        return SweepPoint(lam, kind, seed, score)
    except ReweError as exc:
        return SweepPoint(lam, kind, seed, None, error=str(exc))


def sweep_lambda(base_cfg: dict, lambdas, loss_kinds, seeds,
                 train_src, train_tgt, val_src, val_tgt,
                 jobs: int = 1, progress=None) -> SweepResult:
    """Run the full grid; row order is deterministic by (lambda, kind, seed)."""
    grid = [(lam, kind, seed)
            for lam in sorted(lambdas)
            for kind in loss_kinds
            for seed in sorted(seeds)]
    work = [(base_cfg, lam, kind, seed, train_src, train_tgt, val_src, val_tgt)
            for lam, kind, seed in grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_sweep_point, work))
    else:
        rows = []
        for item in work:
            point = run_sweep_point(item)
            rows.append(point)
            if progress is not None:
                progress(point)
    rows.sort(key=lambda r: (r.lam, r.kind, r.seed))
    return SweepResult(rows)
