"""Command-line surface for the full pipeline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Report-producing commands (train, sweep) render matplotlib figures next to
their CSV outputs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .bleu import bleu_corpus
from .checkpoint import load_checkpoint, save_arrays
from .config import TrainConfig
from .data import (
    BpeModel,
    Vocabulary,
    apply_bpe,
    build_vocab,
    learn_bpe,
    load_embeddings,
    make_batches,
    read_tokenized,
)
from .errors import DataError, NumericError, UsageError
from .gradcheck import run_gradcheck
from .inference import translate_corpus
from .pipeline import build_model, prepare_data
from .plots import plot_loss_curves, plot_sweep_curve
from .seeding import derive_seed
from .sweep import sweep_lambda
from .training import train, validate


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_corpora(paths):
    sentences = []
    for path in paths:
        sentences.extend(read_tokenized(path))
    return sentences


def cmd_learn_bpe(args) -> int:
    corpus = _read_corpora(args.corpus)
    model = learn_bpe(corpus, args.merges)
    model.save(args.out)
    print(json.dumps({"merges_learned": model.num_merges,
                      "merges_requested": args.merges, "out": args.out}))
    return 0


def cmd_apply_bpe(args) -> int:
    model = BpeModel.load(args.model)
    sentences = read_tokenized(args.input)
    with open(args.output, "w", encoding="utf-8") as fh:
        for sent in sentences:
            fh.write(" ".join(apply_bpe(model, sent)) + "\n")
    return 0


def cmd_build_vocab(args) -> int:
    vocab = build_vocab(_read_corpora(args.corpus), args.cap)
    vocab.save(args.out)
    print(json.dumps({"size": len(vocab), "cap": args.cap, "out": args.out}))
    return 0


def cmd_load_embeddings(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    table, stats = load_embeddings(args.embeddings, vocab, args.dim, args.seed)
    if args.out:
        save_arrays(args.out, {"vectors": table.vectors},
                    {"dim": args.dim, "vocab_digest": vocab.digest()})
    print(json.dumps({"found": stats.found, "missing": stats.missing,
                      "coverage": round(stats.coverage, 6)}))
    return 0


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config)
    if getattr(args, "seed", None) is not None:
        raw = cfg.to_dict()
        raw["seed"] = args.seed
        cfg = TrainConfig.from_dict(raw)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_src = read_tokenized(args.train_src)
    train_tgt = read_tokenized(args.train_tgt)
    val_src = read_tokenized(args.val_src)
    val_tgt = read_tokenized(args.val_tgt)
    if len(train_src) != len(train_tgt):
        raise DataError(f"train line count mismatch: {len(train_src)} vs {len(train_tgt)}")
    if len(val_src) != len(val_tgt):
        raise DataError(f"val line count mismatch: {len(val_src)} vs {len(val_tgt)}")

    prep = prepare_data(cfg, train_src, train_tgt, val_src, val_tgt,
                        src_embeddings_path=args.src_embeddings,
                        tgt_embeddings_path=args.tgt_embeddings)
    os.makedirs(args.outdir, exist_ok=True)
    prep.src_vocab.save(os.path.join(args.outdir, "src_vocab.txt"))
    prep.tgt_vocab.save(os.path.join(args.outdir, "tgt_vocab.txt"))
    if prep.bpe is not None:
        prep.bpe.save(os.path.join(args.outdir, "bpe.codes"))

    model = build_model(cfg, prep)
    result = train(model, cfg, prep.train_pairs, prep.val_pairs,
                   prep.frozen_table, src_vocab=prep.src_vocab,
                   tgt_vocab=prep.tgt_vocab, out_dir=args.outdir,
                   bpe=prep.bpe, quiet=args.quiet)
    if result.log.records:
        plot_loss_curves(result.log.records,
                         os.path.join(args.outdir, "loss_curves.png"))
    print(json.dumps({
        "best_val_ppl": result.best_ppl,
        "sentences_seen": result.sentences_seen,
        "stop_reason": result.stop_reason,
        "checkpoint": result.checkpoint_path,
        "coverage": prep.coverage,
    }))
    return 0


def cmd_translate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    beam = args.beam if args.beam is not None else ckpt.config.beam
    translate_corpus(ckpt.model, ckpt.src_vocab, ckpt.tgt_vocab, args.input,
                     args.output, beam=beam, bpe=ckpt.bpe,
                     stats_stream=sys.stderr)
    return 0


def cmd_bleu(args) -> int:
    report = bleu_corpus(args.hyp, args.ref, smooth=args.smooth)
    print(f"{report.bleu:.2f}")
    print(json.dumps({
        "bleu": report.bleu,
        "precisions": report.precisions,
        "brevity_penalty": report.brevity_penalty,
        "hyp_len": report.hyp_len,
        "ref_len": report.ref_len,
    }), file=sys.stderr)
    return 0


def cmd_ppl(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    src = read_tokenized(args.src)
    tgt = read_tokenized(args.tgt)
    if len(src) != len(tgt):
        raise DataError(f"line count mismatch: {len(src)} vs {len(tgt)}")
    if ckpt.bpe is not None:
        src = [apply_bpe(ckpt.bpe, s) for s in src]
        tgt = [apply_bpe(ckpt.bpe, t) for t in tgt]
    pairs = [(ckpt.src_vocab.ids(s), ckpt.tgt_vocab.ids(t))
             for s, t in zip(src, tgt)]
    batches = make_batches(pairs, ckpt.config.batch_size, ckpt.config.max_len,
                           seed=derive_seed(ckpt.config.seed, "val"))
    print(f"{validate(ckpt.model, batches):.6f}")
    return 0


def _parse_floats(text):
    try:
        return [float(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise UsageError(f"expected a comma-separated float list, got {text!r}") from None


def _parse_ints(text):
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise UsageError(f"expected a comma-separated int list, got {text!r}") from None


def cmd_sweep(args) -> int:
    cfg = TrainConfig.from_json(args.config)
    lambdas = _parse_floats(args.lambdas)
    kinds = [k for k in args.kinds.split(",") if k]
    seeds = _parse_ints(args.seeds)
    if not lambdas or not kinds or not seeds:
        raise UsageError("sweep needs non-empty --lambdas, --kinds and --seeds")

    train_src = read_tokenized(args.train_src)
    train_tgt = read_tokenized(args.train_tgt)
    val_src = read_tokenized(args.val_src)
    val_tgt = read_tokenized(args.val_tgt)
    os.makedirs(args.outdir, exist_ok=True)

    def progress(point):
        score = "FAILED" if point.bleu is None else f"{point.bleu:.2f}"
        print(f"[sweep] lambda={point.lam} kind={point.kind} "
              f"seed={point.seed} bleu={score}", file=sys.stderr)

    result = sweep_lambda(cfg.to_dict(), lambdas, kinds, seeds,
                          train_src, train_tgt, val_src, val_tgt,
                          jobs=args.jobs, progress=progress)
    rows_path = os.path.join(args.outdir, "sweep.csv")
    means_path = os.path.join(args.outdir, "sweep_means.csv")
    result.write_csv(rows_path, means_path)
    plot_sweep_curve(result.mean_rows(),
                     os.path.join(args.outdir, "sweep_curve.png"))
    for lam, kind, mean, n in result.mean_rows():
        print(f"lambda={lam} kind={kind} mean_bleu={mean:.2f} n_seeds={n}")
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed, step=args.step, tol=args.tol,
                           instances_per_primitive=args.instances)
    for line in report.lines():
        print(line)
    if not report.ok:
        raise NumericError(
            f"gradient check failed: max_rel_err={report.max_rel_err:.3e}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="rewe", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn-bpe", help="learn BPE merges from corpora")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_bpe)

    p = sub.add_parser("apply-bpe", help="segment a corpus with a BPE model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_apply_bpe)

    p = sub.add_parser("build-vocab", help="build a capped vocabulary")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--cap", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("load-embeddings",
                       help="validate an embedding file and report coverage")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_load_embeddings)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--val-src", required=True)
    p.add_argument("--val-tgt", required=True)
    p.add_argument("--src-embeddings", default=None)
    p.add_argument("--tgt-embeddings", default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--outdir", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate a file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=None)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("bleu", help="corpus BLEU of hypothesis vs reference")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--smooth", action="store_true",
                   help="add-one smoothing for orders >= 2")
    p.set_defaults(func=cmd_bleu)

    p = sub.add_parser("ppl", help="validation perplexity of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.set_defaults(func=cmd_ppl)

    p = sub.add_parser("sweep", help="lambda sensitivity sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--train-src", required=True)
    p.add_argument("--train-tgt", required=True)
    p.add_argument("--val-src", required=True)
    p.add_argument("--val-tgt", required=True)
    p.add_argument("--lambdas", default="0,0.1,1,2,5,10,20")
    p.add_argument("--kinds", default="cel,mse")
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--instances", type=int, default=20,
                   help="random instances per primitive")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
