"""End-to-end data preparation: BPE, vocabularies, embeddings, id pairs.

The frozen regression table and the decoder's trainable input embeddings
start from the same vectors (pretrained when a file is given, else random);
only the trainable copy ever moves.
"""
from __future__ import annotations

from dataclasses import dataclass

from .config import TrainConfig
from .data import (
    BpeModel,
    EmbeddingTable,
    Vocabulary,
    apply_bpe,
    build_vocab,
    learn_bpe,
    load_embeddings,
    random_embeddings,
)
from .model import Seq2SeqModel
from .seeding import derive_seed


@dataclass
class PreparedData:
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    bpe: BpeModel | None
    train_pairs: list
    val_pairs: list
    frozen_table: EmbeddingTable
    src_init: EmbeddingTable
    tgt_init: EmbeddingTable
    coverage: dict


def prepare_data(cfg: TrainConfig, train_src, train_tgt, val_src, val_tgt,
                 src_embeddings_path=None, tgt_embeddings_path=None) -> PreparedData:
    """Turn raw token sentences into everything training consumes."""
    bpe = None
    if cfg.bpe_merges > 0:
        # subwords are learned on the concatenation of both sides' training text
        bpe = learn_bpe(list(train_src) + list(train_tgt), cfg.bpe_merges)
        train_src = [apply_bpe(bpe, s) for s in train_src]
        train_tgt = [apply_bpe(bpe, s) for s in train_tgt]
        val_src = [apply_bpe(bpe, s) for s in val_src]
        val_tgt = [apply_bpe(bpe, s) for s in val_tgt]

    src_vocab = build_vocab(train_src, cfg.vocab_cap)
    tgt_vocab = build_vocab(train_tgt, cfg.vocab_cap)

    coverage = {}
    if src_embeddings_path is not None:
        src_init, stats = load_embeddings(src_embeddings_path, src_vocab,
                                          cfg.emb_dim, derive_seed(cfg.seed, "src_emb"))
        coverage["src"] = {"found": stats.found, "missing": stats.missing,
                           "coverage": stats.coverage}
    else:
        src_init = random_embeddings(src_vocab, cfg.emb_dim,
                                     derive_seed(cfg.seed, "src_emb"))
    if tgt_embeddings_path is not None:
        tgt_init, stats = load_embeddings(tgt_embeddings_path, tgt_vocab,
                                          cfg.emb_dim, derive_seed(cfg.seed, "tgt_emb"))
        coverage["tgt"] = {"found": stats.found, "missing": stats.missing,
                           "coverage": stats.coverage}
    else:
        tgt_init = random_embeddings(tgt_vocab, cfg.emb_dim,
                                     derive_seed(cfg.seed, "tgt_emb"))

    frozen = EmbeddingTable(dim=cfg.emb_dim, vectors=tgt_init.vectors.copy(),
                            trainable=False)
    train_pairs = [(src_vocab.ids(s), tgt_vocab.ids(t))
                   for s, t in zip(train_src, train_tgt)]
    val_pairs = [(src_vocab.ids(s), tgt_vocab.ids(t))
                 for s, t in zip(val_src, val_tgt)]
    return PreparedData(src_vocab, tgt_vocab, bpe, train_pairs, val_pairs,
                        frozen, src_init, tgt_init, coverage)


def build_model(cfg: TrainConfig, prepared: PreparedData) -> Seq2SeqModel:
    return Seq2SeqModel(
        src_vocab_size=len(prepared.src_vocab),
        tgt_vocab_size=len(prepared.tgt_vocab),
        hidden_size=cfg.hidden_size,
        emb_dim=cfg.emb_dim,
        rewe_mid_dim=cfg.rewe_mid_dim,
        dropout=cfg.dropout,
        seed=cfg.seed,
        src_embed_init=prepared.src_init.vectors,
        tgt_embed_init=prepared.tgt_init.vectors,
        trainable_embeddings=cfg.trainable_embeddings,
    )
