"""Versioned checkpoint container with byte-deterministic serialization.

A checkpoint is a STORED zip holding meta.json (config echo, vocabulary
digests and token lists, format version) plus one .npy entry per parameter
array and the frozen regression table. Zip timestamps are pinned so that
identical contents produce identical bytes; save->load round-trips arrays
bit-exactly.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import BpeModel, EmbeddingTable, Vocabulary
from .errors import DataError
from .model import Seq2SeqModel

FORMAT_VERSION = "rewe-ckpt-1"
_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed zip timestamp for determinism


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "meta.json",
                     json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]),
                                      allow_pickle=False)
            _write_entry(zf, f"arrays/{name}.npy", buf.getvalue())


def load_arrays(path):
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json").decode("utf-8"))
            arrays = {}
            for entry in zf.namelist():
                if entry.startswith("arrays/") and entry.endswith(".npy"):
                    name = entry[len("arrays/") : -len(".npy")]
                    arrays[name] = np.lib.format.read_array(
                        io.BytesIO(zf.read(entry)), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError) as exc:
        raise DataError(f"{path}: not a readable checkpoint: {exc}") from None
    return arrays, meta


@dataclass
class Checkpoint:
    model: Seq2SeqModel
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    frozen_table: EmbeddingTable
    config: TrainConfig
    meta: dict
    bpe: BpeModel | None = None


def save_checkpoint(path, model: Seq2SeqModel, src_vocab: Vocabulary,
                    tgt_vocab: Vocabulary, frozen_table: EmbeddingTable,
                    config: TrainConfig, extra: dict | None = None,
                    bpe: BpeModel | None = None) -> None:
    meta = {
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "src_vocab": src_vocab.id_to_token,
        "tgt_vocab": tgt_vocab.id_to_token,
        "src_vocab_digest": src_vocab.digest(),
        "tgt_vocab_digest": tgt_vocab.digest(),
        "src_vocab_size_cap": src_vocab.size_cap,
        "tgt_vocab_size_cap": tgt_vocab.size_cap,
        "bpe_merges": [list(p) for p in bpe.merges] if bpe is not None else None,
        "extra": extra or {},
    }
    arrays = dict(model.params)
    arrays["__frozen_table__"] = frozen_table.vectors
    save_arrays(path, arrays, meta)


def load_checkpoint(path) -> Checkpoint:
    arrays, meta = load_arrays(path)
    if meta.get("version") != FORMAT_VERSION:
        raise DataError(
            f"{path}: checkpoint version {meta.get('version')!r} != {FORMAT_VERSION!r}")
    cfg = TrainConfig.from_dict(meta["config"])
    n_reserved = 4
    src_vocab = Vocabulary(meta["src_vocab"][n_reserved:], meta["src_vocab_size_cap"])
    tgt_vocab = Vocabulary(meta["tgt_vocab"][n_reserved:], meta["tgt_vocab_size_cap"])
    if src_vocab.digest() != meta["src_vocab_digest"]:
        raise DataError(f"{path}: source vocabulary digest mismatch")
    if tgt_vocab.digest() != meta["tgt_vocab_digest"]:
        raise DataError(f"{path}: target vocabulary digest mismatch")
    frozen = arrays.pop("__frozen_table__")
    model = Seq2SeqModel(
        src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
        hidden_size=cfg.hidden_size, emb_dim=cfg.emb_dim,
        rewe_mid_dim=cfg.rewe_mid_dim, dropout=cfg.dropout, seed=cfg.seed,
        trainable_embeddings=cfg.trainable_embeddings)
    missing = set(model.params) - set(arrays)
    if missing:
        raise DataError(f"{path}: checkpoint missing arrays: {sorted(missing)}")
    for name, arr in arrays.items():
        if name not in model.params:
            raise DataError(f"{path}: unexpected array {name!r}")
        if model.params[name].shape != arr.shape:
            raise DataError(
                f"{path}: {name} shape {arr.shape} != expected {model.params[name].shape}")
        model.params[name] = arr.astype(np.float64, copy=False)
    table = EmbeddingTable(dim=frozen.shape[1], vectors=frozen, trainable=False)
    merges = meta.get("bpe_merges")
    bpe = BpeModel([tuple(p) for p in merges]) if merges else None
    return Checkpoint(model, src_vocab, tgt_vocab, table, cfg, meta, bpe)
