"""Run configuration: JSON in, validated dataclass out."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .errors import DataError

LOSS_KINDS = ("mse", "cel", "none", "contrastive_a")

REQUIRED_KEYS = (
    "lambda", "loss_kind", "seed", "hidden_size", "emb_dim", "rewe_mid_dim",
    "dropout", "batch_size", "eval_every", "lr", "max_len", "vocab_cap",
    "bpe_merges",
)


@dataclass
class TrainConfig:
    lam: float
    loss_kind: str
    seed: int
    hidden_size: int = 1024
    emb_dim: int = 300
    rewe_mid_dim: int = 200
    dropout: float = 0.2
    batch_size: int = 40
    eval_every: int = 25_000
    lr: float = 0.0002
    max_len: int = 100
    vocab_cap: int = 50_000
    bpe_merges: int = 0  # 0 = word level
    # optional knobs beyond the required schema
    clip_norm: float = 5.0
    restart_on_halve: bool = True
    loss_normalization: str = "token"  # "token" or "sum"
    trainable_embeddings: bool = True
    max_epochs: int = 50
    max_halvings: int = 5
    patience: int = 3
    final_patience: int = 20
    beam: int = 5

    def __post_init__(self):
        if self.lam < 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")
        if self.loss_kind not in LOSS_KINDS:
            raise DataError(
                f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.loss_normalization not in ("token", "sum"):
            raise DataError(
                f"loss_normalization must be 'token' or 'sum', got {self.loss_normalization!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise DataError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        missing = [k for k in REQUIRED_KEYS if k not in raw]
        if missing:
            raise DataError(f"config missing required keys: {', '.join(missing)}")
        kwargs = dict(raw)
        kwargs["lam"] = kwargs.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = [k for k in kwargs if k not in known]
        if unknown:
            raise DataError(f"config has unknown keys: {', '.join(sorted(unknown))}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise DataError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out
