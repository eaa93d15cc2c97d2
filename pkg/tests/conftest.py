import numpy as np
import pytest

from rewe.config import TrainConfig


def make_toy_corpus(n_pairs, n_symbols=45, seed=0, noise=0.0, min_len=3,
                    max_len=9, cluster_size=0):
    """Deterministic token-map translation task: s<k> -> t<k>, optional noise.

    With cluster_size > 0 a noised target word is replaced by another member
    of its symbol cluster (synonym-like noise); otherwise the substitute is
    uniform over the vocabulary.
    """
    rng = np.random.default_rng(seed)
    src, tgt = [], []
    for _ in range(n_pairs):
        length = int(rng.integers(min_len, max_len + 1))
        syms = rng.integers(0, n_symbols, size=length)
        s = [f"s{k:02d}" for k in syms]
        t = [f"t{k:02d}" for k in syms]
        if noise > 0:
            for i, k in enumerate(syms):
                if rng.random() < noise:
                    if cluster_size > 1:
                        base = (k // cluster_size) * cluster_size
                        members = [m for m in range(base, min(base + cluster_size, n_symbols))
                                   if m != k]
                        sub = int(members[rng.integers(0, len(members))])
                    else:
                        sub = int(rng.integers(0, n_symbols))
                    t[i] = f"t{sub:02d}"
        src.append(s)
        tgt.append(t)
    return src, tgt


def write_cluster_embeddings(path, n_symbols, dim, cluster_size, seed,
                             offset=0.15):
    """Embedding file for t<k> tokens in which cluster members share a center."""
    rng = np.random.default_rng(seed)
    n_clusters = (n_symbols + cluster_size - 1) // cluster_size
    centers = rng.normal(size=(n_clusters, dim))
    with open(path, "w", encoding="utf-8") as fh:
        for k in range(n_symbols):
            vec = centers[k // cluster_size] + offset * rng.normal(size=dim)
            fh.write(f"t{k:02d} " + " ".join(repr(v) for v in vec) + "\n")


def toy_config(**overrides):
    base = dict(
        lam=0.0, loss_kind="none", seed=1, hidden_size=32, emb_dim=16,
        rewe_mid_dim=12, dropout=0.0, batch_size=8, eval_every=10_000,
        lr=0.002, max_len=100, vocab_cap=1000, bpe_merges=0, max_epochs=2,
        beam=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def toy_corpus():
    return make_toy_corpus(120, n_symbols=12, seed=7)
