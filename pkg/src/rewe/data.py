"""Corpus ingestion, vocabularies, BPE subwords, embeddings and batching."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<s>", "</s>")

_WORD_END = "</w>"
BPE_FILE_VERSION = "#version: rewe-bpe-1"
VOCAB_FILE_VERSION = "#version: rewe-vocab-1"


def tokenize(line) -> list[str]:
    """Split a line on runs of whitespace. No case folding."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"invalid UTF-8 at byte offset {exc.start}") from None
    return line.split()


def read_tokenized(path) -> list[list[str]]:
    """Read a one-sentence-per-line corpus file as token lists."""
    with open(path, "rb") as fh:
        raw = fh.read()
    sentences = []
    offset = 0
    for num, chunk in enumerate(raw.split(b"\n"), start=1):
        try:
            text = chunk.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(
                f"{path}: invalid UTF-8 on line {num} at byte offset {offset + exc.start}"
            ) from None
        sentences.append(text.split())
        offset += len(chunk) + 1
    if raw.endswith(b"\n") or not raw:
        sentences.pop()
    return sentences


class Vocabulary:
    """Bijective token<->id map with reserved ids 0..3 (pad, unk, bos, eos)."""

    def __init__(self, tokens: list[str], size_cap: int):
        self.id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.size_cap = size_cap
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def ids(self, tokens) -> list[int]:
        return [self.id(t) for t in tokens]

    def digest(self) -> str:
        blob = "\n".join(self.id_to_token).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(VOCAB_FILE_VERSION + "\n")
            fh.write(f"#size_cap: {self.size_cap}\n")
            for tok in self.id_to_token[len(RESERVED_TOKENS):]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != VOCAB_FILE_VERSION:
            raise DataError(f"{path}: not a vocabulary file (missing version line)")
        if len(lines) < 2 or not lines[1].startswith("#size_cap: "):
            raise DataError(f"{path}: missing size_cap line")
        cap = int(lines[1].split(": ", 1)[1])
        return cls(lines[2:], cap)


def build_vocab(corpus, size_cap: int) -> Vocabulary:
    """Keep the size_cap most frequent tokens; ties go to first occurrence."""
    if size_cap < 1:
        raise DataError(f"size_cap must be >= 1, got {size_cap}")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    n_tokens = 0
    for sentence in corpus:
        for tok in sentence:
            if tok in RESERVED_TOKENS:
                continue
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = n_tokens
            n_tokens += 1
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    return Vocabulary(ranked[:size_cap], size_cap)


@dataclass
class BpeModel:
    """Ordered merge list; earlier merges take precedence when applying."""

    merges: list[tuple[str, str]]
    continuation_marker: str = "@@"
    _ranks: dict = field(default=None, repr=False, compare=False)
    _cache: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise DataError("BPE merge list contains duplicates")
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache = {}

    @property
    def num_merges(self) -> int:
        return len(self.merges)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(BPE_FILE_VERSION + "\n")
            for left, right in self.merges:
                fh.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != BPE_FILE_VERSION:
            raise DataError(f"{path}: not a BPE model file (missing version line)")
        merges = []
        for num, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise DataError(f"{path}: malformed merge on line {num}: {line!r}")
            merges.append((parts[0], parts[1]))
        return cls(merges)


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + _WORD_END,)


def learn_bpe(corpus, num_merges: int) -> BpeModel:
    """Learn merges by repeatedly fusing the most frequent adjacent pair.

    Ties break lexicographically on the pair; learning stops early once no
    pair occurs at least twice.
    """
    if num_merges < 1:
        raise DataError(f"num_merges must be >= 1, got {num_merges}")
    word_freq: Counter[str] = Counter()
    for sentence in corpus:
        word_freq.update(sentence)
    if not word_freq:
        raise DataError("cannot learn BPE from an empty corpus")

    words = {w: _word_symbols(w) for w in word_freq}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        stats: Counter[tuple[str, str]] = Counter()
        for w, symbols in words.items():
            freq = word_freq[w]
            for pair in zip(symbols, symbols[1:]):
                stats[pair] += freq
        if not stats:
            break
        best = min(stats, key=lambda p: (-stats[p], p))
        if stats[best] < 2:
            break
        merges.append(best)
        fused = best[0] + best[1]
        for w, symbols in words.items():
            if best[0] not in symbols:
                continue
            words[w] = _merge_pair(symbols, best, fused)
    return BpeModel(merges)


def _merge_pair(symbols, pair, fused) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(fused)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def _encode_word(model: BpeModel, word: str) -> tuple[str, ...]:
    cached = model._cache.get(word)
    if cached is not None:
        return cached
    symbols = _word_symbols(word)
    ranks = model._ranks
    while len(symbols) > 1:
        candidates = [(ranks[p], p) for p in set(zip(symbols, symbols[1:])) if p in ranks]
        if not candidates:
            break
        _, pair = min(candidates)
        symbols = _merge_pair(symbols, pair, pair[0] + pair[1])
    pieces = []
    for i, sym in enumerate(symbols):
        if i + 1 == len(symbols):
            pieces.append(sym[: -len(_WORD_END)] if sym.endswith(_WORD_END) else sym)
        else:
            pieces.append(sym + model.continuation_marker)
    result = tuple(pieces)
    model._cache[word] = result
    return result


def apply_bpe(model: BpeModel, sentence) -> list[str]:
    """Segment each token into subword pieces; the marker join is the inverse."""
    out: list[str] = []
    for tok in sentence:
        out.extend(_encode_word(model, tok))
    return out


def join_bpe(pieces, marker: str = "@@") -> list[str]:
    """Undo apply_bpe: glue pieces carrying the continuation marker."""
    out: list[str] = []
    buf = ""
    for piece in pieces:
        if piece.endswith(marker):
            buf += piece[: -len(marker)]
        else:
            out.append(buf + piece)
            buf = ""
    if buf:
        out.append(buf)
    return out


@dataclass
class EmbeddingTable:
    """|V| x dim matrix aligned with vocabulary ids."""

    dim: int
    vectors: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        if self.vectors.shape[1] != self.dim:
            raise DataError(
                f"embedding table width {self.vectors.shape[1]} != dim {self.dim}")


@dataclass
class CoverageStats:
    found: int
    missing: int

    @property
    def coverage(self) -> float:
        total = self.found + self.missing
        return self.found / total if total else 0.0


def random_embeddings(vocab: Vocabulary, dim: int, seed: int) -> EmbeddingTable:
    """Uniform [-0.1, 0.1] table for runs without pretrained vectors."""
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    return EmbeddingTable(dim=dim, vectors=vectors)


def load_embeddings(path, vocab: Vocabulary, dim: int, seed: int):
    """Load a text vector file; absent and reserved tokens get random rows.

    Format: optional first header line "count dim", then one row per line,
    "token v1 ... v_dim". Returns (EmbeddingTable, CoverageStats).
    """
    rows: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 0
    if lines:
        head = lines[0].split()
        if len(head) == 2 and all(p.lstrip("-").isdigit() for p in head):
            if int(head[1]) != dim:
                raise DataError(
                    f"{path}: header dimension {head[1]} != requested dim {dim}")
            start = 1
    for num, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        parts = line.rstrip().split(" ")
        if len(parts) != dim + 1:
            raise DataError(
                f"{path}: line {num}: expected token + {dim} values, got {len(parts) - 1}")
        token = parts[0]
        try:
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}: line {num}: non-numeric value") from None
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}: line {num}: non-finite value")
        if token not in rows:  # first occurrence wins
            rows[token] = vec

    rng = np.random.default_rng(seed)
    vectors = np.empty((len(vocab), dim), dtype=np.float64)
    found = 0
    for idx, token in enumerate(vocab.id_to_token):
        hit = rows.get(token) if idx >= len(RESERVED_TOKENS) else None
        if hit is not None:
            vectors[idx] = hit
            found += 1
        else:
            vectors[idx] = rng.uniform(-0.1, 0.1, size=dim)
    missing = len(vocab) - len(RESERVED_TOKENS) - found
    return EmbeddingTable(dim=dim, vectors=vectors), CoverageStats(found, missing)


@dataclass
class Batch:
    """Padded id matrices plus masks; masks are False exactly at pad cells.

    tgt_ids carries a bos prefix and eos suffix. The teacher-forcing views
    drop the last / first time step respectively.
    """

    src_ids: np.ndarray
    tgt_ids: np.ndarray
    src_mask: np.ndarray
    tgt_mask: np.ndarray

    @property
    def size(self) -> int:
        return self.src_ids.shape[0]

    @property
    def tgt_in(self) -> np.ndarray:
        return self.tgt_ids[:, :-1]

    @property
    def tgt_out(self) -> np.ndarray:
        return self.tgt_ids[:, 1:]

    @property
    def out_mask(self) -> np.ndarray:
        return self.tgt_mask[:, 1:]


def pack_batch(pairs) -> Batch:
    """Pad one group of (src_ids, tgt_ids) pairs into matrices."""
    n = len(pairs)
    max_src = max(len(s) for s, _ in pairs)
    max_tgt = max(len(t) for _, t in pairs) + 2  # bos + eos
    src = np.full((n, max_src), PAD_ID, dtype=np.intp)
    tgt = np.full((n, max_tgt), PAD_ID, dtype=np.intp)
    src_mask = np.zeros((n, max_src), dtype=bool)
    tgt_mask = np.zeros((n, max_tgt), dtype=bool)
    for i, (s, t) in enumerate(pairs):
        src[i, : len(s)] = s
        src_mask[i, : len(s)] = True
        full = [BOS_ID] + list(t) + [EOS_ID]
        tgt[i, : len(full)] = full
        tgt_mask[i, : len(full)] = True
    return Batch(src, tgt, src_mask, tgt_mask)


def make_batches(pairs, batch_size: int, max_len: int, seed: int) -> list[Batch]:
    """Filter over-length pairs, shuffle deterministically, group and pad."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    kept = [(s, t) for s, t in pairs if len(s) <= max_len and len(t) <= max_len and s]
    if not kept:
        raise DataError("no sentence pairs survive the length filter")
    order = np.random.default_rng(seed).permutation(len(kept))
    shuffled = [kept[i] for i in order]
    return [
        pack_batch(shuffled[i : i + batch_size])
        for i in range(0, len(shuffled), batch_size)
    ]


def load_parallel_corpus(src_path, tgt_path):
    """Read two aligned one-sentence-per-line files as token-list pairs."""
    src = read_tokenized(src_path)
    tgt = read_tokenized(tgt_path)
    if len(src) != len(tgt):
        raise DataError(
            f"line count mismatch: {src_path} has {len(src)}, {tgt_path} has {len(tgt)}")
    return list(zip(src, tgt))
