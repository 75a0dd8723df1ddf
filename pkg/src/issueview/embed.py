"""Subword n-gram skip-gram embeddings trained from scratch.

Words are represented as the mean of a per-word vector and the vectors of
their character n-grams (lengths minn..maxn of the word wrapped in angle
brackets), hashed into a fixed bucket space.  Training is skip-gram with
negative sampling, run as mini-batch SGD over numpy arrays so desk-scale
corpora train in seconds per epoch.  Out-of-vocabulary words and multi-word
phrases still get vectors through their subwords.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus, EmptyText, FormatError, VersionError

MAGIC = b"ITVE"
FORMAT_VERSION = 1

_FNV_OFFSET = 2166136261
_FNV_PRIME = 16777619
_U32 = 1 << 32


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) % _U32
    return h


def subword_ngrams(word: str, minn: int = 3, maxn: int = 20, bucket_count: int = 1 << 21) -> list[int]:
    """Bucket ids of the character n-grams of ``<word>``.

    Includes the fully bracketed word itself whenever its length fits maxn.
    Deterministic: FNV-1a over UTF-8 bytes, mod bucket_count.
    """
    if not word:
        raise EmptyText("cannot compute subwords of an empty word")
    if not (0 < minn <= maxn):
        raise ValueError("need 0 < minn <= maxn")
    wrapped = f"<{word}>"
    length = len(wrapped)
    ids = []
    for n in range(minn, min(maxn, length) + 1):
        for start in range(length - n + 1):
            ids.append(_fnv1a(wrapped[start : start + n].encode("utf-8")) % bucket_count)
    return ids


@dataclass
class Vocab:
    words: list[str]
    counts: list[int]
    word_to_id: dict[str, int]
    total_tokens: int
    bucket_count: int
    min_count: int

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id


def build_vocab(
    corpus: Iterable[Sequence[str]],
    min_count: int = 1,
    bucket_count: int = 1 << 21,
) -> Vocab:
    """Count tokens and keep words with count >= min_count, ids ordered by
    descending count then lexicographically."""
    counts: dict[str, int] = {}
    total = 0
    for sentence in corpus:
        for token in sentence:
            counts[token] = counts.get(token, 0) + 1
            total += 1
    if total == 0:
        raise EmptyCorpus("no tokens in corpus")
    kept = sorted(
        (w for w, c in counts.items() if c >= min_count),
        key=lambda w: (-counts[w], w),
    )
    if not kept:
        raise EmptyCorpus(f"no words reach min_count={min_count}")
    return Vocab(
        words=kept,
        counts=[counts[w] for w in kept],
        word_to_id={w: i for i, w in enumerate(kept)},
        total_tokens=total,
        bucket_count=bucket_count,
        min_count=min_count,
    )


@dataclass
class TrainConfig:
    dim: int = 300
    epochs: int = 300
    minn: int = 3
    maxn: int = 20
    window: int = 5
    negatives: int = 5
    learning_rate: float = 0.05
    min_learning_rate: float = 1e-4
    bucket_count: int = 1 << 21
    seed: int = 1
    min_count: int = 1
    batch_pairs: int = 4096
    workers: int = 1
    phrase_mode: str = "combined"  # combined | subword | wordmean
    duplicate_combine: str = "sqrt"  # sum | sqrt | mean (see _combine_duplicates)

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValueError("dim must be > 0")
        if not (0 < self.minn <= self.maxn):
            raise ValueError("need 0 < minn <= maxn")


@dataclass
class EmbeddingModel:
    vocab: Vocab
    input_vectors: np.ndarray   # [(V + bucket_count), dim] float32
    output_vectors: np.ndarray  # [V, dim] float32
    config: TrainConfig
    losses: list[float] = field(default_factory=list)  # mean loss per epoch
    _composed: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.config.dim

    def _subword_rows(self, word: str) -> list[int]:
        v = len(self.vocab)
        return [
            v + g
            for g in subword_ngrams(word, self.config.minn, self.config.maxn, self.config.bucket_count)
        ]

    def _compose_word(self, word: str) -> np.ndarray:
        rows = self._subword_rows(word)
        wid = self.vocab.word_to_id.get(word)
        if wid is not None:
            rows = [wid] + rows
        return self.input_vectors[rows].mean(axis=0)

    def composed_matrix(self) -> np.ndarray:
        """Unit-normalized composed vectors for every vocabulary word."""
        if self._composed is None:
            mat = np.stack([self._compose_word(w) for w in self.vocab.words])
            norms = np.linalg.norm(mat, axis=1, keepdims=True)
            norms[norms < 1e-12] = 1.0
            self._composed = (mat / norms).astype(np.float32)
        return self._composed


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _segment_sums(keys: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Group rows of ``values`` by ``keys``: (unique keys, per-key sums, counts)."""
    order = np.argsort(keys)
    keys_sorted = keys[order]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(keys_sorted)) + 1))
    sums = np.add.reduceat(values[order], starts, axis=0)
    counts = np.diff(np.concatenate((starts, [len(keys_sorted)])))
    return keys_sorted[starts], sums, counts


def _combine_duplicates(sums: np.ndarray, counts: np.ndarray, rule: str) -> np.ndarray:
    """How a row repeated inside one batch accumulates its gradient.

    Summing matches sequential SGD but diverges when a batch holds many
    copies of one row; averaging is stable but slows frequent rows down.
    The sqrt rule grows the step with sqrt(count), a stable middle ground.
    """
    if rule == "sum":
        return sums
    if rule == "mean":
        return sums / counts[:, None]
    if rule == "sqrt":
        return sums / np.sqrt(counts, dtype=np.float32)[:, None]
    raise ValueError(f"unknown duplicate combine rule {rule!r}")


class _SubwordIndex:
    """Padded per-word row indices into the input matrix (word row first)."""

    def __init__(self, vocab: Vocab, config: TrainConfig):
        v = len(vocab)
        rows_per_word = []
        for wid, word in enumerate(vocab.words):
            rows = [wid] + [
                v + g for g in subword_ngrams(word, config.minn, config.maxn, config.bucket_count)
            ]
            rows_per_word.append(rows)
        width = max(len(r) for r in rows_per_word)
        self.idx = np.zeros((v, width), dtype=np.int64 if v + config.bucket_count > 2**31 else np.int32)
        self.mask = np.zeros((v, width), dtype=np.float32)
        self.count = np.zeros(v, dtype=np.float32)
        for wid, rows in enumerate(rows_per_word):
            self.idx[wid, : len(rows)] = rows
            self.mask[wid, : len(rows)] = 1.0
            self.count[wid] = len(rows)


def _encode_corpus(corpus: Iterable[Sequence[str]], vocab: Vocab) -> list[np.ndarray]:
    encoded = []
    for sentence in corpus:
        ids = [vocab.word_to_id[t] for t in sentence if t in vocab.word_to_id]
        if ids:
            encoded.append(np.asarray(ids, dtype=np.int32))
    return encoded


def _make_pairs(encoded: list[np.ndarray], window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for ids in encoded:
        n = len(ids)
        for offset in range(1, min(window, n - 1) + 1):
            centers.append(ids[:-offset])
            contexts.append(ids[offset:])
            centers.append(ids[offset:])
            contexts.append(ids[:-offset])
    if not centers:
        raise EmptyCorpus("corpus has no co-occurring token pairs")
    return np.concatenate(centers), np.concatenate(contexts)


class _Trainer:
    def __init__(self, vocab: Vocab, config: TrainConfig):
        self.vocab = vocab
        self.config = config
        rng = np.random.default_rng(config.seed)
        v = len(vocab)
        bound = 0.5 / config.dim
        self.w_in = rng.uniform(-bound, bound, size=(v + config.bucket_count, config.dim)).astype(np.float32)
        self.w_out = np.zeros((v, config.dim), dtype=np.float32)
        self.subs = _SubwordIndex(vocab, config)
        counts = np.asarray(vocab.counts, dtype=np.float64)
        table = counts ** 0.75
        self.neg_cdf = np.cumsum(table / table.sum())
        self.rng = rng

    def draw_negatives(self, contexts: np.ndarray) -> np.ndarray:
        """[len(contexts), k] negative word ids, resampling accidental hits
        of the true context (a handful of leftovers are masked later)."""
        k = self.config.negatives
        negs = np.searchsorted(self.neg_cdf, self.rng.random((len(contexts), k))).astype(np.int32)
        for _ in range(3):
            coll = negs == contexts[:, None]
            n_coll = int(coll.sum())
            if not n_coll:
                break
            negs[coll] = np.searchsorted(self.neg_cdf, self.rng.random(n_coll)).astype(np.int32)
        return negs

    def _compose(self, word_ids: np.ndarray) -> np.ndarray:
        sub_idx = self.subs.idx[word_ids]
        sub_mask = self.subs.mask[word_ids]
        sub_count = self.subs.count[word_ids]
        return (
            (self.w_in[sub_idx] * sub_mask[:, :, None]).sum(axis=1) / sub_count[:, None]
        )

    def set_probe(self, centers: np.ndarray, contexts: np.ndarray, max_pairs: int = 65536) -> None:
        """Fixed pair/negative sample used to measure the objective after
        each epoch, so the loss curve is free of resampling noise."""
        idx = self.rng.permutation(len(centers))[:max_pairs]
        self.probe_centers = centers[idx]
        self.probe_contexts = contexts[idx]
        self.probe_negs = self.draw_negatives(self.probe_contexts)
        self.probe_valid = np.ones((len(idx), self.config.negatives + 1), dtype=np.float32)
        self.probe_valid[:, 1:] = self.probe_negs != self.probe_contexts[:, None]
        self.probe_uc, self.probe_inv = np.unique(self.probe_centers, return_inverse=True)
        self.probe_targets = np.concatenate([self.probe_contexts[:, None], self.probe_negs], axis=1)

    def probe_loss(self) -> float:
        total = 0.0
        n = len(self.probe_centers)
        h_all = self._compose(self.probe_uc)[self.probe_inv]
        for start in range(0, n, 16384):
            sl = slice(start, start + 16384)
            h = h_all[sl]
            targets = self.probe_targets[sl]
            out = self.w_out[targets.ravel()].reshape(*targets.shape, self.config.dim)
            probs = _sigmoid(np.einsum("bd,bkd->bk", h, out))
            clipped = np.clip(probs, 1e-9, 1.0 - 1e-9)
            valid = self.probe_valid[sl]
            total -= float(
                (np.log(clipped[:, 0]) * valid[:, 0]).sum()
                + (np.log1p(-clipped[:, 1:]) * valid[:, 1:]).sum()
            )
        return total / n

    def train_batch(
        self, centers: np.ndarray, contexts: np.ndarray, negs: np.ndarray,
        valid: np.ndarray, lr: float
    ) -> None:
        uc, inv = np.unique(centers, return_inverse=True)
        composed = self._compose(uc)
        h = composed[inv]  # [B, D]

        targets = np.concatenate([contexts[:, None], negs], axis=1)  # [B, K+1]
        out = self.w_out[targets.ravel()].reshape(*targets.shape, self.config.dim)
        scores = np.einsum("bd,bkd->bk", h, out)  # [B, K+1]

        grad = _sigmoid(scores)
        grad[:, 0] -= 1.0
        grad *= valid
        grad *= lr

        rule = self.config.duplicate_combine
        grad_h = np.einsum("bk,bkd->bd", grad, out)  # [B, D]
        grad_out = grad[:, :, None] * h[:, None, :]
        rows_out, sums_out, counts_out = _segment_sums(
            targets.ravel(), grad_out.reshape(-1, self.config.dim)
        )
        self.w_out[rows_out] -= _combine_duplicates(sums_out, counts_out, rule)

        # combine each center's occurrences, then spread over its composition
        # rows; contributions of different words to a shared subword row add
        order_rows, sums_h, counts_h = _segment_sums(inv, grad_h)
        grad_u = np.zeros_like(composed)
        grad_u[order_rows] = _combine_duplicates(sums_h, counts_h, rule)
        grad_u /= self.subs.count[uc][:, None]
        flat_mask = self.subs.mask[uc].astype(bool)
        flat_rows = self.subs.idx[uc][flat_mask]
        flat_grads = np.repeat(grad_u, flat_mask.sum(axis=1), axis=0)
        rows_in, sums_in, _ = _segment_sums(flat_rows, flat_grads)
        self.w_in[rows_in] -= sums_in


def train(corpus: Iterable[Sequence[str]], config: TrainConfig | None = None) -> EmbeddingModel:
    """Train the embedding.  Deterministic for a fixed seed with one worker;
    with several workers batches race lock-free and only aggregate quality
    holds."""
    config = config or TrainConfig()
    sentences = [list(s) for s in corpus]
    vocab = build_vocab(sentences, min_count=config.min_count, bucket_count=config.bucket_count)
    encoded = _encode_corpus(sentences, vocab)
    centers, contexts = _make_pairs(encoded, config.window)

    trainer = _Trainer(vocab, config)
    trainer.set_probe(centers, contexts)
    n_pairs = len(centers)
    batch = max(1, config.batch_pairs)
    batches_per_epoch = (n_pairs + batch - 1) // batch
    total_batches = batches_per_epoch * config.epochs
    losses: list[float] = []
    step = 0
    for _ in range(config.epochs):
        order = trainer.rng.permutation(n_pairs)
        epoch_centers = centers[order]
        epoch_contexts = contexts[order]
        epoch_negs = trainer.draw_negatives(epoch_contexts)
        epoch_valid = np.ones((n_pairs, config.negatives + 1), dtype=np.float32)
        epoch_valid[:, 1:] = epoch_negs != epoch_contexts[:, None]
        bounds = list(range(0, n_pairs, batch))
        lrs = [
            config.learning_rate
            + (config.min_learning_rate - config.learning_rate) * ((step + j) / total_batches)
            for j in range(len(bounds))
        ]
        step += len(bounds)

        def run(start: int, lr: float) -> None:
            stop = start + batch
            trainer.train_batch(
                epoch_centers[start:stop], epoch_contexts[start:stop],
                epoch_negs[start:stop], epoch_valid[start:stop], lr,
            )

        if config.workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                list(pool.map(run, bounds, lrs))
        else:
            for start, lr in zip(bounds, lrs):
                run(start, lr)
        losses.append(trainer.probe_loss())

    return EmbeddingModel(
        vocab=vocab,
        input_vectors=trainer.w_in,
        output_vectors=trainer.w_out,
        config=config,
        losses=losses,
    )


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        return vec.astype(np.float32)
    return (vec / norm).astype(np.float32)


def vector(model: EmbeddingModel, text: str) -> np.ndarray:
    """Unit vector for a word or a multi-word phrase (case-folded).

    Phrases combine a cross-boundary subword token (spaces kept inside the
    angle brackets) with the mean of the per-word vectors; the blend is
    controlled by ``config.phrase_mode``.
    """
    text = text.strip().lower()
    if not text:
        raise EmptyText("cannot embed empty text")
    words = text.split()
    if len(words) == 1:
        return _normalize(model._compose_word(words[0]))
    joint = model._compose_word(text)
    per_word = np.stack([_normalize(model._compose_word(w)) for w in words]).mean(axis=0)
    mode = model.config.phrase_mode
    if mode == "subword":
        return _normalize(joint)
    if mode == "wordmean":
        return _normalize(per_word)
    return _normalize(_normalize(joint) + _normalize(per_word))


def cosine(v1: np.ndarray, v2: np.ndarray) -> float:
    n1 = float(np.linalg.norm(v1))
    n2 = float(np.linalg.norm(v2))
    if n1 < 1e-12 or n2 < 1e-12:
        return 0.0
    return float(np.clip(float(np.dot(v1, v2)) / (n1 * n2), -1.0, 1.0))


def nearest(model: EmbeddingModel, word: str, k: int) -> list[tuple[str, float]]:
    """k nearest vocabulary words by cosine, excluding the word itself;
    ties break lexicographically."""
    if k <= 0:
        return []
    query = vector(model, word)
    scores = model.composed_matrix() @ query
    folded = word.strip().lower()
    ranked = sorted(
        (
            (w, float(scores[i]))
            for i, w in enumerate(model.vocab.words)
            if w != folded
        ),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked[:k]


# ---------------------------------------------------------------------------
# Persistence: text vectors + binary sidecar
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIII")  # magic, version, bucket_count, dim, minn, maxn, vocab_size


def save_model(model: EmbeddingModel, base_path: str) -> tuple[str, str]:
    """Write ``<base>.vec`` (word input vectors as text) and ``<base>.itve``
    (binary sidecar holding config header, bucket rows, output rows)."""
    vec_path, sidecar_path = f"{base_path}.vec", f"{base_path}.itve"
    v = len(model.vocab)
    cfg = model.config
    with open(vec_path, "w", encoding="utf-8") as fh:
        fh.write(f"{v} {cfg.dim}\n")
        for wid, word in enumerate(model.vocab.words):
            values = " ".join(repr(float(x)) for x in model.input_vectors[wid])
            fh.write(f"{word} {values}\n")
    with open(sidecar_path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, cfg.bucket_count, cfg.dim, cfg.minn, cfg.maxn, v))
        fh.write(model.input_vectors[v:].astype("<f4").tobytes())
        fh.write(model.output_vectors.astype("<f4").tobytes())
    return vec_path, sidecar_path


def load_model(base_path: str) -> EmbeddingModel:
    vec_path, sidecar_path = f"{base_path}.vec", f"{base_path}.itve"
    with open(sidecar_path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError("sidecar header truncated")
        magic, version, bucket_count, dim, minn, maxn, v = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported format version {version}")
        raw = fh.read()
        if len(raw) % 4:
            raise FormatError("sidecar body is not whole float32 rows")
        body = np.frombuffer(raw, dtype="<f4")
    expected = (bucket_count + v) * dim
    if body.size != expected:
        raise FormatError(f"sidecar holds {body.size} floats, expected {expected}")
    buckets = body[: bucket_count * dim].reshape(bucket_count, dim)
    output = body[bucket_count * dim :].reshape(v, dim)

    words: list[str] = []
    rows = np.empty((v, dim), dtype=np.float32)
    with open(vec_path, "r", encoding="utf-8") as fh:
        first = fh.readline().split()
        if len(first) != 2 or int(first[0]) != v or int(first[1]) != dim:
            raise FormatError("vector file header disagrees with sidecar")
        for i in range(v):
            parts = fh.readline().rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise FormatError(f"vector row {i} malformed")
            words.append(parts[0])
            rows[i] = np.asarray([np.float32(float(x)) for x in parts[1:]], dtype=np.float32)

    vocab = Vocab(
        words=words,
        counts=[1] * v,
        word_to_id={w: i for i, w in enumerate(words)},
        total_tokens=v,
        bucket_count=bucket_count,
        min_count=1,
    )
    config = TrainConfig(dim=dim, minn=minn, maxn=maxn, bucket_count=bucket_count)
    input_vectors = np.concatenate([rows, buckets.astype(np.float32)])
    return EmbeddingModel(
        vocab=vocab,
        input_vectors=input_vectors,
        output_vectors=output.astype(np.float32).copy(),
        config=config,
    )
