"""Subword-augmented skip-gram word vectors, document vectors, and exact
cosine nearest-neighbor search.

Training is mini-batch SGD with negative sampling, deterministic under a
fixed seed in single-worker mode. A word's vector is the sum of its word-id
vector and its hashed character-n-gram vectors, so out-of-vocabulary tokens
still compose a vector from their character n-grams.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import Corpus
from .errors import DataError
from .textproc import TokenStream, tokenize

_FNV_OFFSET = np.uint64(2166136261)
_FNV_PRIME = np.uint64(16777619)
_U64_MASK = np.uint64(0xFFFFFFFF)


def fnv1a(data: str) -> int:
    """32-bit FNV-1a over UTF-8 bytes; stable across runs and platforms."""
    h = _FNV_OFFSET
    for b in data.encode("utf-8"):
        h = (h ^ np.uint64(b)) * _FNV_PRIME & _U64_MASK
    return int(h)


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 100
    window: int = 5
    epochs: int = 5
    negatives: int = 5
    min_count: int = 5
    learning_rate: float = 0.05
    char_ngram_min: int = 3
    char_ngram_max: int = 6
    subword_buckets: int = 2_000_000  # 0 disables subword vectors
    batch_size: int = 1024

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dimension must be >= 2")
        for name in ("window", "epochs", "negatives", "min_count", "learning_rate", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.subword_buckets < 0:
            raise ValueError("subword_buckets must be >= 0")


def char_ngrams(token: str, n_min: int, n_max: int) -> list[str]:
    """Character n-grams of '<token>' with word-boundary markers."""
    s = f"<{token}>"
    out = []
    for n in range(n_min, n_max + 1):
        if n > len(s):
            break
        out.extend(s[i : i + n] for i in range(len(s) - n + 1))
    return out


@dataclass
class DocVector:
    doc_id: str
    vector: np.ndarray
    unresolved: bool = False  # True when no token resolved; vector is zero


class EmbeddingModel:
    """Trained word vectors plus the subword machinery to compose new ones."""

    def __init__(
        self,
        config: EmbeddingConfig,
        vocab: dict[str, int],
        counts: np.ndarray,
        input_vectors: np.ndarray,
        output_vectors: np.ndarray,
        train_log: list[float] | None = None,
    ):
        self.config = config
        self.vocab = vocab
        self.counts = counts
        # rows [0, V) are word-id vectors, [V, V+B) subword buckets, last row padding
        self.input_vectors = input_vectors
        self.output_vectors = output_vectors
        self.train_log = train_log or []
        self._tokens = sorted(vocab, key=vocab.get)
        self._subword_cache: dict[str, np.ndarray] = {}

    @property
    def dimension(self) -> int:
        return self.config.dim

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def subword_ids(self, token: str) -> np.ndarray:
        """Input-matrix rows for a token's hashed character n-grams."""
        cfg = self.config
        if cfg.subword_buckets == 0:
            return np.empty(0, dtype=np.int64)
        cached = self._subword_cache.get(token)
        if cached is None:
            grams = char_ngrams(token, cfg.char_ngram_min, cfg.char_ngram_max)
            cached = np.array(
                [self.vocab_size + (fnv1a(g) % cfg.subword_buckets) for g in grams],
                dtype=np.int64,
            )
            self._subword_cache[token] = cached
        return cached

    def vector_for_token(self, token: str) -> np.ndarray | None:
        """Composed vector (word-id + subword rows), or None when nothing resolves."""
        idx = self.vocab.get(token)
        rows = self.subword_ids(token)
        if idx is not None:
            rows = np.concatenate(([idx], rows))
        if rows.size == 0:
            return None
        return self.input_vectors[rows].sum(axis=0)

    @property
    def word_vectors(self) -> np.ndarray:
        """|vocab| x d matrix of composed in-vocabulary vectors."""
        return np.stack([self.vector_for_token(t) for t in self._tokens])

    def save(self, path) -> None:
        np.savez(
            path,
            config=json.dumps(asdict(self.config), sort_keys=True),
            tokens=json.dumps(self._tokens, ensure_ascii=False),
            counts=self.counts,
            input_vectors=self.input_vectors,
            output_vectors=self.output_vectors,
            train_log=np.array(self.train_log, dtype=np.float64),
        )

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read embedding model {path}: {exc}") from exc
        config = EmbeddingConfig(**json.loads(str(data["config"])))
        tokens = json.loads(str(data["tokens"]))
        return cls(
            config=config,
            vocab={t: i for i, t in enumerate(tokens)},
            counts=data["counts"],
            input_vectors=data["input_vectors"],
            output_vectors=data["output_vectors"],
            train_log=list(data["train_log"]),
        )


def _build_vocab(
    docs: Sequence[TokenStream | Sequence[str]], min_count: int
) -> tuple[dict[str, int], np.ndarray]:
    counts: dict[str, int] = {}
    for doc in docs:
        for t in doc:
            counts[t] = counts.get(t, 0) + 1
    kept = [(t, c) for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    if not kept:
        raise DataError("empty vocabulary after min_count pruning")
    vocab = {t: i for i, (t, _) in enumerate(kept)}
    return vocab, np.array([c for _, c in kept], dtype=np.int64)


def _subword_table(
    vocab: dict[str, int], cfg: EmbeddingConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Padded (V x L) input-row table per word: word id first, then subwords."""
    v = len(vocab)
    pad = v + cfg.subword_buckets  # padding row, kept at zero
    rows_per_word = []
    for token, idx in sorted(vocab.items(), key=lambda kv: kv[1]):
        rows = [idx]
        if cfg.subword_buckets:
            rows.extend(
                v + (fnv1a(g) % cfg.subword_buckets)
                for g in char_ngrams(token, cfg.char_ngram_min, cfg.char_ngram_max)
            )
        rows_per_word.append(rows)
    width = max(len(r) for r in rows_per_word)
    table = np.full((v, width), pad, dtype=np.int64)
    mask = np.zeros((v, width), dtype=np.float32)
    for i, rows in enumerate(rows_per_word):
        table[i, : len(rows)] = rows
        mask[i, : len(rows)] = 1.0
    n_rows = mask.sum(axis=1)
    return table, mask, n_rows


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


def _scatter_mean(matrix: np.ndarray, rows: np.ndarray, deltas: np.ndarray) -> None:
    """matrix[r] += mean(deltas where rows == r).

    Per-row mean rather than sum keeps the effective step size bounded when a
    batch hits the same row many times (tiny vocabularies would otherwise
    diverge); for rows hit once it reduces to plain SGD.
    """
    order = np.argsort(rows, kind="stable")
    sorted_rows = rows[order]
    sorted_deltas = deltas[order]
    starts = np.flatnonzero(
        np.concatenate(([True], sorted_rows[1:] != sorted_rows[:-1]))
    )
    sums = np.add.reduceat(sorted_deltas, starts, axis=0)
    counts = np.diff(np.concatenate((starts, [sorted_rows.size])))
    matrix[sorted_rows[starts]] += sums / counts[:, None].astype(matrix.dtype)


def train_embeddings(
    docs: Sequence[TokenStream | Sequence[str]],
    config: EmbeddingConfig = EmbeddingConfig(),
    seed: int = 0,
) -> EmbeddingModel:
    """Skip-gram with negative sampling over token windows.

    Dynamic window size as in standard implementations: each center position
    draws an effective window uniformly from [1, window]. Negative targets are
    drawn from the unigram distribution raised to 3/4. The learning rate
    decays linearly over all updates.
    """
    docs = list(docs)
    if not docs:
        raise ValueError("corpus must be non-empty")
    vocab, counts = _build_vocab(docs, config.min_count)
    v, d = len(vocab), config.dim
    rng = np.random.default_rng(seed)

    table, mask, n_rows = _subword_table(vocab, config)
    n_input_rows = v + config.subword_buckets + 1  # + padding row
    input_vecs = rng.uniform(-0.5 / d, 0.5 / d, size=(n_input_rows, d)).astype(np.float32)
    input_vecs[-1] = 0.0
    output_vecs = np.zeros((v, d), dtype=np.float32)

    noise = counts.astype(np.float64) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())

    encoded = [
        np.array([vocab[t] for t in doc if t in vocab], dtype=np.int64) for doc in docs
    ]
    encoded = [e for e in encoded if len(e) >= 2]
    if not encoded:
        raise DataError("no document contains two or more in-vocabulary tokens")

    n_pairs_estimate = sum(len(e) for e in encoded) * config.window  # upper bound
    total_updates = max(1, n_pairs_estimate * config.epochs)
    done = 0
    lr0 = config.learning_rate
    train_log: list[float] = []

    flat = np.concatenate(encoded)
    doc_of = np.concatenate(
        [np.full(len(e), i, dtype=np.int64) for i, e in enumerate(encoded)]
    )

    for _epoch in range(config.epochs):
        # skip-gram pair sampling: a pair at offset k survives with probability
        # (window - k + 1) / window, matching the marginal of the usual
        # per-center dynamic window draw
        centers_l: list[np.ndarray] = []
        contexts_l: list[np.ndarray] = []
        for k in range(1, config.window + 1):
            if k >= flat.size:
                break
            same_doc = doc_of[:-k] == doc_of[k:]
            p_keep = (config.window - k + 1) / config.window
            left, right = flat[:-k], flat[k:]
            fwd = same_doc & (rng.random(left.size) < p_keep)
            bwd = same_doc & (rng.random(left.size) < p_keep)
            centers_l.extend((left[fwd], right[bwd]))
            contexts_l.extend((right[fwd], left[bwd]))
        centers = np.concatenate(centers_l)
        contexts = np.concatenate(contexts_l)
        order = rng.permutation(centers.size)
        centers, contexts = centers[order], contexts[order]

        epoch_loss = 0.0
        for start in range(0, centers.size, config.batch_size):
            c_b = centers[start : start + config.batch_size]
            ctx_b = contexts[start : start + config.batch_size]
            bsz = c_b.size
            lr = lr0 * max(1e-4, 1.0 - done / total_updates)
            done += bsz

            negs = np.searchsorted(noise_cdf, rng.random((bsz, config.negatives)))

            rows = table[c_b]  # (bsz, L); padding rows hold zero vectors
            h = input_vecs[rows].sum(axis=1)  # (bsz, d)
            out_pos = output_vecs[ctx_b]
            out_neg = output_vecs[negs]  # (bsz, k, d)
            s_pos = np.einsum("bd,bd->b", h, out_pos)
            s_neg = np.einsum("bd,bkd->bk", h, out_neg)
            sig_pos = _sigmoid(s_pos)
            sig_neg = _sigmoid(s_neg)
            epoch_loss += float(
                -np.log(np.maximum(sig_pos, 1e-10)).sum()
                - np.log(np.maximum(1.0 - sig_neg, 1e-10)).sum()
            )

            g_pos = (sig_pos - 1.0).astype(np.float32)  # dL/ds_pos
            g_neg = sig_neg.astype(np.float32)
            gh = g_pos[:, None] * out_pos + np.einsum("bk,bkd->bd", g_neg, out_neg)

            out_rows = np.concatenate((ctx_b, negs.ravel()))
            out_deltas = np.concatenate(
                (
                    (-lr * g_pos)[:, None] * h,
                    (-lr * g_neg[..., None] * h[:, None, :]).reshape(-1, d),
                )
            )
            _scatter_mean(output_vecs, out_rows, out_deltas)
            # distribute the input gradient over each center's rows, scaled by
            # row count so composed-vector step sizes stay comparable
            scale = (-lr / n_rows[c_b]).astype(np.float32)
            g_rows = gh[:, None, :] * mask[c_b][:, :, None] * scale[:, None, None]
            _scatter_mean(input_vecs, rows.ravel(), g_rows.reshape(-1, d))

        train_log.append(epoch_loss / centers.size)

    return EmbeddingModel(
        config=config,
        vocab=vocab,
        counts=counts,
        input_vectors=input_vecs,
        output_vectors=output_vecs,
        train_log=train_log,
    )


def embed_document(model: EmbeddingModel, tokens: TokenStream | Sequence[str]) -> DocVector:
    """Mean of resolvable token vectors; zero vector with a flag otherwise."""
    doc_id = tokens.source_doc_id if isinstance(tokens, TokenStream) else ""
    vecs = []
    for t in tokens:
        v = model.vector_for_token(t)
        if v is not None:
            vecs.append(v)
    if not vecs:
        return DocVector(doc_id=doc_id, vector=np.zeros(model.dimension, dtype=np.float32), unresolved=True)
    return DocVector(doc_id=doc_id, vector=np.mean(vecs, axis=0), unresolved=False)


def doc_vectors(model: EmbeddingModel, corpus: Corpus, keep_hashtags: bool = True) -> list[DocVector]:
    """Embed every corpus document (tokenizing its text)."""
    return [
        embed_document(model, tokenize(d.text, keep_hashtags=keep_hashtags, source_doc_id=d.id))
        for d in corpus
    ]


def _cosine_to_pool(query: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Cosine similarities; zero-norm pool rows score -1 by convention."""
    qn = float(np.linalg.norm(query))
    if qn == 0.0:
        raise ValueError("zero-norm query vector")
    norms = np.linalg.norm(matrix, axis=1)
    sims = np.full(matrix.shape[0], -1.0)
    ok = norms > 0
    sims[ok] = (matrix[ok] @ query) / (norms[ok] * qn)
    return sims


def nearest(
    query: DocVector | np.ndarray,
    pool: Sequence[DocVector],
    k: int,
    metric: str = "cosine",
) -> list[tuple[str, float]]:
    """Exact top-k pool entries by cosine similarity.

    Ties break by doc_id ascending; the query's own doc_id is excluded when
    present; k larger than the pool clamps.
    """
    if metric != "cosine":
        raise ValueError(f"unsupported metric {metric!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not pool:
        raise ValueError("pool must be non-empty")
    q_id = query.doc_id if isinstance(query, DocVector) else None
    q = query.vector if isinstance(query, DocVector) else np.asarray(query)
    ids = [p.doc_id for p in pool]
    matrix = np.stack([p.vector for p in pool]).astype(np.float64)
    sims = _cosine_to_pool(q.astype(np.float64), matrix)
    ranked = sorted(
        (i for i in range(len(pool)) if ids[i] != q_id),
        key=lambda i: (-sims[i], ids[i]),
    )
    return [(ids[i], float(sims[i])) for i in ranked[:k]]


@dataclass
class LineMatchReport:
    """Share of documents whose nearest reference line is each given line."""

    entries: list[tuple[str, int, float]] = field(default_factory=list)  # (line, count, share %)
    unmatched: int = 0
    assigned: int = 0
    skipped_lines: list[str] = field(default_factory=list)

    @property
    def shares_total(self) -> float:
        return sum(pct for _, _, pct in self.entries)


def match_reference_lines(
    model: EmbeddingModel, docs: Corpus, lines: Sequence[str]
) -> LineMatchReport:
    """Assign each document to its nearest reference line in vector space.

    Reference lines embed with the same mean-of-token-vectors convention as
    documents. Documents with unresolved (zero) vectors land in an unmatched
    bucket; per-line shares are percentages of the assigned documents.
    """
    if not lines:
        raise ValueError("lines must be non-empty")
    line_vecs = []
    kept_lines = []
    skipped = []
    for line in lines:
        lv = embed_document(model, tokenize(line))
        if lv.unresolved:
            skipped.append(line)
        else:
            kept_lines.append(line)
            line_vecs.append(lv.vector)
    if not kept_lines:
        raise DataError("no reference line produced a resolvable vector")
    if skipped:
        warnings.warn(f"{len(skipped)} reference line(s) had no resolvable tokens", stacklevel=2)

    lm = np.stack(line_vecs).astype(np.float64)
    lm_norm = lm / np.linalg.norm(lm, axis=1, keepdims=True)
    counts = np.zeros(len(kept_lines), dtype=int)
    unmatched = 0
    for dv in doc_vectors(model, docs):
        if dv.unresolved:
            unmatched += 1
            continue
        q = dv.vector.astype(np.float64)
        sims = lm_norm @ (q / np.linalg.norm(q))
        counts[int(np.argmax(sims))] += 1
    assigned = int(counts.sum())
    entries = [
        (line, int(c), (100.0 * c / assigned) if assigned else 0.0)
        for line, c in zip(kept_lines, counts)
    ]
    entries.sort(key=lambda e: (-e[1], e[0]))
    return LineMatchReport(
        entries=entries, unmatched=unmatched, assigned=assigned, skipped_lines=skipped
    )


def load_reference_lines(path) -> list[str]:
    """One reference line per file line, UTF-8, blanks skipped."""
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]
