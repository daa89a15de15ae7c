"""Pluggable three-class stance classifier.

The built-in reference model is L2-regularized multinomial logistic
regression over signed-hashed uni+bi-gram counts, optionally concatenated
with a document embedding. Any external model can be plugged in through the
same train / posterior / save / load surface and the line-delimited
prediction format.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import sparse

from .corpus import Corpus
from .embedding import EmbeddingModel, embed_document, fnv1a
from .errors import DataError
from .labels import STANCE_LABELS, StanceLabel
from .textproc import TokenStream, tokenize

DEFAULT_LABELS: tuple[str, ...] = tuple(l.value for l in STANCE_LABELS)


class FeatureSource(str, Enum):
    HASHED_NGRAMS = "hashed_ngrams"
    DOC_EMBEDDING = "doc_embedding"
    CONCAT = "concat"


@dataclass(frozen=True)
class FeatureConfig:
    use_hashed_ngrams: bool = True
    hash_buckets: int = 2**18
    use_doc_embedding: bool = False
    embedding_dim: int = 0

    def __post_init__(self):
        if not self.use_hashed_ngrams and not self.use_doc_embedding:
            raise ValueError("feature config selects no feature source")
        if self.use_doc_embedding and self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be set when use_doc_embedding is on")

    @property
    def dimension(self) -> int:
        return (self.hash_buckets if self.use_hashed_ngrams else 0) + (
            self.embedding_dim if self.use_doc_embedding else 0
        )

    @property
    def source(self) -> FeatureSource:
        if self.use_hashed_ngrams and self.use_doc_embedding:
            return FeatureSource.CONCAT
        if self.use_hashed_ngrams:
            return FeatureSource.HASHED_NGRAMS
        return FeatureSource.DOC_EMBEDDING


@dataclass
class FeatureVector:
    indices: np.ndarray  # strictly increasing int64
    values: np.ndarray  # parallel floats, finite
    dimension: int
    source: FeatureSource
    empty: bool = False  # no token resolved to any feature

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values must be parallel")
        if len(self.indices) > 1 and not np.all(np.diff(self.indices) > 0):
            raise ValueError("indices must be strictly increasing")
        if len(self.values) and not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")


def text_ngrams(tokens: Sequence[str]) -> list[tuple[str, ...]]:
    """Uni- and bi-grams feeding the hashed feature block."""
    toks = list(tokens)
    grams: list[tuple[str, ...]] = [(t,) for t in toks]
    grams.extend(zip(toks, toks[1:]))
    return grams


def featurize(
    tokens: TokenStream | Sequence[str],
    config: FeatureConfig = FeatureConfig(),
    embedding: EmbeddingModel | None = None,
) -> FeatureVector:
    """Signed-hashed n-gram counts (L2-normalized) plus optional doc vector."""
    if config.use_doc_embedding and embedding is None:
        raise ValueError("feature config requires an embedding model")
    accum: dict[int, float] = {}
    offset = 0
    if config.use_hashed_ngrams:
        for gram in text_ngrams(list(tokens)):
            h = fnv1a("␟".join(gram))
            idx = (h >> 1) % config.hash_buckets
            sign = 1.0 if h & 1 else -1.0
            accum[idx] = accum.get(idx, 0.0) + sign
        norm = float(np.sqrt(sum(v * v for v in accum.values())))
        if norm > 0:
            accum = {i: v / norm for i, v in accum.items()}
        accum = {i: v for i, v in accum.items() if v != 0.0}
        offset = config.hash_buckets
    if config.use_doc_embedding:
        dv = embed_document(embedding, tokens)
        if not dv.unresolved:
            for j, val in enumerate(dv.vector):
                if val != 0.0:
                    accum[offset + j] = float(val)
    idx = np.array(sorted(accum), dtype=np.int64)
    vals = np.array([accum[i] for i in idx], dtype=np.float64)
    return FeatureVector(
        indices=idx,
        values=vals,
        dimension=config.dimension,
        source=config.source,
        empty=len(idx) == 0,
    )


def to_csr(features: Sequence[FeatureVector]) -> sparse.csr_matrix:
    if not features:
        raise ValueError("no feature vectors")
    dim = features[0].dimension
    if any(f.dimension != dim for f in features):
        raise ValueError("feature vectors disagree on dimension")
    indptr = np.zeros(len(features) + 1, dtype=np.int64)
    for i, f in enumerate(features):
        indptr[i + 1] = indptr[i] + len(f.indices)
    indices = np.concatenate([f.indices for f in features]) if features else np.empty(0)
    data = np.concatenate([f.values for f in features]) if features else np.empty(0)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(features), dim))


class StageTag(str, Enum):
    SEED = "seed"
    CERTAINTY = "certainty"
    UNCERTAINTY = "uncertainty"


@dataclass(frozen=True)
class TrainConfig:
    l2: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.1
    class_weighting: bool = True  # inverse-frequency weights
    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValueError("need at least two classes")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    x: sparse.csr_matrix,
    y: np.ndarray,
    sample_weights: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted-mean cross-entropy with (l2/2)||W||^2 and its exact gradient."""
    n = x.shape[0]
    probs = _softmax(x @ weights.T + bias)
    ll = -np.log(np.maximum(probs[np.arange(n), y], 1e-300))
    wsum = sample_weights.sum()
    loss = float((sample_weights * ll).sum() / wsum + 0.5 * l2 * np.sum(weights**2))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta *= (sample_weights / wsum)[:, None]
    grad_w = np.asarray(delta.T @ x) + l2 * weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


@dataclass
class ClassifierModel:
    weights: np.ndarray  # K x F
    bias: np.ndarray  # K
    feature_config: FeatureConfig
    train_config: TrainConfig
    stage_tag: StageTag = StageTag.SEED
    train_log: list[float] = field(default_factory=list)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.train_config.labels

    def save(self, path) -> None:
        np.savez(
            path,
            weights=self.weights,
            bias=self.bias,
            feature_config=json.dumps(asdict(self.feature_config), sort_keys=True),
            train_config=json.dumps(asdict(self.train_config), sort_keys=True),
            stage_tag=self.stage_tag.value,
            train_log=np.array(self.train_log, dtype=np.float64),
        )

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read classifier model {path}: {exc}") from exc
        tc = json.loads(str(data["train_config"]))
        tc["labels"] = tuple(tc["labels"])
        return cls(
            weights=data["weights"],
            bias=data["bias"],
            feature_config=FeatureConfig(**json.loads(str(data["feature_config"]))),
            train_config=TrainConfig(**tc),
            stage_tag=StageTag(str(data["stage_tag"])),
            train_log=list(data["train_log"]),
        )


LabeledExample = tuple[FeatureVector, str]


def _encode_labels(examples: Sequence[LabeledExample], labels: tuple[str, ...]) -> np.ndarray:
    index = {lab: i for i, lab in enumerate(labels)}
    try:
        return np.array([index[str(lab)] for _, lab in examples], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"label {exc} not in configured label set {labels}") from None


def train(
    examples: Sequence[LabeledExample],
    config: TrainConfig = TrainConfig(),
    seed: int = 0,
    feature_config: FeatureConfig | None = None,
    stage_tag: StageTag = StageTag.SEED,
    init: ClassifierModel | None = None,
) -> ClassifierModel:
    """Mini-batch SGD on L2-regularized multinomial cross-entropy.

    Deterministic under a fixed seed. Class weights (inverse frequency) are on
    by default to counter heavy neutral dominance. ``init`` warm-starts from a
    previous stage's parameters.
    """
    if not examples:
        raise ValueError("no training examples")
    y = _encode_labels(examples, config.labels)
    present = np.unique(y)
    if present.size < 2:
        raise ValueError("training set must contain at least two classes")
    x = to_csr([f for f, _ in examples])
    n, dim = x.shape
    k = len(config.labels)
    rng = np.random.default_rng(seed)

    class_counts = np.bincount(y, minlength=k).astype(np.float64)
    if config.class_weighting:
        class_w = np.where(class_counts > 0, n / (k * np.maximum(class_counts, 1.0)), 0.0)
    else:
        class_w = np.ones(k)
    sample_w = class_w[y]

    if init is not None:
        if init.weights.shape != (k, dim):
            raise ValueError("warm-start model has incompatible shape")
        weights = init.weights.copy()
        bias = init.bias.copy()
    else:
        weights = np.zeros((k, dim))
        bias = np.zeros(k)

    step = 0
    train_log = []
    for _epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            lr = config.learning_rate / (1.0 + step / max(1.0, n / config.batch_size))
            step += 1
            loss, gw, gb = loss_and_grad(
                weights, bias, x[batch], y[batch], sample_w[batch], config.l2
            )
            weights -= lr * gw
            bias -= lr * gb
            epoch_loss += loss * len(batch)
            seen += len(batch)
        train_log.append(epoch_loss / seen)

    return ClassifierModel(
        weights=weights,
        bias=bias,
        feature_config=feature_config
        or FeatureConfig(
            use_hashed_ngrams=True, hash_buckets=dim, use_doc_embedding=False
        ),
        train_config=config,
        stage_tag=stage_tag,
        train_log=train_log,
    )


def posterior(model: ClassifierModel, fv: FeatureVector) -> np.ndarray:
    """Class probability vector (softmax of logits); sums to 1."""
    if fv.dimension != model.weights.shape[1]:
        raise ValueError(
            f"feature dimension {fv.dimension} != model dimension {model.weights.shape[1]}"
        )
    logits = model.weights[:, fv.indices] @ fv.values + model.bias
    return _softmax(logits)


def posterior_batch(model: ClassifierModel, features: Sequence[FeatureVector]) -> np.ndarray:
    x = to_csr(features)
    if x.shape[1] != model.weights.shape[1]:
        raise ValueError("feature dimension mismatch")
    return _softmax(x @ model.weights.T + model.bias)


@dataclass
class EvalReport:
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    macro_f1: float
    runs: int = 1
    macro_f1_std: float = 0.0
    labels: tuple[str, ...] = DEFAULT_LABELS


def _prf(y_true: np.ndarray, y_pred: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    precision = np.zeros(k)
    recall = np.zeros(k)
    f1 = np.zeros(k)
    for c in range(k):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        precision[c] = tp / (tp + fp) if tp + fp else 0.0
        recall[c] = tp / (tp + fn) if tp + fn else 0.0
        f1[c] = (
            2 * precision[c] * recall[c] / (precision[c] + recall[c])
            if precision[c] + recall[c]
            else 0.0
        )
    return precision, recall, f1


def evaluate(
    model: ClassifierModel,
    heldout: Sequence[LabeledExample],
    runs: int = 1,
    seed: int = 0,
    train_examples: Sequence[LabeledExample] | None = None,
) -> EvalReport:
    """Per-class precision/recall/F1 and macro-F1 on held-out examples.

    With runs > 1, the model is retrained ``runs`` times on the same training
    data under different seeds and the report carries mean and std. The caller
    is responsible for keeping heldout disjoint from the training ids.
    """
    if not heldout:
        raise ValueError("heldout set must be non-empty")
    k = len(model.labels)
    y_true = _encode_labels(heldout, model.labels)
    for c in range(k):
        if not np.any(y_true == c):
            warnings.warn(
                f"class {model.labels[c]!r} absent from heldout; its F1 is 0 by definition",
                stacklevel=2,
            )
    x = to_csr([f for f, _ in heldout])

    def run_metrics(m: ClassifierModel) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        probs = _softmax(x @ m.weights.T + m.bias)
        y_pred = probs.argmax(axis=1)
        p, r, f = _prf(y_true, y_pred, k)
        return p, r, f, float(f.mean())

    if runs <= 1:
        p, r, f, macro = run_metrics(model)
        return EvalReport(p, r, f, macro, runs=1, labels=model.labels)
    if train_examples is None:
        raise ValueError("runs > 1 requires train_examples to retrain")
    ps, rs, fs, macros = [], [], [], []
    for i in range(runs):
        m = train(
            train_examples,
            config=model.train_config,
            seed=seed + i,
            feature_config=model.feature_config,
            stage_tag=model.stage_tag,
        )
        p, r, f, macro = run_metrics(m)
        ps.append(p)
        rs.append(r)
        fs.append(f)
        macros.append(macro)
    return EvalReport(
        per_class_precision=np.mean(ps, axis=0),
        per_class_recall=np.mean(rs, axis=0),
        per_class_f1=np.mean(fs, axis=0),
        macro_f1=float(np.mean(macros)),
        runs=runs,
        macro_f1_std=float(np.std(macros)),
        labels=model.labels,
    )


class TextStanceClassifier:
    """Facade bundling tokenization, featurization and a trained model."""

    def __init__(self, model: ClassifierModel, embedding: EmbeddingModel | None = None):
        if model.feature_config.use_doc_embedding and embedding is None:
            raise ValueError("model expects document-embedding features")
        self.model = model
        self.embedding = embedding

    def featurize_text(self, text: str) -> FeatureVector:
        return featurize(tokenize(text, keep_hashtags=True), self.model.feature_config, self.embedding)

    def posterior_text(self, text: str) -> np.ndarray:
        return posterior(self.model, self.featurize_text(text))

    def posterior_corpus(self, corpus: Corpus) -> tuple[list[str], np.ndarray]:
        features = [self.featurize_text(d.text) for d in corpus]
        if not features:
            return [], np.zeros((0, len(self.model.labels)))
        return corpus.ids(), posterior_batch(self.model, features)

    def predict_corpus(self, corpus: Corpus) -> tuple[list[str], list[StanceLabel]]:
        ids, probs = self.posterior_corpus(corpus)
        labels = [StanceLabel.parse(self.model.labels[i]) for i in probs.argmax(axis=1)]
        return ids, labels


def write_predictions(path, ids: Sequence[str], probs: np.ndarray, labels: tuple[str, ...]) -> None:
    """Line-delimited prediction records: doc_id, argmax label, posteriors."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, row in zip(ids, probs):
            fh.write(
                json.dumps(
                    {
                        "doc_id": doc_id,
                        "label": labels[int(np.argmax(row))],
                        "posteriors": {lab: float(p) for lab, p in zip(labels, row)},
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def read_labeled_examples(path) -> list[tuple[str, str, str]]:
    """Labeled-example JSONL: (doc_id, text, label) per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append((str(obj["doc_id"]), str(obj["text"]), StanceLabel.parse(obj["label"]).value))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad labeled example ({exc})") from exc
    return out


def write_labeled_examples(path, rows: Sequence[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, text, label in rows:
            fh.write(
                json.dumps(
                    {"doc_id": doc_id, "text": text, "label": label},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
