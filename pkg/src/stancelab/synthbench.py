"""Synthetic end-to-end benchmark for the active-learning loop.

Generates a pool of documents over a planted three-class topic model with
heavy neutral dominance, labels batches with the planted oracle, and runs
the staged sampling schedule (random + guided seed, then certainty, then
margin). The benchmark checks three qualitative properties: guided sampling
enriches the minority class over random sampling, staged retraining improves
macro-F1, and share-shift inference recovers a planted prevalence change.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone

import numpy as np

from .analysis import Granularity, stance_timeseries
from .classifier import FeatureConfig, TrainConfig, evaluate, featurize, train
from .corpus import Corpus, Document, SlicePair
from .embedding import EmbeddingConfig, train_embeddings
from .labels import StanceLabel
from .sampling import ActiveLearningPipeline, Exemplar, Strategy, random_sample
from .textproc import tokenize

STUDY_SLICES = SlicePair.from_dates(
    date(2022, 1, 15), date(2022, 9, 15), date(2022, 9, 16), date(2023, 1, 15)
)


@dataclass(frozen=True)
class GeneratorConfig:
    """Planted topic model: class-indicative tokens diluted by shared noise.

    Class tokens follow a skewed (quadratic) frequency profile, so head tokens
    are learned from few labels while tail tokens need many; a slice of
    documents is heavily diluted (few class tokens), which is what makes
    uncertainty sampling informative rather than noisy.
    """

    n_docs: int = 20_000
    positive_rate: float = 0.05
    negative_rate: float = 0.08
    vocab_per_class: int = 1_000
    background_vocab: int = 600
    class_token_rate: float = 0.50  # class-token fraction in a clear document
    diluted_doc_rate: float = 0.35  # fraction of low-signal documents
    diluted_class_token_rate: float = 0.16  # class-token fraction in those
    doc_len_min: int = 8
    doc_len_max: int = 16


_CLASSES = (StanceLabel.POSITIVE, StanceLabel.NEGATIVE, StanceLabel.NEUTRAL)
_PREFIX = {
    StanceLabel.POSITIVE: "p",
    StanceLabel.NEGATIVE: "n",
    StanceLabel.NEUTRAL: "t",
}


def _class_vocab(cfg: GeneratorConfig) -> dict[StanceLabel, list[str]]:
    return {
        c: [f"{_PREFIX[c]}tok{i}" for i in range(cfg.vocab_per_class)] for c in _CLASSES
    }


def _random_timestamp(rng: np.random.Generator, before: bool) -> datetime:
    if before:
        start, span = datetime(2022, 1, 15, tzinfo=timezone.utc), 243
    else:
        start, span = datetime(2022, 9, 16, tzinfo=timezone.utc), 121
    return start + timedelta(
        days=int(rng.integers(0, span)), seconds=int(rng.integers(0, 86_400))
    )


def _skewed_pick(rng: np.random.Generator, vocab: list[str]) -> str:
    # quadratic skew: index ~ V * u^2 gives a frequent head and a long tail
    return vocab[int(len(vocab) * rng.random() ** 2)]


def _make_doc_tokens(
    rng: np.random.Generator,
    label: StanceLabel,
    vocab: dict[StanceLabel, list[str]],
    background: list[str],
    cfg: GeneratorConfig,
) -> list[str]:
    length = int(rng.integers(cfg.doc_len_min, cfg.doc_len_max + 1))
    rate = (
        cfg.diluted_class_token_rate
        if rng.random() < cfg.diluted_doc_rate
        else cfg.class_token_rate
    )
    own = vocab[label]
    return [
        _skewed_pick(rng, own)
        if rng.random() < rate
        else background[int(rng.integers(0, len(background)))]
        for _ in range(length)
    ]


def generate_pool(
    cfg: GeneratorConfig, seed: int, name: str = "synth"
) -> tuple[Corpus, dict[str, StanceLabel]]:
    """Synthetic corpus plus the planted-label oracle."""
    rng = np.random.default_rng(seed)
    vocab = _class_vocab(cfg)
    background = [f"bg{i}" for i in range(cfg.background_vocab)]
    docs = []
    oracle: dict[str, StanceLabel] = {}
    labels = rng.random(cfg.n_docs)
    for i in range(cfg.n_docs):
        if labels[i] < cfg.positive_rate:
            label = StanceLabel.POSITIVE
        elif labels[i] < cfg.positive_rate + cfg.negative_rate:
            label = StanceLabel.NEGATIVE
        else:
            label = StanceLabel.NEUTRAL
        doc_id = f"s{i:05d}"
        tokens = _make_doc_tokens(rng, label, vocab, background, cfg)
        docs.append(
            Document(
                id=doc_id,
                text=" ".join(tokens),
                author_id=f"u{i % 997}",
                created_at=_random_timestamp(rng, before=bool(rng.random() < 0.5)),
                language="zxx",
                hashtags=(),
            )
        )
        oracle[doc_id] = label
    return Corpus(name=name, documents=tuple(docs)), oracle


def generate_exemplars(
    cfg: GeneratorConfig, seed: int, per_label: int = 15, tokens_each: int = 10
) -> list[Exemplar]:
    """Synthetic annotator exemplars: short class-pure documents.

    Tokens follow the same skewed frequency profile as the corpus, the way a
    human example would reach for common vocabulary.
    """
    rng = np.random.default_rng(seed)
    vocab = _class_vocab(cfg)
    out = []
    for label in (StanceLabel.POSITIVE, StanceLabel.NEGATIVE):
        words = vocab[label]
        for i in range(per_label):
            picks = {_skewed_pick(rng, words) for _ in range(tokens_each)}
            out.append(
                Exemplar(
                    annotator_id=f"synth-a{i % 3}",
                    text=" ".join(sorted(picks)),
                    intended_label=label,
                )
            )
    return out


BENCH_EMBEDDING = EmbeddingConfig(
    dim=32,
    window=4,
    epochs=3,
    negatives=4,
    min_count=2,
    learning_rate=0.25,
    subword_buckets=0,  # synthetic tokens carry no useful morphology
    batch_size=512,
)
BENCH_FEATURES = FeatureConfig(hash_buckets=2**16)
BENCH_TRAIN = TrainConfig(epochs=15, batch_size=48, learning_rate=0.6, l2=1e-4)


@dataclass
class StageResult:
    stage: str
    n_train: int
    macro_f1: float
    per_class_f1: dict[str, float]
    label_counts: dict[str, int]


@dataclass
class BenchRunResult:
    seed: int
    stages: list[StageResult]
    guided_positive_rate: float
    random_positive_rate: float
    enrichment_ratio: float
    sampled_twice: int  # must stay 0
    runtime_s: float

    @property
    def f1_curve(self) -> list[float]:
        return [s.macro_f1 for s in self.stages]

    @property
    def strictly_improving(self) -> bool:
        c = self.f1_curve
        return all(b > a for a, b in zip(c, c[1:]))

    @property
    def total_gain(self) -> float:
        return self.f1_curve[-1] - self.f1_curve[0]


def _hold_out_eval(
    corpus: Corpus,
    oracle: dict[str, StanceLabel],
    rng: np.random.Generator,
    per_class: dict[StanceLabel, int],
) -> tuple[set[str], list[tuple[str, StanceLabel]]]:
    by_class: dict[StanceLabel, list[str]] = {c: [] for c in _CLASSES}
    for doc_id, label in oracle.items():
        by_class[label].append(doc_id)
    eval_ids: list[str] = []
    for label, want in per_class.items():
        ids = sorted(by_class[label])
        picks = rng.choice(len(ids), size=min(want, len(ids)), replace=False)
        eval_ids.extend(ids[i] for i in picks)
    return set(eval_ids), [(d, oracle[d]) for d in sorted(eval_ids)]


def run_benchmark(
    seed: int,
    cfg: GeneratorConfig = GeneratorConfig(),
    random_seed_n: int = 500,
    guided_exemplars: int = 15,
    guided_k: int = 25,
    certainty_n_per_target: int = 500,
    margin_n: int = 3000,
    retrain_runs: int = 3,
) -> BenchRunResult:
    """One full staged active-learning run against the planted oracle.

    Each stage's macro-F1 is the mean over ``retrain_runs`` fresh trainings on
    the stage's accumulated data, so the reported curve measures what the
    collected labels are worth rather than one SGD trajectory.
    """
    t0 = time.time()
    corpus, oracle = generate_pool(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    eval_ids, eval_pairs = _hold_out_eval(
        corpus,
        oracle,
        rng,
        per_class={
            StanceLabel.POSITIVE: 250,
            StanceLabel.NEGATIVE: 250,
            StanceLabel.NEUTRAL: 400,
        },
    )
    pool = corpus.subset([d for d in corpus.ids() if d not in eval_ids], name="pool")

    embedding = train_embeddings(
        [tokenize(d.text, source_doc_id=d.id) for d in pool], BENCH_EMBEDDING, seed=seed
    )
    pipe = ActiveLearningPipeline(
        pool=pool,
        feature_config=BENCH_FEATURES,
        train_config=BENCH_TRAIN,
        embedding=embedding,
        slices=STUDY_SLICES,
        seed=seed,
    )
    eval_examples = [
        (featurize(tokenize(corpus.by_id(d).text), BENCH_FEATURES), label.value)
        for d, label in eval_pairs
    ]

    emitted: list[str] = []
    stages: list[StageResult] = []

    def close_and_score(stage_name: str, batches) -> None:
        for batch in batches:
            emitted.extend(batch.doc_ids)
            pipe.close_round([(d, oracle[d]) for d in batch.doc_ids])
        report = evaluate(
            pipe.model,
            eval_examples,
            runs=retrain_runs,
            seed=seed + 100,
            train_examples=pipe.training_examples(),
        )
        stages.append(
            StageResult(
                stage=stage_name,
                n_train=len(pipe.state.training),
                macro_f1=report.macro_f1,
                per_class_f1={
                    lab: float(f) for lab, f in zip(pipe.model.labels, report.per_class_f1)
                },
                label_counts=dict(pipe.state.cumulative_counts),
            )
        )

    # stage 1: seed = random + guided
    random_batch = pipe.open_round(Strategy.RANDOM, {"n": random_seed_n})
    emitted.extend(random_batch.doc_ids)
    pipe.close_round([(d, oracle[d]) for d in random_batch.doc_ids])
    exemplars = generate_exemplars(cfg, seed + 2, per_label=guided_exemplars)
    guided_batch = pipe.open_round(
        Strategy.GUIDED, {"exemplars": exemplars, "k_per_exemplar": guided_k}
    )
    close_and_score("seed", [guided_batch])

    # enrichment probe: equal-budget random draw over what the guided round saw
    probe = random_sample(
        pool,
        n=len(guided_batch.doc_ids),
        seed=seed + 3,
        exclude=frozenset(random_batch.doc_ids),
        lenient=True,
    )
    guided_pos = sum(oracle[d] is StanceLabel.POSITIVE for d in guided_batch.doc_ids)
    random_pos = sum(oracle[d] is StanceLabel.POSITIVE for d in probe.doc_ids)
    guided_rate = guided_pos / max(1, len(guided_batch.doc_ids))
    random_rate = random_pos / max(1, len(probe.doc_ids))

    # stage 2: minority-class certainty sampling
    certainty_batch = pipe.open_round(
        Strategy.CERTAINTY, {"n_per_target": certainty_n_per_target}
    )
    close_and_score("certainty", [certainty_batch])

    # stage 3: margin uncertainty sampling
    margin_batch = pipe.open_round(Strategy.MARGIN, {"n": margin_n})
    close_and_score("margin", [margin_batch])

    dupes = len(emitted) - len(set(emitted))
    return BenchRunResult(
        seed=seed,
        stages=stages,
        guided_positive_rate=guided_rate,
        random_positive_rate=random_rate,
        enrichment_ratio=guided_rate / random_rate if random_rate else float("inf"),
        sampled_twice=dupes,
        runtime_s=time.time() - t0,
    )


@dataclass
class TimeseriesBenchResult:
    seed: int
    planted_ratio: float
    recovered_ratio: float
    before_share: float
    after_share: float
    runtime_s: float


def run_timeseries_benchmark(
    seed: int,
    n_docs: int = 16_000,
    before_positive: float = 0.10,
    after_positive: float = 0.30,
    train_n: int = 5_000,
) -> TimeseriesBenchResult:
    """Recover a planted positive-share shift through model-based inference.

    A cleaner generator (higher class-token rate, no blurring) stands in for
    well-separated discourse; the classifier trains on an oracle-labeled
    sample disjoint from the corpus it is then run on.
    """
    t0 = time.time()
    cfg = GeneratorConfig(
        n_docs=0,  # documents are generated directly below
        vocab_per_class=800,
        background_vocab=400,
        class_token_rate=0.72,
        diluted_doc_rate=0.0,
    )
    rng = np.random.default_rng(seed)
    vocab = _class_vocab(cfg)
    background = [f"bg{i}" for i in range(cfg.background_vocab)]

    def draw_label(p_pos: float) -> StanceLabel:
        r = rng.random()
        if r < p_pos:
            return StanceLabel.POSITIVE
        if r < p_pos + 0.10:
            return StanceLabel.NEGATIVE
        return StanceLabel.NEUTRAL

    docs, oracle = [], {}
    for i in range(n_docs):
        before = i < n_docs // 2
        label = draw_label(before_positive if before else after_positive)
        doc_id = f"t{i:05d}"
        docs.append(
            Document(
                id=doc_id,
                text=" ".join(_make_doc_tokens(rng, label, vocab, background, cfg)),
                author_id=f"u{i % 397}",
                created_at=_random_timestamp(rng, before=before),
                language="zxx",
            )
        )
        oracle[doc_id] = label
    corpus = Corpus("shift", tuple(docs))

    # disjoint training sample from the same generator
    train_examples = []
    for i in range(train_n):
        label = draw_label(0.15)
        tokens = _make_doc_tokens(rng, label, vocab, background, cfg)
        train_examples.append((featurize(tokens, BENCH_FEATURES), label.value))
    model = train(
        train_examples,
        TrainConfig(epochs=15, batch_size=48, learning_rate=0.6),
        seed=seed,
        feature_config=BENCH_FEATURES,
    )
    from .classifier import TextStanceClassifier

    series = stance_timeseries(
        corpus, TextStanceClassifier(model), Granularity.MONTH, slices=STUDY_SLICES
    )
    ratio = series.slice_ratios["positive"]
    return TimeseriesBenchResult(
        seed=seed,
        planted_ratio=after_positive / before_positive,
        recovered_ratio=float(ratio) if ratio is not None else float("nan"),
        before_share=series.slice_shares["before"]["positive"],
        after_share=series.slice_shares["after"]["positive"],
        runtime_s=time.time() - t0,
    )


@dataclass
class BenchReport:
    runs: list[BenchRunResult]
    timeseries: TimeseriesBenchResult
    total_runtime_s: float

    @property
    def all_strictly_improving(self) -> bool:
        return all(r.strictly_improving for r in self.runs)

    @property
    def all_enriched_2x(self) -> bool:
        return all(r.enrichment_ratio >= 2.0 for r in self.runs)

    @property
    def min_total_gain(self) -> float:
        return min(r.total_gain for r in self.runs)

    def learning_curve_rows(self) -> list[dict]:
        rows = []
        for r in self.runs:
            for s in r.stages:
                rows.append(
                    {
                        "seed": r.seed,
                        "stage": s.stage,
                        "n_train": s.n_train,
                        "macro_f1": round(s.macro_f1, 4),
                        **{f"f1_{k}": round(v, 4) for k, v in s.per_class_f1.items()},
                    }
                )
        return rows


def run_full_benchmark(base_seed: int = 0, n_runs: int = 5) -> BenchReport:
    t0 = time.time()
    runs = [run_benchmark(base_seed + i) for i in range(n_runs)]
    ts = run_timeseries_benchmark(base_seed)
    return BenchReport(runs=runs, timeseries=ts, total_runtime_s=time.time() - t0)
