"""Active-learning sampling strategies and batch-round orchestration.

Four strategies: uniform random, guided (exemplar nearest-neighbor
expansion), minority-class certainty, and margin uncertainty. A global
exclusion set guarantees no document is ever emitted in two batches.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotation import ResolvedExample
from .classifier import (
    ClassifierModel,
    FeatureConfig,
    StageTag,
    TextStanceClassifier,
    TrainConfig,
    featurize,
    train,
)
from .corpus import Corpus, SliceLabel, SlicePair
from .embedding import DocVector, EmbeddingModel, embed_document
from .errors import DataError
from .labels import StanceLabel
from .textproc import tokenize


class Strategy(str, Enum):
    RANDOM = "random"
    GUIDED = "guided"
    CERTAINTY = "certainty"
    MARGIN = "margin"


@dataclass(frozen=True)
class Exemplar:
    """A short annotator-written document illustrating one stance."""

    annotator_id: str
    text: str
    intended_label: StanceLabel

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("exemplar text must be non-empty")
        if self.intended_label is StanceLabel.NEUTRAL:
            raise ValueError("exemplars must be positive or negative")


@dataclass
class SamplingBatch:
    round_id: int
    strategy: Strategy
    doc_ids: tuple[str, ...]
    per_slice_quota: dict[str, int] | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ValueError("batch contains duplicate doc ids")
        if self.per_slice_quota is not None:
            if sum(self.per_slice_quota.values()) != len(self.doc_ids):
                raise ValueError("slice quotas must sum to batch size")


@dataclass
class PosteriorTable:
    """Posterior matrix over an ordered pool of document ids."""

    ids: list[str]
    probs: np.ndarray  # N x K
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.ids) != self.probs.shape[0]:
            raise ValueError("ids and probs must be parallel")
        if len(self.labels) != self.probs.shape[1]:
            raise ValueError("labels and probs width must agree")


def _split_quota(n: int) -> dict[str, int]:
    # odd totals give the extra item to the before slice (fixed rule)
    return {
        SliceLabel.BEFORE.value: (n + 1) // 2,
        SliceLabel.AFTER.value: n // 2,
    }


def random_sample(
    pool: Corpus,
    n: int,
    seed: int,
    slices: SlicePair | None = None,
    exclude: set[str] | frozenset[str] = frozenset(),
    lenient: bool = False,
    round_id: int = 0,
) -> SamplingBatch:
    """Uniform sample without replacement; optional equal per-slice quotas."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    eligible = [d for d in pool if d.id not in exclude]

    def draw(ids: list[str], m: int, what: str) -> list[str]:
        if m > len(ids):
            if not lenient:
                raise DataError(f"{what}: requested {m} but only {len(ids)} eligible")
            warnings.warn(f"{what}: requested {m}, returning all {len(ids)}", stacklevel=3)
            m = len(ids)
        picked = rng.choice(len(ids), size=m, replace=False)
        return [ids[i] for i in picked]

    if slices is None:
        chosen = draw([d.id for d in eligible], n, "random sample")
        return SamplingBatch(round_id, Strategy.RANDOM, tuple(chosen))

    quota = _split_quota(n)
    by_slice = {SliceLabel.BEFORE.value: [], SliceLabel.AFTER.value: []}
    for d in eligible:
        lab = slices.label_for(d)
        if lab is not None:
            by_slice[lab.value].append(d.id)
    chosen = []
    actual: dict[str, int] = {}
    for slice_name, want in quota.items():
        got = draw(by_slice[slice_name], want, f"random sample ({slice_name})")
        actual[slice_name] = len(got)
        chosen.extend(got)
    return SamplingBatch(round_id, Strategy.RANDOM, tuple(chosen), per_slice_quota=actual)


def guided_sample(
    pool: Sequence[DocVector],
    exemplars: Sequence[Exemplar],
    model: EmbeddingModel,
    k_per_exemplar: int,
    slices_of: dict[str, str] | None = None,
    exclude: set[str] | frozenset[str] = frozenset(),
    round_id: int = 0,
) -> SamplingBatch:
    """Expand each exemplar into its k nearest unlabeled pool documents.

    Exemplars are processed in submission order; a document claimed by an
    earlier exemplar is skipped and the later exemplar takes its next-nearest.
    With ``slices_of`` (doc_id -> 'before'/'after'), each exemplar's k splits
    as evenly as possible across slices, odd k favoring before.
    """
    if not exemplars:
        raise ValueError("exemplars must be non-empty")
    if k_per_exemplar < 1:
        raise ValueError("k_per_exemplar must be >= 1")
    usable = [dv for dv in pool if dv.doc_id not in exclude and not dv.unresolved]
    if not usable:
        raise DataError("no eligible pool documents with resolvable vectors")
    ids = np.array([dv.doc_id for dv in usable])
    matrix = np.stack([dv.vector for dv in usable]).astype(np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    unit = matrix / norms[:, None]

    claimed: set[str] = set()
    order_out: list[str] = []
    per_exemplar: dict[int, list[str]] = {}
    skipped_exemplars = 0
    total_quota = {SliceLabel.BEFORE.value: 0, SliceLabel.AFTER.value: 0}

    for e_idx, ex in enumerate(exemplars):
        ev = embed_document(model, tokenize(ex.text, keep_hashtags=True))
        if ev.unresolved:
            skipped_exemplars += 1
            continue
        q = ev.vector.astype(np.float64)
        sims = unit @ (q / np.linalg.norm(q))
        ranked = np.lexsort((ids, -sims))
        if slices_of is None:
            want = {None: k_per_exemplar}
        else:
            want = dict(_split_quota(k_per_exemplar))
        taken: list[str] = []
        for i in ranked:
            if sum(want.values()) == 0:
                break
            doc_id = str(ids[i])
            if doc_id in claimed:
                continue
            key = None if slices_of is None else slices_of.get(doc_id)
            if key not in want or want[key] == 0:
                continue
            want[key] -= 1
            claimed.add(doc_id)
            taken.append(doc_id)
            if slices_of is not None:
                total_quota[key] += 1
        per_exemplar[e_idx] = taken
        order_out.extend(taken)

    requested = (len(exemplars) - skipped_exemplars) * k_per_exemplar
    if len(order_out) < requested:
        warnings.warn(
            f"guided sample returned {len(order_out)} of {requested} requested documents",
            stacklevel=2,
        )
    return SamplingBatch(
        round_id,
        Strategy.GUIDED,
        tuple(order_out),
        per_slice_quota=total_quota if slices_of is not None else None,
        metadata={
            "k_per_exemplar": k_per_exemplar,
            "exemplar_claims": {str(i): v for i, v in per_exemplar.items()},
            "skipped_exemplars": skipped_exemplars,
        },
    )


def _top_n(order: np.ndarray, ids: list[str], n: int, what: str) -> tuple[str, ...]:
    if n > len(ids):
        warnings.warn(f"{what}: requested {n}, pool holds {len(ids)}", stacklevel=3)
        n = len(ids)
    return tuple(str(ids[i]) for i in order[:n])


def certainty_sample(
    posteriors: PosteriorTable,
    target: StanceLabel | str,
    n: int,
    exclude: set[str] | frozenset[str] = frozenset(),
    round_id: int = 0,
) -> SamplingBatch:
    """Top-n pool documents by posterior of the target class, descending."""
    if n < 1:
        raise ValueError("n must be >= 1")
    target = StanceLabel.parse(target if isinstance(target, str) else target.value)
    try:
        col = posteriors.labels.index(target.value)
    except ValueError:
        raise ValueError(f"target {target.value!r} not among posterior labels") from None
    keep = [i for i, d in enumerate(posteriors.ids) if d not in exclude]
    ids = [posteriors.ids[i] for i in keep]
    p = posteriors.probs[keep, col]
    order = np.lexsort((np.array(ids), -p))
    chosen = _top_n(order, ids, n, "certainty sample")
    return SamplingBatch(
        round_id,
        Strategy.CERTAINTY,
        chosen,
        metadata={"target": target.value},
    )


def margin_sample(
    posteriors: PosteriorTable,
    n: int,
    exclude: set[str] | frozenset[str] = frozenset(),
    round_id: int = 0,
) -> SamplingBatch:
    """n smallest top-two posterior margins, ascending (most uncertain first)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    keep = [i for i, d in enumerate(posteriors.ids) if d not in exclude]
    ids = [posteriors.ids[i] for i in keep]
    top2 = np.partition(posteriors.probs[keep], -2, axis=1)[:, -2:]
    margins = top2[:, 1] - top2[:, 0]
    order = np.lexsort((np.array(ids), margins))
    chosen = _top_n(order, ids, n, "margin sample")
    return SamplingBatch(round_id, Strategy.MARGIN, chosen, metadata={})


@dataclass
class RoundRecord:
    round_id: int
    strategy: Strategy
    params: dict
    doc_ids: tuple[str, ...]
    open: bool = True
    label_counts: dict[str, int] = field(default_factory=dict)
    unresolved: int = 0


_STAGE_AFTER_STRATEGY = {
    Strategy.RANDOM: StageTag.SEED,
    Strategy.GUIDED: StageTag.SEED,
    Strategy.CERTAINTY: StageTag.CERTAINTY,
    Strategy.MARGIN: StageTag.UNCERTAINTY,
}
_STAGE_ORDER = [StageTag.SEED, StageTag.CERTAINTY, StageTag.UNCERTAINTY]


@dataclass
class PipelineState:
    """Durable record of an active-learning run: what was sampled, what was
    learned, and which stage the classifier has reached."""

    excluded: set[str] = field(default_factory=set)
    pending: dict[str, int] = field(default_factory=dict)  # doc_id -> round_id
    rounds: list[RoundRecord] = field(default_factory=list)
    training: list[tuple[str, str]] = field(default_factory=list)  # (doc_id, label)
    cumulative_counts: dict[str, int] = field(default_factory=dict)
    stage: StageTag = StageTag.SEED

    @property
    def current_round(self) -> RoundRecord | None:
        if self.rounds and self.rounds[-1].open:
            return self.rounds[-1]
        return None

    def to_json(self) -> str:
        return json.dumps(
            {
                "excluded": sorted(self.excluded),
                "pending": dict(sorted(self.pending.items())),
                "rounds": [
                    {
                        "round_id": r.round_id,
                        "strategy": r.strategy.value,
                        "params": r.params,
                        "doc_ids": list(r.doc_ids),
                        "open": r.open,
                        "label_counts": r.label_counts,
                        "unresolved": r.unresolved,
                    }
                    for r in self.rounds
                ],
                "training": [list(t) for t in self.training],
                "cumulative_counts": self.cumulative_counts,
                "stage": self.stage.value,
            },
            ensure_ascii=False,
            sort_keys=True,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PipelineState":
        obj = json.loads(text)
        state = cls(
            excluded=set(obj["excluded"]),
            pending={k: int(v) for k, v in obj["pending"].items()},
            training=[(a, b) for a, b in obj["training"]],
            cumulative_counts=obj["cumulative_counts"],
            stage=StageTag(obj["stage"]),
        )
        for r in obj["rounds"]:
            state.rounds.append(
                RoundRecord(
                    round_id=int(r["round_id"]),
                    strategy=Strategy(r["strategy"]),
                    params=r["params"],
                    doc_ids=tuple(r["doc_ids"]),
                    open=bool(r["open"]),
                    label_counts=r["label_counts"],
                    unresolved=int(r["unresolved"]),
                )
            )
        return state

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PipelineState":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


class ActiveLearningPipeline:
    """Batch active learning over a fixed pool with a retrain-per-round loop."""

    def __init__(
        self,
        pool: Corpus,
        feature_config: FeatureConfig,
        train_config: TrainConfig,
        embedding: EmbeddingModel | None = None,
        slices: SlicePair | None = None,
        seed: int = 0,
        warm_start: bool = True,
        state: PipelineState | None = None,
    ):
        self.pool = pool
        self.feature_config = feature_config
        self.train_config = train_config
        self.embedding = embedding
        self.slices = slices
        self.seed = seed
        self.warm_start = warm_start
        self.state = state or PipelineState()
        self.model: ClassifierModel | None = None
        self._features: dict[str, object] = {}
        self._doc_vectors: list[DocVector] | None = None

    def _feature(self, doc_id: str, text: str):
        fv = self._features.get(doc_id)
        if fv is None:
            fv = featurize(tokenize(text, keep_hashtags=True), self.feature_config, self.embedding)
            self._features[doc_id] = fv
        return fv

    def _slices_of(self) -> dict[str, str] | None:
        if self.slices is None:
            return None
        out = {}
        for d in self.pool:
            lab = self.slices.label_for(d)
            if lab is not None:
                out[d.id] = lab.value
        return out

    def posteriors(self, eligible_only: bool = True) -> PosteriorTable:
        if self.model is None:
            raise DataError("no trained model yet; close a seed round first")
        blocked = self.state.excluded if eligible_only else set()
        docs = [d for d in self.pool if d.id not in blocked]
        features = [self._feature(d.id, d.text) for d in docs]
        from .classifier import posterior_batch

        probs = posterior_batch(self.model, features)
        return PosteriorTable(
            ids=[d.id for d in docs], probs=probs, labels=self.model.labels
        )

    def pool_vectors(self) -> list[DocVector]:
        if self.embedding is None:
            raise DataError("guided sampling requires an embedding model")
        if self._doc_vectors is None:
            from .embedding import doc_vectors

            self._doc_vectors = doc_vectors(self.embedding, self.pool)
        return self._doc_vectors

    def open_round(self, strategy: Strategy, params: dict) -> SamplingBatch:
        """Sample a batch and mark its documents pending."""
        if self.state.current_round is not None:
            raise DataError("a round is already open")
        round_id = len(self.state.rounds)
        if strategy in (Strategy.CERTAINTY, Strategy.MARGIN) and self.model is None:
            raise DataError(f"{strategy.value} sampling requires a trained model")
        exclude = frozenset(self.state.excluded)
        if strategy is Strategy.RANDOM:
            batch = random_sample(
                self.pool,
                n=int(params["n"]),
                seed=int(params.get("seed", self.seed + round_id)),
                slices=self.slices if params.get("use_slices", True) else None,
                exclude=exclude,
                lenient=bool(params.get("lenient", False)),
                round_id=round_id,
            )
        elif strategy is Strategy.GUIDED:
            batch = guided_sample(
                self.pool_vectors(),
                exemplars=params["exemplars"],
                model=self.embedding,
                k_per_exemplar=int(params.get("k_per_exemplar", 25)),
                slices_of=self._slices_of() if params.get("use_slices", True) else None,
                exclude=exclude,
                round_id=round_id,
            )
        elif strategy is Strategy.CERTAINTY:
            table = self.posteriors()
            running_exclude = set(exclude)
            parts = []
            # sequential per-target pools: earlier targets' picks are excluded
            for target in params.get("targets", [StanceLabel.POSITIVE, StanceLabel.NEGATIVE]):
                part = certainty_sample(
                    table,
                    target=target,
                    n=int(params.get("n_per_target", 750)),
                    exclude=frozenset(running_exclude),
                    round_id=round_id,
                )
                running_exclude.update(part.doc_ids)
                parts.append(part)
            batch = SamplingBatch(
                round_id,
                Strategy.CERTAINTY,
                tuple(d for p in parts for d in p.doc_ids),
                metadata={"targets": [p.metadata["target"] for p in parts]},
            )
        elif strategy is Strategy.MARGIN:
            batch = margin_sample(
                self.posteriors(),
                n=int(params.get("n", 1500)),
                exclude=exclude,
                round_id=round_id,
            )
        else:
            raise ValueError(f"unknown strategy {strategy}")

        assert not (set(batch.doc_ids) & self.state.excluded), "emitted an excluded doc"
        self.state.excluded.update(batch.doc_ids)
        self.state.pending.update({d: round_id for d in batch.doc_ids})
        self.state.rounds.append(
            RoundRecord(
                round_id=round_id,
                strategy=strategy,
                params={k: v for k, v in params.items() if k != "exemplars"},
                doc_ids=batch.doc_ids,
            )
        )
        return batch

    def close_round(self, resolved: Sequence[ResolvedExample | tuple[str, StanceLabel]]) -> ClassifierModel:
        """Fold resolved labels into the training set and retrain the model."""
        rec = self.state.current_round
        if rec is None:
            raise DataError("no open round")
        batch_ids = set(rec.doc_ids)
        added = 0
        for item in resolved:
            if isinstance(item, ResolvedExample):
                doc_id, label = item.doc_id, item.aggregate_label
            else:
                doc_id, raw = item
                label = raw if isinstance(raw, StanceLabel) else StanceLabel.parse(str(raw))
            if doc_id not in batch_ids:
                raise DataError(f"resolved doc {doc_id!r} is not part of round {rec.round_id}")
            self.state.training.append((doc_id, label.value))
            rec.label_counts[label.value] = rec.label_counts.get(label.value, 0) + 1
            self.state.cumulative_counts[label.value] = (
                self.state.cumulative_counts.get(label.value, 0) + 1
            )
            added += 1
        rec.unresolved = len(rec.doc_ids) - added
        for d in rec.doc_ids:
            self.state.pending.pop(d, None)
        rec.open = False

        next_stage = _STAGE_AFTER_STRATEGY[rec.strategy]
        if _STAGE_ORDER.index(next_stage) > _STAGE_ORDER.index(self.state.stage):
            self.state.stage = next_stage

        examples = self.training_examples()
        self.model = train(
            examples,
            config=self.train_config,
            seed=self.seed + rec.round_id,
            feature_config=self.feature_config,
            stage_tag=self.state.stage,
            init=self.model if self.warm_start else None,
        )
        return self.model

    def training_examples(self) -> list[tuple[object, str]]:
        """Featurized accumulated training set (feature vector, label value)."""
        text_of = {d.id: d.text for d in self.pool}
        return [
            (self._feature(doc_id, text_of[doc_id]), label)
            for doc_id, label in self.state.training
        ]

    def classifier(self) -> TextStanceClassifier:
        if self.model is None:
            raise DataError("no trained model yet")
        return TextStanceClassifier(self.model, self.embedding)
