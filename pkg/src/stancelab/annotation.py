"""Multi-annotator label store: assignment, agreement, and label resolution.

The store is an append-only event log; the current label state is a
deterministic fold over it (later submissions overwrite, history retained).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DataError, DegenerateMarginalsError
from .labels import STANCE_LABELS, StanceLabel


@dataclass(frozen=True)
class AnnotationRecord:
    doc_id: str
    annotator_id: str
    label: StanceLabel
    round_id: int = 0
    timestamp: datetime | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "doc_id": self.doc_id,
                "annotator_id": self.annotator_id,
                "label": self.label.value,
                "round_id": self.round_id,
                "timestamp": self.timestamp.isoformat() if self.timestamp else None,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    @staticmethod
    def from_obj(obj: dict) -> "AnnotationRecord":
        ts = obj.get("timestamp")
        return AnnotationRecord(
            doc_id=str(obj["doc_id"]),
            annotator_id=str(obj["annotator_id"]),
            label=StanceLabel.parse(obj["label"]),
            round_id=int(obj.get("round_id", 0)),
            timestamp=datetime.fromisoformat(ts) if ts else None,
        )


class Resolution(str, Enum):
    CONSENSUS = "consensus"
    NEGATIVE_PRECEDENCE = "negative_precedence"


@dataclass(frozen=True)
class ResolvedExample:
    doc_id: str
    aggregate_label: StanceLabel
    resolution: Resolution
    contributing_annotators: tuple[str, ...]


def resolve(records: Sequence[AnnotationRecord]) -> ResolvedExample | None:
    """Aggregate one document's labels, or None when unresolvable.

    Unanimous labels resolve by consensus. A negative/neutral split resolves
    to negative. Any non-unanimous mix involving a positive label stays
    unresolved and is excluded from training.
    """
    if not records:
        raise ValueError("resolve requires at least one record")
    doc_ids = {r.doc_id for r in records}
    if len(doc_ids) != 1:
        raise ValueError(f"records span multiple documents: {sorted(doc_ids)}")
    annotators = tuple(sorted({r.annotator_id for r in records}))
    labels = {r.label for r in records}
    if len(labels) == 1:
        return ResolvedExample(records[0].doc_id, labels.pop(), Resolution.CONSENSUS, annotators)
    if labels <= {StanceLabel.NEGATIVE, StanceLabel.NEUTRAL}:
        return ResolvedExample(
            records[0].doc_id, StanceLabel.NEGATIVE, Resolution.NEGATIVE_PRECEDENCE, annotators
        )
    return None


class AnnotationStore:
    """Append-only annotation log with overwrite-on-refold semantics."""

    def __init__(self, log_path: str | Path | None = None):
        self._log: list[AnnotationRecord] = []
        self._path = Path(log_path) if log_path else None
        if self._path and self._path.exists():
            with open(self._path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        self._log.append(AnnotationRecord.from_obj(json.loads(line)))
                    except (json.JSONDecodeError, KeyError, ValueError) as exc:
                        raise DataError(f"{self._path.name}:{lineno}: bad record ({exc})") from exc

    def append(self, record: AnnotationRecord) -> None:
        self._log.append(record)
        if self._path:
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")

    @property
    def history(self) -> tuple[AnnotationRecord, ...]:
        return tuple(self._log)

    def current(self) -> dict[tuple[str, str], AnnotationRecord]:
        """Latest record per (doc_id, annotator_id)."""
        state: dict[tuple[str, str], AnnotationRecord] = {}
        for r in self._log:
            state[(r.doc_id, r.annotator_id)] = r
        return state

    def records_for(self, doc_id: str) -> list[AnnotationRecord]:
        return [r for (d, _), r in sorted(self.current().items()) if d == doc_id]

    def labeled_doc_ids(self) -> set[str]:
        return {d for d, _ in self.current()}

    def annotators(self) -> list[str]:
        return sorted({r.annotator_id for r in self._log})

    def resolve_all(self) -> tuple[list[ResolvedExample], list[str]]:
        """Resolve every labeled document; returns (resolved, unresolved ids)."""
        by_doc: dict[str, list[AnnotationRecord]] = {}
        for (doc_id, _), r in self.current().items():
            by_doc.setdefault(doc_id, []).append(r)
        resolved, unresolved = [], []
        for doc_id in sorted(by_doc):
            res = resolve(by_doc[doc_id])
            if res is None:
                unresolved.append(doc_id)
            else:
                resolved.append(res)
        return resolved, unresolved


def cohens_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Chance-corrected pairwise agreement between two equal-length label lists.

    kappa = (p_o - p_e) / (1 - p_e), with expected agreement p_e computed from
    each rater's marginal label frequencies.
    """
    if len(a) != len(b):
        raise ValueError(f"label lists differ in length: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("label lists must be non-empty")
    labels = sorted({*a, *b}, key=repr)
    index = {lab: i for i, lab in enumerate(labels)}
    ai = np.array([index[x] for x in a])
    bi = np.array([index[x] for x in b])
    n = len(a)
    p_o = float(np.mean(ai == bi))
    pa = np.bincount(ai, minlength=len(labels)) / n
    pb = np.bincount(bi, minlength=len(labels)) / n
    p_e = float(pa @ pb)
    if p_e >= 1.0:
        if p_o == 1.0:
            return 1.0
        raise DegenerateMarginalsError("expected agreement is 1 with observed < 1")
    return (p_o - p_e) / (1.0 - p_e)


def confusion_matrix(
    a: Sequence[StanceLabel], b: Sequence[StanceLabel]
) -> np.ndarray:
    """3x3 count matrix over the canonical stance label order (rows: a)."""
    idx = {lab: i for i, lab in enumerate(STANCE_LABELS)}
    m = np.zeros((3, 3), dtype=int)
    for x, y in zip(a, b):
        m[idx[x], idx[y]] += 1
    return m


@dataclass(frozen=True)
class AgreementReport:
    annotator_pair: tuple[str, str]
    overlap_n: int
    kappa: float
    confusion: np.ndarray

    def __post_init__(self):
        if int(self.confusion.sum()) != self.overlap_n:
            raise ValueError("confusion matrix total must equal overlap_n")


@dataclass
class AgreementSummary:
    reports: list[AgreementReport]
    kappa_min: float | None = None
    kappa_max: float | None = None


def agreement_report(store: AnnotationStore) -> AgreementSummary:
    """Pairwise kappa and confusion for every annotator pair with overlap."""
    current = store.current()
    by_annotator: dict[str, dict[str, StanceLabel]] = {}
    for (doc_id, annotator), rec in current.items():
        by_annotator.setdefault(annotator, {})[doc_id] = rec.label
    annotators = sorted(by_annotator)
    reports = []
    for i, x in enumerate(annotators):
        for y in annotators[i + 1 :]:
            shared = sorted(set(by_annotator[x]) & set(by_annotator[y]))
            if not shared:
                continue
            ax = [by_annotator[x][d] for d in shared]
            ay = [by_annotator[y][d] for d in shared]
            try:
                k = cohens_kappa(ax, ay)
            except DegenerateMarginalsError:
                k = float("nan")
            reports.append(
                AgreementReport(
                    annotator_pair=(x, y),
                    overlap_n=len(shared),
                    kappa=k,
                    confusion=confusion_matrix(ax, ay),
                )
            )
    kappas = [r.kappa for r in reports if not np.isnan(r.kappa)]
    return AgreementSummary(
        reports=reports,
        kappa_min=min(kappas) if kappas else None,
        kappa_max=max(kappas) if kappas else None,
    )


@dataclass
class Assignment:
    """doc_id -> annotator ids, plus the per-pair overlap added this batch."""

    by_doc: dict[str, tuple[str, ...]] = field(default_factory=dict)
    pair_overlap_added: dict[tuple[str, str], int] = field(default_factory=dict)

    def queue_for(self, annotator_id: str) -> list[str]:
        return [d for d, annotators in self.by_doc.items() if annotator_id in annotators]


def assign(
    doc_ids: Sequence[str],
    annotators: Sequence[str],
    overlap_target: int = 0,
    prior_overlap: dict[tuple[str, str], int] | None = None,
) -> Assignment:
    """Deterministically assign a batch to annotators.

    Docs are double-assigned round-robin over annotator pairs whose cumulative
    overlap (including prior rounds) is below ``overlap_target``; the rest are
    single-assigned to the least-loaded annotator. Emits a warning when the
    target is unreachable with this batch.
    """
    if not annotators:
        raise ValueError("need at least one annotator")
    annotators = sorted(set(annotators))
    pairs = [
        (a, b) for i, a in enumerate(annotators) for b in annotators[i + 1 :]
    ]
    overlap = {p: (prior_overlap or {}).get(p, 0) for p in pairs}
    added: dict[tuple[str, str], int] = {p: 0 for p in pairs}
    load = {a: 0 for a in annotators}
    out: dict[str, tuple[str, ...]] = {}

    cursor = 0
    for doc in doc_ids:
        deficient = [p for p in pairs if overlap[p] < overlap_target]
        if deficient:
            pair = deficient[cursor % len(deficient)]
            cursor += 1
            overlap[pair] += 1
            added[pair] += 1
            out[doc] = pair
            load[pair[0]] += 1
            load[pair[1]] += 1
        else:
            who = min(annotators, key=lambda a: (load[a], a))
            out[doc] = (who,)
            load[who] += 1

    if pairs and overlap_target and any(overlap[p] < overlap_target for p in pairs):
        short = {p: overlap_target - overlap[p] for p in pairs if overlap[p] < overlap_target}
        warnings.warn(
            f"overlap target {overlap_target} not reached for {len(short)} pair(s); "
            "carrying deficit into future rounds",
            stacklevel=2,
        )
    return Assignment(by_doc=out, pair_overlap_added={p: n for p, n in added.items() if n})


def read_label_file(path) -> list[StanceLabel]:
    """One label per line (positive/neutral/negative), for CLI agreement checks."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"label file not found: {path}")
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                labels.append(StanceLabel.parse(line))
            except ValueError as exc:
                raise DataError(f"{path.name}:{lineno}: {exc}") from exc
    return labels
