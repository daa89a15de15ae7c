"""Durable service state: an append-only event log and its deterministic fold.

Every state transition is an event; the in-memory state is a pure fold over
the log, so replaying the log after a crash reconstructs the exact same
session, round and label state. Events record their *effects* (sampled doc
ids, assignments), never recomputed on replay.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..annotation import AnnotationRecord, AnnotationStore
from ..errors import DataError
from ..labels import StanceLabel


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    data: dict

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "kind": self.kind, "data": self.data},
            ensure_ascii=False,
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "Event":
        obj = json.loads(line)
        return Event(seq=int(obj["seq"]), kind=str(obj["kind"]), data=dict(obj["data"]))


def read_events(path) -> list[Event]:
    path = Path(path)
    if not path.exists():
        return []
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(Event.from_json(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path.name}:{lineno}: bad event ({exc})") from exc
    return events


def append_event(path, event: Event) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(event.to_json() + "\n")
        fh.flush()


@dataclass
class SessionState:
    session_id: str
    annotator_id: str
    queue: tuple[str, ...]
    cursor: int = 0
    started_at: str = ""

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.queue)

    @property
    def current_doc(self) -> str | None:
        return None if self.done else self.queue[self.cursor]


@dataclass
class RoundState:
    round_id: int
    strategy: str
    params: dict
    doc_ids: tuple[str, ...]
    assignments: dict[str, tuple[str, ...]]  # doc_id -> annotator ids
    open: bool = True
    resolution: dict = field(default_factory=dict)
    model_path: str = ""


class ServiceState:
    """Fold of the event log. Mutations only through apply()."""

    def __init__(self):
        self.next_seq = 0
        self.rounds: dict[int, RoundState] = {}
        self.sessions: dict[str, SessionState] = {}
        self.exemplars: list[dict] = []
        self.exemplars_consumed = 0
        self.labels = AnnotationStore()
        self.skips: set[tuple[str, str]] = set()  # (doc_id, annotator_id)
        self.pair_overlap: dict[tuple[str, str], int] = {}
        self.training: list[tuple[str, str]] = []  # (doc_id, label value)
        self.stage: str = "seed"
        self.current_model_path: str = ""

    # -- queries ----------------------------------------------------------

    @property
    def open_round(self) -> RoundState | None:
        for r in self.rounds.values():
            if r.open:
                return r
        return None

    def excluded_doc_ids(self) -> set[str]:
        return {d for r in self.rounds.values() for d in r.doc_ids}

    def cumulative_label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, label in self.training:
            counts[label] = counts.get(label, 0) + 1
        return counts

    def labels_for_round(self, round_id: int) -> int:
        docs = set(self.rounds[round_id].doc_ids)
        return sum(1 for (d, _a) in self.labels.current() if d in docs)

    def pending_assignments(self, round_state: RoundState) -> list[tuple[str, str]]:
        """(doc, annotator) pairs still lacking a label or an explicit skip."""
        current = self.labels.current()
        out = []
        for doc_id, annotators in round_state.assignments.items():
            for a in annotators:
                if (doc_id, a) not in current and (doc_id, a) not in self.skips:
                    out.append((doc_id, a))
        return out

    def unused_exemplars(self) -> list[dict]:
        return self.exemplars[self.exemplars_consumed :]

    def snapshot(self) -> dict:
        """Canonical serializable view, used to verify replay determinism."""
        # round-trip through JSON so snapshots share no mutable state
        return json.loads(json.dumps(self._snapshot_raw(), sort_keys=True))

    def _snapshot_raw(self) -> dict:
        return {
            "next_seq": self.next_seq,
            "rounds": {
                str(r.round_id): {
                    "strategy": r.strategy,
                    "doc_ids": list(r.doc_ids),
                    "assignments": {k: list(v) for k, v in sorted(r.assignments.items())},
                    "open": r.open,
                    "resolution": r.resolution,
                    "model_path": r.model_path,
                }
                for r in sorted(self.rounds.values(), key=lambda r: r.round_id)
            },
            "sessions": {
                s.session_id: {
                    "annotator_id": s.annotator_id,
                    "queue": list(s.queue),
                    "cursor": s.cursor,
                }
                for s in self.sessions.values()
            },
            "exemplars": self.exemplars,
            "exemplars_consumed": self.exemplars_consumed,
            "labels": [r.to_json() for r in self.labels.history],
            "skips": sorted(map(list, self.skips)),
            "pair_overlap": {f"{a}|{b}": n for (a, b), n in sorted(self.pair_overlap.items())},
            "training": [list(t) for t in self.training],
            "stage": self.stage,
            "current_model_path": self.current_model_path,
        }

    # -- transitions --------------------------------------------------------

    def apply(self, event: Event) -> None:
        if event.seq != self.next_seq:
            raise DataError(f"event out of order: got seq {event.seq}, expected {self.next_seq}")
        handler = getattr(self, f"_on_{event.kind}", None)
        if handler is None:
            raise DataError(f"unknown event kind {event.kind!r}")
        handler(event.data)
        self.next_seq += 1

    def _on_round_opened(self, d: dict) -> None:
        rid = int(d["round_id"])
        self.rounds[rid] = RoundState(
            round_id=rid,
            strategy=str(d["strategy"]),
            params=dict(d.get("params", {})),
            doc_ids=tuple(d["doc_ids"]),
            assignments={k: tuple(v) for k, v in d["assignments"].items()},
        )
        for pair_key, n in d.get("pair_overlap_added", {}).items():
            a, b = pair_key.split("|")
            self.pair_overlap[(a, b)] = self.pair_overlap.get((a, b), 0) + int(n)
        self.exemplars_consumed = int(d.get("exemplars_consumed", self.exemplars_consumed))

    def _on_session_created(self, d: dict) -> None:
        s = SessionState(
            session_id=str(d["session_id"]),
            annotator_id=str(d["annotator_id"]),
            queue=tuple(d["queue"]),
            started_at=str(d.get("started_at", "")),
        )
        self.sessions[s.session_id] = s

    def _on_label_submitted(self, d: dict) -> None:
        record = AnnotationRecord.from_obj(d)
        self.labels.append(record)
        sess = self.sessions.get(str(d.get("session_id", "")))
        if sess and sess.current_doc == record.doc_id:
            sess.cursor += 1

    def _on_doc_skipped(self, d: dict) -> None:
        doc_id, annotator = str(d["doc_id"]), str(d["annotator_id"])
        self.skips.add((doc_id, annotator))
        sess = self.sessions.get(str(d.get("session_id", "")))
        if sess and sess.current_doc == doc_id:
            sess.cursor += 1

    def _on_exemplar_added(self, d: dict) -> None:
        StanceLabel.parse(d["intended_label"])  # validated at append time too
        self.exemplars.append(
            {
                "annotator_id": str(d["annotator_id"]),
                "text": str(d["text"]),
                "intended_label": str(d["intended_label"]),
            }
        )

    def _on_round_closed(self, d: dict) -> None:
        rid = int(d["round_id"])
        r = self.rounds[rid]
        r.open = False
        r.resolution = dict(d.get("resolution", {}))
        r.model_path = str(d.get("model_path", ""))
        self.stage = str(d.get("stage", self.stage))
        self.current_model_path = r.model_path or self.current_model_path
        for doc_id, label in d.get("resolved", []):
            self.training.append((str(doc_id), str(label)))


def fold(events: Iterable[Event]) -> ServiceState:
    state = ServiceState()
    for e in events:
        state.apply(e)
    return state
