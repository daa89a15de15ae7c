"""FastAPI application wrapping the sampling/annotation/classifier core.

All mutations append to the event log before updating in-memory state, and
every event records its effects, so a crashed service resumes by replaying
the log. Writes are serialized through a single lock; reads are cheap.
"""

from __future__ import annotations

import threading
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.staticfiles import StaticFiles

from ..annotation import agreement_report, assign, resolve
from ..classifier import (
    ClassifierModel,
    StageTag,
    posterior_batch,
    featurize,
    train,
)
from ..corpus import Corpus, IngestConfig, ingest
from ..embedding import EmbeddingModel, doc_vectors
from ..errors import DataError
from ..labels import StanceLabel
from ..sampling import (
    Exemplar,
    PosteriorTable,
    Strategy,
    certainty_sample,
    guided_sample,
    margin_sample,
    random_sample,
)
from ..textproc import tokenize
from . import schemas
from .config import ServiceConfig
from .state import Event, ServiceState, append_event, fold, read_events

_STAGE_AFTER = {
    "random": "seed",
    "guided": "seed",
    "certainty": "certainty",
    "margin": "uncertainty",
}
_STAGE_ORDER = ["seed", "certainty", "uncertainty"]


class ServiceRuntime:
    """Owns the durable state and executes API commands."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.lock = threading.RLock()
        config.data_dir.mkdir(parents=True, exist_ok=True)
        config.models_dir.mkdir(parents=True, exist_ok=True)
        self.tokens = config.load_tokens()
        self.annotators = sorted(set(self.tokens.values()))
        if not config.pool_path.exists():
            raise DataError(f"pool corpus not found: {config.pool_path}")
        self.pool: Corpus = ingest(
            config.pool_path,
            IngestConfig(language=config.language_filter, lenient=True),
            name="pool",
        ).corpus
        self.embedding: EmbeddingModel | None = (
            EmbeddingModel.load(config.embedding_path)
            if config.embedding_path and Path(config.embedding_path).exists()
            else None
        )
        self.state: ServiceState = fold(read_events(config.event_log_path))
        self._model: ClassifierModel | None = None
        if self.state.current_model_path and Path(self.state.current_model_path).exists():
            self._model = ClassifierModel.load(self.state.current_model_path)
        self._features: dict[str, object] = {}
        self._doc_vectors = None

    # -- internals ----------------------------------------------------------

    def _append(self, kind: str, data: dict) -> Event:
        event = Event(seq=self.state.next_seq, kind=kind, data=data)
        append_event(self.config.event_log_path, event)
        self.state.apply(event)
        return event

    def _feature(self, doc_id: str, text: str):
        fv = self._features.get(doc_id)
        if fv is None:
            fv = featurize(tokenize(text, keep_hashtags=True), self.config.feature_config)
            self._features[doc_id] = fv
        return fv

    def _pool_vectors(self):
        if self.embedding is None:
            raise DataError("guided rounds require an embedding model in the data directory")
        if self._doc_vectors is None:
            self._doc_vectors = doc_vectors(self.embedding, self.pool)
        return self._doc_vectors

    def _posterior_table(self, exclude: set[str]) -> PosteriorTable:
        if self._model is None:
            raise DataError("no trained model yet; close a seed round first")
        docs = [d for d in self.pool if d.id not in exclude]
        if not docs:
            raise DataError("no eligible pool documents remain")
        probs = posterior_batch(self._model, [self._feature(d.id, d.text) for d in docs])
        return PosteriorTable(ids=[d.id for d in docs], probs=probs, labels=self._model.labels)

    def _slices_of(self) -> dict[str, str] | None:
        if self.config.slices is None:
            return None
        out = {}
        for d in self.pool:
            lab = self.config.slices.label_for(d)
            if lab is not None:
                out[d.id] = lab.value
        return out

    def _round_status(self, round_id: int) -> schemas.RoundStatus:
        r = self.state.rounds[round_id]
        if r.open:
            resolved = 0
            docs = set(r.doc_ids)
            by_doc: dict[str, list] = {}
            for (doc_id, _a), rec in self.state.labels.current().items():
                if doc_id in docs:
                    by_doc.setdefault(doc_id, []).append(rec)
            resolved = sum(1 for recs in by_doc.values() if resolve(recs) is not None)
        else:
            resolved = int(r.resolution.get("consensus", 0)) + int(
                r.resolution.get("negative_precedence", 0)
            )
        return schemas.RoundStatus(
            round_id=r.round_id,
            strategy=r.strategy,
            total=len(r.doc_ids),
            labeled=self.state.labels_for_round(r.round_id),
            resolved=resolved,
            open=r.open,
        )

    # -- commands -----------------------------------------------------------

    def open_round(self, strategy: str, params: dict) -> schemas.RoundStatus:
        with self.lock:
            try:
                strat = Strategy(strategy)
            except ValueError:
                raise HTTPException(422, f"unknown strategy {strategy!r}")
            current = self.state.open_round
            if current is not None:
                if current.strategy == strat.value and current.params == params:
                    return self._round_status(current.round_id)  # idempotent retry
                raise HTTPException(409, f"round {current.round_id} is already open")
            round_id = len(self.state.rounds)
            exclude = frozenset(self.state.excluded_doc_ids())
            exemplars_consumed = self.state.exemplars_consumed
            try:
                if strat is Strategy.RANDOM:
                    batch = random_sample(
                        self.pool,
                        n=int(params.get("n", 500)),
                        seed=int(params.get("seed", round_id)),
                        slices=self.config.slices if params.get("use_slices", True) else None,
                        exclude=exclude,
                        lenient=bool(params.get("lenient", False)),
                        round_id=round_id,
                    )
                elif strat is Strategy.GUIDED:
                    pending = self.state.unused_exemplars()
                    if not pending:
                        raise DataError("no unused exemplars; submit exemplars first")
                    exemplars = [
                        Exemplar(e["annotator_id"], e["text"], StanceLabel.parse(e["intended_label"]))
                        for e in pending
                    ]
                    batch = guided_sample(
                        self._pool_vectors(),
                        exemplars,
                        self.embedding,
                        k_per_exemplar=int(params.get("k_per_exemplar", 25)),
                        slices_of=self._slices_of() if params.get("use_slices", True) else None,
                        exclude=exclude,
                        round_id=round_id,
                    )
                    exemplars_consumed = len(self.state.exemplars)
                elif strat is Strategy.CERTAINTY:
                    table = self._posterior_table(set(exclude))
                    running = set(exclude)
                    ids: list[str] = []
                    for target in (StanceLabel.POSITIVE, StanceLabel.NEGATIVE):
                        part = certainty_sample(
                            table,
                            target=target,
                            n=int(params.get("n_per_target", 750)),
                            exclude=frozenset(running),
                            round_id=round_id,
                        )
                        running.update(part.doc_ids)
                        ids.extend(part.doc_ids)
                    batch_ids = tuple(ids)
                    batch = None
                else:
                    batch = margin_sample(
                        self._posterior_table(set(exclude)),
                        n=int(params.get("n", 1500)),
                        exclude=exclude,
                        round_id=round_id,
                    )
            except DataError as exc:
                raise HTTPException(409, str(exc))
            doc_ids = batch_ids if batch is None else batch.doc_ids
            assignment = assign(
                doc_ids,
                self.annotators,
                overlap_target=int(params.get("overlap_target", self.config.overlap_target)),
                prior_overlap=self.state.pair_overlap,
            )
            self._append(
                "round_opened",
                {
                    "round_id": round_id,
                    "strategy": strat.value,
                    "params": params,
                    "doc_ids": list(doc_ids),
                    "assignments": {k: list(v) for k, v in assignment.by_doc.items()},
                    "pair_overlap_added": {
                        f"{a}|{b}": n for (a, b), n in assignment.pair_overlap_added.items()
                    },
                    "exemplars_consumed": exemplars_consumed,
                },
            )
            return self._round_status(round_id)

    def close_round(self, force: bool = False) -> schemas.ResolutionSummary:
        with self.lock:
            r = self.state.open_round
            if r is None:
                raise HTTPException(409, "no open round")
            pending = self.state.pending_assignments(r)
            if pending and not force:
                raise HTTPException(
                    409,
                    f"{len(pending)} assignments still unlabeled; "
                    "label or skip them, or pass force=true",
                )
            by_doc: dict[str, list] = {}
            docs = set(r.doc_ids)
            for (doc_id, _a), rec in self.state.labels.current().items():
                if doc_id in docs:
                    by_doc.setdefault(doc_id, []).append(rec)
            resolved_pairs: list[tuple[str, str]] = []
            stats = {"consensus": 0, "negative_precedence": 0, "unresolved": 0}
            for doc_id in r.doc_ids:
                recs = by_doc.get(doc_id)
                if not recs:
                    stats["unresolved"] += 1
                    continue
                res = resolve(recs)
                if res is None:
                    stats["unresolved"] += 1
                else:
                    stats[res.resolution.value] += 1
                    resolved_pairs.append((doc_id, res.aggregate_label.value))

            stage = self.state.stage
            nxt = _STAGE_AFTER[r.strategy]
            if _STAGE_ORDER.index(nxt) > _STAGE_ORDER.index(stage):
                stage = nxt

            training = self.state.training + resolved_pairs
            text_of = {d.id: d.text for d in self.pool}
            model_path = ""
            if training:
                examples = [
                    (self._feature(doc_id, text_of[doc_id]), label)
                    for doc_id, label in training
                    if doc_id in text_of
                ]
                try:
                    model = train(
                        examples,
                        config=self.config.train_config,
                        seed=r.round_id,
                        feature_config=self.config.feature_config,
                        stage_tag=StageTag(stage),
                        init=self._model,
                    )
                except (ValueError, DataError) as exc:
                    raise HTTPException(
                        500, f"retraining failed, round stays open: {exc}"
                    )
                model_path = str(self.config.models_dir / f"round{r.round_id}.npz")
                model.save(model_path)
                self._model = model

            self._append(
                "round_closed",
                {
                    "round_id": r.round_id,
                    "resolution": stats,
                    "resolved": [list(t) for t in resolved_pairs],
                    "model_path": model_path,
                    "stage": stage,
                },
            )
            counts: dict[str, int] = {}
            for _, label in resolved_pairs:
                counts[label] = counts.get(label, 0) + 1
            return schemas.ResolutionSummary(
                round_id=r.round_id,
                consensus=stats["consensus"],
                negative_precedence=stats["negative_precedence"],
                unresolved=stats["unresolved"],
                label_counts=counts,
                model_path=model_path,
                stage=stage,
            )

    def create_session(self, annotator_id: str) -> schemas.SessionInfo:
        with self.lock:
            r = self.state.open_round
            queue: list[str] = []
            if r is not None:
                current = self.state.labels.current()
                for doc_id in r.doc_ids:
                    if annotator_id not in r.assignments.get(doc_id, ()):
                        continue
                    if (doc_id, annotator_id) in current or (doc_id, annotator_id) in self.state.skips:
                        continue
                    queue.append(doc_id)
            session_id = f"s{self.state.next_seq}"
            self._append(
                "session_created",
                {
                    "session_id": session_id,
                    "annotator_id": annotator_id,
                    "queue": queue,
                    "started_at": datetime.now(timezone.utc).isoformat(),
                },
            )
            return schemas.SessionInfo(
                session_id=session_id,
                annotator_id=annotator_id,
                queue_length=len(queue),
                position=0,
            )

    def _session_for(self, session_id: str, annotator_id: str):
        sess = self.state.sessions.get(session_id)
        if sess is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        if sess.annotator_id != annotator_id:
            raise HTTPException(403, "session belongs to a different annotator")
        return sess

    def next_document(self, session_id: str, annotator_id: str) -> schemas.NextDocument:
        with self.lock:
            sess = self._session_for(session_id, annotator_id)
            if sess.done:
                return schemas.NextDocument(done=True, position=sess.cursor, total=len(sess.queue))
            doc_id = sess.current_doc
            try:
                text = self.pool.by_id(doc_id).text
            except KeyError:
                raise HTTPException(500, f"pool is missing document {doc_id!r}")
            return schemas.NextDocument(
                done=False,
                doc_id=doc_id,
                text=text,
                question=self.config.annotation_question,
                position=sess.cursor,
                total=len(sess.queue),
            )

    def submit_label(
        self, session_id: str, annotator_id: str, body: schemas.LabelSubmission
    ) -> schemas.LabelAck:
        with self.lock:
            sess = self._session_for(session_id, annotator_id)
            r = self.state.open_round
            round_id = r.round_id if r and body.doc_id in set(r.doc_ids) else None
            if body.skip:
                if sess.current_doc != body.doc_id:
                    raise HTTPException(409, "can only skip the session's current document")
                self._append(
                    "doc_skipped",
                    {
                        "session_id": session_id,
                        "doc_id": body.doc_id,
                        "annotator_id": annotator_id,
                        "round_id": round_id if round_id is not None else -1,
                    },
                )
                return schemas.LabelAck(
                    doc_id=body.doc_id,
                    accepted=True,
                    labeled_count=self._labeled_count(annotator_id),
                )
            if body.label is None:
                raise HTTPException(422, "label is required unless skip is set")
            try:
                label = StanceLabel.parse(body.label)
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            already = (body.doc_id, annotator_id) in self.state.labels.current()
            if sess.current_doc != body.doc_id and not already:
                raise HTTPException(
                    409,
                    f"document {body.doc_id!r} is not the session's current item",
                )
            if round_id is None:
                for rr in self.state.rounds.values():
                    if body.doc_id in set(rr.doc_ids):
                        round_id = rr.round_id
                        break
            self._append(
                "label_submitted",
                {
                    "session_id": session_id,
                    "doc_id": body.doc_id,
                    "annotator_id": annotator_id,
                    "label": label.value,
                    "round_id": round_id if round_id is not None else -1,
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                },
            )
            return schemas.LabelAck(
                doc_id=body.doc_id,
                accepted=True,
                labeled_count=self._labeled_count(annotator_id),
                already_labeled=already,
            )

    def _labeled_count(self, annotator_id: str) -> int:
        return sum(1 for (_d, a) in self.state.labels.current() if a == annotator_id)

    def submit_exemplar(
        self, annotator_id: str, body: schemas.ExemplarSubmission
    ) -> schemas.ExemplarAck:
        with self.lock:
            try:
                label = StanceLabel.parse(body.intended_label)
                Exemplar(annotator_id, body.text, label)  # runs all validation
            except ValueError as exc:
                raise HTTPException(422, str(exc))
            self._append(
                "exemplar_added",
                {
                    "annotator_id": annotator_id,
                    "text": body.text,
                    "intended_label": label.value,
                },
            )
            return schemas.ExemplarAck(stored=len(self.state.unused_exemplars()))

    def agreement(self) -> schemas.AgreementResponse:
        with self.lock:
            summary = agreement_report(self.state.labels)
            pairs = [
                schemas.AgreementPair(
                    annotators=r.annotator_pair,
                    overlap_n=r.overlap_n,
                    kappa=None if np.isnan(r.kappa) else float(r.kappa),
                    confusion=r.confusion.tolist(),
                )
                for r in summary.reports
            ]
            return schemas.AgreementResponse(
                pairs=pairs, kappa_min=summary.kappa_min, kappa_max=summary.kappa_max
            )

    def progress(self) -> schemas.ProgressResponse:
        with self.lock:
            return schemas.ProgressResponse(
                rounds=[self._round_status(rid) for rid in sorted(self.state.rounds)],
                cumulative_label_counts=self.state.cumulative_label_counts(),
                training_examples=len(self.state.training),
                stage=self.state.stage,
                open_sessions=sum(1 for s in self.state.sessions.values() if not s.done),
            )


def create_app(config: ServiceConfig) -> FastAPI:
    runtime = ServiceRuntime(config)
    app = FastAPI(title="stancelab annotation service", version="1")
    app.state.runtime = runtime

    def annotator(authorization: str | None = Header(default=None)) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(401, "missing bearer token")
        token = authorization.removeprefix("Bearer ").strip()
        annotator_id = runtime.tokens.get(token)
        if annotator_id is None:
            raise HTTPException(401, "unknown token")
        return annotator_id

    @app.get("/health")
    def health():
        return {"status": "ok", "pool_size": len(runtime.pool)}

    @app.post("/v1/rounds", response_model=schemas.RoundStatus)
    def open_round(body: schemas.RoundOpenRequest, _a: str = Depends(annotator)):
        return runtime.open_round(body.strategy, body.params)

    @app.get("/v1/rounds/current", response_model=schemas.RoundStatus)
    def current_round(_a: str = Depends(annotator)):
        r = runtime.state.open_round
        if r is None:
            raise HTTPException(404, "no open round")
        return runtime._round_status(r.round_id)

    @app.post("/v1/rounds/close", response_model=schemas.ResolutionSummary)
    def close_round(body: schemas.RoundCloseRequest, _a: str = Depends(annotator)):
        return runtime.close_round(force=body.force)

    @app.post("/v1/sessions", response_model=schemas.SessionInfo)
    def create_session(a: str = Depends(annotator)):
        return runtime.create_session(a)

    @app.get("/v1/sessions/{session_id}/next", response_model=schemas.NextDocument)
    def next_document(session_id: str, a: str = Depends(annotator)):
        return runtime.next_document(session_id, a)

    @app.post("/v1/sessions/{session_id}/labels", response_model=schemas.LabelAck)
    def submit_label(session_id: str, body: schemas.LabelSubmission, a: str = Depends(annotator)):
        return runtime.submit_label(session_id, a, body)

    @app.post("/v1/exemplars", response_model=schemas.ExemplarAck)
    def submit_exemplar(body: schemas.ExemplarSubmission, a: str = Depends(annotator)):
        return runtime.submit_exemplar(a, body)

    @app.get("/v1/agreement", response_model=schemas.AgreementResponse)
    def agreement(_a: str = Depends(annotator)):
        return runtime.agreement()

    @app.get("/v1/progress", response_model=schemas.ProgressResponse)
    def progress(_a: str = Depends(annotator)):
        return runtime.progress()

    if config.static_dir and Path(config.static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(config.static_dir), html=True), name="ui")

    return app
