"""Pydantic request/response models for the /v1 API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class RoundOpenRequest(BaseModel):
    strategy: str = Field(description="random | guided | certainty | margin")
    params: dict = Field(default_factory=dict)


class RoundStatus(BaseModel):
    round_id: int
    strategy: str
    total: int
    labeled: int
    resolved: int
    open: bool


class RoundCloseRequest(BaseModel):
    force: bool = False


class ResolutionSummary(BaseModel):
    round_id: int
    consensus: int
    negative_precedence: int
    unresolved: int
    label_counts: dict[str, int]
    model_path: str
    stage: str


class SessionInfo(BaseModel):
    session_id: str
    annotator_id: str
    queue_length: int
    position: int


class NextDocument(BaseModel):
    done: bool = False
    doc_id: str | None = None
    text: str | None = None
    question: str | None = None
    position: int = 0
    total: int = 0


class LabelSubmission(BaseModel):
    doc_id: str
    label: str | None = None
    skip: bool = False


class LabelAck(BaseModel):
    doc_id: str
    accepted: bool
    labeled_count: int
    already_labeled: bool = False


class ExemplarSubmission(BaseModel):
    text: str
    intended_label: str


class ExemplarAck(BaseModel):
    stored: int


class AgreementPair(BaseModel):
    annotators: tuple[str, str]
    overlap_n: int
    kappa: float | None
    confusion: list[list[int]]


class AgreementResponse(BaseModel):
    pairs: list[AgreementPair]
    kappa_min: float | None
    kappa_max: float | None


class ProgressResponse(BaseModel):
    rounds: list[RoundStatus]
    cumulative_label_counts: dict[str, int]
    training_examples: int
    stage: str
    open_sessions: int


class ErrorBody(BaseModel):
    detail: str
