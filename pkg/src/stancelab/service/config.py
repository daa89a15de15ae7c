"""Service configuration: one data directory plus environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from ..classifier import FeatureConfig, TrainConfig
from ..corpus import SlicePair
from ..errors import DataError

DEFAULT_QUESTION = (
    "Does this short document indicate a positive, neutral, or negative "
    "stance toward gender equality?"
)


@dataclass
class ServiceConfig:
    data_dir: Path
    pool_path: Path | None = None  # defaults to data_dir/pool.jsonl
    tokens_path: Path | None = None  # defaults to data_dir/tokens.json
    embedding_path: Path | None = None  # optional, needed for guided rounds
    static_dir: Path | None = None  # optional UI assets
    annotation_question: str = DEFAULT_QUESTION
    language_filter: str = ""
    slices: SlicePair | None = None
    annotators: list[str] = field(default_factory=list)  # derived from tokens file
    overlap_target: int = 500
    feature_config: FeatureConfig = field(default_factory=lambda: FeatureConfig(hash_buckets=2**16))
    train_config: TrainConfig = field(default_factory=TrainConfig)
    host: str = "127.0.0.1"
    port: int = 8400

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        if self.pool_path is None:
            self.pool_path = self.data_dir / "pool.jsonl"
        if self.tokens_path is None:
            self.tokens_path = self.data_dir / "tokens.json"
        if self.embedding_path is None:
            candidate = self.data_dir / "embedding.npz"
            self.embedding_path = candidate if candidate.exists() else None
        if self.static_dir is None:
            candidate = self.data_dir / "ui"
            self.static_dir = candidate if candidate.is_dir() else None

    @property
    def event_log_path(self) -> Path:
        return self.data_dir / "events.jsonl"

    @property
    def models_dir(self) -> Path:
        return self.data_dir / "models"

    def load_tokens(self) -> dict[str, str]:
        """token -> pseudonymous annotator id."""
        if not self.tokens_path.exists():
            raise DataError(f"annotator token file not found: {self.tokens_path}")
        try:
            tokens = json.loads(self.tokens_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"bad token file {self.tokens_path}: {exc}") from exc
        if not isinstance(tokens, dict) or not tokens:
            raise DataError(f"token file {self.tokens_path} must map tokens to annotator ids")
        return {str(k): str(v) for k, v in tokens.items()}


def load_service_config(data_dir, env: dict[str, str] | None = None) -> ServiceConfig:
    """Build config from data_dir/config.json with environment overrides.

    Recognized variables: STANCELAB_DATA_DIR, STANCELAB_HOST, STANCELAB_PORT,
    STANCELAB_TOKENS.
    """
    env = dict(os.environ if env is None else env)
    data_dir = Path(env.get("STANCELAB_DATA_DIR", data_dir))
    cfg_path = data_dir / "config.json"
    raw = {}
    if cfg_path.exists():
        try:
            raw = json.loads(cfg_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"bad service config {cfg_path}: {exc}") from exc

    slices = None
    if "slices" in raw:
        s = raw["slices"]
        try:
            slices = SlicePair.from_dates(
                date.fromisoformat(s["before_start"]),
                date.fromisoformat(s["before_end"]),
                date.fromisoformat(s["after_start"]),
                date.fromisoformat(s["after_end"]),
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"bad slices in {cfg_path}: {exc}") from exc

    feature_config = FeatureConfig(
        hash_buckets=int(raw.get("hash_buckets", 2**16)),
    )
    train_raw = raw.get("train", {})
    train_config = TrainConfig(
        l2=float(train_raw.get("l2", 1e-4)),
        epochs=int(train_raw.get("epochs", 20)),
        batch_size=int(train_raw.get("batch_size", 32)),
        learning_rate=float(train_raw.get("learning_rate", 0.1)),
        class_weighting=bool(train_raw.get("class_weighting", True)),
    )
    return ServiceConfig(
        data_dir=data_dir,
        pool_path=Path(raw["pool_path"]) if "pool_path" in raw else None,
        tokens_path=Path(env["STANCELAB_TOKENS"]) if "STANCELAB_TOKENS" in env
        else (Path(raw["tokens_path"]) if "tokens_path" in raw else None),
        embedding_path=Path(raw["embedding_path"]) if "embedding_path" in raw else None,
        static_dir=Path(raw["static_dir"]) if "static_dir" in raw else None,
        annotation_question=str(raw.get("annotation_question", DEFAULT_QUESTION)),
        language_filter=str(raw.get("language_filter", "")),
        slices=slices,
        overlap_target=int(raw.get("overlap_target", 500)),
        feature_config=feature_config,
        train_config=train_config,
        host=env.get("STANCELAB_HOST", str(raw.get("host", "127.0.0.1"))),
        port=int(env.get("STANCELAB_PORT", raw.get("port", 8400))),
    )
