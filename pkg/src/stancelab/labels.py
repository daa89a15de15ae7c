"""The three-class stance label shared by annotation, sampling and modeling."""

from __future__ import annotations

from enum import Enum


class StanceLabel(str, Enum):
    POSITIVE = "positive"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"

    @classmethod
    def parse(cls, value: str) -> "StanceLabel":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown stance label {value!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None


# Canonical class order used for posterior vectors and confusion matrices.
STANCE_LABELS: tuple[StanceLabel, ...] = (
    StanceLabel.POSITIVE,
    StanceLabel.NEUTRAL,
    StanceLabel.NEGATIVE,
)
