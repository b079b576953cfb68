"""Weakly supervised stop labels and loss for continuous-token generation."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from errors import PreconditionError, ShapeError

STOP_LOSS_SCALE = 0.01
IGNORE_FRAMES = 3  # 300 ms before the last frame on the 10 Hz timeline


class StopLabel(enum.Enum):
    UNUSED = 0
    POSITIVE = 1
    NEGATIVE = 2
    IGNORE = 3


@dataclass
class StopLabels:
    labels: list[StopLabel]

    def __len__(self) -> int:
        return len(self.labels)

    def indices(self, label: StopLabel) -> list[int]:
        return [i for i, value in enumerate(self.labels) if value is label]

    @property
    def positive(self) -> int:
        return self.indices(StopLabel.POSITIVE)[0]

    @property
    def negative(self) -> Optional[int]:
        found = self.indices(StopLabel.NEGATIVE)
        return found[0] if found else None


def build_stop_labels(stop_scores: Sequence[float], num_frames: Optional[int] = None) -> StopLabels:
    """Label the last frame positive and mine the hardest negative.

    The three frames before the last are ignored. Among the frames before
    that zone the highest-scoring one (lowest index on ties) is the
    negative; sequences of four frames or fewer get no negative.
    """
    scores = np.asarray(stop_scores, dtype=np.float64).reshape(-1)
    length = scores.shape[0] if num_frames is None else num_frames
    if length != scores.shape[0]:
        raise ShapeError(f"{scores.shape[0]} stop scores for {length} frames")
    if length < 1:
        raise PreconditionError("Cannot build stop labels for an empty sequence")

    labels = [StopLabel.UNUSED] * length
    labels[-1] = StopLabel.POSITIVE
    zone_start = max(0, length - 1 - IGNORE_FRAMES)
    for index in range(zone_start, length - 1):
        labels[index] = StopLabel.IGNORE
    if zone_start > 0:
        # np.argmax returns the first maximum
        labels[int(np.argmax(scores[:zone_start]))] = StopLabel.NEGATIVE
    return StopLabels(labels)


def stop_loss(stop_logits: Sequence[float], labels: StopLabels) -> float:
    """0.01 x mean binary cross-entropy over the positive and negative frames."""
    logits = np.asarray(stop_logits, dtype=np.float64).reshape(-1)
    if logits.shape[0] != len(labels):
        raise ShapeError(f"{logits.shape[0]} logits for {len(labels)} labels")
    positives = labels.indices(StopLabel.POSITIVE)
    negatives = labels.indices(StopLabel.NEGATIVE)
    # -log sigmoid(x) = log(1 + e^-x); -log(1 - sigmoid(x)) = log(1 + e^x)
    terms = [np.logaddexp(0.0, -logits[i]) for i in positives]
    terms += [np.logaddexp(0.0, logits[i]) for i in negatives]
    if not terms:
        return 0.0
    return float(STOP_LOSS_SCALE * np.mean(terms))


def stop_probabilities(stop_logits: Sequence[float]) -> np.ndarray:
    return expit(np.asarray(stop_logits, dtype=np.float64))


def first_stop_frame(probabilities: Sequence[float], threshold: float = 0.5) -> Optional[int]:
    """Index of the first frame whose stop probability reaches the threshold."""
    above = np.flatnonzero(np.asarray(probabilities, dtype=np.float64) >= threshold)
    return int(above[0]) if above.size else None
