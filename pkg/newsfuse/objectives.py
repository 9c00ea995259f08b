""" Training losses over candidate scores and the samples they consume """
import dataclasses
import enum
import logging
from typing import List, Optional, Sequence, Union

import numpy as np

from newsfuse.exceptions import (ConfigurationError, DegenerateInputError,
                                 NumericError, ShapeError)
from newsfuse.tensor import Tensor, log_softmax
from newsfuse.unpack import Impression

logger = logging.getLogger("newsfuse.objectives")


class Objective(str, enum.Enum):
    CE = "ce"
    SCL = "scl"


@dataclasses.dataclass
class TrainingSample:
    """
    One positive and its sampled negatives, by news id.

    The positive is always at index 0 of ``candidates``.
    """
    impression_id: str
    user_id: str
    history: List[str]
    candidates: List[str]
    labels: List[int]
    user_index: int = 0

    @property
    def positive_index(self) -> int:
        return self.labels.index(1)


@dataclasses.dataclass(frozen=True)
class SCLConfig:
    temperature: float = 0.1
    positive_set_mode: str = "within-sample"

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ConfigurationError(
                "Temperature must be positive, got {}".format(
                    self.temperature))
        if self.positive_set_mode != "within-sample":
            raise ConfigurationError(
                "Unsupported positive set {!r}".format(self.positive_set_mode))


def sample_negatives(impression: Impression, k: int,
                     rng: np.random.Generator,
                     history: Optional[Sequence[str]] = None,
                     user_index: int = 0) -> List[TrainingSample]:
    """
    One TrainingSample per clicked candidate, each with ``k`` negatives.

    Negatives come uniformly from the impression's non-clicked candidates,
    without replacement when at least ``k`` exist.
    """
    if k < 1:
        raise ConfigurationError(
            "Need at least one negative, got {}".format(k))
    if not impression.candidates:
        logger.warning("Skipping impression {} with no candidates".format(
            impression.impression_id))
        return []
    positives = [news_id for news_id, clicked in impression.candidates
                 if clicked]
    negatives = [news_id for news_id, clicked in impression.candidates
                 if not clicked]
    if not positives:
        logger.debug("Impression {} has no clicks".format(
            impression.impression_id))
        return []
    if not negatives:
        logger.warning("Skipping impression {} with no negatives".format(
            impression.impression_id))
        return []
    if history is None:
        history = impression.history_news_ids
    samples = []
    for positive in positives:
        chosen = rng.choice(len(negatives), size=k,
                            replace=len(negatives) < k)
        samples.append(TrainingSample(
            impression_id=impression.impression_id,
            user_id=impression.user_id,
            history=list(history),
            candidates=[positive] + [negatives[i] for i in chosen],
            labels=[1] + [0] * k,
            user_index=user_index))
    return samples


def _check_finite(scores: Tensor) -> None:
    if not np.all(np.isfinite(scores.data)):
        raise NumericError("Non-finite candidate scores")


def ce_ns_loss(scores: Tensor,
               positive_index: Union[int, Sequence[int]] = 0) -> Tensor:
    """
    Cross-entropy of the positive against the sampled negatives.

    ``scores`` is [1 + K] for one sample or [B, 1 + K] for a batch, whose
    loss is the mean over samples.
    """
    _check_finite(scores)
    if scores.ndim not in (1, 2):
        raise ShapeError("Scores must be [A] or [B, A], got {}".format(
            scores.shape))
    logp = log_softmax(scores)
    if scores.ndim == 1:
        if not 0 <= int(positive_index) < scores.shape[0]:  # type: ignore
            raise IndexError("Positive index out of range")
        return -logp[int(positive_index)]  # type: ignore
    rows = np.arange(scores.shape[0])
    index = np.broadcast_to(np.asarray(positive_index, dtype=np.int64),
                            rows.shape)
    return -logp[rows, index].mean()


def scl_loss(scores: Tensor, labels: Union[Sequence[int], np.ndarray],
             temperature: float = 0.1) -> Tensor:
    """
    Supervised contrastive loss over one sample's candidates.

    Each positive is contrasted against all candidates of its sample with
    scores divided by ``temperature``; the loss is the mean over positives,
    then over samples for [B, A] input.
    """
    mask = np.asarray(labels, dtype=bool)
    if mask.shape != scores.shape:
        raise ShapeError("Labels {} do not match scores {}".format(
            mask.shape, scores.shape))
    if not temperature > 0:
        raise ConfigurationError("Temperature must be positive")
    positives = mask.sum(axis=-1)
    if np.any(positives == 0) or np.any(positives == mask.shape[-1]):
        raise DegenerateInputError(
            "Contrastive loss needs a positive and a negative per sample")
    _check_finite(scores)
    logp = log_softmax(scores * (1.0 / temperature))
    weights = mask.astype(scores.dtype) / np.expand_dims(
        positives, -1).astype(scores.dtype)
    per_sample = -(logp * weights).sum(axis=-1)
    return per_sample.mean()
