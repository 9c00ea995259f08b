"""
Relevance scoring of candidates against a click history.

Early fusion scores against an encoded user; late fusion averages the dot
products of the candidate with every clicked news.  The average of dot
products equals the dot product with the averaged history, so late fusion
is a user encoder with no parameters.
"""
import enum

import numpy as np

from newsfuse.exceptions import DegenerateInputError, ShapeError
from newsfuse.tensor import Tensor, constant


class FusionMode(str, enum.Enum):
    EARLY = "early"
    LATE = "late"


def _check(left: Tensor, right: Tensor) -> None:
    if left.ndim == 0 or right.ndim == 0 or left.shape[-1] != right.shape[-1]:
        raise ShapeError("Embedding dimensions differ: {} vs {}".format(
            left.shape, right.shape))


def score_early(user: Tensor, candidate: Tensor) -> Tensor:
    """
    Dot product of a user embedding with candidate embedding(s).

    ``user`` [D] scores ``candidate`` [D] or [C, D].  A candidate-aware user
    [C, D] scores its matching candidate row by row.
    """
    _check(user, candidate)
    if user.ndim == 1:
        return candidate @ user
    if user.shape != candidate.shape:
        raise ShapeError("Per-candidate users {} do not pair with {}".format(
            user.shape, candidate.shape))
    return (user * candidate).sum(axis=-1)


def score_late(history: Tensor, candidate: Tensor) -> Tensor:
    """Mean over the N history rows of dot(candidate, row); N = 0 scores 0"""
    _check(history, candidate)
    if history.shape[0] == 0:
        return constant(np.zeros(candidate.shape[:-1], dtype=candidate.dtype))
    return (candidate @ history.T).mean(axis=-1)


def user_embedding_late(history: Tensor) -> Tensor:
    if history.ndim != 2:
        raise ShapeError("History must be [N, D], got {}".format(
            history.shape))
    if history.shape[0] == 0:
        raise DegenerateInputError("Cannot average an empty history")
    return history.mean(axis=0)
