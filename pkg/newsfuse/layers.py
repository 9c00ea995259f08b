"""
Parameter-holding layers.

Embeddings start uniform in [-0.1, 0.1], projections Xavier-uniform and
biases at zero.  Every layer takes the generator it initializes from and
the float dtype it stores.
"""
import math
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from newsfuse import ops
from newsfuse.exceptions import ConfigurationError, ShapeError
from newsfuse.tensor import Module, Parameter, Tensor, constant, take


def uniform(rng: np.random.Generator, shape: Sequence[int],
            scale: float = 0.1, dtype: Any = np.float32) -> np.ndarray:
    return rng.uniform(-scale, scale, size=tuple(shape)).astype(dtype)


def xavier_uniform(rng: np.random.Generator, shape: Sequence[int],
                   dtype: Any = np.float32) -> np.ndarray:
    fan_out = shape[0]
    fan_in = int(np.prod(shape[1:]))
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=tuple(shape)).astype(dtype)


def zeros(shape: Sequence[int], dtype: Any = np.float32) -> np.ndarray:
    return np.zeros(tuple(shape), dtype=dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype: Any = np.float32, bias: bool = True) -> None:
        self.weight = Parameter(xavier_uniform(rng, (d_out, d_in), dtype))
        self.bias = Parameter(zeros((d_out,), dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Embedding(Module):
    """
    Lookup table whose row 0 is the all-zero padding row.

    The padding row never receives gradient.  ``trainable=False`` freezes
    the whole table.
    """
    def __init__(self, rows: int, dim: int, rng: np.random.Generator,
                 dtype: Any = np.float32, trainable: bool = True,
                 init: str = "uniform") -> None:
        if rows < 1:
            raise ConfigurationError(
                "Embedding needs at least the padding row")
        if init == "uniform":
            table = uniform(rng, (rows, dim), dtype=dtype)
        elif init == "zeros":
            table = zeros((rows, dim), dtype)
        else:
            raise ConfigurationError(
                "Unknown embedding init {!r}".format(init))
        table[0] = 0
        self.weight = Parameter(table, trainable=trainable, frozen_rows=(0,))

    @classmethod
    def from_pretrained(cls, table: Any, trainable: bool = True,
                        dtype: Any = np.float32) -> "Embedding":
        table = np.array(table, dtype=dtype)
        if table.ndim != 2 or table.shape[0] < 1:
            raise ShapeError(
                "Pretrained table must be [rows, dim], got {}".format(
                    table.shape))
        table[0] = 0
        layer = cls.__new__(cls)
        layer.weight = Parameter(table, trainable=trainable, frozen_rows=(0,))
        return layer

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, ids: Any) -> Tensor:
        return take(self.weight, ids)


class Conv1d(Module):
    def __init__(self, d_in: int, d_out: int, window: int,
                 rng: np.random.Generator, dtype: Any = np.float32,
                 padding: str = "same", activation: str = "relu") -> None:
        if padding not in ("same", "valid"):
            raise ConfigurationError("Unknown padding {!r}".format(padding))
        if padding == "same" and window % 2 == 0:
            raise ConfigurationError(
                "Same-padding convolution needs an odd window, got {}".format(
                    window))
        self.filters = Parameter(
            xavier_uniform(rng, (d_out, window, d_in), dtype))
        self.bias = Parameter(zeros((d_out,), dtype))
        self.padding = padding
        self.activation = activation

    def forward(self, seq: Tensor) -> Tensor:
        conv = ops.conv1d_same if self.padding == "same" else ops.conv1d_valid
        return conv(seq, self.filters, self.bias, self.activation)


class MultiHeadAttention(Module):
    """
    Multi-head attention without projection biases.

    Queries may come from a different space than keys; ``forward(seq)``
    with no keys is self-attention.
    """
    def __init__(self, d_query: int, heads: int, head_dim: int,
                 rng: np.random.Generator, dtype: Any = np.float32,
                 d_key: Optional[int] = None) -> None:
        if heads < 1:
            raise ConfigurationError("Attention needs at least one head")
        width = heads * head_dim
        d_key = d_query if d_key is None else d_key
        self.heads = heads
        self.W_q = Parameter(xavier_uniform(rng, (width, d_query), dtype))
        self.W_k = Parameter(xavier_uniform(rng, (width, d_key), dtype))
        self.W_v = Parameter(xavier_uniform(rng, (width, d_key), dtype))

    @property
    def width(self) -> int:
        return self.W_q.shape[0]

    def forward(self, queries: Tensor, keys: Optional[Tensor] = None,
                mask: Optional[np.ndarray] = None) -> Tensor:
        if keys is None:
            keys = queries
        return ops.multi_head_attention(queries, keys, self.heads, self.W_q,
                                        self.W_k, self.W_v, mask)


class AdditiveAttention(Module):
    def __init__(self, dim: int, query_dim: int, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        self.projection = Linear(dim, query_dim, rng, dtype)
        self.query = Parameter(uniform(rng, (query_dim,), dtype=dtype))

    def scores(self, seq: Tensor) -> Tensor:
        return ops.additive_scores(seq, self.projection.weight,
                                   self.projection.bias, self.query)

    def forward(self, seq: Tensor,
                mask: Optional[np.ndarray] = None) -> Tensor:
        return ops.additive_attention(seq, self.projection.weight,
                                      self.projection.bias, self.query, mask)


class PersonalizedAttention(Module):
    def __init__(self, dim: int, query_dim: int, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        self.projection = Linear(dim, query_dim, rng, dtype)

    def forward(self, seq: Tensor, query: Tensor,
                mask: Optional[np.ndarray] = None) -> Tensor:
        return ops.personalized_attention(seq, query, self.projection.weight,
                                          self.projection.bias, mask)


class GRU(Module):
    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        self.hidden = hidden
        for gate in ("z", "r", "h"):
            setattr(self, "W_" + gate,
                    Parameter(xavier_uniform(rng, (hidden, d_in), dtype)))
            setattr(self, "U_" + gate,
                    Parameter(xavier_uniform(rng, (hidden, hidden), dtype)))
            setattr(self, "b_" + gate, Parameter(zeros((hidden,), dtype)))

    @property
    def weights(self) -> ops.GRUWeights:
        return ops.GRUWeights(*(getattr(self, name)
                                for name in ops.GRUWeights._fields))

    def forward(self, seq: Tensor,
                h0: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        if h0 is None:
            h0 = constant(np.zeros(seq.shape[:-2] + (self.hidden,),
                                   dtype=seq.dtype))
        return ops.gru_forward(seq, h0, self.weights)


class Dropout(Module):
    """Inverted dropout, active only in training mode"""
    def __init__(self, rate: float, rng: np.random.Generator) -> None:
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError("Dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = self.rng.random(x.shape) >= self.rate
        return x * (keep.astype(x.dtype) / (1.0 - self.rate))
