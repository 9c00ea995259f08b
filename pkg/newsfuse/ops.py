"""
Composite differentiable ops: projections, convolutions, attention, GRU.

Every function here is built from the primitives in ``newsfuse.tensor`` so
gradients come for free.  Leading ``*`` axes broadcast; the sequence axis is
always second to last and the feature axis last.
"""
import math
from typing import NamedTuple, Optional, Tuple

import numpy as np

from newsfuse.exceptions import (ConfigurationError, DegenerateInputError,
                                 ShapeError)
from newsfuse.tensor import (Tensor, broadcast_to, concat, constant, relu,
                             sigmoid, softmax, stack, tanh)

ACTIVATIONS = ("relu", "tanh", "linear")


def activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return relu(x)
    if activation == "tanh":
        return tanh(x)
    if activation == "linear":
        return x
    raise ConfigurationError("Unknown activation {!r}".format(activation))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """y = x W^T + b with ``weight`` shaped [out, in]"""
    if weight.ndim != 2 or x.ndim == 0 or x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear: input {} does not match weight {}".format(
            x.shape, weight.shape))
    out = x @ weight.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear: bias {} does not match weight {}".format(
                bias.shape, weight.shape))
        out = out + bias
    return out


# convolution =================================================================


def _conv1d(seq: Tensor, filters: Tensor, bias: Optional[Tensor],
            padding: int, activation: str) -> Tensor:
    if filters.ndim != 3:
        raise ShapeError(
            "Filters must be [d_out, window, d_in], got {}".format(
                filters.shape))
    d_out, window, d_in = filters.shape
    if seq.ndim < 2 or seq.shape[-1] != d_in:
        raise ShapeError("conv1d: input {} does not match filters {}".format(
            seq.shape, filters.shape))
    if padding:
        zeros = constant(np.zeros(seq.shape[:-2] + (padding, d_in),
                                  dtype=seq.dtype))
        seq = concat([zeros, seq, zeros], axis=-2)
    length = seq.shape[-2] - window + 1
    if length < 1:
        raise DegenerateInputError(
            "Sequence of length {} is shorter than window {}".format(
                seq.shape[-2], window))
    # Unfold windows into columns so the convolution is one projection
    columns = concat([seq[..., k:k + length, :] for k in range(window)],
                     axis=-1)
    out = linear(columns, filters.reshape(d_out, window * d_in), bias)
    return activate(out, activation)


def conv1d_same(seq: Tensor, filters: Tensor, bias: Optional[Tensor] = None,
                activation: str = "relu") -> Tensor:
    """Zero-padded cross-correlation; output length equals input length"""
    window = filters.shape[1]
    if window % 2 == 0:
        raise ConfigurationError(
            "Same-padding convolution needs an odd window, got {}".format(
                window))
    return _conv1d(seq, filters, bias, window // 2, activation)


def conv1d_valid(seq: Tensor, filters: Tensor, bias: Optional[Tensor] = None,
                 activation: str = "relu") -> Tensor:
    """Unpadded cross-correlation; output length is L - window + 1"""
    return _conv1d(seq, filters, bias, 0, activation)


# attention ===================================================================


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # [*, L, H * hd] -> [*, H, L, hd]
    width = x.shape[-1]
    x = x.reshape(x.shape[:-1] + (heads, width // heads))
    return x.swapaxes(-2, -3)


def multi_head_attention(queries: Tensor, keys: Tensor, heads: int,
                         query_weight: Tensor, key_weight: Tensor,
                         value_weight: Tensor,
                         mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Scaled dot-product attention with ``heads`` heads.

    ``queries`` is [*, Lq, d_q] and ``keys`` (also the values) is
    [*, Lk, d_k].  Projection weights are [heads * head_dim, d].  ``mask``
    ([*, Lk], True where valid) removes key positions.  Returns
    [*, Lq, heads * head_dim].
    """
    if heads < 1:
        raise ConfigurationError("Attention needs at least one head")
    width = query_weight.shape[0]
    if width % heads:
        raise ConfigurationError(
            "Projection width {} is not divisible by {} heads".format(
                width, heads))
    if keys.ndim < 2 or keys.shape[-2] == 0 or queries.shape[-2] == 0:
        raise DegenerateInputError("Attention over an empty sequence")
    head_dim = width // heads
    q = _split_heads(linear(queries, query_weight), heads)
    k = _split_heads(linear(keys, key_weight), heads)
    v = _split_heads(linear(keys, value_weight), heads)
    scores = (q @ k.T) * (1.0 / math.sqrt(head_dim))
    key_mask = None
    if mask is not None:
        key_mask = np.expand_dims(np.asarray(mask, dtype=bool), (-2, -3))
    weights = softmax(scores, key_mask)
    context = (weights @ v).swapaxes(-2, -3)
    return context.reshape(context.shape[:-2] + (width,))


def multi_head_self_attention(seq: Tensor, heads: int, query_weight: Tensor,
                              key_weight: Tensor, value_weight: Tensor,
                              mask: Optional[np.ndarray] = None) -> Tensor:
    return multi_head_attention(seq, seq, heads, query_weight, key_weight,
                                value_weight, mask)


def attention_pool(seq: Tensor, scores: Tensor,
                   mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """Softmax ``scores`` [*, L] and take the weighted sum of ``seq``"""
    weights = softmax(scores, mask)
    pooled = weights.reshape(weights.shape[:-1] + (1, weights.shape[-1])) @ seq
    return pooled.reshape(pooled.shape[:-2] + (seq.shape[-1],)), weights


def additive_scores(seq: Tensor, weight: Tensor, bias: Tensor,
                    query: Tensor) -> Tensor:
    """Unnormalized attention scores q . tanh(W seq_i + b), shaped [*, L]"""
    return tanh(linear(seq, weight, bias)) @ query


def additive_attention(seq: Tensor, weight: Tensor, bias: Tensor,
                       query: Tensor,
                       mask: Optional[np.ndarray] = None) -> Tensor:
    """Pool [*, L, d] to [*, d] by softmax_i(q . tanh(W seq_i + b))"""
    if seq.ndim < 2 or seq.shape[-2] == 0:
        raise DegenerateInputError("Additive attention over an empty sequence")
    pooled, _ = attention_pool(seq, additive_scores(seq, weight, bias, query),
                               mask)
    return pooled


def personalized_attention(seq: Tensor, query: Tensor, weight: Tensor,
                           bias: Tensor,
                           mask: Optional[np.ndarray] = None) -> Tensor:
    """Additive attention whose query [*, q] is supplied by the caller"""
    if seq.ndim < 2 or seq.shape[-2] == 0:
        raise DegenerateInputError(
            "Personalized attention over an empty sequence")
    hidden = tanh(linear(seq, weight, bias))
    scores = hidden @ query.reshape(query.shape + (1,))
    pooled, _ = attention_pool(seq, scores.reshape(scores.shape[:-1]), mask)
    return pooled


# recurrence ==================================================================


class GRUWeights(NamedTuple):
    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor


def gru_forward(seq: Tensor, h0: Tensor,
                weights: GRUWeights) -> Tuple[Tensor, Tensor]:
    """
    Run a GRU over [*, L, d_in] starting from ``h0`` [*, d_h].

        z = sigmoid(W_z x + U_z h + b_z)
        r = sigmoid(W_r x + U_r h + b_r)
        c = tanh(W_h x + U_h (r * h) + b_h)
        h = (1 - z) * h + z * c

    Returns ``(states, final)``; an empty sequence returns ``h0`` as final.
    """
    w = weights
    hidden = w.U_z.shape[0]
    if h0.shape[-1] != hidden:
        raise ShapeError("h0 {} does not match hidden size {}".format(
            h0.shape, hidden))
    length = seq.shape[-2]
    if length == 0:
        empty = constant(np.zeros(seq.shape[:-2] + (0, hidden),
                                  dtype=seq.dtype))
        return empty, h0
    xz = linear(seq, w.W_z, w.b_z)
    xr = linear(seq, w.W_r, w.b_r)
    xh = linear(seq, w.W_h, w.b_h)
    h = h0
    states = []
    for t in range(length):
        z = sigmoid(xz[..., t, :] + linear(h, w.U_z))
        r = sigmoid(xr[..., t, :] + linear(h, w.U_r))
        candidate = tanh(xh[..., t, :] + linear(r * h, w.U_h))
        h = (1.0 - z) * h + z * candidate
        states.append(h)
    return stack(states, axis=-2), h


def expand_rows(x: Tensor, rows: int) -> Tensor:
    """Repeat [*, d] as [*, rows, d]"""
    shaped = x.reshape(x.shape[:-1] + (1, x.shape[-1]))
    return broadcast_to(shaped, x.shape[:-1] + (rows, x.shape[-1]))
