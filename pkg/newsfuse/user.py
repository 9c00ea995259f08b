"""
Early-fusion user encoders.

A user encoder turns the N clicked-news embeddings [N, D] into one user
embedding [D].  Candidate-aware encoders (DKN, CAUM) also read the
candidate; given a block of candidates [C, D] they return one user
embedding per candidate, [C, D].
"""
import dataclasses
from typing import Any, Dict, Optional

import numpy as np

from newsfuse import ops
from newsfuse.config import ModelConfig, Variant
from newsfuse.exceptions import (ConfigurationError, DegenerateInputError,
                                 ShapeError)
from newsfuse.layers import (GRU, AdditiveAttention, Conv1d, Linear,
                             MultiHeadAttention, PersonalizedAttention,
                             uniform)
from newsfuse.tensor import (Module, Parameter, Tensor, broadcast_to, concat,
                             constant, relu, stack, take, tanh)


@dataclasses.dataclass
class ClickHistory:
    news_embeddings: Tensor
    length: int
    user_id: str = ""
    user_index: int = 0

    def rows(self) -> Tensor:
        """The true (un-padded) clicked-news embeddings, [N, D]"""
        if self.news_embeddings.ndim != 2:
            raise ShapeError("History must be [N, D], got {}".format(
                self.news_embeddings.shape))
        if not 0 <= self.length <= self.news_embeddings.shape[0]:
            raise ShapeError("History length {} exceeds {} rows".format(
                self.length, self.news_embeddings.shape[0]))
        if self.length == self.news_embeddings.shape[0]:
            return self.news_embeddings
        return self.news_embeddings[:self.length]


@dataclasses.dataclass
class UserEmbedding:
    vector: Tensor
    candidate_aware: bool = False


def lookup_long_term_user(user_index: int, table: Tensor,
                          p_mask: float = 0.0, training: bool = False,
                          rng: Optional[np.random.Generator] = None) -> Tensor:
    """
    Row ``user_index`` of the long-term table.

    Row 0 is reserved for users never seen in training.  In training mode
    the whole vector is zeroed with probability ``p_mask``.
    """
    if not 0 <= user_index < table.shape[0]:
        raise IndexError("User index {} out of range [0, {})".format(
            user_index, table.shape[0]))
    row = take(table, user_index)
    if training and p_mask > 0:
        if rng is None:
            raise ConfigurationError("Long-term masking needs an rng")
        if rng.random() < p_mask:
            return constant(np.zeros(row.shape, dtype=row.dtype))
    return row


def pair_with_candidate(history: Tensor, candidate: Tensor) -> Tensor:
    """[N, D] history and [D] or [C, D] candidate -> [(C,) N, 2D]"""
    if candidate.shape[-1] != history.shape[-1]:
        raise ShapeError("Candidate {} does not match history {}".format(
            candidate.shape, history.shape))
    rows = history.shape[0]
    if candidate.ndim == 2:
        history = broadcast_to(history, (candidate.shape[0],) + history.shape)
    return concat([history, ops.expand_rows(candidate, rows)], axis=-1)


class UserEncoder(Module):
    candidate_aware = False

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        self.dim = config.model_dim

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        raise NotImplementedError


class PersonalizedUserEncoder(UserEncoder):
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        super().__init__(config, rng, dtype)
        self.query_projection = Linear(config.user_dim, config.query_dim, rng,
                                       dtype)
        self.attention = PersonalizedAttention(self.dim, config.query_dim, rng,
                                               dtype)

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        if user_context is None:
            raise ConfigurationError("NPA user encoding needs a user context")
        query = relu(self.query_projection(user_context))
        return self.attention(history, query)


class AdditiveUserEncoder(UserEncoder):
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        super().__init__(config, rng, dtype)
        self.attention = AdditiveAttention(self.dim, config.query_dim, rng,
                                           dtype)

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        return self.attention(history)


class SelfAttentionUserEncoder(UserEncoder):
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        super().__init__(config, rng, dtype)
        self.self_attention = MultiHeadAttention(self.dim, config.heads,
                                                 config.head_dim, rng, dtype)
        self.attention = AdditiveAttention(self.dim, config.query_dim, rng,
                                           dtype)

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        return self.attention(self.self_attention(history))


class LsturUserEncoder(UserEncoder):
    """
    GRU short-term interest plus a per-user long-term row.

    ``concat=False`` starts the GRU from the long-term row; ``concat=True``
    runs a half-width GRU and appends a half-width long-term row.
    """
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32, concat: bool = False) -> None:
        super().__init__(config, rng, dtype)
        self.concat = concat
        width = self.dim // 2 if concat else self.dim
        table = uniform(rng, (config.num_users, width), dtype=dtype)
        table[0] = 0
        self.long_term = Parameter(table, frozen_rows=(0,))
        self.gru = GRU(self.dim, width, rng, dtype)
        self.p_mask = config.long_term_mask
        self.rng = rng

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        long_term = lookup_long_term_user(user_index, self.long_term,
                                          self.p_mask, self.training, self.rng)
        if self.concat:
            _, short_term = self.gru(history)
            return concat([short_term, long_term], axis=-1)
        _, final = self.gru(history, long_term)
        return final


class CenNewsRecUserEncoder(UserEncoder):
    """GRU short-term and self-attentive long-term interest, combined"""
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        super().__init__(config, rng, dtype)
        self.gru = GRU(self.dim, self.dim, rng, dtype)
        self.self_attention = MultiHeadAttention(self.dim, config.heads,
                                                 config.head_dim, rng, dtype)
        self.long_attention = AdditiveAttention(self.dim, config.query_dim,
                                                rng, dtype)
        self.combine = config.cennewsrec_combine
        self.combine_attention = None  # type: Optional[AdditiveAttention]
        if self.combine == "attention":
            self.combine_attention = AdditiveAttention(
                self.dim, config.query_dim, rng, dtype)

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        _, short_term = self.gru(history)
        long_term = self.long_attention(self.self_attention(history))
        if self.combine_attention is None:
            return (short_term + long_term) * 0.5
        return self.combine_attention(stack([short_term, long_term], axis=0))


class MinsUserEncoder(UserEncoder):
    """
    Self-attention, then one GRU per channel, then attention over channels.

    Channel c reads the clicks at positions c, c + C, c + 2C, ...; channels
    left empty by a short history are left out.
    """
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        super().__init__(config, rng, dtype)
        self.self_attention = MultiHeadAttention(self.dim, config.heads,
                                                 config.head_dim, rng, dtype)
        self.channels = [GRU(self.dim, self.dim, rng, dtype)
                         for _ in range(config.mins_channels)]
        self.attention = AdditiveAttention(self.dim, config.query_dim, rng,
                                           dtype)

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        context = self.self_attention(history)
        count = len(self.channels)
        finals = []
        for c, gru in enumerate(self.channels):
            if c >= context.shape[0]:
                break
            _, final = gru(context[c::count])
            finals.append(final)
        return self.attention(stack(finals, axis=0))


class KnowledgeAwareUserEncoder(UserEncoder):
    """Clicked news weighted by an MLP over (clicked, candidate) pairs"""
    candidate_aware = True

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        super().__init__(config, rng, dtype)
        self.hidden = Linear(2 * self.dim, config.dkn_hidden, rng, dtype)
        self.score = Linear(config.dkn_hidden, 1, rng, dtype)

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        if candidate is None:
            raise ConfigurationError("DKN user encoding needs a candidate")
        scores = self.score(relu(self.hidden(
            pair_with_candidate(history, candidate))))
        pooled, _ = ops.attention_pool(history,
                                       scores.reshape(scores.shape[:-1]))
        return pooled


class CandidateAwareUserEncoder(UserEncoder):
    """
    Candidate-conditioned self-attention (long range) and convolution
    (adjacent clicks), fused per click and pooled by candidate-aware
    attention.
    """
    candidate_aware = True

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        super().__init__(config, rng, dtype)
        dim = self.dim
        self.candidate_projection = Linear(dim, dim, rng, dtype)
        self.self_attention = MultiHeadAttention(
            2 * dim, config.caum_heads, config.caum_head_dim, rng, dtype,
            d_key=dim)
        self.convolution = Conv1d(2 * dim, dim, config.caum_window, rng,
                                  dtype, activation=config.activation)
        self.fuse = Linear(self.self_attention.width + dim, dim, rng, dtype)
        self.attention = AdditiveAttention(2 * dim, config.query_dim, rng,
                                           dtype)

    def forward(self, history: Tensor, candidate: Optional[Tensor] = None,
                user_index: int = 0,
                user_context: Optional[Tensor] = None) -> Tensor:
        if candidate is None:
            raise ConfigurationError("CAUM user encoding needs a candidate")
        projected = self.candidate_projection(candidate)
        pairs = pair_with_candidate(history, projected)
        long_range = self.self_attention(pairs, history)
        short_term = self.convolution(pairs)
        clicks = tanh(self.fuse(concat([long_range, short_term], axis=-1)))
        scores = self.attention.scores(
            pair_with_candidate_rows(clicks, projected))
        pooled, _ = ops.attention_pool(clicks, scores)
        return pooled


def pair_with_candidate_rows(clicks: Tensor, candidate: Tensor) -> Tensor:
    """[(C,) N, D] clicks and [(C,) D] candidate -> [(C,) N, 2D]"""
    return concat([clicks, ops.expand_rows(candidate, clicks.shape[-2])],
                  axis=-1)


def _lstur_con(config: ModelConfig, rng: np.random.Generator,
               dtype: Any = np.float32) -> UserEncoder:
    return LsturUserEncoder(config, rng, dtype, concat=True)


USER_ENCODERS = {
    Variant.NPA: PersonalizedUserEncoder,
    Variant.NAML: AdditiveUserEncoder,
    Variant.NRMS: SelfAttentionUserEncoder,
    Variant.LSTUR_INI: LsturUserEncoder,
    Variant.LSTUR_CON: _lstur_con,
    Variant.CENNEWSREC: CenNewsRecUserEncoder,
    Variant.MINS: MinsUserEncoder,
    Variant.DKN: KnowledgeAwareUserEncoder,
    Variant.CAUM: CandidateAwareUserEncoder,
}  # type: Dict[Variant, Any]


def build_user_encoder(config: ModelConfig, rng: np.random.Generator,
                       dtype: Any = np.float32) -> UserEncoder:
    factory = USER_ENCODERS[config.variant]
    encoder = factory(config, rng, dtype)  # type: UserEncoder
    return encoder


def encode_user(encoder: UserEncoder, history: ClickHistory,
                candidate: Optional[Tensor] = None,
                user_context: Optional[Tensor] = None) -> UserEmbedding:
    rows = history.rows()
    if history.length == 0:
        raise DegenerateInputError("Cannot encode a user with no clicks")
    if encoder.candidate_aware:
        if candidate is None:
            raise ConfigurationError(
                "{} needs a candidate to encode the user".format(
                    type(encoder).__name__))
        vector = encoder(rows, candidate=candidate,
                         user_index=history.user_index,
                         user_context=user_context)
    else:
        vector = encoder(rows, user_index=history.user_index,
                         user_context=user_context)
    return UserEmbedding(vector, encoder.candidate_aware)
