"""
A recommender is a news encoder, a fusion mode and, under early fusion, a
user encoder.

Parameters live under three name prefixes: ``news_encoder``,
``user_encoder`` and ``shared`` (tables read by both towers, such as the
NPA user-id embedding).  Parameter accounting relies on these prefixes.
"""
from typing import Any, Optional, Sequence, Union

import numpy as np

from newsfuse.config import ModelConfig, Variant
from newsfuse.fusion import FusionMode, score_early, score_late
from newsfuse.layers import Embedding
from newsfuse.news import (NewsBatch, NewsFeatures, build_news_encoder,
                           encode_news)
from newsfuse.tensor import Module, Tensor, constant
from newsfuse.user import (ClickHistory, UserEncoder, build_user_encoder,
                           encode_user)


class SharedEmbeddings(Module):
    """Per-user id embedding that conditions NPA's news and user towers"""
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32) -> None:
        self.user_embedding = Embedding(config.num_users, config.user_dim,
                                        rng, dtype)


class Recommender(Module):
    def __init__(self, config: ModelConfig, fusion: FusionMode,
                 rng: np.random.Generator, dtype: Any = np.float32,
                 word_vectors: Optional[np.ndarray] = None,
                 entity_vectors: Optional[np.ndarray] = None) -> None:
        config.validate()
        self.config = config
        self.fusion = FusionMode(fusion)
        # Drives dropout and long-term masking after initialization
        self.rng = rng
        self.news_encoder = build_news_encoder(config, rng, dtype,
                                               word_vectors, entity_vectors)
        self.user_encoder = None  # type: Optional[UserEncoder]
        if self.fusion is FusionMode.EARLY:
            self.user_encoder = build_user_encoder(config, rng, dtype)
        self.shared = None  # type: Optional[SharedEmbeddings]
        if config.variant is Variant.NPA:
            self.shared = SharedEmbeddings(config, rng, dtype)

    @property
    def variant(self) -> Variant:
        return self.config.variant

    @property
    def dim(self) -> int:
        return self.config.model_dim

    @property
    def needs_user(self) -> bool:
        """News embeddings depend on the reading user (NPA)"""
        return self.news_encoder.needs_user

    @property
    def candidate_aware(self) -> bool:
        return self.fusion is FusionMode.EARLY and \
            self.variant.candidate_aware

    def user_context(self, user_indices: Any) -> Optional[Tensor]:
        if self.shared is None:
            return None
        return self.shared.user_embedding(user_indices)

    def encode_news(self, features: Union[NewsBatch, Sequence[NewsFeatures]],
                    user_indices: Any = None) -> Tensor:
        """[M, D] embeddings; NPA reads one user index per article"""
        context = None
        if self.needs_user:
            if user_indices is None:
                user_indices = np.zeros(len(features), dtype=np.int64)
            context = self.user_context(np.asarray(user_indices,
                                                   dtype=np.int64))
        return encode_news(self.news_encoder, features, context)

    def score_candidates(self, history: Tensor, candidates: Tensor,
                         user_index: int = 0) -> Tensor:
        """
        Scores [C] of candidate embeddings [C, D] for one user.

        ``history`` holds the user's N true clicked-news embeddings.  An
        empty history scores every candidate 0.
        """
        if history.shape[0] == 0:
            return constant(np.zeros(candidates.shape[:-1],
                                     dtype=candidates.dtype))
        if self.user_encoder is None:
            return score_late(history, candidates)
        clicks = ClickHistory(history, history.shape[0],
                              user_index=user_index)
        context = self.user_context(user_index)
        user = encode_user(self.user_encoder, clicks,
                           candidate=candidates, user_context=context)
        return score_early(user.vector, candidates)


def build_model(config: ModelConfig, fusion: Union[FusionMode, str],
                seed: Union[int, np.random.Generator] = 0,
                dtype: Any = np.float32,
                word_vectors: Optional[np.ndarray] = None,
                entity_vectors: Optional[np.ndarray] = None) -> Recommender:
    rng = seed if isinstance(seed, np.random.Generator) else \
        np.random.default_rng(seed)
    return Recommender(config, FusionMode(fusion), rng, dtype, word_vectors,
                       entity_vectors)
