"""
News encoders: article features in, one embedding per article out.

All encoders consume a ``NewsBatch`` (M articles padded to a common title
length) and return [M, D].  Token id 0 is padding everywhere; padded
positions are masked out of every attention and pooling step.
"""
import dataclasses
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, Union

import numpy as np

from newsfuse import ops
from newsfuse.config import ModelConfig, Variant
from newsfuse.exceptions import ConfigurationError, DegenerateInputError
from newsfuse.layers import (AdditiveAttention, Conv1d, Dropout, Embedding,
                             Linear, MultiHeadAttention, PersonalizedAttention)
from newsfuse.tensor import (Module, Tensor, concat, max_over, relu, stack,
                             take, tanh)


@dataclasses.dataclass(frozen=True)
class NewsFeatures:
    news_id: str
    title_token_ids: Tuple[int, ...]
    category_id: int
    subcategory_id: int
    # Entity index for each title position, 0 where no entity is mentioned
    title_entity_ids: Tuple[int, ...]

    @property
    def title_length(self) -> int:
        return sum(1 for t in self.title_token_ids if t != 0)


@dataclasses.dataclass
class NewsBatch:
    news_ids: List[str]
    titles: np.ndarray
    categories: np.ndarray
    subcategories: np.ndarray
    entities: np.ndarray

    @classmethod
    def from_features(cls, features: Sequence[NewsFeatures],
                      min_length: int = 1) -> "NewsBatch":
        length = max([min_length] + [len(f.title_token_ids) for f in features])
        titles = np.zeros((len(features), length), dtype=np.int64)
        entities = np.zeros((len(features), length), dtype=np.int64)
        for row, feature in enumerate(features):
            token_ids = feature.title_token_ids
            titles[row, :len(token_ids)] = token_ids
            entity_ids = feature.title_entity_ids[:length]
            entities[row, :len(entity_ids)] = entity_ids
        return cls(
            news_ids=[f.news_id for f in features],
            titles=titles,
            categories=np.array([f.category_id for f in features],
                                dtype=np.int64),
            subcategories=np.array([f.subcategory_id for f in features],
                                   dtype=np.int64),
            entities=entities)

    def __len__(self) -> int:
        return len(self.news_ids)

    @property
    def title_mask(self) -> np.ndarray:
        return self.titles != 0

    @property
    def lengths(self) -> np.ndarray:
        return self.title_mask.sum(axis=-1)

    def pad_to(self, length: int) -> "NewsBatch":
        extra = length - self.titles.shape[1]
        if extra <= 0:
            return self
        widen = ((0, 0), (0, extra))
        return dataclasses.replace(self, titles=np.pad(self.titles, widen),
                                   entities=np.pad(self.entities, widen))


def lookup_word_embeddings(token_ids: Any, table: Tensor) -> Tensor:
    """[*, L] token ids to [*, L, d]; only gathered rows receive gradient"""
    return take(table, token_ids)


def embed_category(category_ids: Any, subcategory_ids: Any,
                   category_table: Tensor, subcategory_table: Tensor,
                   weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """relu(W [category; subcategory] + b)"""
    joint = concat([take(category_table, category_ids),
                    take(subcategory_table, subcategory_ids)], axis=-1)
    return relu(ops.linear(joint, weight, bias))


class CategoryEncoder(Module):
    def __init__(self, config: ModelConfig, out_dim: int,
                 rng: np.random.Generator, dtype: Any) -> None:
        self.category = Embedding(config.num_categories, config.category_dim,
                                  rng, dtype)
        self.subcategory = Embedding(config.num_subcategories,
                                     config.category_dim, rng, dtype)
        self.projection = Linear(2 * config.category_dim, out_dim, rng, dtype)

    def forward(self, batch: NewsBatch) -> Tensor:
        return embed_category(batch.categories, batch.subcategories,
                              self.category.weight, self.subcategory.weight,
                              self.projection.weight, self.projection.bias)


class NewsEncoder(Module):
    """Word embeddings plus dropout; subclasses build the rest"""
    needs_user = False

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32,
                 word_vectors: Optional[np.ndarray] = None,
                 entity_vectors: Optional[np.ndarray] = None) -> None:
        if word_vectors is None:
            self.word_embedding = Embedding(config.num_words, config.word_dim,
                                            rng, dtype)
        else:
            self.word_embedding = Embedding.from_pretrained(word_vectors,
                                                            dtype=dtype)
        self.dropout = Dropout(config.dropout, rng)
        self.dim = config.model_dim
        self.activation = config.activation

    def words(self, batch: NewsBatch) -> Tuple[Tensor, np.ndarray]:
        mask = batch.title_mask
        empty = ~mask.any(axis=-1)
        if empty.any():
            raise DegenerateInputError("News {} has an empty title".format(
                batch.news_ids[int(np.argmax(empty))]))
        vectors = lookup_word_embeddings(batch.titles,
                                         self.word_embedding.weight)
        return self.dropout(vectors), mask

    def forward(self, batch: NewsBatch,
                user_context: Optional[Tensor] = None) -> Tensor:
        raise NotImplementedError


class CnnAttentionNewsEncoder(NewsEncoder):
    """CNN title view and category view, pooled by attention over views"""
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32, **vectors: Any) -> None:
        super().__init__(config, rng, dtype, **vectors)
        self.title_cnn = Conv1d(config.word_dim, self.dim, config.window, rng,
                                dtype, activation=config.activation)
        self.title_attention = AdditiveAttention(self.dim, config.query_dim,
                                                 rng, dtype)
        self.category = CategoryEncoder(config, self.dim, rng, dtype)
        self.view_attention = AdditiveAttention(self.dim, config.query_dim,
                                                rng, dtype)

    def forward(self, batch: NewsBatch,
                user_context: Optional[Tensor] = None) -> Tensor:
        words, mask = self.words(batch)
        title = self.title_attention(self.dropout(self.title_cnn(words)), mask)
        views = stack([self.dropout(title), self.category(batch)], axis=-2)
        return self.view_attention(views)


class SelfAttentionNewsEncoder(NewsEncoder):
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32, **vectors: Any) -> None:
        super().__init__(config, rng, dtype, **vectors)
        self.self_attention = MultiHeadAttention(
            config.word_dim, config.heads, config.head_dim, rng, dtype)
        self.title_attention = AdditiveAttention(self.dim, config.query_dim,
                                                 rng, dtype)

    def forward(self, batch: NewsBatch,
                user_context: Optional[Tensor] = None) -> Tensor:
        words, mask = self.words(batch)
        context = self.dropout(self.self_attention(words, mask=mask))
        return self.title_attention(context, mask)


class PersonalizedNewsEncoder(NewsEncoder):
    """CNN title encoder whose attention query comes from the user id"""
    needs_user = True

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32, **vectors: Any) -> None:
        super().__init__(config, rng, dtype, **vectors)
        self.title_cnn = Conv1d(config.word_dim, self.dim, config.window, rng,
                                dtype, activation=config.activation)
        self.query_projection = Linear(config.user_dim, config.query_dim, rng,
                                       dtype)
        self.title_attention = PersonalizedAttention(self.dim,
                                                     config.query_dim, rng,
                                                     dtype)

    def forward(self, batch: NewsBatch,
                user_context: Optional[Tensor] = None) -> Tensor:
        if user_context is None:
            raise ConfigurationError("NPA news encoding needs a user context")
        words, mask = self.words(batch)
        query = relu(self.query_projection(user_context))
        hidden = self.dropout(self.title_cnn(words))
        return self.title_attention(hidden, query, mask)


class LsturNewsEncoder(NewsEncoder):
    """CNN title vector concatenated with raw category embeddings"""
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32, **vectors: Any) -> None:
        super().__init__(config, rng, dtype, **vectors)
        filters = config.cnn_filters
        self.title_cnn = Conv1d(config.word_dim, filters, config.window, rng,
                                dtype, activation=config.activation)
        self.title_attention = AdditiveAttention(filters, config.query_dim,
                                                 rng, dtype)
        self.category = Embedding(config.num_categories, config.category_dim,
                                  rng, dtype)
        self.subcategory = Embedding(config.num_subcategories,
                                     config.category_dim, rng, dtype)

    def forward(self, batch: NewsBatch,
                user_context: Optional[Tensor] = None) -> Tensor:
        words, mask = self.words(batch)
        title = self.title_attention(self.dropout(self.title_cnn(words)), mask)
        return concat([self.dropout(title), self.category(batch.categories),
                       self.subcategory(batch.subcategories)], axis=-1)


class CenNewsRecNewsEncoder(NewsEncoder):
    """CNN, then self-attention, then additive attention over the title"""
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32, **vectors: Any) -> None:
        super().__init__(config, rng, dtype, **vectors)
        filters = config.cnn_filters
        self.title_cnn = Conv1d(config.word_dim, filters, config.window, rng,
                                dtype, activation=config.activation)
        self.self_attention = MultiHeadAttention(filters, config.heads,
                                                 config.head_dim, rng, dtype)
        self.title_attention = AdditiveAttention(self.dim, config.query_dim,
                                                 rng, dtype)

    def forward(self, batch: NewsBatch,
                user_context: Optional[Tensor] = None) -> Tensor:
        words, mask = self.words(batch)
        hidden = self.dropout(self.title_cnn(words))
        context = self.dropout(self.self_attention(hidden, mask=mask))
        return self.title_attention(context, mask)


class KnowledgeAwareNewsEncoder(NewsEncoder):
    """
    Word and aligned entity channels through multi-window convolutions.

    Entities are mapped into word space by a trainable tanh projection;
    the entity table itself stays frozen.  Each window is max-pooled over
    the positions it fully covers inside the title.
    """
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32,
                 entity_vectors: Optional[np.ndarray] = None,
                 **vectors: Any) -> None:
        super().__init__(config, rng, dtype, **vectors)
        self.entity_embedding = _entity_table(config, rng, dtype,
                                              entity_vectors)
        self.entity_transform = Linear(config.entity_dim, config.word_dim,
                                       rng, dtype)
        self.windows = config.dkn_windows
        self.convolutions = [
            Conv1d(2 * config.word_dim, config.dkn_filters, window, rng,
                   dtype, padding="valid", activation=config.activation)
            for window in config.dkn_windows]

    def forward(self, batch: NewsBatch,
                user_context: Optional[Tensor] = None) -> Tensor:
        batch = batch.pad_to(max(self.windows))
        words, mask = self.words(batch)
        entities = tanh(self.entity_transform(
            self.entity_embedding(batch.entities)))
        entities = entities * mask[..., None].astype(entities.dtype)
        channels = concat([words, entities], axis=-1)
        lengths = batch.lengths
        pooled = []
        for window, conv in zip(self.windows, self.convolutions):
            features = conv(channels)
            starts = np.arange(features.shape[-2])
            # Titles shorter than the window keep their first position
            limit = np.maximum(lengths - window + 1, 1)
            valid = starts[None, :] < limit[:, None]
            pooled.append(max_over(features, axis=-2,
                                   mask=valid[..., None]))
        return self.dropout(concat(pooled, axis=-1))


class CandidateAwareNewsEncoder(NewsEncoder):
    """Title, entity and category vectors concatenated and projected"""
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype: Any = np.float32,
                 entity_vectors: Optional[np.ndarray] = None,
                 **vectors: Any) -> None:
        super().__init__(config, rng, dtype, **vectors)
        self.self_attention = MultiHeadAttention(
            config.word_dim, config.heads, config.head_dim, rng, dtype)
        width = self.self_attention.width
        self.title_attention = AdditiveAttention(width, config.query_dim,
                                                 rng, dtype)
        self.entity_embedding = _entity_table(config, rng, dtype,
                                              entity_vectors)
        self.entity_pooling = config.entity_pooling
        self.entity_attention = None  # type: Optional[AdditiveAttention]
        if config.entity_pooling == "attention":
            self.entity_attention = AdditiveAttention(
                config.entity_dim, config.query_dim, rng, dtype)
        self.category = CategoryEncoder(config, config.category_dim, rng,
                                        dtype)
        self.projection = Linear(width + config.entity_dim
                                 + config.category_dim, self.dim, rng, dtype)

    def forward(self, batch: NewsBatch,
                user_context: Optional[Tensor] = None) -> Tensor:
        words, mask = self.words(batch)
        context = self.dropout(self.self_attention(words, mask=mask))
        title = self.dropout(self.title_attention(context, mask))
        entity = self.pool_entities(batch)
        return self.projection(concat([title, entity, self.category(batch)],
                                      axis=-1))

    def pool_entities(self, batch: NewsBatch) -> Tensor:
        vectors = self.entity_embedding(batch.entities)
        mask = batch.entities != 0
        # No entities: attend to the zero padding row at position 0
        mask[:, 0] |= ~mask.any(axis=-1)
        if self.entity_attention is not None:
            return self.entity_attention(vectors, mask)
        weights = mask / mask.sum(axis=-1, keepdims=True)
        weights = weights[..., None].astype(vectors.dtype)
        return (vectors * weights).sum(axis=-2)


def _entity_table(config: ModelConfig, rng: np.random.Generator, dtype: Any,
                  entity_vectors: Optional[np.ndarray]) -> Embedding:
    if entity_vectors is None:
        return Embedding(config.num_entities, config.entity_dim, rng, dtype,
                         trainable=False, init="zeros")
    return Embedding.from_pretrained(entity_vectors, trainable=False,
                                     dtype=dtype)


NEWS_ENCODERS = {
    Variant.NPA: PersonalizedNewsEncoder,
    Variant.NAML: CnnAttentionNewsEncoder,
    Variant.NRMS: SelfAttentionNewsEncoder,
    Variant.LSTUR_INI: LsturNewsEncoder,
    Variant.LSTUR_CON: LsturNewsEncoder,
    Variant.CENNEWSREC: CenNewsRecNewsEncoder,
    Variant.MINS: CnnAttentionNewsEncoder,
    Variant.DKN: KnowledgeAwareNewsEncoder,
    Variant.CAUM: CandidateAwareNewsEncoder,
}  # type: Dict[Variant, Type[NewsEncoder]]


def build_news_encoder(config: ModelConfig, rng: np.random.Generator,
                       dtype: Any = np.float32,
                       word_vectors: Optional[np.ndarray] = None,
                       entity_vectors: Optional[np.ndarray] = None
                       ) -> NewsEncoder:
    cls = NEWS_ENCODERS[config.variant]
    if config.variant in (Variant.DKN, Variant.CAUM):
        return cls(config, rng, dtype, word_vectors=word_vectors,
                   entity_vectors=entity_vectors)
    return cls(config, rng, dtype, word_vectors=word_vectors)


def encode_news(encoder: NewsEncoder,
                features: Union[NewsBatch, Sequence[NewsFeatures]],
                user_context: Optional[Tensor] = None) -> Tensor:
    """Embed articles as [M, D]; NPA needs ``user_context`` [M, user_dim]"""
    if encoder.needs_user and user_context is None:
        raise ConfigurationError("NPA news encoding needs a user context")
    batch = features if isinstance(features, NewsBatch) else \
        NewsBatch.from_features(features)
    if len(batch) == 0:
        raise DegenerateInputError("No news to encode")
    return encoder(batch, user_context=user_context)
