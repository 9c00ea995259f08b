"""
MIND dataset ingestion.

A MIND directory holds ``news.tsv`` (the article catalog) and
``behaviors.tsv`` (impressions).  The training directory is split by day
into train and validation; the distribution's dev directory is the test
split.  Every news id an impression references either resolves in the
catalog or is dropped and counted.
"""
import collections
import dataclasses
import hashlib
import logging
import os
from typing import (Counter, Dict, Iterable, Iterator, List, Mapping,
                    Optional, Sequence, Tuple)

import numpy as np
import pandas as pd

from newsfuse.config import ModelConfig
from newsfuse.exceptions import ConfigurationError, DegenerateInputError
from newsfuse.news import NewsFeatures
from newsfuse.objectives import TrainingSample, sample_negatives
from newsfuse.tensor import Parameter
from newsfuse.unpack import (Impression, NewsRecord, tokenize,
                             unpack_behavior, unpack_news)

__all__ = ["Impression", "NewsRecord", "DatasetSplit", "MindDataset",
           "parse_news_tsv", "parse_behaviors_tsv", "temporal_split",
           "truncate_history", "build_vocab", "build_index", "featurize",
           "load_word_embeddings", "load_entity_embeddings",
           "subsample_users", "load_dataset", "write_manifest",
           "make_training_samples"]

logger = logging.getLogger("newsfuse.mind")

PAD = 0
UNK = 1
WORD_DIM = 300
ENTITY_DIM = 100


def _lines(path: str) -> Iterator[Tuple[int, str]]:
    with open(path, encoding="utf-8") as stream:
        for lineno, line in enumerate(stream, 1):
            if line.strip():
                yield lineno, line


def parse_news_tsv(path: str,
                   stats: Optional[Counter[str]] = None
                   ) -> Dict[str, NewsRecord]:
    """ news_id -> record, in file order; empty titles are left out """
    stats = collections.Counter() if stats is None else stats
    records = {}  # type: Dict[str, NewsRecord]
    for lineno, line in _lines(path):
        record = unpack_news(line, lineno)
        if record.malformed_entities:
            stats["malformed_entities"] += 1
            logger.warning("{}:{} malformed entity JSON for {}".format(
                path, lineno, record.news_id))
        if not record.title_tokens:
            stats["empty_titles"] += 1
            continue
        records.setdefault(record.news_id, record)
    if stats["empty_titles"]:
        logger.warning("Excluded {} news with empty titles from {}".format(
            stats["empty_titles"], path))
    return records


def parse_behaviors_tsv(path: str) -> List[Impression]:
    return [unpack_behavior(line, lineno) for lineno, line in _lines(path)]


def temporal_split(impressions: Sequence[Impression]
                   ) -> Tuple[List[Impression], List[Impression]]:
    """
    The last calendar day is validation; every earlier day is train.

    Days are read as written in the timestamps, with no time zone applied.
    """
    days = sorted({imp.day for imp in impressions})
    if len(days) < 2:
        raise ConfigurationError(
            "Temporal split needs at least 2 distinct days, found {}".format(
                len(days)))
    last = days[-1]
    train = [imp for imp in impressions if imp.day < last]
    validation = [imp for imp in impressions if imp.day == last]
    return train, validation


def truncate_history(history_ids: Sequence[str],
                     max_len: int = 50) -> List[str]:
    """ The ``max_len`` most recent clicks, oldest first """
    if max_len < 0:
        raise ConfigurationError("max_len must be non-negative")
    if max_len == 0:
        return []
    return list(history_ids[-max_len:])


def build_vocab(catalog: Mapping[str, NewsRecord],
                min_freq: int = 1) -> Dict[str, int]:
    """
    Title token -> index.

    0 is padding and 1 unknown; tokens follow by descending frequency,
    ties broken lexicographically.
    """
    if not catalog:
        raise DegenerateInputError("Cannot build a vocabulary from no news")
    counts = collections.Counter(
        token for record in catalog.values() for token in record.title_tokens)
    vocab = {"<pad>": PAD, "<unk>": UNK}
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    for token, count in ranked:
        if count >= min_freq:
            vocab[token] = len(vocab)
    return vocab


def build_index(values: Iterable[str]) -> Dict[str, int]:
    """ Sorted distinct values -> 1..n; 0 stays reserved """
    return {value: i for i, value in enumerate(sorted(set(values)), 1)}


def _entity_ids(entities: Sequence[Mapping]) -> Iterator[str]:
    for entity in entities:
        wikidata_id = entity.get("WikidataId")
        if wikidata_id:
            yield str(wikidata_id)


def featurize(catalog: Mapping[str, NewsRecord], vocab: Mapping[str, int],
              categories: Mapping[str, int], subcategories: Mapping[str, int],
              entities: Mapping[str, int],
              title_length: int = 30) -> Dict[str, NewsFeatures]:
    """
    Index every record's title, categories and title entities.

    Titles are cut to ``title_length`` tokens.  An entity is aligned to
    every title position covered by one of its surface forms.
    """
    features = {}
    for news_id, record in catalog.items():
        tokens = record.title_tokens[:title_length]
        token_ids = tuple(vocab.get(token, UNK) for token in tokens)
        aligned = [PAD] * len(tokens)
        for entity in record.title_entities:
            index = entities.get(str(entity.get("WikidataId", "")), PAD)
            if index == PAD:
                continue
            for surface in entity.get("SurfaceForms") or []:
                span = tokenize(str(surface))
                if not span:
                    continue
                for start in range(len(tokens) - len(span) + 1):
                    if tokens[start:start + len(span)] == span:
                        for position in range(start, start + len(span)):
                            aligned[position] = index
        features[news_id] = NewsFeatures(
            news_id=news_id,
            title_token_ids=token_ids,
            category_id=categories.get(record.category, PAD),
            subcategory_id=subcategories.get(record.subcategory, PAD),
            title_entity_ids=tuple(aligned))
    return features


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _read_vectors(path: str, index: Mapping[str, int], matrix: np.ndarray,
                  dim: int) -> int:
    """
    Copy rows for known keys into ``matrix``; returns the match count.

    Every row must carry exactly ``dim`` numbers after its key.  A wrong
    first row rejects the file; later wrong rows are skipped and counted.
    """
    matched = set()
    malformed = 0
    with open(path, encoding="utf-8") as stream:
        for lineno, line in enumerate(stream, 1):
            parts = line.rstrip().split()
            if not parts:
                continue
            if lineno == 1 and len(parts) - 1 != dim:
                raise ConfigurationError(
                    "{} holds {}-d vectors, expected {}".format(
                        path, len(parts) - 1, dim))
            # Some word files contain keys with spaces, but a key never
            # ends in a number
            if len(parts) <= dim or \
                    (len(parts) > dim + 1 and _is_number(parts[-dim - 1])):
                malformed += 1
                continue
            try:
                vector = np.asarray(parts[-dim:], dtype=matrix.dtype)
            except ValueError:
                malformed += 1
                continue
            key = " ".join(parts[:-dim])
            row = index.get(key)
            if row is None or row == PAD or row in matched:
                continue
            matrix[row] = vector
            matched.add(row)
    if malformed:
        logger.warning("Skipped {} rows of {} without {} values".format(
            malformed, path, dim))
    return len(matched)


def load_word_embeddings(path: str, vocab: Mapping[str, int],
                         rng: np.random.Generator, dim: int = WORD_DIM,
                         dtype: object = np.float32) -> Parameter:
    """
    Word table with rows copied from a GloVe-format text file.

    Unmatched rows are uniform in [-0.1, 0.1]; row 0 is zero and frozen.
    """
    rows = max(vocab.values()) + 1
    matrix = rng.uniform(-0.1, 0.1, size=(rows, dim)).astype(dtype)
    matrix[PAD] = 0
    matched = _read_vectors(path, vocab, matrix, dim)
    coverage = matched / max(rows - 2, 1)
    logger.info("Word embedding coverage {:.4f} ({} of {} tokens)".format(
        coverage, matched, rows - 2))
    return Parameter(matrix, name="word_embedding", frozen_rows=(PAD,))


def load_entity_embeddings(path: str, entities: Mapping[str, int],
                           dim: int = ENTITY_DIM,
                           dtype: object = np.float32) -> Parameter:
    """ Frozen entity table; unmatched rows stay zero """
    rows = max(list(entities.values()) + [PAD]) + 1
    matrix = np.zeros((rows, dim), dtype=dtype)
    matched = _read_vectors(path, entities, matrix, dim)
    logger.info("Entity embedding coverage {} of {} entities".format(
        matched, rows - 1))
    return Parameter(matrix, name="entity_embedding", trainable=False,
                     frozen_rows=(PAD,))


def user_hash(user_id: str, seed: int = 0) -> float:
    digest = hashlib.sha256("{}:{}".format(seed, user_id).encode("utf-8"))
    return int(digest.hexdigest()[:12], 16) / float(16 ** 12)


def subsample_users(impressions: Sequence[Impression], fraction: float,
                    seed: int = 0) -> List[Impression]:
    """ Keep whole users whose hash falls below ``fraction`` """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError("Subsample fraction must be in (0, 1]")
    if fraction == 1.0:
        return list(impressions)
    return [imp for imp in impressions
            if user_hash(imp.user_id, seed) < fraction]


def resolve(impressions: Sequence[Impression], catalog: Mapping[str, object],
            stats: Counter[str]) -> List[Impression]:
    """ Drop history and candidate ids missing from the catalog """
    resolved = []
    for imp in impressions:
        history = [n for n in imp.history_news_ids if n in catalog]
        candidates = [(n, c) for n, c in imp.candidates if n in catalog]
        stats["unresolved_history"] += len(imp.history_news_ids) - len(history)
        stats["unresolved_candidates"] += \
            len(imp.candidates) - len(candidates)
        resolved.append(dataclasses.replace(
            imp, history_news_ids=history, candidates=candidates))
    return resolved


@dataclasses.dataclass
class DatasetSplit:
    train: List[Impression]
    validation: List[Impression]
    test: List[Impression]
    news_catalog: Dict[str, NewsFeatures]

    def splits(self) -> Iterator[Tuple[str, List[Impression]]]:
        yield "train", self.train
        yield "validation", self.validation
        yield "test", self.test


@dataclasses.dataclass
class MindDataset:
    split: DatasetSplit
    vocab: Dict[str, int]
    categories: Dict[str, int]
    subcategories: Dict[str, int]
    entities: Dict[str, int]
    users: Dict[str, int]
    stats: Counter[str] = dataclasses.field(
        default_factory=collections.Counter)
    word_vectors: Optional[np.ndarray] = None
    entity_vectors: Optional[np.ndarray] = None

    def model_config(self, base: ModelConfig) -> ModelConfig:
        """ ``base`` with vocabulary sizes filled in from this dataset """
        return dataclasses.replace(
            base,
            num_words=max(self.vocab.values()) + 1,
            num_categories=len(self.categories) + 1,
            num_subcategories=len(self.subcategories) + 1,
            num_entities=len(self.entities) + 1,
            num_users=len(self.users) + 1)

    def user_index(self, user_id: str) -> int:
        return self.users.get(user_id, 0)


def load_dataset(train_dir: str, test_dir: Optional[str] = None,
                 title_length: int = 30, min_freq: int = 1,
                 subsample: float = 1.0, seed: int = 0,
                 word_embeddings: Optional[str] = None,
                 entity_embeddings: Optional[str] = None,
                 dtype: object = np.float32) -> MindDataset:
    stats = collections.Counter()  # type: Counter[str]
    records = {}  # type: Dict[str, NewsRecord]
    test = []  # type: List[Impression]
    if test_dir is not None:
        records.update(parse_news_tsv(os.path.join(test_dir, "news.tsv"),
                                      stats))
        test = parse_behaviors_tsv(os.path.join(test_dir, "behaviors.tsv"))
    records.update(parse_news_tsv(os.path.join(train_dir, "news.tsv"), stats))
    behaviors = parse_behaviors_tsv(os.path.join(train_dir, "behaviors.tsv"))

    behaviors = subsample_users(behaviors, subsample, seed)
    test = subsample_users(test, subsample, seed)
    train, validation = temporal_split(behaviors)

    vocab = build_vocab(records, min_freq)
    categories = build_index(r.category for r in records.values())
    subcategories = build_index(r.subcategory for r in records.values())
    entities = build_index(wikidata_id for r in records.values()
                           for wikidata_id in _entity_ids(r.title_entities))
    # Only users seen in training get their own rows
    users = build_index(imp.user_id for imp in train)
    catalog = featurize(records, vocab, categories, subcategories, entities,
                        title_length)

    split = DatasetSplit(
        train=resolve(train, catalog, stats),
        validation=resolve(validation, catalog, stats),
        test=resolve(test, catalog, stats),
        news_catalog=catalog)
    if stats["unresolved_history"] or stats["unresolved_candidates"]:
        logger.warning(
            "Dropped {} history and {} candidate ids missing from the "
            "catalog".format(stats["unresolved_history"],
                             stats["unresolved_candidates"]))
    dataset = MindDataset(split=split, vocab=vocab, categories=categories,
                          subcategories=subcategories, entities=entities,
                          users=users, stats=stats)
    if word_embeddings:
        dataset.word_vectors = load_word_embeddings(
            word_embeddings, vocab, np.random.default_rng(seed),
            dtype=dtype).data
    if entity_embeddings:
        dataset.entity_vectors = load_entity_embeddings(
            entity_embeddings, entities, dtype=dtype).data
    return dataset


def day_counts(impressions: Sequence[Impression]) -> pd.Series:
    days = pd.Series([imp.day for imp in impressions], dtype=object)
    return days.value_counts().sort_index()


def write_manifest(dataset: MindDataset, path: str) -> None:
    split = dataset.split
    lines = ["# newsfuse dataset manifest"]
    for name, impressions in split.splits():
        users = len({imp.user_id for imp in impressions})
        lines.append("[{}] impressions={} users={}".format(
            name, len(impressions), users))
        for day, count in day_counts(impressions).items():
            lines.append("  {} {}".format(day.isoformat(), count))
    lines.append("[catalog] news={} words={} categories={} "
                 "subcategories={} entities={}".format(
                     len(split.news_catalog), len(dataset.vocab),
                     len(dataset.categories), len(dataset.subcategories),
                     len(dataset.entities)))
    lines.append("[dropped]")
    for key in ("empty_titles", "malformed_entities", "unresolved_history",
                "unresolved_candidates"):
        lines.append("  {} {}".format(key, dataset.stats.get(key, 0)))
    with open(path, "w", encoding="utf-8") as stream:
        stream.write("\n".join(lines) + "\n")


def make_training_samples(impressions: Sequence[Impression],
                          users: Mapping[str, int], k: int,
                          rng: np.random.Generator,
                          max_history: int = 50) -> Iterator[TrainingSample]:
    """ Truncate each history, then sample negatives per clicked candidate """
    for imp in impressions:
        history = truncate_history(imp.history_news_ids, max_history)
        yield from sample_negatives(imp, k, rng, history=history,
                                    user_index=users.get(imp.user_id, 0))
