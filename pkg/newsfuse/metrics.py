"""
Impression-level ranking metrics, evaluation and parameter accounting.

Rank-based metrics sort by descending score with a stable sort, so tied
candidates keep their input order.  AUC gives ties half credit.
"""
import collections
import dataclasses
import logging
from typing import (Any, Dict, List, Mapping, Optional, Sequence, Tuple,
                    Union)

import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score

from newsfuse.exceptions import (AccountingError, ConfigurationError,
                                 DegenerateInputError, ShapeError)
from newsfuse.mind import truncate_history
from newsfuse.news import NewsBatch, NewsFeatures
from newsfuse.tensor import Tensor, no_grad
from newsfuse.unpack import Impression

MYPY = False
if MYPY:
    from newsfuse.model import Recommender  # noqa

logger = logging.getLogger("newsfuse.metrics")

METRICS = ("auc", "mrr", "ndcg@5", "ndcg@10")

# Name prefix -> component reported by count_parameters
COMPONENTS = {
    "news_encoder": "news_encoder",
    "user_encoder": "user_encoder",
    "shared": "other",
}

ArrayLike = Union[Sequence[float], np.ndarray]


def _validate(scores: ArrayLike,
              labels: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ShapeError(
            "Scores {} and labels {} must be matching lists".format(
                scores.shape, labels.shape))
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("Labels must be binary")
    return scores, labels.astype(np.int64)


def _ranked(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Labels in descending-score order; ties keep input order"""
    return labels[np.argsort(-scores, kind="stable")]


def auc(scores: ArrayLike, labels: ArrayLike) -> float:
    scores, labels = _validate(scores, labels)
    positives = int(labels.sum())
    if positives == 0 or positives == len(labels):
        raise DegenerateInputError("AUC needs a positive and a negative")
    return float(roc_auc_score(labels, scores))


def mrr(scores: ArrayLike, labels: ArrayLike) -> float:
    """Mean over positives of 1 / rank"""
    scores, labels = _validate(scores, labels)
    if not labels.any():
        raise DegenerateInputError("MRR needs at least one positive")
    ranked = _ranked(scores, labels)
    ranks = np.flatnonzero(ranked) + 1
    return float(np.mean(1.0 / ranks))


def ndcg_at_k(scores: ArrayLike, labels: ArrayLike, k: int) -> float:
    if k < 1:
        raise ConfigurationError("k must be positive, got {}".format(k))
    scores, labels = _validate(scores, labels)
    if not labels.any():
        raise DegenerateInputError("nDCG needs at least one positive")
    gains = _ranked(scores, labels)[:k]
    discounts = 1.0 / np.log2(np.arange(2, len(gains) + 2))
    ideal = np.sort(labels)[::-1][:k]
    return float(np.sum(gains * discounts) / np.sum(ideal * discounts))


def impression_metrics(scores: ArrayLike,
                       labels: ArrayLike) -> Dict[str, float]:
    """All metrics for one impression; undefined ones are NaN"""
    scores, labels = _validate(scores, labels)
    result = {name: float("nan") for name in METRICS}
    if labels.any():
        result["mrr"] = mrr(scores, labels)
        result["ndcg@5"] = ndcg_at_k(scores, labels, 5)
        result["ndcg@10"] = ndcg_at_k(scores, labels, 10)
        if not labels.all():
            result["auc"] = auc(scores, labels)
    return result


@dataclasses.dataclass
class EvaluationResult:
    per_impression: pd.DataFrame
    summary: Dict[str, float]
    excluded: Dict[str, int]


def _encode_catalog(model: "Recommender", news_ids: Sequence[str],
                    catalog: Mapping[str, NewsFeatures],
                    batch_size: int) -> Tuple[np.ndarray, Dict[str, int]]:
    rows = {news_id: i for i, news_id in enumerate(news_ids)}
    blocks = []
    for start in range(0, len(news_ids), batch_size):
        chunk = [catalog[n] for n in news_ids[start:start + batch_size]]
        blocks.append(model.encode_news(NewsBatch.from_features(chunk)).data)
    matrix = np.concatenate(blocks) if blocks else \
        np.zeros((0, model.dim))
    return matrix, rows


def score_impression(model: "Recommender", impression: Impression,
                     catalog: Mapping[str, NewsFeatures],
                     user_index: int = 0, max_history: int = 50,
                     embeddings: Optional[Tuple[np.ndarray,
                                                Dict[str, int]]] = None
                     ) -> np.ndarray:
    """Scores of every candidate of one impression, in candidate order"""
    history = truncate_history(impression.history_news_ids, max_history)
    candidates = [news_id for news_id, _ in impression.candidates]
    if embeddings is None:
        ids = history + candidates
        encoded = model.encode_news([catalog[n] for n in ids],
                                    [user_index] * len(ids)).data
        matrix, rows = encoded, {}  # type: Tuple[np.ndarray, Dict[str, int]]
        history_rows = np.arange(len(history))
        candidate_rows = np.arange(len(history), len(ids))
    else:
        matrix, rows = embeddings
        history_rows = np.array([rows[n] for n in history], dtype=np.int64)
        candidate_rows = np.array([rows[n] for n in candidates],
                                  dtype=np.int64)
    scores = model.score_candidates(Tensor(matrix[history_rows]),
                                    Tensor(matrix[candidate_rows]),
                                    user_index)
    return scores.data


def evaluate_run(model: "Recommender", impressions: Sequence[Impression],
                 catalog: Mapping[str, NewsFeatures],
                 users: Optional[Mapping[str, int]] = None,
                 max_history: int = 50,
                 batch_size: int = 1024) -> EvaluationResult:
    """
    Per-impression metrics and their unweighted means.

    Impressions with no candidates are skipped; impressions without a
    positive or without a negative have no AUC.  Both are counted in
    ``excluded``.
    """
    users = users or {}
    excluded = collections.Counter()  # type: collections.Counter
    rows = []  # type: List[Dict[str, Any]]
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            embeddings = None
            if not model.needs_user:
                needed = sorted({n for imp in impressions
                                 for n in truncate_history(
                                     imp.history_news_ids, max_history)}
                                | {n for imp in impressions
                                   for n, _ in imp.candidates})
                embeddings = _encode_catalog(model, needed, catalog,
                                             batch_size)
            for imp in impressions:
                if not imp.candidates:
                    excluded["no_candidates"] += 1
                    continue
                labels = [int(clicked) for _, clicked in imp.candidates]
                scores = score_impression(
                    model, imp, catalog, users.get(imp.user_id, 0),
                    max_history, embeddings)
                values = impression_metrics(scores, labels)
                if not any(labels):
                    excluded["no_positive"] += 1
                elif all(labels):
                    excluded["no_negative"] += 1
                rows.append(dict(impression_id=imp.impression_id, **values))
    finally:
        model.train(was_training)
    frame = pd.DataFrame(rows, columns=("impression_id",) + METRICS)
    summary = {name: float(frame[name].mean()) for name in METRICS}
    if excluded:
        logger.info("Excluded from metrics: {}".format(
            ", ".join("{}={}".format(k, v) for k, v in sorted(
                excluded.items()))))
    return EvaluationResult(frame, summary, dict(excluded))


# parameter accounting ========================================================


@dataclasses.dataclass
class ParameterBreakdown:
    """Trainable parameter counts by component; frozen tables apart"""
    news_encoder: int = 0
    user_encoder: int = 0
    other: int = 0
    frozen: int = 0

    @property
    def total(self) -> int:
        return self.news_encoder + self.user_encoder + self.other


def count_parameters(model: Any) -> ParameterBreakdown:
    breakdown = ParameterBreakdown()
    for name, param in model.named_parameters():
        prefix = name.split(".", 1)[0]
        component = COMPONENTS.get(prefix)
        if component is None:
            raise AccountingError(
                "Parameter {!r} belongs to no known component".format(name))
        if not param.trainable:
            breakdown.frozen += param.size
            continue
        setattr(breakdown, component,
                getattr(breakdown, component) + param.size)
    return breakdown


def size_reduction(early: ParameterBreakdown,
                   late: ParameterBreakdown) -> float:
    """Relative drop in trainable parameters when early fusion becomes late"""
    if early.total == 0:
        raise DegenerateInputError("Early-fusion model has no parameters")
    return 1.0 - late.total / early.total


# multi-seed reports ==========================================================


@dataclasses.dataclass
class MetricReport:
    model: str
    fusion: str
    objective: str
    temperature: Optional[float]
    seeds: List[int]
    per_seed: pd.DataFrame

    @classmethod
    def from_summaries(cls, model: str, fusion: str, objective: str,
                       temperature: Optional[float], seeds: Sequence[int],
                       summaries: Sequence[Mapping[str, float]]
                       ) -> "MetricReport":
        if len(seeds) != len(summaries):
            raise ShapeError("One summary per seed is required")
        frame = pd.DataFrame([{name: s[name] for name in METRICS}
                              for s in summaries],
                             index=pd.Index(list(seeds), name="seed"))
        return cls(model, fusion, objective, temperature, list(seeds), frame)

    @property
    def mean(self) -> Dict[str, float]:
        return {name: float(self.per_seed[name].mean()) for name in METRICS}

    @property
    def std(self) -> Optional[Dict[str, float]]:
        """Sample standard deviation; absent for a single seed"""
        if len(self.seeds) < 2:
            return None
        return {name: float(self.per_seed[name].std(ddof=1))
                for name in METRICS}

    def to_frame(self) -> pd.DataFrame:
        row = {
            "model": self.model,
            "fusion": self.fusion,
            "objective": self.objective,
            "temperature": self.temperature,
            "seeds": ",".join(str(s) for s in self.seeds),
        }  # type: Dict[str, Any]
        std = self.std
        for name in METRICS:
            row[name + "_mean"] = self.mean[name]
            row[name + "_std"] = None if std is None else std[name]
        return pd.DataFrame([row])

    def summary(self) -> str:
        head = "{} {} {}".format(self.model, self.fusion, self.objective)
        if self.temperature is not None:
            head += " tau={:.2f}".format(self.temperature)
        lines = [head + " ({} seeds)".format(len(self.seeds))]
        std = self.std
        for name in METRICS:
            if std is None:
                lines.append("  {:<8} {:.4f}".format(name, self.mean[name]))
            else:
                lines.append("  {:<8} {:.4f} +- {:.4f}".format(
                    name, self.mean[name], std[name]))
        return "\n".join(lines)

    def write(self, path: str) -> None:
        self.to_frame().to_csv(path, sep="\t", index=False)


def combine_reports(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """
    One row per model and fusion mode, one "mean+-std" column per metric
    and objective.
    """
    if not frames:
        raise DegenerateInputError("No reports to combine")
    table = pd.concat(frames, ignore_index=True)
    cells = {}  # type: Dict[Tuple[str, str], Dict[str, str]]
    for _, row in table.iterrows():
        key = (row["model"], row["fusion"])
        cell = cells.setdefault(key, {})
        for name in METRICS:
            std = row[name + "_std"]
            text = "{:.4f}".format(row[name + "_mean"])
            if std is not None and not pd.isna(std):
                text += "+-{:.4f}".format(std)
            cell["{} {}".format(name, row["objective"])] = text
    combined = pd.DataFrame.from_dict(cells, orient="index").sort_index()
    combined.index.names = ["model", "fusion"]
    return combined


def average_deltas(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """
    Mean metric change from early to late fusion (same model and
    objective) and from CE to SCL (same model and fusion).
    """
    table = pd.concat(frames, ignore_index=True)
    means = [name + "_mean" for name in METRICS]
    deltas = {}
    for label, axis, before, after in (("early->late", "fusion", "early",
                                        "late"),
                                       ("ce->scl", "objective", "ce", "scl")):
        keys = [c for c in ("model", "fusion", "objective") if c != axis]
        grouped = table.groupby(keys + [axis])[means].mean()
        wide = grouped.unstack(axis)
        if before not in wide.columns.get_level_values(1) or \
                after not in wide.columns.get_level_values(1):
            continue
        diff = wide.xs(after, axis=1, level=1) - wide.xs(before, axis=1,
                                                          level=1)
        deltas[label] = diff.mean()
    frame = pd.DataFrame(deltas).T
    frame.columns = [c[:-len("_mean")] for c in frame.columns]
    return frame
