import datetime
import itertools
import math
import os

import numpy as np
import pandas as pd
import pytest

from newsfuse.config import Variant
from newsfuse.exceptions import (AccountingError, ConfigurationError,
                                 DegenerateInputError, ShapeError)
from newsfuse.metrics import (METRICS, MetricReport, ParameterBreakdown, auc,
                              average_deltas, combine_reports,
                              count_parameters, evaluate_run,
                              impression_metrics, mrr, ndcg_at_k,
                              size_reduction)
from newsfuse.mind import load_dataset
from newsfuse.model import build_model
from newsfuse.tensor import Module, Parameter
from newsfuse.unpack import Impression

WHEN = datetime.datetime(2019, 11, 15, 9, 0, 0)


def pairwise_auc(scores, labels):
    positives = [s for s, y in zip(scores, labels) if y]
    negatives = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0
               for p, n in itertools.product(positives, negatives))
    return wins / (len(positives) * len(negatives))


def brute_ndcg(scores, labels, k):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    dcg = sum(labels[i] / math.log2(rank + 2)
              for rank, i in enumerate(order[:k]))
    ideal = sorted(labels, reverse=True)
    idcg = sum(y / math.log2(rank + 2) for rank, y in enumerate(ideal[:k]))
    return dcg / idcg


# per-impression metrics =============================================


def test_closed_forms():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.1, 0.9], [1, 0]) == 0.0
    assert auc([0.5, 0.5, 0.5], [1, 0, 0]) == 0.5
    assert mrr([0.1, 0.9, 0.5], [1, 0, 0]) == pytest.approx(1 / 3)
    assert mrr([0.9, 0.1, 0.5], [1, 0, 1]) == pytest.approx((1 + 1 / 2) / 2)
    assert ndcg_at_k([3, 2, 1], [0, 1, 0], 5) == \
        pytest.approx(1 / math.log2(3))
    assert ndcg_at_k([3, 2, 1], [1, 0, 0], 10) == 1.0


def test_ties_keep_input_order():
    """ rank metrics sort stably; AUC gives half credit """
    assert mrr([0.0, 0.0], [0, 1]) == 0.5
    assert mrr([0.0, 0.0], [1, 0]) == 1.0
    assert ndcg_at_k([1.0, 1.0, 1.0], [0, 0, 1], 1) == 0.0


def test_ndcg_cutoff():
    scores = list(range(12, 0, -1))
    labels = [0] * 11 + [1]
    assert ndcg_at_k(scores, labels, 10) == 0.0
    assert ndcg_at_k(scores, labels, 12) == \
        pytest.approx(1 / math.log2(13))


def test_metrics_match_oracles(rng):
    for _ in range(1000):
        size = int(rng.integers(2, 30))
        # Rounding forces ties
        scores = np.round(rng.standard_normal(size), 1).tolist()
        labels = rng.integers(0, 2, size).tolist()
        if not 0 < sum(labels) < size:
            labels[0], labels[1] = 1, 0
        assert auc(scores, labels) == \
            pytest.approx(pairwise_auc(scores, labels), abs=1e-12)
        distinct = (np.arange(size) + rng.random(size)).tolist()
        for k in (5, 10):
            assert ndcg_at_k(distinct, labels, k) == \
                pytest.approx(brute_ndcg(distinct, labels, k))


def test_metric_ranges(rng):
    for _ in range(100):
        scores = rng.standard_normal(8)
        labels = np.array([1, 0, 0, 1, 0, 0, 0, 0])
        values = impression_metrics(scores, labels)
        assert all(0.0 <= values[name] <= 1.0 for name in METRICS)


def test_undefined_metrics_are_nan():
    values = impression_metrics([0.3, 0.2], [1, 1])
    assert math.isnan(values["auc"])
    assert values["mrr"] == pytest.approx(0.75)
    values = impression_metrics([0.3, 0.2], [0, 0])
    assert all(math.isnan(values[name]) for name in METRICS)


def test_metric_errors():
    with pytest.raises(DegenerateInputError):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(DegenerateInputError):
        mrr([0.1, 0.2], [0, 0])
    with pytest.raises(DegenerateInputError):
        ndcg_at_k([0.1, 0.2], [0, 0], 5)
    with pytest.raises(ConfigurationError):
        ndcg_at_k([0.1, 0.2], [1, 0], 0)
    with pytest.raises(ShapeError):
        auc([0.1, 0.2, 0.3], [1, 0])
    with pytest.raises(ValueError):
        mrr([0.1, 0.2], [2, 0])


# evaluation =========================================================


@pytest.fixture
def dataset(mind_dir):
    return load_dataset(os.path.join(mind_dir, "train"),
                        os.path.join(mind_dir, "dev"), title_length=8,
                        dtype=np.float64)


def tiny_model(dataset, model_config, variant="nrms", fusion="early"):
    config = dataset.model_config(model_config(variant))
    return build_model(config, fusion, seed=1, dtype=np.float64)


@pytest.mark.parametrize("fusion", ["early", "late"])
def test_evaluate_run(dataset, model_config, fusion):
    model = tiny_model(dataset, model_config, fusion=fusion)
    result = evaluate_run(model, dataset.split.test,
                          dataset.split.news_catalog, dataset.users)
    frame = result.per_impression
    assert frame["impression_id"].tolist() == ["7", "8"]
    assert list(frame.columns) == ["impression_id"] + list(METRICS)
    for name in METRICS:
        assert 0.0 <= result.summary[name] <= 1.0
        assert result.summary[name] == pytest.approx(frame[name].mean())
    assert result.excluded == {}
    # Restored to training mode
    assert model.training


def test_evaluate_run_exclusions(dataset, model_config):
    model = tiny_model(dataset, model_config)
    impressions = [
        Impression("a", "U1", WHEN, ["N1"], []),
        Impression("b", "U1", WHEN, ["N1"], [("N2", True), ("N3", True)]),
        Impression("c", "U1", WHEN, ["N1"], [("N2", False), ("N3", False)]),
        Impression("d", "U1", WHEN, ["N1", "N4"],
                   [("N2", True), ("N3", False)]),
    ]
    result = evaluate_run(model, impressions, dataset.split.news_catalog,
                          dataset.users)
    assert result.excluded == {"no_candidates": 1, "no_positive": 1,
                               "no_negative": 1}
    frame = result.per_impression.set_index("impression_id")
    assert list(frame.index) == ["b", "c", "d"]
    assert math.isnan(frame.loc["b", "auc"])
    assert not math.isnan(frame.loc["d", "auc"])
    # The AUC mean skips impressions where it is undefined
    assert result.summary["auc"] == frame.loc["d", "auc"]


def test_cold_user_scores_ties(dataset, model_config):
    """ an empty history scores every candidate 0 """
    model = tiny_model(dataset, model_config, fusion="late")
    cold = [Impression("e", "U9", WHEN, [], [("N2", True), ("N3", False)])]
    result = evaluate_run(model, cold, dataset.split.news_catalog)
    assert result.summary["auc"] == 0.5
    assert result.summary["mrr"] == 1.0


def test_evaluate_user_dependent_news(dataset, model_config):
    model = tiny_model(dataset, model_config, variant="npa")
    model.eval()
    result = evaluate_run(model, dataset.split.validation,
                          dataset.split.news_catalog, dataset.users,
                          batch_size=3)
    assert len(result.per_impression) == 2
    assert not model.training


def test_evaluation_is_deterministic(dataset, model_config):
    model = tiny_model(dataset, model_config, variant="lstur_ini",
                       fusion="early")
    first = evaluate_run(model, dataset.split.test,
                         dataset.split.news_catalog, dataset.users)
    second = evaluate_run(model, dataset.split.test,
                          dataset.split.news_catalog, dataset.users,
                          batch_size=1)
    pd.testing.assert_frame_equal(first.per_impression,
                                  second.per_impression)


# parameter accounting ===============================================


@pytest.mark.parametrize("variant", list(Variant))
def test_late_fusion_has_no_user_encoder(variant, model_config):
    config = model_config(variant)
    early = count_parameters(build_model(config, "early", dtype=np.float64))
    late = count_parameters(build_model(config, "late", dtype=np.float64))
    assert late.user_encoder == 0
    assert early.user_encoder > 0
    assert late.news_encoder == early.news_encoder
    assert late.total < early.total
    assert early.total - late.total == early.user_encoder
    assert size_reduction(early, late) == \
        pytest.approx(early.user_encoder / early.total)

def leaf_parameter_size(module):
    """ Size of every distinct Parameter reachable from ``module`` """
    found = {}

    def walk(value):
        if isinstance(value, Parameter):
            found[id(value)] = value.size
        elif isinstance(value, Module):
            for attr, child in vars(value).items():
                if not attr.startswith("_"):
                    walk(child)
        elif isinstance(value, (list, tuple)):
            for child in value:
                walk(child)
        elif isinstance(value, dict):
            for child in value.values():
                walk(child)
    walk(module)
    return sum(found.values())


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("fusion", ["early", "late"])
def test_accounting_covers_every_parameter(variant, fusion, model_config):
    model = build_model(model_config(variant), fusion, dtype=np.float64)
    counts = count_parameters(model)
    assert counts.total + counts.frozen == leaf_parameter_size(model)



def test_frozen_tables_are_apart(model_config):
    config = model_config("dkn")
    counts = count_parameters(build_model(config, "early", dtype=np.float64))
    # The frozen entity table; word embeddings train
    assert counts.frozen == config.num_entities * config.entity_dim


def test_npa_user_table_is_shared(model_config):
    config = model_config("npa")
    late = count_parameters(build_model(config, "late", dtype=np.float64))
    assert late.other == config.num_users * config.user_dim


@pytest.mark.parametrize("variant, width", [("lstur_ini", 10),
                                            ("lstur_con", 5)])
def test_lstur_counts_long_term_table(variant, width, model_config):
    config = model_config(variant)
    model = build_model(config, "early", dtype=np.float64)
    counts = count_parameters(model)
    table = config.num_users * width
    gru = sum(p.size for name, p in model.named_parameters()
              if name.startswith("user_encoder.") and "long_term" not in name)
    assert counts.user_encoder == table + gru


def test_unknown_component():
    class Mystery:
        def named_parameters(self):
            yield "mystery.weight", Parameter(np.ones(3))
    with pytest.raises(AccountingError):
        count_parameters(Mystery())


def test_size_reduction_degenerate():
    with pytest.raises(DegenerateInputError):
        size_reduction(ParameterBreakdown(), ParameterBreakdown())
    assert size_reduction(ParameterBreakdown(news_encoder=3, user_encoder=1),
                          ParameterBreakdown(news_encoder=3)) == 0.25


# reports ============================================================


def summary(value):
    return {name: value for name in METRICS}


def report(model="nrms", fusion="early", objective="ce", values=(0.6, 0.7),
           seeds=(1, 2)):
    return MetricReport.from_summaries(
        model, fusion, objective, 0.1 if objective == "scl" else None,
        list(seeds), [summary(v) for v in values])


def test_report_mean_and_std():
    r = report(values=(0.6, 0.7))
    assert r.mean["auc"] == pytest.approx(0.65)
    assert r.std["auc"] == pytest.approx(np.std([0.6, 0.7], ddof=1))
    assert "0.6500 +- 0.0707" in r.summary()


def test_single_seed_has_no_std():
    r = report(values=(0.6,), seeds=(3,))
    assert r.std is None
    frame = r.to_frame()
    assert frame.loc[0, "auc_mean"] == 0.6
    assert frame.loc[0, "auc_std"] is None
    assert "+-" not in r.summary()


def test_report_needs_one_summary_per_seed():
    with pytest.raises(ShapeError):
        report(values=(0.6,), seeds=(1, 2))


def test_report_write(tmp_path):
    path = str(tmp_path / "nrms-report.tsv")
    report(objective="scl").write(path)
    frame = pd.read_csv(path, sep="\t")
    assert frame.loc[0, "model"] == "nrms"
    assert frame.loc[0, "temperature"] == 0.1
    assert frame.loc[0, "seeds"] == "1,2"
    assert frame.loc[0, "ndcg@10_mean"] == pytest.approx(0.65)


def test_combine_reports():
    frames = [report().to_frame(),
              report(fusion="late", values=(0.5, 0.5)).to_frame(),
              report(objective="scl", seeds=(1,), values=(0.8,)).to_frame()]
    table = combine_reports(frames)
    assert list(table.index) == [("nrms", "early"), ("nrms", "late")]
    assert table.loc[("nrms", "early"), "auc ce"] == "0.6500+-0.0707"
    assert table.loc[("nrms", "late"), "auc ce"] == "0.5000+-0.0000"
    assert table.loc[("nrms", "early"), "auc scl"] == "0.8000"
    with pytest.raises(DegenerateInputError):
        combine_reports([])


def test_average_deltas():
    frames = [report(fusion=f, objective=o, values=(v, v)).to_frame()
              for f, o, v in (("early", "ce", 0.60), ("late", "ce", 0.62),
                              ("early", "scl", 0.64), ("late", "scl", 0.66))]
    deltas = average_deltas(frames)
    assert list(deltas.columns) == list(METRICS)
    assert deltas.loc["early->late", "auc"] == pytest.approx(0.02)
    assert deltas.loc["ce->scl", "mrr"] == pytest.approx(0.04)


def test_average_deltas_skips_missing_axis():
    deltas = average_deltas([report().to_frame(),
                             report(fusion="late").to_frame()])
    assert list(deltas.index) == ["early->late"]
