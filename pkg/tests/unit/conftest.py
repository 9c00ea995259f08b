import collections

import numpy as np
import pytest

from newsfuse.config import ExperimentConfig, ModelConfig, Variant
from newsfuse.news import NewsFeatures
from newsfuse.tensor import Parameter

NEWS_ROWS = [
    # id, category, subcategory, title, title entities
    ("N1", "sports", "football", "Rams beat Seahawks in overtime",
     '[{"Label": "Seahawks", "WikidataId": "Q221878", '
     '"SurfaceForms": ["Seahawks"]}]'),
    ("N2", "news", "politics", "Senate passes the budget bill", "[]"),
    ("N3", "sports", "tennis", "Open final goes to five sets", "[]"),
    ("N4", "finance", "markets", "Stocks rally as rates hold", "[]"),
    ("N5", "news", "weather", "Storm heads for the coast tonight", "[]"),
    ("N6", "lifestyle", "food", "Five quick dinners for busy weeks", "[]"),
    ("N7", "sports", "football", "Coach signs a new contract", "[]"),
    ("N8", "finance", "markets", "Oil prices slide again", "not json"),
]

BEHAVIOR_ROWS = [
    ("1", "U1", "11/11/2019 9:05:58 AM", "N1 N2", "N3-1 N4-0 N5-0"),
    ("2", "U2", "11/11/2019 10:15:00 AM", "N4", "N6-0 N7-1 N8-0 N2-0"),
    ("3", "U1", "11/12/2019 8:00:00 PM", "N1 N2 N3", "N6-1 N8-0"),
    ("4", "U3", "11/12/2019 1:00:00 PM", "", "N5-0 N1-1 N99-0"),
    ("5", "U2", "11/13/2019 7:30:00 AM", "N4 N7 N42", "N3-0 N5-1 N6-0"),
    ("6", "U4", "11/13/2019 9:00:00 AM", "N2", "N1-1 N4-0"),
]


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture(params=range(20), ids="instance{}".format)
def trial_rng(request):
    """ One generator per random instance; gradient checks run on all 20 """
    return np.random.default_rng(1000 + request.param)


def numeric_gradient(func, param, eps=1e-5):
    """ Central differences of a scalar ``func()`` wrt ``param.data`` """
    grad = np.zeros_like(param.data)
    it = np.nditer(param.data, flags=["multi_index"])
    for _ in it:
        index = it.multi_index
        original = param.data[index]
        param.data[index] = original + eps
        plus = func().item()
        param.data[index] = original - eps
        minus = func().item()
        param.data[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad


def max_relative_error(analytic, numeric):
    """ Entries below 1e-5 on both sides are compared absolutely """
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-5)
    return float(np.max(np.abs(analytic - numeric) / scale))


@pytest.fixture
def gradcheck():
    """
    Compare backprop against central differences for every given tensor.

    ``func`` must rebuild its graph from the tensors on every call.
    """
    def _gradcheck(func, *tensors, eps=1e-5, tol=1e-4):
        for tensor in tensors:
            tensor.requires_grad = True
            tensor.grad = None
        func().backward()
        for tensor in tensors:
            analytic = np.zeros_like(tensor.data) if tensor.grad is None \
                else tensor.grad.copy()
            numeric = numeric_gradient(func, tensor, eps)
            # Frozen rows are zeroed on purpose
            if isinstance(tensor, Parameter) and tensor.frozen_rows:
                numeric[list(tensor.frozen_rows)] = 0
            error = max_relative_error(analytic, numeric)
            assert error < tol, "relative error {} for {}".format(
                error, getattr(tensor, "name", tensor.shape))
    return _gradcheck


def tiny_model_config(variant, **changes):
    """ A double-precision-friendly architecture small enough to gradcheck """
    variant = Variant(variant)
    values = dict(
        variant=variant, num_words=30, num_categories=5,
        num_subcategories=9, num_entities=4, num_users=6,
        d_model=6, word_dim=6, entity_dim=4, category_dim=3,
        title_length=8, window=3, heads=2, head_dim=3, query_dim=5,
        dropout=0.0, user_dim=4, long_term_mask=0.0, mins_channels=2,
        dkn_windows=(1, 2, 3), dkn_filters=2, dkn_hidden=4, caum_heads=2,
        caum_head_dim=3)
    if variant.family == "lstur":
        values["d_model"] = 10
    values.update(changes)
    return ModelConfig(**values)


@pytest.fixture
def model_config():
    return tiny_model_config


@pytest.fixture
def features():
    """ Four articles over the tiny vocabulary; B has one entity """
    return [
        NewsFeatures("A", (2, 3, 4), 1, 1, (0, 0, 0)),
        NewsFeatures("B", (5, 6), 2, 3, (1, 0)),
        NewsFeatures("C", (7, 8, 9, 10, 11), 3, 5, (0, 2, 0, 0, 0)),
        NewsFeatures("D", (12,), 4, 8, (3,)),
    ]


def write_mind(directory, news=NEWS_ROWS, behaviors=BEHAVIOR_ROWS):
    directory.mkdir(parents=True, exist_ok=True)
    with open(str(directory / "news.tsv"), "w", encoding="utf-8") as f:
        for news_id, cat, sub, title, entities in news:
            f.write("\t".join([news_id, cat, sub, title, "", "", entities,
                               "[]"]) + "\n")
    with open(str(directory / "behaviors.tsv"), "w", encoding="utf-8") as f:
        for row in behaviors:
            f.write("\t".join(row) + "\n")
    return str(directory)


@pytest.fixture
def mind_dir(tmp_path):
    """ data/{train,dev} with the hand-built rows """
    root = tmp_path / "mind"
    write_mind(root / "train")
    write_mind(root / "dev", behaviors=[
        ("7", "U1", "11/15/2019 9:00:00 AM", "N1 N3", "N2-0 N7-1 N4-0"),
        ("8", "U9", "11/15/2019 9:30:00 AM", "N6", "N5-1 N8-0"),
    ])
    return str(root)


@pytest.fixture
def experiment(mind_dir, tmp_path):
    def _experiment(variant="nrms", **changes):
        model_changes = changes.pop("model_changes", {})
        model = tiny_model_config(variant, **model_changes)
        values = dict(model=model, epochs=2, batch_size=2, negatives=2,
                      seeds=(3,), data_dir=mind_dir, precision="float64",
                      learning_rate=1e-2, out_dir=str(tmp_path / "runs"))
        values.update(changes)
        return ExperimentConfig(**values)
    return _experiment


@pytest.fixture
def watch():
    return Watcher()


class Watcher():
    """Records every call with its kwargs, per event"""
    def __init__(self):
        self.calls = collections.defaultdict(list)

    def handler(self, event):
        def _record(**kwargs):
            self.calls[event].append(kwargs)
        return _record

    def count(self, event):
        return len(self.calls[event])
