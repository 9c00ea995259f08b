"""
Model and experiment configuration.

``ModelConfig`` fixes an architecture (variant plus every dimension), and
``ExperimentConfig`` fixes a training protocol around it.  Both load from a
YAML mapping; unknown keys are rejected so a typo never silently falls back
to a default.
"""
import dataclasses
import enum
import hashlib
import json
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import yaml

from newsfuse.exceptions import ConfigurationError
from newsfuse.fusion import FusionMode
from newsfuse.objectives import Objective, SCLConfig


class Variant(str, enum.Enum):
    NPA = "npa"
    NAML = "naml"
    NRMS = "nrms"
    LSTUR_INI = "lstur_ini"
    LSTUR_CON = "lstur_con"
    CENNEWSREC = "cennewsrec"
    MINS = "mins"
    DKN = "dkn"
    CAUM = "caum"

    @property
    def family(self) -> str:
        if self in (Variant.LSTUR_INI, Variant.LSTUR_CON):
            return "lstur"
        return self.value

    @property
    def candidate_aware(self) -> bool:
        return self in (Variant.DKN, Variant.CAUM)

    @property
    def default_dim(self) -> int:
        return _DEFAULT_DIMS[self]

    @property
    def default_batch_size(self) -> int:
        return {Variant.DKN: 256, Variant.CAUM: 64}.get(self, 512)


_DEFAULT_DIMS = {
    Variant.NPA: 400,
    Variant.NAML: 400,
    Variant.NRMS: 256,
    Variant.LSTUR_INI: 400,
    Variant.LSTUR_CON: 400,
    Variant.CENNEWSREC: 256,
    Variant.MINS: 256,
    Variant.DKN: 400,
    Variant.CAUM: 400,
}


@dataclasses.dataclass
class ModelConfig:
    variant: Variant = Variant.NRMS
    # Vocabulary sizes, including the reserved padding row 0
    num_words: int = 2
    num_categories: int = 1
    num_subcategories: int = 1
    num_entities: int = 1
    num_users: int = 1
    # None resolves to the variant default
    d_model: Optional[int] = None
    num_filters: Optional[int] = None
    word_dim: int = 300
    entity_dim: int = 100
    category_dim: int = 100
    title_length: int = 30
    window: int = 3
    activation: str = "relu"
    heads: int = 16
    head_dim: int = 16
    query_dim: int = 200
    dropout: float = 0.2
    user_dim: int = 50
    long_term_mask: float = 0.5
    cennewsrec_combine: str = "attention"
    mins_channels: int = 4
    dkn_windows: Tuple[int, ...] = (1, 2, 3, 4)
    dkn_filters: int = 100
    dkn_hidden: int = 16
    caum_heads: int = 20
    caum_head_dim: int = 20
    caum_window: int = 3
    entity_pooling: str = "attention"

    def __post_init__(self) -> None:
        self.variant = Variant(self.variant)
        self.dkn_windows = tuple(int(w) for w in self.dkn_windows)

    @property
    def model_dim(self) -> int:
        if self.variant is Variant.DKN:
            return len(self.dkn_windows) * self.dkn_filters
        if self.d_model is None:
            return self.variant.default_dim
        return self.d_model

    @property
    def cnn_filters(self) -> int:
        # LSTUR appends both raw category vectors, so the title filters take
        # what is left of d_model
        if self.variant.family == "lstur":
            return self.model_dim - 2 * self.category_dim
        if self.num_filters is None:
            return self.model_dim
        return self.num_filters

    def validate(self) -> None:
        v = self.variant
        dim = self.model_dim
        if v is Variant.DKN and self.d_model not in (None, dim):
            raise ConfigurationError(
                "DKN embeddings are {} windows x {} filters = {}, "
                "not {}".format(len(self.dkn_windows), self.dkn_filters,
                                dim, self.d_model))
        if v in (Variant.NRMS, Variant.CENNEWSREC, Variant.MINS) and \
                self.heads * self.head_dim != dim:
            raise ConfigurationError(
                "{} needs heads x head_dim == d_model, "
                "got {} x {} != {}".format(
                    v.value, self.heads, self.head_dim, dim))
        if v.family == "lstur" and self.cnn_filters < 1:
            raise ConfigurationError(
                "LSTUR d_model {} leaves no room for title "
                "filters".format(dim))
        if v is Variant.LSTUR_CON and dim % 2:
            raise ConfigurationError(
                "LSTUR-con splits d_model in halves; {} is odd".format(dim))
        if self.window % 2 == 0 or self.caum_window % 2 == 0:
            raise ConfigurationError("Convolution windows must be odd")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("Dropout rate must be in [0, 1)")
        if not 0.0 <= self.long_term_mask <= 1.0:
            raise ConfigurationError(
                "Long-term mask probability must be in [0, 1]")
        if self.entity_pooling not in ("attention", "mean"):
            raise ConfigurationError(
                "Unknown entity pooling {!r}".format(self.entity_pooling))
        if self.cennewsrec_combine not in ("attention", "mean"):
            raise ConfigurationError(
                "Unknown CenNewsRec combination {!r}".format(
                    self.cennewsrec_combine))
        if self.mins_channels < 1:
            raise ConfigurationError("MINS needs at least one channel")


def temperature_grid(low: float = 0.08, high: float = 0.30,
                     step: float = 0.02) -> Tuple[float, ...]:
    count = int(round((high - low) / step)) + 1
    return tuple(float(t) for t in np.round(low + step * np.arange(count), 2))


# Fields that do not change what a run computes
_UNHASHED = ("seeds", "data_dir", "train_dir", "test_dir", "word_embeddings",
             "entity_embeddings", "out_dir", "workers")


@dataclasses.dataclass
class ExperimentConfig:
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    fusion: FusionMode = FusionMode.EARLY
    objective: Objective = Objective.CE
    temperature: float = 0.1
    temperature_grid: Tuple[float, ...] = dataclasses.field(
        default_factory=temperature_grid)
    batch_size: Optional[int] = None
    epochs: int = 25
    learning_rate: float = 1e-4
    negatives: int = 4
    max_history: int = 50
    seeds: Tuple[int, ...] = (13, 17, 19, 23, 29)
    data_dir: str = "data/MINDsmall"
    train_dir: Optional[str] = None
    test_dir: Optional[str] = None
    word_embeddings: Optional[str] = None
    entity_embeddings: Optional[str] = None
    subsample: float = 1.0
    min_freq: int = 1
    clip_norm: float = 5.0
    precision: str = "float32"
    workers: int = 1
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if isinstance(self.model, Mapping):
            self.model = _build(ModelConfig, self.model, "model")
        elif not isinstance(self.model, ModelConfig):
            raise ConfigurationError("model config must be a mapping")
        self.fusion = FusionMode(self.fusion)
        self.objective = Objective(self.objective)
        self.temperature_grid = tuple(float(t) for t in self.temperature_grid)
        self.seeds = tuple(int(s) for s in self.seeds)

    @property
    def variant(self) -> Variant:
        return self.model.variant

    @property
    def resolved_batch_size(self) -> int:
        if self.batch_size is None:
            return self.variant.default_batch_size
        return self.batch_size

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.precision)

    @property
    def scl(self) -> SCLConfig:
        return SCLConfig(temperature=self.temperature)

    @property
    def run_name(self) -> str:
        name = "{}-{}-{}".format(self.variant.value, self.fusion.value,
                                 self.objective.value)
        if self.objective is Objective.SCL:
            name += "-tau{:.2f}".format(self.temperature)
        return name

    def validate(self) -> None:
        self.model.validate()
        if self.negatives < 1:
            raise ConfigurationError("Need at least one negative per sample")
        if self.max_history < 0:
            raise ConfigurationError("max_history must be non-negative")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigurationError("subsample must be in (0, 1]")
        if self.temperature <= 0:
            raise ConfigurationError("Temperature must be positive")
        if self.resolved_batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size and epochs must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(
                "Unknown precision {!r}".format(self.precision))
        if not self.seeds:
            raise ConfigurationError("At least one seed is required")

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def protocol_hash(self) -> str:
        """SHA-256 over every field that influences what a run computes"""
        data = self.to_dict()
        for key in _UNHASHED:
            data.pop(key, None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def replace(self, **changes: Any) -> "ExperimentConfig":
        model_changes = changes.pop("model_changes", None)
        config = dataclasses.replace(self, **changes)
        if model_changes:
            config.model = dataclasses.replace(config.model, **model_changes)
        return config

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        return _build(cls, data, "experiment")


def _plain(value: Any) -> Any:
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls: Any, data: Mapping[str, Any], where: str) -> Any:
    if not isinstance(data, Mapping):
        raise ConfigurationError("{} config must be a mapping".format(where))
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError("Unknown {} config keys: {}".format(
            where, ", ".join(sorted(unknown))))
    try:
        return cls(**data)
    except ValueError as error:
        raise ConfigurationError(str(error)) from error


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as stream:
        data = yaml.safe_load(stream) or {}
    return ExperimentConfig.from_dict(data)


def dump_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as stream:
        yaml.safe_dump(config.to_dict(), stream, sort_keys=True)
