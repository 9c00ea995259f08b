"""
Training, evaluation and temperature sweeps over MIND.

A run is a (config, seed) pair.  Its Trainer owns two generators spawned
from the seed: one initializes the model and then drives dropout and
long-term user masking, the other shuffles samples and draws negatives.
"""
import collections
import concurrent.futures
import dataclasses
import functools
import json
import logging
import os
from typing import (Any, Callable, Dict, Iterable, List, Mapping, Optional,
                    Sequence, Tuple)

import numpy as np
import pandas as pd

from newsfuse.config import ExperimentConfig
from newsfuse.exceptions import (ConfigurationError, DegenerateInputError,
                                 NumericError)
from newsfuse.metrics import MetricReport, evaluate_run
from newsfuse.mind import MindDataset, load_dataset, make_training_samples
from newsfuse.model import Recommender, build_model
from newsfuse.objectives import (Objective, TrainingSample, ce_ns_loss,
                                 scl_loss)
from newsfuse.tensor import Parameter, Tensor, stack, take

logger = logging.getLogger("newsfuse.runner")

CHECKPOINT_FORMAT = "newsfuse-checkpoint/1"

TRAIN_START = "TRAIN_START"
BATCH_END = "BATCH_END"
CLIP = "CLIP"
EPOCH_END = "EPOCH_END"
TRAIN_END = "TRAIN_END"


# optimization ================================================================


class Adam:
    def __init__(self, params: Iterable[Tuple[str, Parameter]],
                 lr: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8) -> None:
        self.params = [(name, p) for name, p in params if p.trainable]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.steps = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, param in self.params:
            if param.grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * param.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * param.grad ** 2
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            param.data -= (self.lr * update).astype(param.dtype)

    def state_dict(self) -> Dict[str, Any]:
        state = {"steps": np.array(self.steps)}
        for name in self.m:
            state["m/" + name] = self.m[name].copy()
            state["v/" + name] = self.v[name].copy()
        return state

    def load_state_dict(self, state: Mapping[str, Any]) -> None:
        self.steps = int(state["steps"])
        for name in self.m:
            self.m[name][...] = state["m/" + name]
            self.v[name][...] = state["v/" + name]


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients in place to a global norm of at most ``max_norm``"""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2))
                             for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for grad in grads:
            grad *= scale
    return norm


# checkpoints =================================================================


@dataclasses.dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    optimizer: Dict[str, Any]
    epoch: int
    rng_states: Dict[str, Any]
    config_hash: str
    config: Dict[str, Any]
    seed: int
    validation_auc: float = float("nan")

    def save(self, path: str) -> None:
        # Container layout
        # format                    version tag
        # meta                      JSON: epoch, seed, hashes, rng states
        # param/<name>              model parameters
        # optim/<key>               Adam moments and step count
        meta = {
            "epoch": self.epoch,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "rng_states": self.rng_states,
            "validation_auc": self.validation_auc,
        }
        arrays = {"format": np.array(CHECKPOINT_FORMAT),
                  "meta": np.array(json.dumps(meta))}
        arrays.update(("param/" + k, v) for k, v in self.params.items())
        arrays.update(("optim/" + k, np.asarray(v))
                      for k, v in self.optimizer.items())
        with open(path, "wb") as stream:
            np.savez(stream, **arrays)

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as archive:
            if "format" not in archive.files or \
                    str(archive["format"]) != CHECKPOINT_FORMAT:
                raise ConfigurationError(
                    "{} is not a {} file".format(path, CHECKPOINT_FORMAT))
            meta = json.loads(str(archive["meta"]))
            params = {k[len("param/"):]: archive[k] for k in archive.files
                      if k.startswith("param/")}
            optimizer = {k[len("optim/"):]: archive[k] for k in archive.files
                         if k.startswith("optim/")}
        return cls(params=params, optimizer=optimizer, epoch=meta["epoch"],
                   rng_states=meta["rng_states"],
                   config_hash=meta["config_hash"], config=meta["config"],
                   seed=meta["seed"],
                   validation_auc=float(meta["validation_auc"]))


# training ====================================================================


@dataclasses.dataclass
class TrainingResult:
    best: Checkpoint
    last: Checkpoint
    log: pd.DataFrame

    @property
    def validation_auc(self) -> float:
        return self.best.validation_auc


class Trainer:
    model = None  # type: Recommender
    optimizer = None  # type: Adam

    _event_handlers = None  # type: Dict[str, List[Callable]]

    def __init__(self, config: ExperimentConfig, dataset: MindDataset,
                 seed: int, dump_dir: Optional[str] = None) -> None:
        config.validate()
        self.config = config
        self.dataset = dataset
        self.seed = seed
        self.dump_dir = dump_dir
        model_seq, data_seq = np.random.SeedSequence(seed).spawn(2)
        self.data_rng = np.random.default_rng(data_seq)
        self.model = build_model(
            dataset.model_config(config.model), config.fusion,
            np.random.default_rng(model_seq), config.dtype,
            dataset.word_vectors, dataset.entity_vectors)
        self.optimizer = Adam(self.model.named_parameters(),
                              lr=config.learning_rate)
        self.scl = config.scl
        self.epoch = 0
        self._event_handlers = collections.defaultdict(list)

    def trigger(self, event: str, **kwargs: Any) -> None:
        """Invoke every handler for an event, in registration order"""
        for func in self._event_handlers[event.upper()]:
            func(**kwargs)

    def on(self, event: str, func: Optional[Callable] = None) -> Callable:
        """
        Register ``func`` for one of the training events.

        Events are TRAIN_START, BATCH_END, CLIP, EPOCH_END and TRAIN_END;
        names are matched case-insensitively.  Handlers run inside
        :meth:`fit`, so a slow handler slows training and a raising one
        stops it.  Accept ``**kwargs``; events may gain arguments.

        Used bare or as a decorator::

            trainer.on("clip", count_clips)

            @trainer.on("epoch_end")
            def keep(epoch, validation_auc, **kwargs):
                history.append((epoch, validation_auc))
        """
        if func is None:
            return functools.partial(self.on, event)
        self._event_handlers[event.upper()].append(func)
        return func

    # state -------------------------------------------------------------------

    def checkpoint(self, validation_auc: float = float("nan")) -> Checkpoint:
        return Checkpoint(
            params=self.model.state_dict(),
            optimizer=self.optimizer.state_dict(),
            epoch=self.epoch,
            rng_states={
                "model": self.model.rng.bit_generator.state,
                "data": self.data_rng.bit_generator.state,
            },
            config_hash=self.config.protocol_hash(),
            config=self.config.to_dict(),
            seed=self.seed,
            validation_auc=validation_auc)

    def restore(self, checkpoint: Checkpoint) -> None:
        if checkpoint.config_hash != self.config.protocol_hash():
            raise ConfigurationError(
                "Checkpoint was trained under a different protocol")
        self.model.load_state_dict(checkpoint.params)
        self.optimizer.load_state_dict(checkpoint.optimizer)
        self.model.rng.bit_generator.state = checkpoint.rng_states["model"]
        self.data_rng.bit_generator.state = checkpoint.rng_states["data"]
        self.epoch = checkpoint.epoch

    # steps -------------------------------------------------------------------

    def batch_loss(self, samples: Sequence[TrainingSample]) -> Tensor:
        """Mean loss of a batch; each distinct news is encoded once"""
        model = self.model
        catalog = self.dataset.split.news_catalog
        rows = {}  # type: Dict[Any, int]
        features = []
        user_indices = []

        def row(news_id: str, user_index: int) -> int:
            key = (news_id, user_index) if model.needs_user else news_id
            if key not in rows:
                rows[key] = len(features)
                features.append(catalog[news_id])
                user_indices.append(user_index)
            return rows[key]

        plan = []
        for sample in samples:
            history = [row(n, sample.user_index) for n in sample.history]
            candidates = [row(n, sample.user_index)
                          for n in sample.candidates]
            plan.append((history, candidates, sample.user_index))
        embeddings = model.encode_news(features, user_indices)
        scores = stack([
            model.score_candidates(take(embeddings, history),
                                   take(embeddings, candidates), user_index)
            for history, candidates, user_index in plan])
        if self.config.objective is Objective.SCL:
            labels = np.array([s.labels for s in samples])
            return scl_loss(scores, labels, self.scl.temperature)
        return ce_ns_loss(scores, [s.positive_index for s in samples])

    def train_batch(self, samples: Sequence[TrainingSample]) -> float:
        try:
            loss = self.batch_loss(samples)
            if not np.isfinite(loss.data):
                raise NumericError("Non-finite loss {}".format(loss.item()))
        except NumericError:
            self._dump(samples)
            raise
        self.model.zero_grad()
        if loss.requires_grad:
            loss.backward()
            norm = clip_grad_norm(self.model.parameters(),
                                  self.config.clip_norm)
            if norm > self.config.clip_norm:
                logger.info("Clipped gradient norm {:.4g} to {} in epoch {}"
                            .format(norm, self.config.clip_norm, self.epoch))
                self.trigger(CLIP, epoch=self.epoch, norm=norm)
            self.optimizer.step()
        return loss.item()

    def _dump(self, samples: Sequence[TrainingSample]) -> None:
        if self.dump_dir is None:
            logger.error("Non-finite loss in epoch {}; no dump dir".format(
                self.epoch))
            return
        os.makedirs(self.dump_dir, exist_ok=True)
        path = os.path.join(self.dump_dir, "nonfinite-epoch{}.json".format(
            self.epoch))
        with open(path, "w", encoding="utf-8") as stream:
            json.dump([dataclasses.asdict(s) for s in samples], stream,
                      indent=1)
        logger.error("Non-finite loss; offending batch written to {}".format(
            path))

    def train_epoch(self) -> float:
        self.model.train()
        samples = list(make_training_samples(
            self.dataset.split.train, self.dataset.users,
            self.config.negatives, self.data_rng, self.config.max_history))
        if not samples:
            raise DegenerateInputError("No training samples")
        order = self.data_rng.permutation(len(samples))
        size = self.config.resolved_batch_size
        losses = []
        for number, start in enumerate(range(0, len(samples), size)):
            batch = [samples[i] for i in order[start:start + size]]
            loss = self.train_batch(batch)
            losses.append(loss)
            self.trigger(BATCH_END, epoch=self.epoch, batch=number,
                         loss=loss)
        return float(np.mean(losses))

    def validate(self) -> float:
        validation = self.dataset.split.validation
        if not validation:
            return float("nan")
        result = evaluate_run(self.model, validation,
                              self.dataset.split.news_catalog,
                              self.dataset.users, self.config.max_history)
        return result.summary["auc"]

    def fit(self, resume: Optional[Checkpoint] = None) -> TrainingResult:
        """
        Train the full epoch budget; the best validation AUC epoch wins.

        A resumed run treats the resume point as the incumbent best.
        """
        if resume is not None:
            self.restore(resume)
            best = resume
        else:
            best = self.checkpoint()
        last = best
        rows = []
        self.trigger(TRAIN_START, config=self.config, seed=self.seed)
        while self.epoch < self.config.epochs:
            self.epoch += 1
            loss = self.train_epoch()
            validation_auc = self.validate()
            logger.info("{} seed {} epoch {}: loss {:.4f} validation AUC "
                        "{:.4f}".format(self.config.run_name, self.seed,
                                        self.epoch, loss, validation_auc))
            last = self.checkpoint(validation_auc)
            if np.isnan(best.validation_auc) or \
                    validation_auc > best.validation_auc:
                best = last
            rows.append({"epoch": self.epoch, "loss": loss,
                         "validation_auc": validation_auc})
            self.trigger(EPOCH_END, epoch=self.epoch, loss=loss,
                         validation_auc=validation_auc)
        log = pd.DataFrame(rows, columns=("epoch", "loss", "validation_auc"))
        self.trigger(TRAIN_END, best=best, log=log)
        return TrainingResult(best, last, log)


def run_name(config: ExperimentConfig, seed: int) -> str:
    return "{}-seed{}".format(config.run_name, seed)


def run_training(config: ExperimentConfig, dataset: MindDataset,
                 seed: Optional[int] = None,
                 resume: Optional[Checkpoint] = None,
                 out_dir: Optional[str] = None,
                 dump_dir: Optional[str] = None) -> TrainingResult:
    """Train one seed; with ``out_dir`` the checkpoints and log are saved"""
    seed = config.seeds[0] if seed is None else seed
    trainer = Trainer(config, dataset, seed, dump_dir=dump_dir or out_dir)
    result = trainer.fit(resume)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        stem = os.path.join(out_dir, run_name(config, seed))
        result.best.save(stem + "-best.npz")
        result.last.save(stem + "-last.npz")
        result.log.to_csv(stem + "-log.tsv", sep="\t", index=False)
    return result


def _train_job(config: ExperimentConfig, dataset: MindDataset,
               out_dir: Optional[str], seed: int) -> TrainingResult:
    return run_training(config, dataset, seed, out_dir=out_dir)


def _map(func: Callable, jobs: Sequence[Any], workers: int) -> List[Any]:
    """Run independent jobs, in processes when ``workers`` > 1"""
    if workers <= 1 or len(jobs) <= 1:
        return [func(job) for job in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, jobs))


def train_seeds(config: ExperimentConfig, dataset: MindDataset,
                out_dir: Optional[str] = None) -> List[TrainingResult]:
    job = functools.partial(_train_job, config, dataset, out_dir)
    return _map(job, list(config.seeds), config.workers)


# evaluation ==================================================================


def restore_model(checkpoint: Checkpoint, config: ExperimentConfig,
                  dataset: MindDataset) -> Recommender:
    if checkpoint.config_hash != config.protocol_hash():
        raise ConfigurationError(
            "Checkpoint hash {} does not match config hash {}".format(
                checkpoint.config_hash[:12], config.protocol_hash()[:12]))
    model = build_model(dataset.model_config(config.model), config.fusion,
                        checkpoint.seed, config.dtype, dataset.word_vectors,
                        dataset.entity_vectors)
    model.load_state_dict(checkpoint.params)
    return model


def run_evaluation(checkpoints: Sequence[Checkpoint],
                   config: ExperimentConfig,
                   dataset: MindDataset) -> MetricReport:
    """Test-split metrics of one checkpoint per seed, aggregated"""
    test = dataset.split.test
    if not test:
        raise DegenerateInputError("No test impressions to evaluate")
    summaries = []
    for checkpoint in checkpoints:
        model = restore_model(checkpoint, config, dataset)
        result = evaluate_run(model, test, dataset.split.news_catalog,
                              dataset.users, config.max_history)
        summaries.append(result.summary)
    temperature = config.temperature \
        if config.objective is Objective.SCL else None
    return MetricReport.from_summaries(
        config.variant.value, config.fusion.value, config.objective.value,
        temperature, [c.seed for c in checkpoints], summaries)


# temperature sweep ===========================================================


@dataclasses.dataclass
class SweepResult:
    best_temperature: float
    table: pd.DataFrame


def select_temperature(validation_auc: Mapping[float, float]) -> float:
    """Argmax of validation AUC; ties go to the smaller temperature"""
    scored = [(t, auc) for t, auc in validation_auc.items()
              if not np.isnan(auc)]
    if not scored:
        raise DegenerateInputError("No temperature has a validation AUC")
    return min(scored, key=lambda item: (-item[1], item[0]))[0]


def _sweep_job(config: ExperimentConfig, dataset: MindDataset, seed: int,
               temperature: float) -> float:
    result = run_training(config.replace(temperature=temperature), dataset,
                          seed)
    return result.validation_auc


def sweep_scl_temperature(config: ExperimentConfig, dataset: MindDataset,
                          seed: Optional[int] = None) -> SweepResult:
    if config.objective is not Objective.SCL:
        raise ConfigurationError("Temperature sweeps need the SCL objective")
    seed = config.seeds[0] if seed is None else seed
    grid = list(config.temperature_grid)
    job = functools.partial(_sweep_job, config, dataset, seed)
    scores = _map(job, grid, config.workers)
    table = pd.DataFrame({"temperature": grid, "validation_auc": scores})
    best = select_temperature(dict(zip(grid, scores)))
    logger.info("Best temperature {:.2f} of {} tried".format(best, len(grid)))
    return SweepResult(best, table)


# data ========================================================================


def prepare_dataset(config: ExperimentConfig) -> MindDataset:
    """
    Load MIND as laid out under ``data_dir``: ``train/`` is split in time
    for validation, ``dev/`` (when present) is the test split.
    """
    train_dir = config.train_dir or os.path.join(config.data_dir, "train")
    test_dir = config.test_dir
    if test_dir is None:
        candidate = os.path.join(config.data_dir, "dev")
        test_dir = candidate if os.path.isdir(candidate) else None
    return load_dataset(
        train_dir, test_dir,
        title_length=config.model.title_length,
        min_freq=config.min_freq,
        subsample=config.subsample,
        word_embeddings=config.word_embeddings,
        entity_embeddings=config.entity_embeddings,
        dtype=config.dtype)
