"""
Adam optimization, the epoch loop and the cross-validation protocol.

All randomness of a run comes from one integer seed. Each (repeat, fold,
purpose) triple gets its own stream via
``SeedSequence(seed, spawn_key=(repeat, fold, purpose))`` where purpose is
SPLIT (0), INIT (1) or SHUFFLE (2); the split of a repeat uses fold 0.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from more_itertools import chunked

from . import network
from .exceptions import ConfigurationError, ContractError, DimensionError, DivergenceError, DomainError
from .kernels import INFER, TRAIN

logger = logging.getLogger(__name__)

SPLIT, INIT, SHUFFLE = 0, 1, 2

MAX_OVER_REPEATS = "max_over_repeats"
MEAN = "mean"
RECORD_RULES = (MAX_OVER_REPEATS, MEAN)


def stream_seed(seed, repeat, fold, purpose):
    return np.random.SeedSequence(int(seed), spawn_key=(int(repeat), int(fold), int(purpose)))


def _default_threads():
    from django.conf import settings

    if not settings.configured:
        return 1
    return max(1, int(getattr(settings, "PSYNET_THREADS", 1)))


# optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, lr=1e-3, **kwargs):
        state = cls(lr=lr, **kwargs)
        for name, block in params.trainable().items():
            state.m[name] = np.zeros_like(block)
            state.v[name] = np.zeros_like(block)
        return state


def adam_step(params, grads, state):
    """Bias-corrected Adam update of every block in `grads`, in place."""
    if "fir" in grads:
        raise ContractError("the FIR bank is fixed and cannot receive gradients")
    blocks = params.trainable()
    for name, grad in grads.items():
        if name not in blocks:
            raise ContractError(f"no trainable block named {name!r}")
        if grad.shape != blocks[name].shape:
            raise DimensionError(f"gradient for {name} has shape {grad.shape}, block has {blocks[name].shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        block = blocks[name]
        m = state.m.setdefault(name, np.zeros_like(block))
        v = state.v.setdefault(name, np.zeros_like(block))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        block -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.version += 1
    return params, state


# training

def _batches(order, batch_size):
    """Mini-batches of `order`; a trailing single trial joins the previous batch."""
    batches = [np.asarray(batch) for batch in chunked(order, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2:] = [np.concatenate(batches[-2:])]
    return batches


def train(params, hp, train_set, seed, epochs=None, batch_size=None, state=None, log_every=50):
    """
    Train `params` in place on `train_set`.

    Returns (params, losses) where losses holds the trial-weighted mean loss
    of every epoch.
    """
    epochs = hp.epochs if epochs is None else epochs
    batch_size = hp.batch_size if batch_size is None else batch_size
    if train_set.n_trials < 2:
        raise ConfigurationError("training needs at least 2 trials for batch normalization")
    if train_set.n_classes > hp.n_classes:
        raise ConfigurationError(f"dataset has {train_set.n_classes} classes, network has {hp.n_classes}")
    state = state or AdamState.for_params(params, lr=hp.learning_rate)
    rng = np.random.default_rng(seed)

    losses = []
    for epoch in range(epochs):
        total = 0.0
        for index, batch in enumerate(_batches(rng.permutation(train_set.n_trials), batch_size)):
            labels = train_set.labels[batch]
            try:
                cache = network.forward(params, hp, train_set.trials[batch], TRAIN)
                value = network.loss(cache, labels)
            except DomainError:
                raise DivergenceError(epoch, index, math.nan) from None
            if not math.isfinite(value):
                raise DivergenceError(epoch, index, value)
            adam_step(params, network.backward(params, hp, cache, labels), state)
            total += value * len(batch)
        losses.append(total / train_set.n_trials)
        level = logging.INFO if log_every and (epoch + 1) % log_every == 0 else logging.DEBUG
        logger.log(level, "epoch %d/%d mean loss %.6f", epoch + 1, epochs, losses[-1])
    return params, np.asarray(losses)


def predict_all(params, hp, trials, batch_size=None):
    batch_size = batch_size or hp.batch_size
    decisions = [
        np.atleast_1d(network.predict(params, hp, trials[np.asarray(batch)], INFER))
        for batch in chunked(range(len(trials)), batch_size)
    ]
    return np.concatenate(decisions)


def evaluate(params, hp, test_set, batch_size=None):
    """Fraction of trials whose majority-vote prediction equals the label."""
    predictions = predict_all(params, hp, test_set.trials, batch_size)
    return float(np.mean(predictions == test_set.labels))


# evaluation protocols

@dataclass(frozen=True)
class CvProtocol:
    k: int = 4
    repeats: int = 10
    seed: int = 0
    stratified: bool = True
    record_rule: str = MAX_OVER_REPEATS

    def __post_init__(self):
        if self.k < 2 or self.repeats < 1:
            raise ConfigurationError(f"need k >= 2 and repeats >= 1, got k={self.k}, repeats={self.repeats}")
        if self.record_rule not in RECORD_RULES:
            raise ConfigurationError(f"record_rule must be one of {RECORD_RULES}")


def stratified_folds(labels, k, rng):
    """
    Deal class-wise shuffled indices round-robin into k folds.

    Every fold holds each class's share to within one trial.
    """
    labels = np.asarray(labels)
    dealt = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    return [np.sort(dealt[fold::k]) for fold in range(k)]


def shuffled_folds(labels, k, rng):
    return [np.sort(fold) for fold in np.array_split(rng.permutation(len(labels)), k)]


@dataclass
class FoldResult:
    repeat: int
    fold: int
    accuracy: float
    final_loss: float
    train_indices: np.ndarray
    test_indices: np.ndarray
    losses: np.ndarray

    @property
    def train_size(self):
        return len(self.train_indices)

    @property
    def test_size(self):
        return len(self.test_indices)

    def to_dict(self):
        return {
            "repeat": self.repeat,
            "fold": self.fold,
            "accuracy": self.accuracy,
            "final_loss": None if math.isnan(self.final_loss) else self.final_loss,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "test_indices": [int(i) for i in self.test_indices],
            "losses": [float(x) for x in self.losses],
        }


@dataclass
class RunReport:
    protocol: str
    n_trials: int
    folds: list
    record_rule: str = MAX_OVER_REPEATS
    wall_time_s: float = 0.0
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    best_params: object = None

    @property
    def repeats(self):
        return sorted({f.repeat for f in self.folds})

    @property
    def repeat_accuracies(self):
        return [float(np.mean([f.accuracy for f in self.folds if f.repeat == r])) for r in self.repeats]

    @property
    def max_accuracy(self):
        return max(self.repeat_accuracies)

    @property
    def mean_accuracy(self):
        return float(np.mean(self.repeat_accuracies))

    @property
    def recorded_accuracy(self):
        return self.max_accuracy if self.record_rule == MAX_OVER_REPEATS else self.mean_accuracy

    @property
    def best_fold(self):
        return max(self.folds, key=lambda f: (f.accuracy, -f.repeat, -f.fold))

    def check_partition(self):
        """Test folds of every repeat partition the trials; no fold trains on its test trials."""
        for fold in self.folds:
            if np.intersect1d(fold.train_indices, fold.test_indices).size:
                raise ContractError(f"repeat {fold.repeat} fold {fold.fold} trains on its own test trials")
        if self.protocol != "cv":
            return
        for repeat in self.repeats:
            tests = np.concatenate([f.test_indices for f in self.folds if f.repeat == repeat])
            if tests.size != self.n_trials or not np.array_equal(np.sort(tests), np.arange(self.n_trials)):
                raise ContractError(f"test folds of repeat {repeat} do not partition the {self.n_trials} trials")

    def loss_rows(self):
        """(repeat, fold, epoch, mean_loss) rows for the losses CSV."""
        for f in self.folds:
            for epoch, value in enumerate(f.losses, start=1):
                yield f.repeat, f.fold, epoch, float(value)

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "n_trials": self.n_trials,
            "record_rule": self.record_rule,
            "repeat_accuracies": self.repeat_accuracies,
            "max_accuracy": self.max_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "recorded_accuracy": self.recorded_accuracy,
            "best_fold": {"repeat": self.best_fold.repeat, "fold": self.best_fold.fold},
            "wall_time_s": self.wall_time_s,
            "warnings": list(self.warnings),
            "folds": [f.to_dict() for f in self.folds],
            "config": self.config,
        }


def _run_fold(hp, data, seed, repeat, fold, train_idx, test_idx, log_every):
    params = network.init_params(hp, stream_seed(seed, repeat, fold, INIT))
    params, losses = train(
        params, hp, data.subset(train_idx), stream_seed(seed, repeat, fold, SHUFFLE), log_every=log_every
    )
    accuracy = evaluate(params, hp, data.subset(test_idx))
    logger.info("repeat %d fold %d: accuracy %.4f, final loss %.6f", repeat, fold, accuracy,
                losses[-1] if len(losses) else math.nan)
    result = FoldResult(repeat, fold, accuracy, float(losses[-1]) if len(losses) else math.nan,
                        np.asarray(train_idx), np.asarray(test_idx), losses)
    return result, params


def cross_validate(hp, data, cv, reference_mode=False, threads=None, log_every=50):
    """
    Repeated k-fold cross-validation with a fresh model per fold.

    Returns a RunReport; its `best_params` holds the parameters of the most
    accurate fold.
    """
    if data.n_trials < cv.k:
        raise ConfigurationError(f"{data.n_trials} trials cannot fill {cv.k} folds")
    started = time.perf_counter()
    warnings = []
    jobs = []
    for repeat in range(cv.repeats):
        rng = np.random.default_rng(stream_seed(cv.seed, repeat, 0, SPLIT))
        splitter = stratified_folds if cv.stratified else shuffled_folds
        folds = splitter(data.labels, cv.k, rng)
        present = np.unique(data.labels)
        for fold, test_idx in enumerate(folds):
            if not cv.stratified and np.setdiff1d(present, data.labels[test_idx]).size:
                message = f"repeat {repeat} fold {fold} is missing at least one class"
                logger.warning(message)
                warnings.append(message)
            train_idx = np.setdiff1d(np.arange(data.n_trials), test_idx)
            jobs.append((repeat, fold, train_idx, test_idx))

    workers = 1 if reference_mode else (threads or _default_threads())

    def run(job):
        return _run_fold(hp, data, cv.seed, *job, log_every)

    if workers == 1:
        outcomes = [run(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, jobs))

    report = RunReport(
        protocol="cv",
        n_trials=data.n_trials,
        folds=[result for result, _ in outcomes],
        record_rule=cv.record_rule,
        wall_time_s=time.perf_counter() - started,
        warnings=warnings,
    )
    best = report.best_fold
    report.best_params = next(p for r, p in outcomes if r is best)
    report.check_partition()
    logger.info("cross-validation: max %.4f, mean %.4f over %d repeats",
                report.max_accuracy, report.mean_accuracy, cv.repeats)
    return report


def holdout_split(data, fraction, seed):
    """Stratified (train, test) split with about `fraction` of each class held out."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"holdout fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(stream_seed(seed, 0, 0, SPLIT))
    test = []
    for c in np.unique(data.labels):
        members = rng.permutation(np.flatnonzero(data.labels == c))
        test.extend(members[:max(1, int(round(fraction * members.size)))])
    test = np.sort(np.asarray(test))
    train = np.setdiff1d(np.arange(data.n_trials), test)
    return data.subset(train), data.subset(test)


def holdout(hp, train_set, test_set, seed, log_every=50):
    """Single train/test split; trial indices of test_set follow those of train_set."""
    started = time.perf_counter()
    if test_set.class_names != train_set.class_names or test_set.fs_hz != train_set.fs_hz:
        raise ConfigurationError("train and test sets disagree on classes or sampling rate")
    merged = np.concatenate([train_set.trials, test_set.trials])
    data = type(train_set)(merged, np.concatenate([train_set.labels, test_set.labels]), train_set.fs_hz,
                           train_set.class_names, train_set.channel_names, dict(train_set.metadata))
    train_idx = np.arange(train_set.n_trials)
    test_idx = np.arange(train_set.n_trials, data.n_trials)
    result, params = _run_fold(hp, data, seed, 0, 0, train_idx, test_idx, log_every)
    report = RunReport(protocol="holdout", n_trials=data.n_trials, folds=[result],
                       wall_time_s=time.perf_counter() - started, best_params=params)
    report.check_partition()
    return report
