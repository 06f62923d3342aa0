"""Epoch loop with Adam, validation-loss model selection and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import autodiff as ad
from ..doc import ClassSchema
from .batching import Batch, Sample, pad_batch
from .losses import class_weights, focal_loss, weighted_bce
from .model import Model, ModelConfig, forward
from .optim import AdamHyper, AdamState, adam_step

log = logging.getLogger(__name__)

TARGETS = ("all", "lineitems", "others", "no-header")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    max_epochs: int = 100
    batch_size: int = 8
    loss: str = "bce"
    focal_gamma: float = 2.0
    augment: bool = True
    seed: int = 0
    targets: str = "all"

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in ("bce", "focal"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.targets not in TARGETS:
            raise ValueError(f"unknown targets {self.targets!r}; expected one of {TARGETS}")

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.eps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def class_mask(targets: str, schema: ClassSchema) -> np.ndarray:
    """Which output classes take part in the loss and the report."""
    mask = np.ones(len(schema))
    lineitems = [schema.body_class, schema.header_class]
    if targets == "lineitems":
        mask[:] = 0
        mask[lineitems] = 1
    elif targets == "others":
        mask[lineitems] = 0
    elif targets == "no-header":
        mask[schema.header_class] = 0
    elif targets != "all":
        raise ValueError(f"unknown targets {targets!r}")
    return mask


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    metrics: dict = field(default_factory=dict)


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EarlyStopping:
    """Tracks the best validation loss; ``update`` says whether to stop.

    Only a strict improvement resets the counter; training stops once
    ``patience`` consecutive epochs brought none.
    """

    patience: int
    best: float = math.inf
    best_epoch: int = -1
    since_best: int = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best, self.best_epoch, self.since_best = val_loss, epoch, 0
            return False
        self.since_best += 1
        return self.since_best >= self.patience


class LossEvaluator:
    """Binds loss choice, class weights and class mask."""

    def __init__(self, cfg: TrainConfig, weights: np.ndarray, mask: np.ndarray):
        self.cfg = cfg
        self.weights = weights
        self.mask = mask

    def __call__(self, logits, batch: Batch):
        if self.cfg.loss == "focal":
            return focal_loss(logits, batch.labels, self.cfg.focal_gamma, self.weights,
                              batch.sample_weights, self.mask)
        return weighted_bce(logits, batch.labels, self.weights, batch.sample_weights, self.mask)

    def weight(self, batch: Batch) -> float:
        return float(batch.sample_weights.sum() * self.mask.sum())


def bucketed_order(samples: Sequence[Sample], batch_size: int, rng: np.random.Generator,
                   pool: int = 4) -> np.ndarray:
    """Shuffled order in which consecutive ``batch_size`` runs have similar lengths.

    Shuffles, sorts within pools of ``pool * batch_size`` samples by length,
    then shuffles the resulting batches.
    """
    perm = rng.permutation(len(samples))
    span = batch_size * pool
    batches = []
    for start in range(0, len(perm), span):
        group = sorted(perm[start:start + span], key=lambda i: (len(samples[i]), i))
        batches += [group[j:j + batch_size] for j in range(0, len(group), batch_size)]
    return np.array([i for k in rng.permutation(len(batches)) for i in batches[k]], dtype=np.int64)


def dataset_loss(model: Model, batches: Sequence[Batch], loss: LossEvaluator) -> float:
    """Evaluation-mode loss over all batches, weighted as one big batch."""
    total, weight = 0.0, 0.0
    for batch in batches:
        w = loss.weight(batch)
        if w == 0:
            continue
        total += float(loss(forward(batch, model), batch).data) * w
        weight += w
    return total / weight if weight else math.nan


def train(
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    schema: ClassSchema,
    epoch_callback: Optional[Callable[[Model, int], dict]] = None,
) -> tuple[Model, History]:
    """Train from a seeded initialization and return the best-validation-loss snapshot."""
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    model = Model.init(model_cfg, train_cfg.seed)
    labels = np.concatenate([s.labels for s in train_set if len(s)])
    loss = LossEvaluator(train_cfg, class_weights(labels), class_mask(train_cfg.targets, schema))
    val_batches = pad_batch(sorted(val_set, key=len), train_cfg.batch_size)
    order_rng = np.random.default_rng(train_cfg.seed + 1)
    dropout_rng = np.random.default_rng(train_cfg.seed + 2)
    state = AdamState()
    history = History()
    best_state = model.state()
    stopper = EarlyStopping(train_cfg.patience)
    names = list(model.params)

    for epoch in range(train_cfg.max_epochs):
        shuffled = [train_set[i] for i in bucketed_order(train_set, train_cfg.batch_size, order_rng)]
        aug_seed = train_cfg.seed * 1_000_003 + epoch if train_cfg.augment else None
        total, weight = 0.0, 0.0
        for b, batch in enumerate(pad_batch(shuffled, train_cfg.batch_size, aug_seed)):
            w = loss.weight(batch)
            if w == 0:
                continue
            ad.zero_grad(model.params.values())
            value = loss(forward(batch, model, dropout_rng), batch)
            if not np.isfinite(value.data):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}, batch {b}")
            ad.backward(value)
            grads = {n: model[n].grad for n in names if model[n].grad is not None}
            new, state = adam_step(model.state(), grads, state, train_cfg.hyper)
            for n in names:
                model[n].data = new[n]
            total += float(value.data) * w
            weight += w
        train_loss = total / weight
        val_loss = dataset_loss(model, val_batches, loss)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        metrics = epoch_callback(model, epoch) if epoch_callback else {}
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, metrics))
        log.info("epoch %d train %.5f val %.5f %s", epoch, train_loss, val_loss, metrics)
        stop = stopper.update(epoch, val_loss)
        if stopper.best_epoch == epoch:
            history.best_val_loss, history.best_epoch = val_loss, epoch
            best_state = model.state()
        if stop:
            history.stopped_early = True
            break
    model.load_state(best_state)
    return model, history
