"""FL protocol pieces: ED profiles, local training, mean aggregation, evaluation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError, ValidationError
from .nn import AdamState, MlpSpec, ParamVector, adam_step, mlp_backward, mlp_forward

HISTORY_DEPTH = 5


class EDKind(str, Enum):
    SECURE_BENIGN = "secure"
    VULNERABLE = "vulnerable"


@dataclass
class EDProfile:
    id: int
    kind: EDKind
    price: float
    shard: np.ndarray
    schedule: object | None = None

    def __post_init__(self):
        if self.price <= 0:
            raise ValidationError(f"ED {self.id}: price must be positive, got {self.price}")
        if self.kind == EDKind.SECURE_BENIGN and self.schedule is not None:
            raise ValidationError(f"ED {self.id}: secure benign EDs carry no attack schedule")


@dataclass(frozen=True)
class ModelUpdate:
    ed_id: int
    round: int
    delta: ParamVector
    fee: float


@dataclass
class GlobalModel:
    params: ParamVector
    round: int = 0
    last_accuracy: float | None = None
    increment_history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_DEPTH))

    def advanced(self, params: ParamVector, increment: ParamVector | None) -> "GlobalModel":
        history = deque(self.increment_history, maxlen=self.increment_history.maxlen)
        if increment is not None:
            history.append(increment)
        return GlobalModel(params, self.round + 1, None, history)


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    fees_paid: float
    benign_count: int

    @property
    def utility(self) -> float:
        return self.benign_count - self.fees_paid


@dataclass(frozen=True)
class LocalTrainConfig:
    batch_size: int = 100
    epochs: int = 1
    learning_rate: float = 1e-3


def local_train(global_params: ParamVector, spec: MlpSpec, ed: EDProfile,
                dataset: LabeledDataset, hyper: LocalTrainConfig, rng: np.random.Generator,
                round_index: int = 0, labels=None) -> ModelUpdate:
    """Minibatch Adam from the global parameters over the ED's shard.

    ``labels`` overrides the shard labels (poisoned training); the optimizer
    state starts fresh every call.
    """
    shard = np.asarray(ed.shard, dtype=np.int64)
    if shard.size == 0:
        raise ConfigError(f"ED {ed.id} has an empty data shard")
    x = dataset.features[shard]
    y = dataset.labels[shard] if labels is None else np.asarray(labels, dtype=np.int64)
    params = global_params
    state = AdamState.for_params(params, hyper.learning_rate)
    for _ in range(hyper.epochs):
        order = rng.permutation(shard.size)
        for start in range(0, shard.size, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            _, grad = mlp_backward(params, spec, x[idx], y[idx])
            params, state = adam_step(params, grad, state)
    return ModelUpdate(ed.id, round_index, params - global_params, ed.price)


def aggregate_mean(model: GlobalModel, updates: list[ModelUpdate]) -> GlobalModel:
    """Add the componentwise mean of the deltas to the global parameters."""
    if not updates:
        return model.advanced(model.params, None)
    for u in updates:
        model.params.check_compatible(u.delta)
    stacked = np.stack([u.delta.values for u in updates])
    increment = model.params.with_values(stacked.sum(axis=0) / len(updates))
    return model.advanced(model.params + increment, increment)


def apply_increment(model: GlobalModel, increment: np.ndarray) -> GlobalModel:
    inc = model.params.with_values(increment)
    return model.advanced(model.params + inc, inc)


def predict(params: ParamVector, spec: MlpSpec, features) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. the lowest class on ties
    return np.argmax(mlp_forward(params, spec, features), axis=1)


def evaluate(params: ParamVector, spec: MlpSpec, dataset: LabeledDataset) -> float:
    """Top-1 accuracy of ``params`` on ``dataset``."""
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(params, spec, dataset.features) == dataset.labels))


def with_accuracy(model: GlobalModel, accuracy: float) -> GlobalModel:
    return replace(model, last_accuracy=accuracy)
