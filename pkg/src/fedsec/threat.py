"""Attack models: hidden per-ED attack schedules plus data and model poisoning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError
from .nn import ParamVector

LABEL_FLIP_VECTORS = ("label_flip_random", "label_flip_targeted")
MODEL_VECTORS = ("gaussian_noise", "sign_flip", "negative_increment", "model_replacement")
ATTACK_VECTORS = LABEL_FLIP_VECTORS + MODEL_VECTORS


class BernoulliSchedule:
    """Attacked independently each round with probability ``p``."""

    kind = "bernoulli"

    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"Bernoulli probability must lie in [0, 1], got {p}")
        self.p = p
        self.rng = rng

    def step(self) -> bool:
        return bool(self.rng.random() < self.p)


class PeriodicSchedule:
    """Attacked for the first ``duty`` rounds of every ``period``, offset by ``phase``."""

    kind = "periodic"

    def __init__(self, period: int, phase: int = 0, duty: int = 1):
        if period < 1:
            raise ValidationError(f"period must be >= 1, got {period}")
        if not 0 <= duty <= period:
            raise ValidationError(f"duty must lie in [0, period], got {duty}")
        self.period, self.phase, self.duty = period, phase, duty
        self.t = 0

    def step(self) -> bool:
        attacked = (self.t + self.phase) % self.period < self.duty
        self.t += 1
        return attacked


class MarkovSchedule:
    """Two-state chain over {safe, attacked}. The first call draws the state
    from the stationary distribution; later calls take one transition."""

    kind = "markov"

    def __init__(self, p_stay_safe: float, p_stay_attacked: float, rng: np.random.Generator):
        for name, p in (("p_stay_safe", p_stay_safe), ("p_stay_attacked", p_stay_attacked)):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {p}")
        self.p_stay_safe = p_stay_safe
        self.p_stay_attacked = p_stay_attacked
        self.rng = rng
        self.attacked: bool | None = None

    @property
    def stationary_attacked(self) -> float:
        leave_safe = 1.0 - self.p_stay_safe
        leave_attacked = 1.0 - self.p_stay_attacked
        if leave_safe + leave_attacked == 0.0:
            return 0.0
        return leave_safe / (leave_safe + leave_attacked)

    def step(self) -> bool:
        u = self.rng.random()
        if self.attacked is None:
            self.attacked = bool(u < self.stationary_attacked)
        elif self.attacked:
            self.attacked = bool(u < self.p_stay_attacked)
        else:
            self.attacked = bool(u >= self.p_stay_safe)
        return self.attacked


def schedule_step(schedule) -> bool:
    """Advance ``schedule`` by one round; True when this round's upload is poisoned."""
    return schedule.step()


def make_schedule(kind: str, params: dict, rng: np.random.Generator):
    if kind == "bernoulli":
        return BernoulliSchedule(params.get("p", 0.5), rng)
    if kind == "periodic":
        return PeriodicSchedule(params.get("period", 2), params.get("phase", 0),
                                params.get("duty", 1))
    if kind == "markov":
        return MarkovSchedule(params.get("p_stay_safe", 0.9), params.get("p_stay_attacked", 0.8),
                              rng)
    raise ConfigError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class AttackConfig:
    vector: str = "label_flip_random"
    scale_factor: float = 20.0
    sigma: float = 1.0
    targeted_map: dict = field(default_factory=dict)
    boost: float = 1.0

    def __post_init__(self):
        if self.vector not in ATTACK_VECTORS:
            raise ConfigError(f"unknown attack vector {self.vector!r}")
        if self.scale_factor < 1.0:
            raise ConfigError(f"scale_factor must be >= 1, got {self.scale_factor}")
        clean = {int(k): int(v) for k, v in self.targeted_map.items()}
        bad = [k for k, v in clean.items() if k == v]
        if bad:
            raise ConfigError(f"targeted label map sends class {bad[0]} to itself")
        object.__setattr__(self, "targeted_map", clean)

    @property
    def poisons_data(self) -> bool:
        return self.vector in LABEL_FLIP_VECTORS


def poison_data(labels, vector: str, class_count: int, rng: np.random.Generator | None = None,
                targeted_map: dict | None = None) -> np.ndarray:
    """Return a flipped copy of ``labels``; the input array is never modified."""
    labels = np.asarray(labels, dtype=np.int64)
    if vector == "label_flip_random":
        if class_count < 2:
            raise ValidationError("random label flipping needs at least two classes")
        # a uniform non-zero offset gives a uniform choice among the other classes
        offsets = rng.integers(1, class_count, size=labels.shape)
        return (labels + offsets) % class_count
    if vector == "label_flip_targeted":
        mapping = {int(k): int(v) for k, v in (targeted_map or {}).items()}
        for src, dst in mapping.items():
            if src == dst:
                raise ConfigError(f"targeted label map sends class {src} to itself")
        out = labels.copy()
        for src, dst in mapping.items():
            out[labels == src] = dst
        return out
    raise ValidationError(f"{vector!r} is not a label-flip attack")


def poison_update(benign_delta: ParamVector, vector: str, scale_factor: float = 1.0, *,
                  rng: np.random.Generator | None = None, sigma: float = 1.0,
                  previous_increment: ParamVector | None = None,
                  target_params: ParamVector | None = None,
                  global_params: ParamVector | None = None,
                  boost: float = 1.0) -> ParamVector:
    """Turn a finished local delta into the poisoned upload.

    Label-flip vectors only apply ``scale_factor`` here (the flipping happened
    during training). Model replacement scales by ``boost`` alone.
    """
    if vector == "model_replacement":
        if target_params is None or global_params is None:
            raise ValidationError("model replacement needs target and global parameters")
        benign_delta.check_compatible(target_params)
        return (target_params - global_params).scaled(boost)
    if vector == "negative_increment":
        if previous_increment is None:
            vector = "sign_flip"
        else:
            benign_delta.check_compatible(previous_increment)
            return (-previous_increment).scaled(scale_factor)
    if vector == "sign_flip":
        return (-benign_delta).scaled(scale_factor)
    if vector == "gaussian_noise":
        noise = rng.normal(0.0, sigma, size=benign_delta.values.shape)
        return benign_delta.with_values(noise * scale_factor)
    if vector in LABEL_FLIP_VECTORS:
        return benign_delta.scaled(scale_factor)
    raise ValidationError(f"unknown attack vector {vector!r}")
