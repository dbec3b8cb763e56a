"""Experiment configuration: TOML in, validated dataclasses out, TOML back."""

from __future__ import annotations

import dataclasses
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .defense import DefenseConfig
from .errors import ConfigError
from .selection import AgentConfig, action_count
from .threat import ATTACK_VECTORS

MAX_ACTIONS = 5000


@dataclass(frozen=True)
class TopologyConfig:
    ed_count: int = 10
    select_count: int = 5
    vulnerable_count: int = 9
    secure_price: float = 0.9
    vulnerable_price: float = 0.3


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    class_count: int = 4
    dim: int = 8
    per_class: int = 500
    spread: float = 0.15
    test_fraction: float = 0.2
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    aux_subsample: int = 0  # 0 -> whole test split every round


@dataclass(frozen=True)
class ModelConfig:
    hidden_layers: tuple[int, ...] = (32,)


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 16
    epochs: int = 1
    learning_rate: float = 0.005


@dataclass(frozen=True)
class AttackSection:
    enabled: bool = True
    vector: str = "label_flip_random"
    scale_factor: float = 20.0
    sigma: float = 1.0
    boost: float = 5.0
    targeted_map: dict = field(default_factory=dict)
    replacement_target: str = ""


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "markov"
    p: float = 0.5
    period: int = 4
    phase: int = 0
    duty: int = 2
    p_stay_safe: float = 0.9
    p_stay_attacked: float = 0.8


@dataclass(frozen=True)
class SelectionConfig:
    policy: str = "random"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    rounds_per_task: int = 300
    task_count: int = 1
    output_dir: str = "runs/out"
    workers: int = 1
    record_timing: bool = False
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    attack: AttackSection = field(default_factory=AttackSection)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def replace(self, **changes) -> "ExperimentConfig":
        """``dataclasses.replace`` that also accepts ``section__field`` keys."""
        nested: dict[str, dict] = {}
        flat = {}
        for key, value in changes.items():
            if "__" in key:
                section, name = key.split("__", 1)
                nested.setdefault(section, {})[name] = value
            else:
                flat[key] = value
        for section, vals in nested.items():
            flat[section] = dataclasses.replace(getattr(self, section), **vals)
        return dataclasses.replace(self, **flat)


_SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)
             if f.default_factory is not dataclasses.MISSING}


_BAD = object()


def _coerce(value, default, where: str, problems: list[str]):
    """Check ``value`` against the type of the field's default; ``_BAD`` on mismatch."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        want = "true/false"
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        want = "an integer"
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        want = "a number"
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
        want = "a string"
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in value)
        want = "a list of integers"
        value = tuple(value) if ok else value
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
        want = "a table"
    else:
        ok, want = True, ""
    if not ok:
        problems.append(f"{where}: expected {want}, got {value!r}")
        return _BAD
    return value


_OPTIONAL_NUMERIC = {("defense", "trim_count"): int, ("defense", "norm_cap"): float}


def _build_section(cls, raw: dict, prefix: str, problems: list[str]):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        where = f"{prefix}{key}"
        if key not in known:
            problems.append(f"{where}: unknown key")
            continue
        if isinstance(value, dict) and not isinstance(getattr(defaults, key), dict):
            problems.append(f"{where}: unexpected table")
            continue
        opt = _OPTIONAL_NUMERIC.get((prefix.rstrip("."), key))
        if opt is not None:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or (
                    opt is int and not isinstance(value, int)):
                problems.append(f"{where}: expected {'an integer' if opt is int else 'a number'}, "
                                f"got {value!r}")
                continue
            kwargs[key] = opt(value)
            continue
        value = _coerce(value, getattr(defaults, key), where, problems)
        if value is not _BAD:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except Exception as exc:  # dataclass-level validation
        problems.append(f"{prefix.rstrip('.')}: {exc}")
        return defaults


def config_from_dict(raw: dict, check_paths: bool = True) -> ExperimentConfig:
    problems: list[str] = []
    top = {}
    sections = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"{key}: expected a [{key}] section")
                continue
            cls = type(_SECTIONS[key]())
            sections[key] = _build_section(cls, value, f"{key}.", problems)
        else:
            top[key] = value
    base = _build_section(ExperimentConfig, top, "", problems)
    config = dataclasses.replace(base, **sections)
    problems.extend(validate(config, check_paths))
    if problems:
        raise ConfigError("invalid experiment configuration", problems)
    return config


def validate(config: ExperimentConfig, check_paths: bool = True) -> list[str]:
    """Every semantic violation in ``config`` (empty list when valid)."""
    out = []
    t = config.topology
    if t.ed_count < 1:
        out.append(f"topology.ed_count must be >= 1, got {t.ed_count}")
    if not 1 <= t.select_count <= t.ed_count:
        out.append(f"topology.select_count K={t.select_count} must satisfy 1 <= K <= "
                   f"ed_count M={t.ed_count}")
    if not 0 <= t.vulnerable_count <= t.ed_count:
        out.append(f"topology.vulnerable_count {t.vulnerable_count} must lie in "
                   f"[0, ed_count M={t.ed_count}]")
    if not t.secure_price > 0 or not t.vulnerable_price > 0:
        out.append("topology prices must be positive")
    if config.rounds_per_task < 1:
        out.append("rounds_per_task must be >= 1")
    if config.task_count < 1:
        out.append("task_count must be >= 1")
    if config.workers < 1:
        out.append("workers must be >= 1")
    if config.seed < 0:
        out.append("seed must be non-negative")

    d = config.data
    if d.source == "synthetic":
        for name in ("class_count", "dim", "per_class"):
            if getattr(d, name) < 1:
                out.append(f"data.{name} must be positive")
        if d.class_count < 2:
            out.append("data.class_count must be >= 2")
        if not 0 < d.test_fraction < 1:
            out.append("data.test_fraction must lie in (0, 1)")
        if not d.spread > 0:
            out.append("data.spread must be positive")
    elif d.source == "idx":
        for name in ("train_images", "train_labels", "test_images", "test_labels"):
            path = getattr(d, name)
            if not path:
                out.append(f"data.{name} is required for source = 'idx'")
            elif check_paths and not Path(path).is_file():
                out.append(f"data.{name}: file not found: {path}")
    else:
        out.append(f"data.source must be 'synthetic' or 'idx', got {d.source!r}")
    if d.aux_subsample < 0:
        out.append("data.aux_subsample must be >= 0")

    if any(h < 1 for h in config.model.hidden_layers):
        out.append("model.hidden_layers widths must be >= 1")
    tr = config.training
    if tr.batch_size < 1 or tr.epochs < 0 or not tr.learning_rate > 0:
        out.append("training: batch_size >= 1, epochs >= 0 and learning_rate > 0 required")

    a = config.attack
    if a.vector not in ATTACK_VECTORS:
        out.append(f"attack.vector {a.vector!r} not one of {', '.join(ATTACK_VECTORS)}")
    if a.scale_factor < 1:
        out.append(f"attack.scale_factor must be >= 1, got {a.scale_factor}")
    for k, v in a.targeted_map.items():
        if not re.fullmatch(r"\d+", str(k)) or isinstance(v, bool) or not isinstance(v, int):
            out.append(f"attack.targeted_map entry {k!r} = {v!r} must map class to class")
        elif int(k) == v:
            out.append(f"attack.targeted_map sends class {k} to itself")
    if a.vector == "label_flip_targeted" and not a.targeted_map:
        out.append("attack.targeted_map is required for label_flip_targeted")
    if a.replacement_target and check_paths and not Path(a.replacement_target).is_file():
        out.append(f"attack.replacement_target: file not found: {a.replacement_target}")

    s = config.schedule
    if s.kind not in ("bernoulli", "periodic", "markov"):
        out.append(f"schedule.kind {s.kind!r} not one of bernoulli, periodic, markov")
    for name in ("p", "p_stay_safe", "p_stay_attacked"):
        if not 0 <= getattr(s, name) <= 1:
            out.append(f"schedule.{name} must lie in [0, 1]")
    if s.period < 1 or not 0 <= s.duty <= s.period:
        out.append("schedule.period must be >= 1 and 0 <= duty <= period")

    out.extend(config.defense.problems())
    df = config.defense
    K = t.select_count
    if df.strategy == "krum" and K < df.krum_f + 3:
        out.append(f"defense.krum_f={df.krum_f} needs select_count >= f + 3, got {K}")
    if df.strategy == "cotmed" and df.trim_count is not None and 2 * df.trim_count >= K:
        out.append(f"defense.trim_count={df.trim_count} needs 2*trim_count < select_count={K}")

    if config.selection.policy not in ("random", "drqn"):
        out.append(f"selection.policy must be 'random' or 'drqn', got {config.selection.policy!r}")
    if config.selection.policy == "drqn":
        if 1 <= K <= t.ed_count and action_count(t.ed_count, K) > MAX_ACTIONS:
            out.append(f"C({t.ed_count},{K}) actions exceed the Q-head limit of {MAX_ACTIONS}")
        ag = config.agent
        if not 0 <= ag.gamma <= 1:
            out.append("agent.gamma must lie in [0, 1]")
        if ag.batch_size < 1 or ag.replay_capacity < ag.batch_size:
            out.append("agent.replay_capacity must be >= agent.batch_size >= 1")
        if ag.target_sync < 1 or ag.sequence_len < 1:
            out.append("agent.target_sync and agent.sequence_len must be >= 1")
    return out


def load_config(path, check_paths: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries "(at line N, column M)"
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return config_from_dict(raw, check_paths)


def config_to_dict(config: ExperimentConfig) -> dict:
    def clean(obj):
        out = {}
        for f in fields(obj):
            value = getattr(obj, f.name)
            if value is None:
                continue
            if dataclasses.is_dataclass(value):
                continue
            if isinstance(value, tuple):
                value = list(value)
            if isinstance(value, dict):
                value = {str(k): v for k, v in value.items()}
            out[f.name] = value
        return out

    doc = clean(config)
    for name in _SECTIONS:
        doc[name] = clean(getattr(config, name))
    return doc


def dumps_config(config: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(config))


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps_config(config), encoding="utf-8")
