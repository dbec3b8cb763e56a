"""Round orchestration: fees, hidden attack schedules, local training, the
configured defense, and the selection policy, wired together per round."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .data import LabeledDataset, generate_synthetic, load_idx, partition_equal, train_test_split
from .defense import Label, Verdict, defend
from .errors import ConfigError
from .federation import (EDKind, EDProfile, GlobalModel, LocalTrainConfig, ModelUpdate,
                         evaluate, local_train, with_accuracy)
from .nn import MlpSpec, ParamVector, init_mlp, load_checkpoint
from .selection import (ActionTable, DrqnAgent, PseudoStateWindow, ReplayItem, compute_reward,
                        make_observation, select_random)
from .threat import AttackConfig, make_schedule, poison_data, poison_update

WORKERS_ENV = "FEDSEC_MAX_WORKERS"

# Stream ids for seed derivation. New components get new ids; existing
# streams never shift.
DATA, PARTITION, MODEL_INIT, TRAIN, POISON, SCHEDULE, AGENT, SELECT, AUX = range(9)


class SeedStreams:
    """Counter-style split of one master seed into independent generators."""

    def __init__(self, master: int):
        self.master = int(master)

    def seed(self, *key: int) -> int:
        ss = np.random.SeedSequence(self.master, spawn_key=tuple(int(k) for k in key))
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(self.master, spawn_key=tuple(int(k) for k in key)))


@dataclass
class RoundRecord:
    task: int
    round: int
    step: int
    selected: tuple[int, ...]
    attacked: tuple[int, ...]
    verdicts: str
    accuracy: float
    fees_paid: float
    benign_count: int
    utility: float
    epsilon: float | None = None
    agent_loss: float | None = None
    wall_ms: float = field(default=0.0, compare=False)

    @property
    def reward(self) -> float:
        return self.utility


def effective_workers(requested: int) -> int:
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {cap!r}") from None
    return max(1, requested)


def load_datasets(config: ExperimentConfig, streams: SeedStreams):
    d = config.data
    if d.source == "idx":
        train = load_idx(d.train_images, d.train_labels)
        test = load_idx(d.test_images, d.test_labels)
        classes = max(train.class_count, test.class_count)
        train = LabeledDataset(train.features, train.labels, classes)
        test = LabeledDataset(test.features, test.labels, classes)
        return train, test
    full = generate_synthetic(d.class_count, d.dim, d.per_class, streams.seed(DATA), d.spread)
    return train_test_split(full, d.test_fraction, streams.seed(DATA, 1))


class Simulation:
    """One experiment's mutable world: EDs, schedules, global model, agent."""

    def __init__(self, config: ExperimentConfig, workers: int | None = None,
                 datasets: tuple[LabeledDataset, LabeledDataset] | None = None):
        self.config = config
        self.streams = SeedStreams(config.seed)
        self.workers = effective_workers(workers if workers is not None else config.workers)
        self.train, self.test = datasets or load_datasets(config, self.streams)
        self.spec = MlpSpec(self.train.dim, config.model.hidden_layers, self.train.class_count)
        self.hyper = LocalTrainConfig(config.training.batch_size, config.training.epochs,
                                      config.training.learning_rate)
        a = config.attack
        self.attack = AttackConfig(a.vector, a.scale_factor, a.sigma, a.targeted_map, a.boost)
        self.replacement_target = None
        if a.vector == "model_replacement":
            self.replacement_target = (load_checkpoint(a.replacement_target)
                                       if a.replacement_target
                                       else init_mlp(self.spec, self.streams.rng(POISON)))

        t = config.topology
        self.M, self.K = t.ed_count, t.select_count
        shards = partition_equal(len(self.train), self.M, self.streams.seed(PARTITION))
        first_vulnerable = self.M - t.vulnerable_count
        s = config.schedule
        sched_params = {"p": s.p, "period": s.period, "phase": s.phase, "duty": s.duty,
                        "p_stay_safe": s.p_stay_safe, "p_stay_attacked": s.p_stay_attacked}
        self.eds = []
        for i in range(self.M):
            if i >= first_vulnerable:
                sched = make_schedule(s.kind, sched_params, self.streams.rng(SCHEDULE, i))
                self.eds.append(EDProfile(i, EDKind.VULNERABLE, t.vulnerable_price, shards[i],
                                          sched))
            else:
                self.eds.append(EDProfile(i, EDKind.SECURE_BENIGN, t.secure_price, shards[i]))

        self.table = ActionTable(self.M, self.K)
        self.agent = None
        if config.selection.policy == "drqn":
            self.agent = DrqnAgent(self.M, self.K, config.agent, self.streams.rng(AGENT))
        self.window = PseudoStateWindow(self.M, config.agent.sequence_len)
        self.select_rng = self.streams.rng(SELECT)
        self.step = 0
        self.model: GlobalModel | None = None
        self.task = -1
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # -- task / round lifecycle ------------------------------------------------

    def start_task(self, task: int):
        self.task = task
        params = init_mlp(self.spec, self.streams.rng(MODEL_INIT, task))
        self.model = GlobalModel(params)
        self.window.reset()

    def _aux_for_round(self, round_index: int) -> LabeledDataset:
        k = self.config.data.aux_subsample
        if not k or k >= len(self.test):
            return self.test
        rng = self.streams.rng(AUX, self.task, round_index)
        return self.test.subset(np.sort(rng.choice(len(self.test), size=k, replace=False)))

    def _train_one(self, ed: EDProfile, attacked: bool, round_index: int,
                   global_params: ParamVector) -> ModelUpdate:
        rng = self.streams.rng(TRAIN, self.task, round_index, ed.id)
        labels = None
        vector = self.attack.vector
        if attacked and self.attack.poisons_data:
            prng = self.streams.rng(POISON, self.task, round_index, ed.id)
            labels = poison_data(self.train.labels[ed.shard], vector, self.train.class_count,
                                 prng, self.attack.targeted_map)
        update = local_train(global_params, self.spec, ed, self.train, self.hyper, rng,
                             round_index, labels)
        if not attacked:
            return update
        history = self.model.increment_history
        poisoned = poison_update(
            update.delta, vector, self.attack.scale_factor,
            rng=self.streams.rng(POISON, self.task, round_index, ed.id, 1),
            sigma=self.attack.sigma,
            previous_increment=history[-1] if history else None,
            target_params=self.replacement_target, global_params=global_params,
            boost=self.attack.boost)
        return ModelUpdate(update.ed_id, update.round, poisoned, update.fee)

    def run_round(self, round_index: int, selection) -> tuple[RoundRecord, list[Verdict] | None]:
        """Pay, train, defend, and account for one round with a fixed selection."""
        started = time.perf_counter()
        selection = tuple(int(i) for i in selection)
        unknown = [i for i in selection if not 0 <= i < self.M]
        if unknown:
            raise ConfigError(f"selection names unknown ED ids {unknown}")
        if len(set(selection)) != self.K or len(selection) != self.K:
            raise ConfigError(f"selection must hold {self.K} distinct EDs, got {selection}")

        fees = [self.eds[i].price for i in selection]
        # every schedule advances every round, selected or not
        attacked_now = {ed.id: ed.schedule.step() for ed in self.eds if ed.schedule is not None}
        enabled = self.config.attack.enabled
        attacked = {i: enabled and attacked_now.get(i, False) for i in selection}

        gparams = self.model.params
        jobs = [(self.eds[i], attacked[i], round_index, gparams) for i in selection]
        if self._pool is not None:
            updates = list(self._pool.map(lambda j: self._train_one(*j), jobs))
        else:
            updates = [self._train_one(*j) for j in jobs]

        aux = self._aux_for_round(round_index)
        model = self.model
        if self.config.defense.strategy == "vba" and (
                model.last_accuracy is None or aux is not self.test):
            model = with_accuracy(model, evaluate(model.params, self.spec, aux))
        new_model, verdicts = defend(model, updates, aux, self.spec, self.config.defense)
        accuracy = evaluate(new_model.params, self.spec, self.test)
        self.model = with_accuracy(new_model, accuracy)

        if verdicts is not None:
            benign = sum(1 for v in verdicts if v.label == Label.BENIGN)
            reward = compute_reward(verdicts, fees)
            verdict_str = " ".join(v.label.value for v in verdicts)
        else:
            benign = sum(1 for i in selection if not attacked[i])
            reward = benign - float(sum(fees))
            verdict_str = ""
        record = RoundRecord(
            task=self.task, round=round_index, step=self.step, selected=selection,
            attacked=tuple(i for i in selection if attacked[i]), verdicts=verdict_str,
            accuracy=accuracy, fees_paid=float(sum(fees)), benign_count=benign,
            utility=reward)
        record.wall_ms = (time.perf_counter() - started) * 1000.0
        return record, verdicts

    def play_round(self, round_index: int, terminal: bool) -> RoundRecord:
        """Choose a selection with the configured policy, run it, and let the
        agent learn from the outcome."""
        started = time.perf_counter()
        if self.agent is None:
            action = select_random(self.select_rng, self.M, self.K)
            record, verdicts = self.run_round(round_index, self.table.subsets[action])
            self.step += 1
            return record

        state = self.window.state()
        epsilon = self.agent.epsilon
        action = self.agent.select(state, epsilon)
        selection = self.table.subsets[action]
        self.window.record_action(self.table.membership[action])
        record, verdicts = self.run_round(round_index, selection)
        if verdicts is not None:
            outcome = {v.ed_id: v.label == Label.BENIGN for v in verdicts}
        else:
            outcome = {i: i not in record.attacked for i in selection}
        self.window.push_observation(make_observation(self.M, outcome))
        self.agent.observe(ReplayItem(state, action, record.utility, self.window.state(),
                                      terminal))
        record.agent_loss = self.agent.learn()
        record.epsilon = epsilon
        self.agent.steps += 1
        self.step += 1
        record.wall_ms = (time.perf_counter() - started) * 1000.0
        return record

    def run_task(self, task: int):
        """Yield one RoundRecord per round of a fresh learning task."""
        self.start_task(task)
        n = self.config.rounds_per_task
        for r in range(n):
            yield self.play_round(r, terminal=r == n - 1)
