"""ED selection: combinatorial action indexing, rewards, the random baseline,
and the DRQN agent acting on pseudo-states."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .nn import (AdamState, DrqnSpec, ParamVector, adam_step, drqn_backward, drqn_forward,
                 init_drqn, load_checkpoint, save_checkpoint)

BENIGN_OBS = 1.0
REJECTED_OBS = -1.0


# ---------------------------------------------------------------------------
# action space: K-subsets of range(M) ranked in lexicographic order

def action_count(M: int, K: int) -> int:
    return math.comb(M, K)


def action_encode(subset: Iterable[int], M: int, K: int) -> int:
    ids = sorted(int(i) for i in subset)
    if len(ids) != K or len(set(ids)) != K or (ids and (ids[0] < 0 or ids[-1] >= M)):
        raise ValidationError(f"expected {K} distinct ids in [0, {M}), got {sorted(subset)}")
    rank = 0
    prev = -1
    for pos, c in enumerate(ids):
        remaining = K - 1 - pos
        for v in range(prev + 1, c):
            rank += math.comb(M - 1 - v, remaining)
        prev = c
    return rank


def action_decode(index: int, M: int, K: int) -> tuple[int, ...]:
    total = math.comb(M, K)
    if not 0 <= index < total:
        raise ValidationError(f"action index {index} outside [0, {total})")
    out = []
    v = 0
    for pos in range(K):
        remaining = K - 1 - pos
        while True:
            block = math.comb(M - 1 - v, remaining)
            if index < block:
                break
            index -= block
            v += 1
        out.append(v)
        v += 1
    return tuple(out)


class ActionTable:
    """Precomputed decode table and membership matrix for one (M, K)."""

    def __init__(self, M: int, K: int):
        if not 1 <= K <= M:
            raise ValidationError(f"need 1 <= K <= M, got K={K}, M={M}")
        self.M, self.K = M, K
        self.subsets = [action_decode(a, M, K) for a in range(action_count(M, K))]
        self.membership = np.zeros((len(self.subsets), M))
        for a, s in enumerate(self.subsets):
            self.membership[a, list(s)] = 1.0

    def __len__(self) -> int:
        return len(self.subsets)


# ---------------------------------------------------------------------------
# rewards and policies

def compute_reward(verdicts, fees: Sequence[float]) -> float:
    """Benign verdict count minus the fees paid for the selection."""
    from .defense import Label
    benign = sum(1 for v in verdicts if getattr(v, "label", v) == Label.BENIGN)
    return benign - float(sum(fees))


def select_random(rng: np.random.Generator, M: int, K: int) -> int:
    return int(rng.integers(action_count(M, K)))


def linear_epsilon(step: int, start: float, end: float, anneal_steps: int) -> float:
    if anneal_steps <= 0 or step >= anneal_steps:
        return end
    return start + (end - start) * step / anneal_steps


class PseudoStateWindow:
    """Sliding window of the last ``length`` (observation, action-membership)
    pairs, oldest first and zero-padded. The newest slot's action stays zero
    until an action is recorded for it."""

    def __init__(self, M: int, length: int):
        self.M, self.length = M, length
        self.reset()

    def reset(self):
        self._obs = deque([np.zeros(self.M)] * self.length, maxlen=self.length)
        self._act = deque([np.zeros(self.M)] * self.length, maxlen=self.length)

    def record_action(self, membership: np.ndarray):
        self._act[-1] = np.asarray(membership, dtype=np.float64)

    def push_observation(self, observation: np.ndarray):
        self._obs.append(np.asarray(observation, dtype=np.float64))
        self._act.append(np.zeros(self.M))

    def state(self) -> np.ndarray:
        return np.concatenate([np.stack(self._obs), np.stack(self._act)], axis=1)


def make_observation(M: int, verdict_by_ed: dict[int, bool]) -> np.ndarray:
    """+1 for a Benign upload, -1 for Poisoned or Lazy, 0 for unselected EDs."""
    obs = np.zeros(M)
    for ed, benign in verdict_by_ed.items():
        obs[ed] = BENIGN_OBS if benign else REJECTED_OBS
    return obs


@dataclass(frozen=True)
class ReplayItem:
    pseudo_state: np.ndarray
    action: int
    reward: float
    next_pseudo_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValidationError("replay capacity must be >= 1")
        self.capacity = capacity
        self.items: deque[ReplayItem] = deque(maxlen=capacity)

    def append(self, item: ReplayItem):
        self.items.append(item)

    def __len__(self) -> int:
        return len(self.items)

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[ReplayItem]:
        idx = rng.choice(len(self.items), size=batch_size, replace=False)
        return [self.items[i] for i in idx]


@dataclass(frozen=True)
class AgentConfig:
    lstm_units: int = 32
    fc_units: int = 200
    sequence_len: int = 3
    gamma: float = 0.0
    learning_rate: float = 3e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_rounds: int = 3000
    replay_capacity: int = 10000
    batch_size: int = 32
    target_sync: int = 100


class DrqnAgent:
    """Epsilon-greedy DRQN with uniform replay and a periodically synced target net."""

    def __init__(self, M: int, K: int, config: AgentConfig, rng: np.random.Generator):
        self.table = ActionTable(M, K)
        self.config = config
        self.spec = DrqnSpec(2 * M, config.lstm_units, config.fc_units, len(self.table),
                             config.sequence_len)
        self.rng = rng
        self.params = init_drqn(self.spec, rng)
        self.target_params = self.params.copy()
        self.adam = AdamState.for_params(self.params, config.learning_rate)
        self.replay = ReplayBuffer(config.replay_capacity)
        self.learn_calls = 0
        self.steps = 0

    @property
    def epsilon(self) -> float:
        c = self.config
        return linear_epsilon(self.steps, c.epsilon_start, c.epsilon_end, c.epsilon_anneal_rounds)

    def q_values(self, pseudo_state: np.ndarray, target: bool = False) -> np.ndarray:
        return drqn_forward(self.target_params if target else self.params, self.spec, pseudo_state)

    def select(self, pseudo_state: np.ndarray, epsilon: float | None = None,
               rng: np.random.Generator | None = None) -> int:
        return select_drqn(self, pseudo_state, self.epsilon if epsilon is None else epsilon,
                           rng or self.rng)

    def observe(self, item: ReplayItem):
        agent_observe(self, item)

    def learn(self, batch_size: int | None = None, gamma: float | None = None) -> float | None:
        return agent_learn(self, batch_size or self.config.batch_size,
                           self.config.gamma if gamma is None else gamma)

    def sync_target(self):
        self.target_params = self.params.copy()

    def save(self, path):
        path = Path(path)
        save_checkpoint(path, self.params)
        save_checkpoint(path.with_suffix(path.suffix + ".target"), self.target_params)
        c = self.config
        lines = [f"{k} = {getattr(c, k)!r}" for k in c.__dataclass_fields__]
        lines += [f"steps = {self.steps}", f"learn_calls = {self.learn_calls}",
                  f"adam_step_count = {self.adam.step_count}", f"epsilon = {self.epsilon!r}"]
        path.with_suffix(path.suffix + ".meta").write_text("\n".join(lines) + "\n")

    def load_weights(self, path):
        path = Path(path)
        self.params = load_checkpoint(path)
        self.target_params = load_checkpoint(path.with_suffix(path.suffix + ".target"))


def select_drqn(agent: DrqnAgent, pseudo_state: np.ndarray, epsilon: float,
                rng: np.random.Generator) -> int:
    """Epsilon-greedy over the Q-head; greedy ties go to the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(len(agent.table)))
    return int(np.argmax(agent.q_values(pseudo_state)))


def agent_observe(agent: DrqnAgent, item: ReplayItem):
    agent.replay.append(item)


def agent_learn(agent: DrqnAgent, batch_size: int, gamma: float) -> float | None:
    """One Adam step on the squared TD error of a uniform replay batch."""
    if len(agent.replay) < batch_size:
        return None
    batch = agent.replay.sample(agent.rng, batch_size)
    states = np.stack([b.pseudo_state for b in batch])
    next_states = np.stack([b.next_pseudo_state for b in batch])
    actions = np.array([b.action for b in batch])
    rewards = np.array([b.reward for b in batch])
    terminal = np.array([b.terminal for b in batch])
    next_q = drqn_forward(agent.target_params, agent.spec, next_states).max(axis=1)
    targets = np.where(terminal, rewards, rewards + gamma * next_q)
    loss, grad = drqn_backward(agent.params, agent.spec, states, targets, actions)
    agent.params, agent.adam = adam_step(agent.params, grad, agent.adam)
    agent.learn_calls += 1
    if agent.learn_calls % agent.config.target_sync == 0:
        agent.sync_target()
    return loss
