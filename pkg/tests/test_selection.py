import numpy as np
import pytest

from fedsec.defense import Label, Verdict
from fedsec.errors import ValidationError
from fedsec.federation import LedgerEntry
from fedsec.selection import (ActionTable, AgentConfig, DrqnAgent, PseudoStateWindow, ReplayBuffer,
                              ReplayItem, action_count, action_decode, action_encode,
                              compute_reward, linear_epsilon, make_observation, select_random)

import oracles


def test_action_count():
    assert action_count(10, 5) == 252
    assert action_count(10, 1) == 10
    assert action_count(7, 7) == 1


def test_first_and_last_indices():
    assert action_decode(0, 10, 5) == (0, 1, 2, 3, 4)
    assert action_decode(251, 10, 5) == (5, 6, 7, 8, 9)


@pytest.mark.parametrize("M, K", [(10, 5), (6, 2), (8, 8), (9, 1)])
def test_exhaustive_round_trip_in_lexicographic_order(M, K):
    expected = oracles.subsets(M, K)
    for a, subset in enumerate(expected):
        assert action_decode(a, M, K) == subset
        assert action_encode(subset, M, K) == a
    assert len(expected) == action_count(M, K)


def test_encode_ignores_order():
    assert action_encode([4, 0, 2, 1, 3], 10, 5) == 0


@pytest.mark.parametrize("bad", [[0, 0, 1, 2, 3], [0, 1, 2, 3], [0, 1, 2, 3, 10], [-1, 1, 2, 3, 4]])
def test_encode_rejects_bad_subsets(bad):
    with pytest.raises(ValidationError):
        action_encode(bad, 10, 5)


def test_decode_rejects_out_of_range():
    with pytest.raises(ValidationError):
        action_decode(252, 10, 5)


def test_table_membership():
    t = ActionTable(10, 5)
    assert len(t) == 252
    assert np.all(t.membership.sum(axis=1) == 5)
    assert t.membership[251].tolist() == [0] * 5 + [1] * 5


def test_reward_examples():
    B, P = Label.BENIGN, Label.POISONED
    fees = [0.9, 0.3, 0.3, 0.3, 0.3]
    assert compute_reward([B] * 5, fees) == pytest.approx(2.9)
    assert compute_reward([B, P, P, P, P], fees) == pytest.approx(-1.1)


def test_reward_counts_lazy_as_non_benign_and_matches_ledger():
    labels = [Label.BENIGN, Label.LAZY, Label.BENIGN, Label.POISONED, Label.BENIGN]
    verdicts = [Verdict(i, l, 1.0, 0.0) for i, l in enumerate(labels)]
    fees = [0.3] * 5
    entry = LedgerEntry(0, sum(fees), 3)
    assert compute_reward(verdicts, fees) == entry.utility


def test_random_selection_is_uniform():
    rng = np.random.default_rng(2024)
    counts = np.bincount([select_random(rng, 10, 5) for _ in range(252_000)], minlength=252)
    assert counts.min() >= 850 and counts.max() <= 1150


def test_linear_epsilon():
    assert linear_epsilon(0, 1.0, 0.05, 3000) == 1.0
    assert linear_epsilon(1500, 1.0, 0.05, 3000) == pytest.approx(0.525)
    assert linear_epsilon(3000, 1.0, 0.05, 3000) == 0.05
    assert linear_epsilon(10_000, 1.0, 0.05, 3000) == 0.05


def test_observation_encoding():
    obs = make_observation(4, {0: True, 2: False})
    assert obs.tolist() == [1.0, 0.0, -1.0, 0.0]


def test_window_matches_ring_buffer_oracle():
    M, L = 3, 3
    w = PseudoStateWindow(M, L)
    obs_hist, act_hist = [], []
    rng = np.random.default_rng(0)
    for t in range(8):
        state = w.state()
        pad = L - min(len(obs_hist), L)
        expected_obs = [np.zeros(M)] * pad + obs_hist[-L:] if obs_hist else [np.zeros(M)] * L
        expected_act = ([np.zeros(M)] * pad + act_hist[-L:] if act_hist else [np.zeros(M)] * L)
        # the newest slot's action is not chosen yet
        expected_act = expected_act[1:] + [np.zeros(M)] if act_hist else expected_act
        assert np.array_equal(state[:, :M], np.stack(expected_obs)), t
        assert np.array_equal(state[:, M:], np.stack(expected_act)), t
        a = rng.integers(0, 2, M).astype(float)
        o = rng.choice([-1.0, 0.0, 1.0], M)
        w.record_action(a)
        w.push_observation(o)
        act_hist.append(a)
        obs_hist.append(o)


def test_window_reset_zeroes_everything():
    w = PseudoStateWindow(4, 3)
    w.record_action(np.ones(4))
    w.push_observation(np.ones(4))
    w.reset()
    assert not w.state().any()
    assert w.state().shape == (3, 8)


def test_replay_buffer_capacity_and_sampling():
    buf = ReplayBuffer(5)
    s = np.zeros((3, 4))
    for k in range(8):
        buf.append(ReplayItem(s, k, float(k), s, False))
    assert len(buf) == 5
    batch = buf.sample(np.random.default_rng(0), 5)
    assert sorted(b.action for b in batch) == [3, 4, 5, 6, 7]


def small_agent(**kw):
    cfg = AgentConfig(lstm_units=8, fc_units=16, sequence_len=2, batch_size=8, **kw)
    return DrqnAgent(3, 1, cfg, np.random.default_rng(0))


def test_agent_bandit_with_zero_discount():
    agent = small_agent(learning_rate=0.01, target_sync=10)
    s = np.zeros((2, 6))
    for k in range(32):
        a = k % 3
        agent.observe(ReplayItem(s, a, 1.0 if a == 1 else 0.0, s, False))
    losses = [agent.learn(gamma=0.0) for _ in range(200)]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
    assert agent.select(s, epsilon=0.0) == 1
    q = agent.q_values(s)
    assert q[1] == pytest.approx(1.0, abs=0.1) and abs(q[0]) < 0.1


def test_terminal_target_is_reward():
    agent = small_agent(learning_rate=0.0, target_sync=1000)
    s = np.zeros((2, 6))
    nxt = np.ones((2, 6))
    for _ in range(8):
        agent.observe(ReplayItem(s, 0, 2.5, nxt, True))
    q0 = agent.q_values(s)[0]
    loss = agent.learn(gamma=0.9)
    assert loss == pytest.approx((q0 - 2.5) ** 2)


def test_non_terminal_target_bootstraps_from_target_net():
    agent = small_agent(learning_rate=0.0, target_sync=1000)
    s = np.zeros((2, 6))
    nxt = np.ones((2, 6))
    for _ in range(8):
        agent.observe(ReplayItem(s, 0, 1.0, nxt, False))
    y = 1.0 + 0.9 * agent.q_values(nxt, target=True).max()
    assert agent.learn(gamma=0.9) == pytest.approx((agent.q_values(s)[0] - y) ** 2)


def test_learn_on_short_buffer_is_a_no_op():
    agent = small_agent()
    before = agent.params.values.copy()
    assert agent.learn() is None
    assert np.array_equal(agent.params.values, before)


def test_target_sync_every_period():
    agent = small_agent(learning_rate=0.01, target_sync=3)
    s = np.random.default_rng(1).normal(size=(2, 6))
    for k in range(8):
        agent.observe(ReplayItem(s, k % 3, 1.0, s, False))
    agent.learn()
    agent.learn()
    assert not np.array_equal(agent.q_values(s), agent.q_values(s, target=True))
    agent.learn()
    assert np.array_equal(agent.q_values(s), agent.q_values(s, target=True))


def test_greedy_action_invariant_to_uniform_q_shift():
    agent = small_agent()
    s = np.random.default_rng(3).normal(size=(2, 6))
    a = agent.select(s, epsilon=0.0)
    agent.params.layers()["q_b"][...] += 123.0
    assert agent.select(s, epsilon=0.0) == a


def test_epsilon_one_is_uniform():
    agent = DrqnAgent(10, 5, AgentConfig(lstm_units=4, fc_units=8), np.random.default_rng(0))
    s = np.zeros((3, 20))
    rng = np.random.default_rng(1)
    counts = np.bincount([agent.select(s, 1.0, rng) for _ in range(25_200)], minlength=252)
    assert counts.min() >= 60 and counts.max() <= 140


def test_agent_save_and_reload(tmp_path):
    agent = small_agent()
    agent.save(tmp_path / "agent.ckpt")
    other = DrqnAgent(3, 1, agent.config, np.random.default_rng(99))
    other.load_weights(tmp_path / "agent.ckpt")
    s = np.ones((2, 6))
    assert np.array_equal(agent.q_values(s), other.q_values(s))
    assert "gamma" in (tmp_path / "agent.ckpt.meta").read_text()
