"""Replay buffer, targets, update cadence and end-to-end learner mechanics."""

import math

import numpy as np
import pytest

from fairis.agents import (
    Agent,
    AgentConfig,
    Batch,
    InsufficientDataError,
    ReplayBuffer,
    ddpg_target,
    noise_schedule,
    select_action,
    smoothed_target_action,
    td3_target,
)
from fairis.env import Transition
from fairis.nn import forward


def filled_buffer(capacity, rewards, obs_dim=3, action_dim=2):
    buf = ReplayBuffer(capacity, obs_dim, action_dim)
    for r in rewards:
        buf.push(np.full(obs_dim, r), np.full(action_dim, r), r, np.full(obs_dim, r + 1), False)
    return buf


def random_batch(rng, n, obs_dim, action_dim):
    return Batch(states=rng.standard_normal((n, obs_dim)),
                 actions=rng.uniform(-1, 1, (n, action_dim)),
                 rewards=rng.standard_normal(n),
                 next_states=rng.standard_normal((n, obs_dim)),
                 dones=np.zeros(n, dtype=bool))


def tiny_agent(variant="ddpg", **kwargs):
    cfg = AgentConfig(variant=variant, hidden_sizes=(8, 8), batch_size=16, **kwargs)
    return Agent(cfg, obs_dim=5, action_dim=3, seed=0)


class TestAgentConfig:
    def test_defaults(self):
        cfg = AgentConfig()
        assert (cfg.actor_lr, cfg.critic_lr, cfg.tau) == (5e-3, 1e-3, 5e-4)
        assert (cfg.batch_size, cfg.buffer_capacity) == (2048, 200001)
        assert (cfg.actor_update_period, cfg.critic_update_period) == (2, 1)
        assert cfg.preactivation_penalty == 0.0

    @pytest.mark.parametrize("kwargs,key", [
        ({"variant": "sac"}, "agent.variant"), ({"tau": 0.0}, "agent.tau"),
        ({"gamma": 1.5}, "agent.gamma"), ({"actor_lr": 0.0}, "agent.actor_lr"),
        ({"actor_update_period": 0}, "agent.actor_update_period"),
        ({"hidden_sizes": ()}, "agent.hidden_sizes"),
        ({"preactivation_penalty": -1.0}, "agent.preactivation_penalty"),
    ])
    def test_invalid(self, kwargs, key):
        with pytest.raises(ValueError, match=key):
            AgentConfig(**kwargs)


class TestReplayBuffer:
    def test_fifo_toy(self):
        buf = filled_buffer(3, [1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(buf.stored_rewards(), [2.0, 3.0, 4.0])
        assert buf.mean_reward() == 3.0
        assert len(buf) == 3

    def test_keeps_last_capacity_items_in_order(self):
        buf = filled_buffer(7, list(range(30)))
        np.testing.assert_array_equal(buf.stored_rewards(), np.arange(23, 30))
        assert sorted(buf.states[:, 0]) == list(range(23, 30))

    def test_empty_mean_is_none(self):
        assert ReplayBuffer(4, 1, 1).mean_reward() is None

    def test_incremental_mean_matches_recompute(self):
        rng = np.random.default_rng(0)
        buf = ReplayBuffer(101, 1, 1)
        for r in rng.normal(5.0, 3.0, 5000) * rng.choice([1e-3, 1.0, 1e3], 5000):
            buf.push([0.0], [0.0], r, [0.0], False)
            expected = math.fsum(buf.stored_rewards()) / len(buf)
            assert abs(buf.mean_reward() - expected) <= 1e-12 * max(1.0, abs(expected))

    def test_push_transitions_in_order(self):
        buf = ReplayBuffer(10, 2, 1)
        trs = [Transition(np.full(2, i), np.full(1, i), float(i), np.full(2, i), i == 2)
               for i in range(3)]
        buf.push_transitions(trs)
        np.testing.assert_array_equal(buf.stored_rewards(), [0, 1, 2])
        assert list(buf.dones[:3]) == [False, False, True]

    def test_sample_with_replacement(self):
        buf = filled_buffer(10, [7.0])
        assert len(buf) == 1
        batch = buf.sample(2048, np.random.default_rng(0))
        assert len(batch) == 2048
        np.testing.assert_array_equal(batch.rewards, 7.0)

    def test_sample_deterministic(self):
        buf = filled_buffer(50, np.arange(50.0))
        a = buf.sample(32, np.random.default_rng(4))
        b = buf.sample(32, np.random.default_rng(4))
        np.testing.assert_array_equal(a.states, b.states)

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            ReplayBuffer(10, 2, 1).sample(3, np.random.default_rng(0))

    def test_sampling_is_uniform(self):
        # chi-square over 1e6 draws, 20 cells: mean 19, sd sqrt(38); 3 sigma band
        n_cells = 20
        buf = filled_buffer(n_cells, np.arange(float(n_cells)))
        rng = np.random.default_rng(1)
        counts = np.zeros(n_cells)
        for _ in range(100):
            batch = buf.sample(10_000, rng)
            counts += np.bincount(batch.rewards.astype(int), minlength=n_cells)
        expected = 1e6 / n_cells
        chi2 = np.sum((counts - expected) ** 2 / expected)
        dof = n_cells - 1
        assert abs(chi2 - dof) < 3 * math.sqrt(2 * dof)


class TestTargets:
    def test_td3_worked_example(self):
        assert td3_target(1.0, 2.0, 3.0, 0.99) == pytest.approx(2.98)

    def test_ddpg_bootstraps_always(self):
        np.testing.assert_allclose(ddpg_target([1.0, 2.0], [10.0, 20.0], 0.5), [6.0, 12.0])

    def test_clipped_double_q_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            r, q1, q2 = rng.standard_normal((3, 256)) * 10
            gamma = rng.uniform()
            y = td3_target(r, q1, q2, gamma)
            assert np.all(y <= ddpg_target(r, q1, gamma))
            assert np.all(y <= ddpg_target(r, q2, gamma))

    def test_smoothing_disabled(self):
        mu = np.random.default_rng(0).uniform(-1, 1, (4, 3))
        np.testing.assert_array_equal(smoothed_target_action(mu, 0.0, 0.5, np.random.default_rng(1)), mu)

    def test_smoothing_noise_is_clipped(self):
        mu = np.zeros((10_000, 2))
        a = smoothed_target_action(mu, 10.0, 0.5, np.random.default_rng(2))
        assert np.abs(a).max() == 0.5

    def test_noise_schedule(self):
        cfg = AgentConfig()
        assert noise_schedule(cfg, 0, 300) == 0.1
        assert noise_schedule(cfg, 299, 300) == pytest.approx(0.01)
        assert noise_schedule(cfg, 0, 1) == 0.1
        vals = [noise_schedule(cfg, e, 50) for e in range(50)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestSelectAction:
    def setup_method(self):
        self.agent = tiny_agent()
        self.agent.actor.flat *= 300     # push the head into saturation
        self.obs = np.random.default_rng(0).standard_normal(5)

    def test_deterministic_without_exploration(self):
        a = select_action(self.agent.actor, self.obs, 0.5, None, explore=False)
        b = select_action(self.agent.actor, self.obs, 0.5, None, explore=False)
        np.testing.assert_array_equal(a, b)

    def test_zero_noise(self):
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(select_action(self.agent.actor, self.obs, 0.0, rng),
                                      select_action(self.agent.actor, self.obs, 0.0, None, False))

    def test_huge_noise_clipped(self):
        a = select_action(self.agent.actor, self.obs, 1e6, np.random.default_rng(1))
        assert np.all(np.abs(a) <= 1)


class TestUpdates:
    def test_actor_cadence_over_100_steps(self):
        for variant in ("ddpg", "td3"):
            agent = tiny_agent(variant)
            rng = np.random.default_rng(0)
            actor_before = []
            for _ in range(100):
                before = agent.actor.flat.copy()
                out = agent.update(random_batch(rng, 16, 5, 3))
                actor_before.append(not np.array_equal(before, agent.actor.flat))
                assert "critic_loss" in out
                assert ("actor_loss" in out) == actor_before[-1]
            log = agent.update_log
            assert [s for s, _, _ in log] == list(range(1, 101))
            assert all(c for _, c, _ in log)
            assert [a for _, _, a in log] == [s % 2 == 0 for s in range(1, 101)]
            assert actor_before == [s % 2 == 0 for s in range(1, 101)]
            assert agent.actor_updates == 50 and agent.critic_updates == 100

    def test_hard_target_copy_with_tau_one(self):
        agent = tiny_agent(tau=1.0)
        rng = np.random.default_rng(0)
        agent.update(random_batch(rng, 16, 5, 3))
        np.testing.assert_array_equal(agent.critic_targets[0].flat, agent.critics[0].flat)
        agent.update(random_batch(rng, 16, 5, 3))
        np.testing.assert_array_equal(agent.actor_target.flat, agent.actor.flat)

    def test_ddpg_targets_follow_their_own_updates(self):
        agent = tiny_agent(tau=0.1)
        rng = np.random.default_rng(1)
        actor_target = agent.actor_target.flat.copy()
        critic_target = agent.critic_targets[0].flat.copy()
        agent.update(random_batch(rng, 16, 5, 3))   # critic only
        np.testing.assert_array_equal(agent.actor_target.flat, actor_target)
        np.testing.assert_allclose(agent.critic_targets[0].flat,
                                   0.9 * critic_target + 0.1 * agent.critics[0].flat, rtol=1e-12)

    def test_td3_delays_critic_targets(self):
        agent = tiny_agent("td3", tau=0.1)
        rng = np.random.default_rng(2)
        before = [t.flat.copy() for t in agent.critic_targets]
        agent.update(random_batch(rng, 16, 5, 3))
        for t, b in zip(agent.critic_targets, before):
            np.testing.assert_array_equal(t.flat, b)
        agent.update(random_batch(rng, 16, 5, 3))
        for t, b, c in zip(agent.critic_targets, before, agent.critics):
            np.testing.assert_allclose(t.flat, 0.9 * b + 0.1 * c.flat, rtol=1e-12)

    def test_td3_has_two_independent_critics(self):
        agent = tiny_agent("td3")
        assert len(agent.critics) == 2 and len(agent.critic_targets) == 2
        assert not np.array_equal(agent.critics[0].flat, agent.critics[1].flat)
        assert len(tiny_agent("ddpg").critics) == 1

    @pytest.mark.parametrize("variant", ["ddpg", "td3"])
    def test_gamma_zero_regresses_to_reward(self, variant):
        cfg = AgentConfig(variant=variant, hidden_sizes=(16,), gamma=0.0, critic_lr=1e-2,
                          actor_lr=1e-4, batch_size=32)
        agent = Agent(cfg, obs_dim=4, action_dim=2, seed=3)
        batch = random_batch(np.random.default_rng(5), 32, 4, 2)
        for _ in range(1500):
            agent.update(batch)
        for critic in agent.critics:
            q = agent.q_values(critic, batch.states, batch.actions)
            assert abs(q.mean() - batch.rewards.mean()) < 1e-3

    def test_actor_ascends_critic(self):
        # fixed quadratic critic landscape: the actor should move its output up the gradient
        agent = tiny_agent(actor_lr=1e-2, critic_lr=1e-12)
        states = np.random.default_rng(6).standard_normal((16, 5))
        q0 = agent.q_values(agent.critics[0], states, agent.act(states)).mean()
        for _ in range(20):
            agent._actor_step(states)
        q1 = agent.q_values(agent.critics[0], states, agent.act(states)).mean()
        assert q1 > q0

    def test_preactivation_penalty_limits_saturation(self):
        def head_magnitude(lam):
            agent = tiny_agent(actor_lr=5e-2, preactivation_penalty=lam)
            states = np.random.default_rng(7).standard_normal((16, 5))
            for _ in range(200):
                agent._actor_step(states)
            _, cache = forward(agent.actor, states)
            return np.abs(cache.pre[-1]).mean()

        assert head_magnitude(1.0) < head_magnitude(0.0)

    def test_load_networks_round_trip_and_mismatch(self):
        a, b = tiny_agent(), Agent(AgentConfig(hidden_sizes=(8, 8)), 5, 3, seed=9)
        b.load_networks(a.networks(), a.optimizers())
        np.testing.assert_array_equal(a.actor.flat, b.actor.flat)
        other = Agent(AgentConfig(hidden_sizes=(4,)), 5, 3, seed=0)
        with pytest.raises(ValueError, match="layers"):
            other.load_networks(a.networks())
        with pytest.raises(ValueError, match="lacks"):
            tiny_agent("td3").load_networks(a.networks())

    def test_seeded_agents_identical(self):
        rng1, rng2 = np.random.default_rng(0), np.random.default_rng(0)
        a, b = tiny_agent("td3"), tiny_agent("td3")
        for _ in range(10):
            a.update(random_batch(rng1, 16, 5, 3))
            b.update(random_batch(rng2, 16, 5, 3))
        for name, p in a.networks().items():
            np.testing.assert_array_equal(p.flat, b.networks()[name].flat)
