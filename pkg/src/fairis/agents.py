"""Deterministic-policy actor-critic agents (DDPG, TD3) with FIFO experience replay.

Update results only carry the losses of the networks actually updated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import Transition
from .nn import (AdamState, DenseNetworkSpec, ParameterSet, adam_step, forward, gradient,
                 init_params, soft_update)

__all__ = [
    "AgentConfig",
    "ReplayBuffer",
    "Batch",
    "InsufficientDataError",
    "TrainingDivergedError",
    "Agent",
    "select_action",
    "ddpg_target",
    "td3_target",
    "smoothed_target_action",
    "ddpg_update",
    "td3_update",
    "noise_schedule",
]

log = logging.getLogger(__name__)

VARIANTS = ("ddpg", "td3")


class InsufficientDataError(RuntimeError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    variant: str = "ddpg"
    actor_lr: float = 5e-3
    critic_lr: float = 1e-3
    tau: float = 5e-4
    batch_size: int = 2048
    buffer_capacity: int = 200001
    actor_update_period: int = 2
    critic_update_period: int = 1
    gamma: float = 0.99
    noise_std_start: float = 0.1
    noise_std_end: float = 0.01
    target_noise_std: float = 0.2
    target_noise_clip: float = 0.5
    hidden_sizes: tuple[int, ...] = (256, 256)
    # weight of mean(sum(z^2)) on the actor's pre-tanh outputs z; 0 disables
    preactivation_penalty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.variant not in VARIANTS:
            raise ValueError(f"agent.variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("actor_lr", "critic_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"agent.{name} must be > 0")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("agent.tau must lie in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("agent.gamma must lie in [0, 1]")
        for name in ("batch_size", "buffer_capacity", "actor_update_period", "critic_update_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"agent.{name} must be >= 1")
        for name in ("noise_std_start", "noise_std_end", "target_noise_std", "target_noise_clip",
                     "preactivation_penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"agent.{name} must be >= 0")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("agent.hidden_sizes must be a non-empty list of positive widths")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with an exact running reward mean.

    The reward sum is kept with Neumaier compensation, so the incremental
    mean tracks the mean recomputed from the stored rewards to round-off.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0
        self._sum = 0.0
        self._comp = 0.0

    def __len__(self) -> int:
        return self.size

    def _accumulate(self, x: float) -> None:
        s = self._sum + x
        if abs(self._sum) >= abs(x):
            self._comp += (self._sum - s) + x
        else:
            self._comp += (x - s) + self._sum
        self._sum = s

    def push(self, state, action, reward: float, next_state, done: bool) -> None:
        i = self._next
        if self.size == self.capacity:
            self._accumulate(-float(self.rewards[i]))
        else:
            self.size += 1
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self._accumulate(float(reward))
        self._next = (i + 1) % self.capacity

    def push_transitions(self, transitions: Sequence[Transition]) -> None:
        for tr in transitions:
            self.push(tr.state, tr.action, tr.reward, tr.next_state, tr.done)

    def stored_rewards(self) -> np.ndarray:
        """Stored rewards, oldest first."""
        if self.size < self.capacity:
            return self.rewards[:self.size].copy()
        return np.concatenate([self.rewards[self._next:], self.rewards[:self._next]])

    def mean_reward(self) -> float | None:
        """Mean of the stored rewards; ``None`` while the buffer is empty."""
        if self.size == 0:
            return None
        return (self._sum + self._comp) / self.size

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sampling with replacement from a non-empty buffer.

        Any batch size is allowed; the training loop itself waits until the
        buffer holds a full batch before learning.
        """
        if self.size == 0:
            raise InsufficientDataError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])


def ddpg_target(rewards, q_next, gamma: float) -> np.ndarray:
    # time-limit truncation only: always bootstrap
    return np.asarray(rewards) + gamma * np.asarray(q_next)


def td3_target(rewards, q1_next, q2_next, gamma: float) -> np.ndarray:
    return np.asarray(rewards) + gamma * np.minimum(q1_next, q2_next)


def smoothed_target_action(mu_next: np.ndarray, std: float, clip: float,
                           rng: np.random.Generator) -> np.ndarray:
    noise = np.clip(rng.normal(0.0, std, size=mu_next.shape), -clip, clip) if std > 0 else 0.0
    return np.clip(mu_next + noise, -1.0, 1.0)


def noise_schedule(config: AgentConfig, episode: int, n_episodes: int) -> float:
    """Exploration std decayed linearly from start to end over the run."""
    if n_episodes <= 1:
        return config.noise_std_start
    frac = min(max(episode / (n_episodes - 1), 0.0), 1.0)
    return config.noise_std_start + frac * (config.noise_std_end - config.noise_std_start)


class Agent:
    """Actor, one (DDPG) or two (TD3) critics, their targets and optimizers."""

    def __init__(self, config: AgentConfig, obs_dim: int, action_dim: int,
                 seed: int | np.random.SeedSequence = 0):
        self.config = config
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        init_seq, noise_seq = seed.spawn(2)
        init_rng = np.random.default_rng(init_seq)
        self.rng = np.random.default_rng(noise_seq)   # target-policy smoothing
        hidden = config.hidden_sizes
        self.actor_spec = DenseNetworkSpec((obs_dim, *hidden, action_dim), output_activation="tanh")
        self.critic_spec = DenseNetworkSpec((obs_dim + action_dim, *hidden, 1))
        self.actor = init_params(self.actor_spec, init_rng, final_scale=1e-3)
        n_critics = 2 if config.variant == "td3" else 1
        self.critics = [init_params(self.critic_spec, init_rng) for _ in range(n_critics)]
        self.actor_target = self.actor.copy()
        self.critic_targets = [c.copy() for c in self.critics]
        self.actor_opt = AdamState.zeros_like(self.actor)
        self.critic_opts = [AdamState.zeros_like(c) for c in self.critics]
        self.learner_steps = 0
        self.critic_updates = 0
        self.actor_updates = 0
        self.update_log: list[tuple[int, bool, bool]] = []

    # -- inference -----------------------------------------------------------
    def act(self, obs: np.ndarray, params: ParameterSet | None = None) -> np.ndarray:
        return forward(params or self.actor, obs)[0]

    def q_values(self, critic: ParameterSet, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return forward(critic, np.concatenate([states, actions], axis=-1))[0][..., 0]

    # -- learning ------------------------------------------------------------
    def update(self, batch: Batch) -> dict[str, float]:
        if self.config.variant == "td3":
            return td3_update(self, batch)
        return ddpg_update(self, batch)

    def _critic_step(self, idx: int, batch: Batch, y: np.ndarray) -> float:
        critic = self.critics[idx]
        q, cache = forward(critic, np.concatenate([batch.states, batch.actions], axis=1))
        err = q[:, 0] - y
        upstream = (2.0 / len(y)) * err[:, None]
        g, _ = gradient(critic, cache, upstream, input_grad=False)
        adam_step(critic, self.critic_opts[idx], g, self.config.critic_lr)
        return float(np.mean(err * err))

    def _actor_step(self, states: np.ndarray) -> float:
        a, a_cache = forward(self.actor, states)
        q, q_cache = forward(self.critics[0], np.concatenate([states, a], axis=1))
        upstream = np.full_like(q, -1.0 / len(states))     # ascend mean Q
        _, d_input = gradient(self.critics[0], q_cache, upstream)
        lam = self.config.preactivation_penalty
        pre_up = None
        loss = float(-np.mean(q))
        if lam > 0:
            z = a_cache.pre[-1]
            pre_up = (2.0 * lam / len(states)) * z
            loss += lam * float(np.mean(np.sum(z * z, axis=1)))
        g, _ = gradient(self.actor, a_cache, d_input[:, self.obs_dim:], input_grad=False,
                        pre_upstream=pre_up)
        adam_step(self.actor, self.actor_opt, g, self.config.actor_lr)
        return loss

    def _advance(self) -> tuple[bool, bool]:
        """Counts one learner step; returns whether critic / actor update on it."""
        cfg = self.config
        self.learner_steps += 1
        do_critic = self.learner_steps % cfg.critic_update_period == 0
        do_actor = False
        if do_critic:
            self.critic_updates += 1
            do_actor = self.critic_updates % cfg.actor_update_period == 0
        if do_actor:
            self.actor_updates += 1
        self.update_log.append((self.learner_steps, do_critic, do_actor))
        return do_critic, do_actor

    def networks(self) -> dict[str, ParameterSet]:
        nets = {"actor": self.actor, "actor_target": self.actor_target}
        for i, (c, t) in enumerate(zip(self.critics, self.critic_targets), start=1):
            nets[f"critic{i}"] = c
            nets[f"critic{i}_target"] = t
        return nets

    def optimizers(self) -> dict[str, AdamState]:
        opts = {"actor": self.actor_opt}
        for i, s in enumerate(self.critic_opts, start=1):
            opts[f"critic{i}"] = s
        return opts

    def load_networks(self, networks: dict[str, ParameterSet],
                      optimizers: dict[str, AdamState] | None = None) -> None:
        for name, params in self.networks().items():
            if name not in networks:
                raise ValueError(f"checkpoint lacks network {name!r}")
            src = networks[name]
            if src.spec.layer_sizes != params.spec.layer_sizes:
                raise ValueError(f"network {name!r} has layers {src.spec.layer_sizes}, "
                                 f"expected {params.spec.layer_sizes}")
            params.flat[...] = src.flat
        if optimizers:
            self.actor_opt = optimizers.get("actor", self.actor_opt)
            self.critic_opts = [optimizers.get(f"critic{i}", s)
                                for i, s in enumerate(self.critic_opts, start=1)]


def select_action(actor: ParameterSet, observation: np.ndarray, noise_std: float,
                  rng: np.random.Generator | None, explore: bool = True) -> np.ndarray:
    """``clip(actor(obs) + N(0, noise_std^2), -1, 1)``; deterministic when not exploring."""
    a = forward(actor, observation)[0]
    if explore and noise_std > 0:
        a = a + rng.normal(0.0, noise_std, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def ddpg_update(agent: Agent, batch: Batch) -> dict[str, float]:
    cfg = agent.config
    do_critic, do_actor = agent._advance()
    out: dict[str, float] = {}
    if do_critic:
        mu_next = agent.act(batch.next_states, agent.actor_target)
        q_next = agent.q_values(agent.critic_targets[0], batch.next_states, mu_next)
        y = ddpg_target(batch.rewards, q_next, cfg.gamma)
        out["critic_loss"] = agent._critic_step(0, batch, y)
        soft_update(agent.critic_targets[0], agent.critics[0], cfg.tau)
    if do_actor:
        out["actor_loss"] = agent._actor_step(batch.states)
        soft_update(agent.actor_target, agent.actor, cfg.tau)
    return out


def td3_update(agent: Agent, batch: Batch) -> dict[str, float]:
    cfg = agent.config
    do_critic, do_actor = agent._advance()
    out: dict[str, float] = {}
    if do_critic:
        mu_next = agent.act(batch.next_states, agent.actor_target)
        a_next = smoothed_target_action(mu_next, cfg.target_noise_std, cfg.target_noise_clip,
                                        agent.rng)
        q1 = agent.q_values(agent.critic_targets[0], batch.next_states, a_next)
        q2 = agent.q_values(agent.critic_targets[1], batch.next_states, a_next)
        y = td3_target(batch.rewards, q1, q2, cfg.gamma)
        losses = [agent._critic_step(i, batch, y) for i in range(2)]
        out["critic_loss"] = float(np.mean(losses))
    if do_actor:
        out["actor_loss"] = agent._actor_step(batch.states)
        soft_update(agent.actor_target, agent.actor, cfg.tau)
        for target, online in zip(agent.critic_targets, agent.critics):
            soft_update(target, online, cfg.tau)
    return out
