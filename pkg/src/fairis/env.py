"""Episodic duplex RIS environment and its vectorised multi-instance form.

A :class:`VectorEnv` advances ``n`` independent instances in lockstep.  Each
instance owns its random generator (placement and channel draws), so the
trajectories depend only on the per-instance seeds, never on how the batch is
evaluated.  :class:`RISEnv` is the single-instance view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .geometry import (BeamformerState, ChannelRealization, SceneConfig, ScenePlacement,
                       ShapeMismatchError, downlink_sinr, draw_channels, path_gain,
                       place_ues, uplink_sinr)
from .rewards import (REWARD_NAMES, RateReport, ThresholdConfig, all_rewards, jain_fairness,
                      secrecy_rate)

__all__ = [
    "EnvConfig",
    "ActionLayout",
    "ObservationLayout",
    "Transition",
    "StepResult",
    "StepAfterDoneError",
    "decode_action",
    "VectorEnv",
    "RISEnv",
    "vector_rollout",
]


class StepAfterDoneError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    decisive_reward: str = "baseline"
    steps_per_episode: int = 250
    redraw_channels_each_step: bool = False

    def __post_init__(self):
        if self.decisive_reward not in REWARD_NAMES:
            raise ValueError(f"env.decisive_reward must be one of {REWARD_NAMES}, "
                             f"got {self.decisive_reward!r}")
        if self.steps_per_episode < 1:
            raise ValueError("env.steps_per_episode must be >= 1")


@dataclass(frozen=True)
class ActionLayout:
    """Raw action = [Re W (Nt*k, row-major) | Im W (Nt*k) | RIS phases (N)], each in [-1, 1]."""

    nt: int
    k: int
    n_ris: int

    @classmethod
    def from_scene(cls, scene: SceneConfig) -> "ActionLayout":
        return cls(scene.nt, scene.k, scene.n_ris)

    @property
    def dim(self) -> int:
        return 2 * self.nt * self.k + self.n_ris

    @property
    def w_real(self) -> slice:
        return slice(0, self.nt * self.k)

    @property
    def w_imag(self) -> slice:
        return slice(self.nt * self.k, 2 * self.nt * self.k)

    @property
    def phases(self) -> slice:
        return slice(2 * self.nt * self.k, self.dim)


@dataclass(frozen=True)
class ObservationLayout:
    """[Re G | Im G | Re h_ru | Im h_ru | previous raw action | previous D | previous U | previous reward].

    Channel blocks are divided by the amplitude of a reference path gain so
    their entries are O(1).
    """

    nt: int
    k: int
    n_ris: int

    @classmethod
    def from_scene(cls, scene: SceneConfig) -> "ObservationLayout":
        return cls(scene.nt, scene.k, scene.n_ris)

    @property
    def action_dim(self) -> int:
        return 2 * self.nt * self.k + self.n_ris

    @property
    def dim(self) -> int:
        n, nt, k = self.n_ris, self.nt, self.k
        return 2 * n * nt + 2 * n * k + self.action_dim + 2 * k + 1

    @property
    def sections(self) -> dict[str, slice]:
        n, nt, k = self.n_ris, self.nt, self.k
        sizes = [("g_real", n * nt), ("g_imag", n * nt), ("h_real", k * n), ("h_imag", k * n),
                 ("prev_action", self.action_dim), ("prev_d", k), ("prev_u", k), ("prev_reward", 1)]
        out, start = {}, 0
        for name, size in sizes:
            out[name] = slice(start, start + size)
            start += size
        return out


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class StepResult:
    observation: np.ndarray          # (n, obs_dim)
    reward: np.ndarray               # (n,) decisive reward
    rewards: dict[str, np.ndarray]   # informative rewards, each (n,)
    report: RateReport               # d, u of shape (n, k)
    jfi: np.ndarray                  # (n,) Jain index of the per-user rate sums
    done: bool


def decode_action(raw: np.ndarray, scene: SceneConfig) -> BeamformerState:
    """Map raw actions in [-1, 1]^dim (any leading batch shape) to W and RIS phases.

    Phases are affine in the raw value, ``pi * (raw + 1)`` wrapped into
    [0, 2 pi).  W = sqrt(p_max) (Re + j Im) and is rescaled onto the power
    sphere whenever its squared Frobenius norm exceeds ``p_max``.
    """
    layout = ActionLayout.from_scene(scene)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != layout.dim:
        raise ShapeMismatchError(f"action length {raw.shape[-1]} != {layout.dim}")
    raw = np.clip(raw, -1.0, 1.0)
    batch = raw.shape[:-1]
    phi = np.mod(np.pi * (raw[..., layout.phases] + 1.0), 2.0 * np.pi)
    w = math.sqrt(scene.p_max) * (raw[..., layout.w_real] + 1j * raw[..., layout.w_imag])
    w = w.reshape(batch + (scene.nt, scene.k))
    power = np.sum(np.abs(w) ** 2, axis=(-2, -1), keepdims=True)
    scale = np.where(power > scene.p_max, np.sqrt(scene.p_max / np.where(power > 0, power, 1.0)), 1.0)
    return BeamformerState(w=w * scale, phi=phi)


class VectorEnv:
    """``n`` independent environment instances stepped together."""

    def __init__(self, config: EnvConfig, seeds: Sequence[int | np.random.SeedSequence]):
        if len(seeds) < 1:
            raise ValueError("need at least one instance")
        self.config = config
        self.scene = config.scene
        self.n = len(seeds)
        self.rngs = [np.random.default_rng(s) for s in seeds]
        self.action_layout = ActionLayout.from_scene(self.scene)
        self.obs_layout = ObservationLayout.from_scene(self.scene)
        sc = self.scene
        self._g_scale = 1.0 / math.sqrt(float(path_gain(
            sc, math.dist(sc.bs_position, sc.ris_position), sc.pathloss_exp_bs_ris)))
        centre = (np.mean(sc.ue_x_range), np.mean(sc.ue_y_range))
        self._h_scale = 1.0 / math.sqrt(float(path_gain(
            sc, math.dist(sc.ris_position, centre), sc.pathloss_exp_ris_ue)))
        self.placements: list[ScenePlacement] = []
        self.g = np.zeros((self.n, sc.n_ris, sc.nt), dtype=complex)
        self.h_ru = np.zeros((self.n, sc.k, sc.n_ris), dtype=complex)
        self.episode = -1
        self.t = 0
        self._done = True
        self._prev = np.zeros((self.n, self.action_layout.dim + 2 * sc.k + 1))

    @property
    def obs_dim(self) -> int:
        return self.obs_layout.dim

    @property
    def action_dim(self) -> int:
        return self.action_layout.dim

    @property
    def done(self) -> bool:
        return self._done

    def channel(self, i: int) -> ChannelRealization:
        return ChannelRealization(g=self.g[i].copy(), h_ru=self.h_ru[i].copy(), drawn_at=self.episode)

    def _draw(self) -> None:
        for i, rng in enumerate(self.rngs):
            ch = draw_channels(self.scene, self.placements[i], rng, drawn_at=self.episode)
            self.g[i] = ch.g
            self.h_ru[i] = ch.h_ru

    def reset(self, seeds: Sequence[int | np.random.SeedSequence] | None = None) -> np.ndarray:
        if seeds is not None:
            if len(seeds) != self.n:
                raise ValueError(f"expected {self.n} seeds")
            self.rngs = [np.random.default_rng(s) for s in seeds]
        self.episode += 1
        self.placements = [place_ues(self.scene, rng) for rng in self.rngs]
        self._draw()
        self._prev[...] = 0.0
        self.t = 0
        self._done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        n = self.n
        g = self.g.reshape(n, -1) * self._g_scale
        h = self.h_ru.reshape(n, -1) * self._h_scale
        return np.concatenate([g.real, g.imag, h.real, h.imag, self._prev], axis=1)

    def evaluate(self, beam: BeamformerState) -> RateReport:
        sc = self.scene
        sinr_d = downlink_sinr(self.g, self.h_ru, beam.w, beam.phi, sc.noise_dl)
        sinr_u = uplink_sinr(self.g, self.h_ru, beam.phi, sc.p_ue, sc.noise_ul)
        return RateReport(d=np.log2(1.0 + sinr_d), u=np.log2(1.0 + sinr_u))

    def step(self, raw_actions: np.ndarray) -> StepResult:
        if self._done:
            raise StepAfterDoneError("step() called on a finished episode; call reset()")
        raw_actions = np.asarray(raw_actions, dtype=np.float64)
        if raw_actions.shape != (self.n, self.action_dim):
            raise ShapeMismatchError(f"actions {raw_actions.shape} != {(self.n, self.action_dim)}")
        if self.config.redraw_channels_each_step and self.t > 0:
            self._draw()
        clipped = np.clip(raw_actions, -1.0, 1.0)
        beam = decode_action(clipped, self.scene)
        report = self.evaluate(beam)
        rewards = {name: np.asarray(v, dtype=np.float64)
                   for name, v in all_rewards(report, self.config.thresholds).items()}
        decisive = rewards[self.config.decisive_reward]
        k = self.scene.k
        self._prev[:, :self.action_dim] = clipped
        self._prev[:, self.action_dim:self.action_dim + k] = report.d
        self._prev[:, self.action_dim + k:self.action_dim + 2 * k] = report.u
        self._prev[:, -1] = decisive
        self.t += 1
        self._done = self.t >= self.config.steps_per_episode
        return StepResult(observation=self.observe(), reward=decisive.copy(), rewards=rewards,
                          report=report, jfi=np.atleast_1d(jain_fairness(secrecy_rate(report))),
                          done=self._done)


class RISEnv:
    """Single-instance environment with unbatched observations and actions."""

    def __init__(self, config: EnvConfig, seed: int | np.random.SeedSequence = 0):
        self._venv = VectorEnv(config, [seed])
        self.config = config

    @property
    def obs_dim(self) -> int:
        return self._venv.obs_dim

    @property
    def action_dim(self) -> int:
        return self._venv.action_dim

    @property
    def t(self) -> int:
        return self._venv.t

    @property
    def done(self) -> bool:
        return self._venv.done

    @property
    def placement(self) -> ScenePlacement:
        return self._venv.placements[0]

    @property
    def channel(self) -> ChannelRealization:
        return self._venv.channel(0)

    def reset(self, seed: int | np.random.SeedSequence | None = None) -> np.ndarray:
        return self._venv.reset(None if seed is None else [seed])[0]

    def step(self, raw_action: np.ndarray) -> tuple[np.ndarray, float, dict[str, float], bool, dict]:
        """Returns ``(observation, decisive_reward, informative_rewards, done, info)``."""
        res = self._venv.step(np.asarray(raw_action, dtype=np.float64)[None, :])
        rewards = {name: float(v[0]) for name, v in res.rewards.items()}
        info = {"report": RateReport(d=res.report.d[0], u=res.report.u[0]), "jfi": float(res.jfi[0])}
        return res.observation[0], float(res.reward[0]), rewards, res.done, info


Policy = Callable[[np.ndarray], np.ndarray]


def vector_rollout(venv: VectorEnv, policy: Policy, noise_std: float,
                   noise_rngs: Sequence[np.random.Generator] | None = None,
                   observation: np.ndarray | None = None
                   ) -> Iterator[tuple[list[Transition], StepResult]]:
    """Run one episode on every instance, yielding each step-round's transitions.

    Transitions of a round come in instance order; rounds come in step order.
    Exploration noise for instance ``i`` is drawn from ``noise_rngs[i]`` only.
    ``policy`` maps an ``(n, obs_dim)`` batch to ``(n, action_dim)`` actions
    and is re-invoked every round, so parameter updates made by the consumer
    between rounds take effect immediately.
    """
    obs = venv.reset() if observation is None else observation
    while not venv.done:
        actions = np.asarray(policy(obs), dtype=np.float64)
        if noise_std > 0:
            if noise_rngs is None or len(noise_rngs) != venv.n:
                raise ValueError("exploration needs one noise generator per instance")
            noise = np.stack([r.normal(0.0, noise_std, venv.action_dim) for r in noise_rngs])
            actions = actions + noise
        actions = np.clip(actions, -1.0, 1.0)
        res = venv.step(actions)
        batch = [Transition(state=obs[i], action=actions[i], reward=float(res.reward[i]),
                            next_state=res.observation[i], done=res.done)
                 for i in range(venv.n)]
        yield batch, res
        obs = res.observation
