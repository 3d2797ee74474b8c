"""Training, evaluation and beam-pattern extraction driven by a :class:`RunConfig`.

Seeding: the master seed feeds one ``SeedSequence`` whose children are, in
order, the per-instance environment seeds, the per-instance exploration-noise
seeds, the agent seed and the replay-sampling seed.  Everything downstream is
a pure function of the master seed and the config.
"""

from __future__ import annotations

import datetime as _dt
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .agents import Agent, ReplayBuffer, TrainingDivergedError, noise_schedule
from .config import RunConfig
from .env import RISEnv, VectorEnv, decode_action, vector_rollout
from .geometry import bearing, beam_pattern
from .nn import load_checkpoint, save_checkpoint
from .rewards import REWARD_NAMES
from .telemetry import EpisodeLog, MetricStore, RunManifest, export, jfi_at_best

__all__ = [
    "RunSeeds",
    "TrainResult",
    "train",
    "evaluate",
    "beam_patterns",
    "load_agent",
    "CHECKPOINT_NAME",
]

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.json"


@dataclass
class RunSeeds:
    env: list[np.random.SeedSequence]
    noise: list[np.random.SeedSequence]
    agent: np.random.SeedSequence
    sampling: np.random.SeedSequence

    @classmethod
    def from_master(cls, master_seed: int, n_envs: int) -> "RunSeeds":
        children = np.random.SeedSequence(master_seed).spawn(2 * n_envs + 2)
        return cls(env=children[:n_envs], noise=children[n_envs:2 * n_envs],
                   agent=children[2 * n_envs], sampling=children[2 * n_envs + 1])


@dataclass
class TrainResult:
    config: RunConfig
    agent: Agent
    store: MetricStore
    buffer: ReplayBuffer
    transitions: int = 0
    files: list[str] = field(default_factory=list)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _checkpoint_meta(cfg: RunConfig, episode: int) -> dict:
    return {"episode": episode, "config": cfg.to_flat(), "version": __version__}


def train(cfg: RunConfig, output_dir: str | os.PathLike | None = None, svg: bool = False,
          progress=None) -> TrainResult:
    """Run the full training protocol.

    Every lockstep round pushes one transition per instance (instance order),
    records telemetry, then performs one learner step once the buffer holds a
    full batch.  Raises :class:`TrainingDivergedError` on a non-finite loss.
    """
    started = _now()
    seeds = RunSeeds.from_master(cfg.master_seed, cfg.parallel_envs)
    venv = VectorEnv(cfg.env, seeds.env)
    noise_rngs = [np.random.default_rng(s) for s in seeds.noise]
    sample_rng = np.random.default_rng(seeds.sampling)
    agent = Agent(cfg.agent, venv.obs_dim, venv.action_dim, seeds.agent)
    buffer = ReplayBuffer(cfg.agent.buffer_capacity, venv.obs_dim, venv.action_dim)
    store = MetricStore(cfg.decisive_reward, env_steps_per_timestep=cfg.parallel_envs)
    result = TrainResult(cfg, agent, store, buffer)
    if output_dir is not None:
        os.makedirs(output_dir, exist_ok=True)

    for episode in range(cfg.episodes):
        noise_std = noise_schedule(cfg.agent, episode, cfg.episodes)
        for step, (transitions, res) in enumerate(
                vector_rollout(venv, agent.act, noise_std, noise_rngs)):
            buffer.push_transitions(transitions)
            result.transitions += len(transitions)
            store.record_round(episode, step, res.rewards, res.jfi, buffer.mean_reward())
            if len(buffer) >= cfg.agent.batch_size:
                losses = agent.update(buffer.sample(cfg.agent.batch_size, sample_rng))
                bad = [k for k, v in losses.items() if not math.isfinite(v)]
                if bad:
                    raise TrainingDivergedError(
                        f"non-finite {', '.join(bad)} at episode {episode}, step {step} "
                        f"(learner step {agent.learner_steps}): {losses}")
        store.close_episode()
        if progress is not None:
            progress(episode, store)
        if output_dir is not None and (episode + 1) % cfg.checkpoint_interval == 0:
            save_checkpoint(os.path.join(output_dir, CHECKPOINT_NAME), agent.networks(),
                            agent.optimizers(), _checkpoint_meta(cfg, episode))

    if output_dir is not None:
        save_checkpoint(os.path.join(output_dir, CHECKPOINT_NAME), agent.networks(),
                        agent.optimizers(), _checkpoint_meta(cfg, cfg.episodes - 1))
        manifest = RunManifest(master_seed=cfg.master_seed, config=cfg.to_flat(),
                               version=__version__, started_at=started,
                               files=[CHECKPOINT_NAME],
                               notes={"label": cfg.label,
                                      "timestep_env_steps": cfg.parallel_envs,
                                      "transitions": result.transitions,
                                      "learner_steps": agent.learner_steps,
                                      "actor_updates": agent.actor_updates})
        manifest.finished_at = _now()
        result.files = export(store, manifest, output_dir, svg=svg)
    return result


def load_agent(cfg: RunConfig, checkpoint: str | os.PathLike) -> Agent:
    networks, optimizers, _ = load_checkpoint(checkpoint)
    agent = Agent(cfg.agent, cfg.obs_dim, cfg.action_dim, 0)
    agent.load_networks(networks, optimizers)
    return agent


def evaluate(cfg: RunConfig, agent: Agent, n_episodes: int, seed: int | None = None) -> dict:
    """Exploration-free rollouts on fresh instances.

    Returns mean and standard deviation (over instance-episodes) of the
    per-episode mean baseline reward, mean JFI and JFI at the best decisive
    step, plus the same for every reward family.
    """
    seed = cfg.master_seed if seed is None else seed
    seeds = np.random.SeedSequence([seed, 0x5EED]).spawn(cfg.parallel_envs)
    venv = VectorEnv(cfg.env, seeds)
    per_episode: dict[str, list[float]] = {f"reward_{n}": [] for n in REWARD_NAMES}
    per_episode["mean_jfi"] = []
    per_episode["jfi_at_best"] = []
    rounds_needed = math.ceil(n_episodes / venv.n)
    for _ in range(rounds_needed):
        sums = {n: np.zeros(venv.n) for n in REWARD_NAMES}
        jfi_sum = np.zeros(venv.n)
        decisive, ds, us = [], [], []
        for _, res in vector_rollout(venv, agent.act, 0.0):
            for n in REWARD_NAMES:
                sums[n] += res.rewards[n]
            jfi_sum += res.jfi
            decisive.append(res.reward)
            ds.append(res.report.d)
            us.append(res.report.u)
        steps = cfg.steps_per_episode
        decisive, ds, us = np.array(decisive), np.array(ds), np.array(us)
        for i in range(venv.n):
            if len(per_episode["mean_jfi"]) >= n_episodes:
                break
            for n in REWARD_NAMES:
                per_episode[f"reward_{n}"].append(sums[n][i] / steps)
            per_episode["mean_jfi"].append(jfi_sum[i] / steps)
            per_episode["jfi_at_best"].append(
                jfi_at_best(EpisodeLog(decisive[:, i], ds[:, i], us[:, i])))
    out = {"episodes": n_episodes}
    for name, vals in per_episode.items():
        out[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    return out


def beam_patterns(cfg: RunConfig, agent: Agent, episode_seed: int,
                  n_angles: int = 360) -> dict:
    """Reset one instance, take one deterministic step and compute power patterns.

    Returns the angle grid (radians, 1-degree steps over the full circle),
    the patterns keyed ``bs_dl_ue{i}``, ``ris_dl_ue{i}``, ``ris_ul_ue{i}``,
    and the true bearings of each UE (and of the BS) seen from the RIS.
    """
    env = RISEnv(cfg.env, seed=episode_seed)
    obs = env.reset()
    action = np.clip(agent.act(obs), -1.0, 1.0)
    beam = decode_action(action, cfg.scene)
    channel = env.channel
    sc = cfg.scene
    angles = np.deg2rad(np.arange(n_angles) * (360.0 / n_angles) - 180.0)
    reflect = np.exp(1j * beam.phi)
    patterns = {}
    for i in range(sc.k):
        w_i = beam.w[:, i]
        patterns[f"bs_dl_ue{i}"] = beam_pattern(w_i, sc.element_spacing, angles)
        patterns[f"ris_dl_ue{i}"] = beam_pattern(reflect * (channel.g @ w_i), sc.element_spacing, angles)
        patterns[f"ris_ul_ue{i}"] = beam_pattern(reflect * channel.h_ru[i], sc.element_spacing, angles)
    bearings = {f"ue{i}": bearing(sc.ris_position, pos, sc.ris_orientation_deg)
                for i, pos in enumerate(env.placement.ue_positions)}
    bearings["bs"] = bearing(sc.ris_position, sc.bs_position, sc.ris_orientation_deg)
    bearings["ris_from_bs"] = bearing(sc.bs_position, sc.ris_position, sc.bs_orientation_deg)
    return {"angles": angles, "patterns": patterns, "bearings": bearings,
            "ue_positions": env.placement.ue_positions}
