"""Training metric streams: recording, smoothing and export.

Series written by a training run (one ``x,raw,smoothed`` CSV each):

=====================  ==========  ======  =========================================
name                   x unit      window  content
=====================  ==========  ======  =========================================
buffer_mean_reward     timestep    10      mean decisive reward held in the replay buffer
reward_baseline        episode     10      per-episode mean sum rate
reward_qos             episode     10      per-episode mean QoS reward
reward_fqos            episode     10      per-episode mean FQoS reward
mean_jfi               episode     50      per-episode mean Jain index of user rates
jfi_at_best            episode     50      Jain index at each instance's best decisive step,
                                           averaged over parallel instances
=====================  ==========  ======  =========================================

A timestep is one lockstep round of the parallel environments (one learner
step); it spans ``parallel_envs`` environment steps.  When the store knows
that span, the buffer mean is also written against environment steps as
``buffer_mean_reward_env_steps.csv``.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rewards import REWARD_NAMES, RateReport, jain_fairness, secrecy_rate

__all__ = [
    "MetricSeries",
    "MetricStore",
    "EpisodeLog",
    "RunManifest",
    "rolling_mean",
    "jfi_at_best",
    "export",
    "write_series_csv",
    "read_series_csv",
    "SERIES_WINDOWS",
]

SERIES_WINDOWS = {
    "buffer_mean_reward": 10,
    "reward_baseline": 10,
    "reward_qos": 10,
    "reward_fqos": 10,
    "mean_jfi": 50,
    "jfi_at_best": 50,
}


def rolling_mean(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` points average the available prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot smooth an empty series")
    if window == 1:
        return v.copy()
    # offsetting by the first value keeps constant series exact
    ref = v[0]
    c = np.concatenate([[0.0], np.cumsum(v - ref)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return ref + (c[idx] - c[lo]) / (idx - lo)


@dataclass
class MetricSeries:
    name: str
    x_unit: str
    x: list[int] = field(default_factory=list)
    raw: list[float] = field(default_factory=list)
    window: int | None = None

    def append(self, x: int, value: float) -> None:
        if self.x and x <= self.x[-1]:
            raise ValueError(f"{self.name}: x must increase ({x} after {self.x[-1]})")
        if not np.isfinite(value):
            raise ValueError(f"{self.name}: non-finite value {value!r} at x={x}")
        self.x.append(int(x))
        self.raw.append(float(value))

    def __len__(self) -> int:
        return len(self.raw)

    def smoothed(self) -> np.ndarray:
        return rolling_mean(self.raw, self.window or 1)


@dataclass
class EpisodeLog:
    """Per-step decisive rewards and rates of one environment instance."""

    decisive: np.ndarray   # (T,)
    d: np.ndarray          # (T, k)
    u: np.ndarray          # (T, k)


def jfi_at_best(log: EpisodeLog) -> float:
    """Jain index of the rate vector at the (earliest) step of maximal decisive reward."""
    decisive = np.asarray(log.decisive, dtype=float)
    if decisive.size == 0:
        raise ValueError("empty episode")
    best = int(np.argmax(decisive))
    return float(jain_fairness(secrecy_rate(RateReport(d=log.d[best], u=log.u[best]))))


class _EpisodeAggregate:
    def __init__(self):
        self.count = 0
        self.sums = {name: 0.0 for name in REWARD_NAMES}
        self.jfi_sum = 0.0
        self.best: dict[int, tuple[float, float]] = {}

    def add(self, instance: int, rewards: dict[str, float], decisive: float, jfi: float) -> None:
        self.count += 1
        for name in REWARD_NAMES:
            self.sums[name] += float(rewards[name])
        self.jfi_sum += float(jfi)
        prev = self.best.get(instance)
        if prev is None or decisive > prev[0]:
            self.best[instance] = (float(decisive), float(jfi))


class MetricStore:
    """Accumulates every metric stream of a training run."""

    def __init__(self, decisive_reward: str = "baseline", env_steps_per_timestep: int | None = None):
        self.decisive_reward = decisive_reward
        self.env_steps_per_timestep = env_steps_per_timestep
        self.buffer_mean = MetricSeries("buffer_mean_reward", "timestep",
                                        window=SERIES_WINDOWS["buffer_mean_reward"])
        self.episodic = {name: MetricSeries(name, "episode", window=SERIES_WINDOWS[name])
                         for name in SERIES_WINDOWS if name != "buffer_mean_reward"}
        self._episode: int | None = None
        self._agg: _EpisodeAggregate | None = None
        self.timestep = 0

    def _roll_to(self, episode: int) -> None:
        if self._episode != episode:
            self.close_episode()
            self._episode = episode
            self._agg = _EpisodeAggregate()

    def record_buffer_mean(self, value: float | None, timestep: int | None = None) -> None:
        if value is None:
            return
        x = self.timestep if timestep is None else timestep
        self.buffer_mean.append(x, value)

    def record_step(self, episode: int, step: int, report: RateReport,
                    rewards: dict[str, float], buffer_mean: float | None = None,
                    instance: int = 0) -> None:
        """Record one instance's step; ``buffer_mean`` (if given) opens a new timestep."""
        self._roll_to(episode)
        jfi = float(jain_fairness(secrecy_rate(report)))
        self._agg.add(instance, rewards, float(rewards[self.decisive_reward]), jfi)
        if buffer_mean is not None:
            self.record_buffer_mean(buffer_mean)
            self.timestep += 1

    def record_round(self, episode: int, step: int, rewards: dict[str, np.ndarray],
                     jfi: np.ndarray, buffer_mean: float | None) -> None:
        """Vectorised :meth:`record_step` over all instances of a lockstep round."""
        self._roll_to(episode)
        agg = self._agg
        n = len(jfi)
        agg.count += n
        for name in REWARD_NAMES:
            agg.sums[name] += float(np.sum(rewards[name]))
        agg.jfi_sum += float(np.sum(jfi))
        decisive = rewards[self.decisive_reward]
        for i in range(n):
            prev = agg.best.get(i)
            if prev is None or decisive[i] > prev[0]:
                agg.best[i] = (float(decisive[i]), float(jfi[i]))
        self.record_buffer_mean(buffer_mean)
        self.timestep += 1

    def close_episode(self) -> None:
        if self._agg is None or self._agg.count == 0:
            self._agg = None
            return
        agg, ep = self._agg, self._episode
        for name in REWARD_NAMES:
            self.episodic[f"reward_{name}"].append(ep, agg.sums[name] / agg.count)
        self.episodic["mean_jfi"].append(ep, agg.jfi_sum / agg.count)
        best_jfis = [jfi for _, jfi in (agg.best[i] for i in sorted(agg.best))]
        self.episodic["jfi_at_best"].append(ep, float(np.mean(best_jfis)))
        self._agg = None

    def series(self) -> dict[str, MetricSeries]:
        self.close_episode()
        return {"buffer_mean_reward": self.buffer_mean, **self.episodic}


@dataclass
class RunManifest:
    master_seed: int
    config: dict
    version: str
    started_at: str
    finished_at: str | None = None
    files: list[str] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "version": self.version,
                "started_at": self.started_at, "finished_at": self.finished_at,
                "config": self.config, "files": sorted(self.files), "notes": self.notes}

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path: str | os.PathLike) -> "RunManifest":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(master_seed=doc["master_seed"], config=doc["config"], version=doc["version"],
                   started_at=doc["started_at"], finished_at=doc.get("finished_at"),
                   files=list(doc.get("files", [])), notes=doc.get("notes", {}))


def write_series_csv(series: MetricSeries, path: str | os.PathLike) -> None:
    smoothed = series.smoothed() if len(series) else np.zeros(0)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "raw", "smoothed"])
        for x, raw, sm in zip(series.x, series.raw, smoothed):
            writer.writerow([x, repr(float(raw)), repr(float(sm))])


def read_series_csv(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(x, raw, smoothed)`` arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x", "raw", "smoothed"]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [(int(r[0]), float(r[1]), float(r[2])) for r in reader]
    if not rows:
        return np.zeros(0, dtype=int), np.zeros(0), np.zeros(0)
    x, raw, sm = zip(*rows)
    return np.asarray(x), np.asarray(raw), np.asarray(sm)


def export(store: MetricStore | dict[str, MetricSeries], manifest: RunManifest | None,
           output_dir: str | os.PathLike, svg: bool = False) -> list[str]:
    """Write one CSV per series (+ optional SVG chart) and the manifest.

    Returns the written file names relative to ``output_dir``; the manifest's
    file inventory is updated to match before it is written.
    """
    os.makedirs(output_dir, exist_ok=True)
    series = store.series() if isinstance(store, MetricStore) else store
    written = []
    for name, s in series.items():
        fname = f"{name}.csv"
        write_series_csv(s, os.path.join(output_dir, fname))
        written.append(fname)
    span = getattr(store, "env_steps_per_timestep", None)
    if span:
        buf = series["buffer_mean_reward"]
        by_env = MetricSeries(buf.name, "env_step", [(x + 1) * span for x in buf.x],
                              list(buf.raw), buf.window)
        fname = "buffer_mean_reward_env_steps.csv"
        write_series_csv(by_env, os.path.join(output_dir, fname))
        written.append(fname)
    if svg:
        from .plotting import plot_series
        for name, s in series.items():
            if len(s):
                fname = f"{name}.svg"
                plot_series(s, os.path.join(output_dir, fname))
                written.append(fname)
    if manifest is not None:
        manifest.files = sorted(set(manifest.files) | set(written) | {"manifest.json"})
        manifest.write(os.path.join(output_dir, "manifest.json"))
        written.append("manifest.json")
    return written
