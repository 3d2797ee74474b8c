"""Reward families (sum rate, QoS-penalised, fairness-blended) and Jain's index.

Every function is pure.  Rates are broadcast along a leading batch axis, so
``report.d`` may be ``(k,)`` or ``(batch, k)``; user axis is always last.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "RateReport",
    "ThresholdConfig",
    "secrecy_rate",
    "sum_secrecy_rate",
    "qos_penalties",
    "reward_qos",
    "reward_q_per_user",
    "jain_fairness",
    "reward_fqos",
    "all_rewards",
    "REWARD_NAMES",
]

REWARD_NAMES = ("baseline", "qos", "fqos")

Thresholds = Union[float, Sequence[float]]


@dataclass(frozen=True)
class RateReport:
    d: np.ndarray  # downlink rates, bps/Hz
    u: np.ndarray  # uplink rates, bps/Hz

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if d.shape != u.shape:
            raise ValueError(f"downlink {d.shape} and uplink {u.shape} rate shapes differ")
        if np.any(d < 0) or np.any(u < 0):
            raise ValueError("rates must be nonnegative")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "u", u)

    @property
    def k(self) -> int:
        return self.d.shape[-1]


@dataclass(frozen=True)
class ThresholdConfig:
    """QoS thresholds (scalar = same for every user), penalty weight and fairness blend."""

    eps_d: Thresholds = 0.15
    eps_u: Thresholds = 2.0
    mu: float = 2.0
    alpha: float = 2.0 / 3.0

    def __post_init__(self):
        if np.any(np.asarray(self.eps_d) < 0) or np.any(np.asarray(self.eps_u) < 0):
            raise ValueError("thresholds.eps_d / thresholds.eps_u must be >= 0")
        if self.mu < 0:
            raise ValueError("thresholds.mu must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("thresholds.alpha must lie in [0, 1]")

    def vectors(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        eps_d = np.broadcast_to(np.asarray(self.eps_d, dtype=float), (k,))
        eps_u = np.broadcast_to(np.asarray(self.eps_u, dtype=float), (k,))
        return eps_d, eps_u


def secrecy_rate(report: RateReport) -> np.ndarray:
    return np.maximum(0.0, report.d + report.u)


def sum_secrecy_rate(report: RateReport):
    return secrecy_rate(report).sum(axis=-1)


def qos_penalties(report: RateReport, th: ThresholdConfig) -> tuple[np.ndarray, np.ndarray]:
    """Binary flags, 1 where a rate is strictly below its threshold."""
    eps_d, eps_u = th.vectors(report.k)
    return (report.d < eps_d).astype(int), (report.u < eps_u).astype(int)


def reward_qos(report: RateReport, th: ThresholdConfig):
    p_d, p_u = qos_penalties(report, th)
    return sum_secrecy_rate(report) - th.mu * (p_d + p_u).sum(axis=-1)


def reward_q_per_user(d_i, u_i, eps_d_i, eps_u_i):
    """Per-user QoS-gated rate: each link counts only once it meets its threshold."""
    d_ok = np.asarray(d_i) >= eps_d_i
    u_ok = np.asarray(u_i) >= eps_u_i
    return np.where(d_ok, d_i, 0.0) + np.where(u_ok, u_i, 0.0)


def jain_fairness(values) -> float | np.ndarray:
    """(sum v)^2 / (k sum v^2) along the last axis; an all-zero vector scores 1."""
    v = np.asarray(values, dtype=float)
    k = v.shape[-1]
    if k < 1:
        raise ValueError("jain_fairness needs at least one value")
    total = v.sum(axis=-1)
    squares = (v * v).sum(axis=-1)
    zero = squares == 0
    out = np.where(zero, 1.0, total * total / (k * np.where(zero, 1.0, squares)))
    # rounding can push equal shares a hair outside [1/k, 1]
    out = np.clip(out, 1.0 / k, 1.0)
    return float(out) if out.ndim == 0 else out


def reward_fqos(report: RateReport, th: ThresholdConfig):
    eps_d, eps_u = th.vectors(report.k)
    quality = reward_q_per_user(report.d, report.u, eps_d, eps_u).sum(axis=-1)
    fairness = jain_fairness(secrecy_rate(report))
    return (1.0 - th.alpha) * quality + th.alpha * report.k * fairness


def all_rewards(report: RateReport, th: ThresholdConfig) -> dict[str, float | np.ndarray]:
    """The three reward families keyed by name (``baseline``, ``qos``, ``fqos``)."""
    return {
        "baseline": sum_secrecy_rate(report),
        "qos": reward_qos(report, th),
        "fqos": reward_fqos(report, th),
    }
