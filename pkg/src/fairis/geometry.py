"""Planar BS / RIS / UE scene, Rician channels, duplex SINRs and beam patterns.

Array response convention (used consistently for every link): a uniform
linear array with element spacing ``s`` wavelengths responds to a far-field
direction ``theta`` (measured from the array broadside) with

    a_m(theta) = exp(j * 2 * pi * s * m * sin(theta)),   m = 0 .. M-1.

A signal arriving from ``theta`` induces ``a(theta)`` on the elements and,
by reciprocity, element weights ``x`` radiate a far field ``a(theta)^T x``
towards ``theta``.  Hence

* ``G = a_ris(theta_in) a_bs(theta_out)^T`` (LoS part, BS -> RIS),
* ``h_ru[i] = a_ris(theta_ue_i)`` (LoS part), used as ``h_ru[i]^T x``,
* beam power pattern ``P(theta) = |a(theta)^T x|^2``.

All rate kernels accept arbitrary leading batch dimensions so that the
vectorised environment can evaluate many instances with a single call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SceneConfig",
    "ScenePlacement",
    "ChannelRealization",
    "BeamformerState",
    "RegionTooSmallError",
    "ShapeMismatchError",
    "dbm_to_watt",
    "place_ues",
    "draw_channels",
    "steering_vector",
    "path_gain",
    "bearing",
    "effective_channels",
    "downlink_sinr",
    "uplink_sinr",
    "downlink_rates",
    "uplink_rates",
    "beam_pattern",
    "peak_angle",
]


class RegionTooSmallError(ValueError):
    """The UE placement region holds fewer grid points than UEs."""


class ShapeMismatchError(ValueError):
    pass


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SceneConfig:
    """Geometry, array sizes and link budget of the scene.

    Positions are in meters, powers in watts.  ``bs_orientation_deg`` and
    ``ris_orientation_deg`` give the global direction of each array's
    broadside normal (degrees, counter-clockwise from the +x axis).
    """

    bs_position: tuple[float, float] = (0.0, 0.0)
    ris_position: tuple[float, float] = (20.0, 100.0)
    ue_x_range: tuple[float, float] = (125.0, 200.0)
    ue_y_range: tuple[float, float] = (25.0, 100.0)
    grid_step: float = 0.1
    k: int = 2
    n_ris: int = 16
    nt: int = 4
    nr: int = 4
    element_spacing: float = 0.5
    bs_orientation_deg: float = 90.0
    ris_orientation_deg: float = -60.0
    pathloss_ref_db: float = -30.0
    pathloss_exp_bs_ris: float = 2.2
    pathloss_exp_ris_ue: float = 2.8
    rician_k_bs_ris: float = 10.0
    rician_k_ris_ue: float = 3.0
    p_max: float = 1.0
    p_ue: float = 0.1
    noise_dl: float = dbm_to_watt(-125.0)
    noise_ul: float = dbm_to_watt(-125.0)

    def __post_init__(self):
        for name in ("k", "n_ris", "nt", "nr"):
            if getattr(self, name) < 1:
                raise ValueError(f"scene.{name} must be >= 1")
        for name in ("p_max", "p_ue", "noise_dl", "noise_ul", "grid_step", "element_spacing"):
            if not getattr(self, name) > 0:
                raise ValueError(f"scene.{name} must be > 0")
        for name in ("pathloss_exp_bs_ris", "pathloss_exp_ris_ue", "rician_k_bs_ris", "rician_k_ris_ue"):
            if getattr(self, name) < 0:
                raise ValueError(f"scene.{name} must be >= 0")
        for name in ("ue_x_range", "ue_y_range"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"scene.{name} must be an increasing (low, high) pair")
        for name in ("bs_position", "ris_position"):
            x, y = getattr(self, name)
            inside = (self.ue_x_range[0] <= x <= self.ue_x_range[1]
                      and self.ue_y_range[0] <= y <= self.ue_y_range[1])
            if inside:
                raise ValueError(f"scene.{name} lies inside the UE region")

    @property
    def noise_dl_dbm(self) -> float:
        return 10.0 * math.log10(self.noise_dl) + 30.0

    def grid_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer grid indices along x and y (coordinate = index * grid_step)."""
        step = self.grid_step
        ix = np.arange(math.ceil(self.ue_x_range[0] / step - 1e-9),
                       math.floor(self.ue_x_range[1] / step + 1e-9) + 1)
        iy = np.arange(math.ceil(self.ue_y_range[0] / step - 1e-9),
                       math.floor(self.ue_y_range[1] / step + 1e-9) + 1)
        return ix, iy


@dataclass(frozen=True)
class ScenePlacement:
    ue_positions: np.ndarray  # (k, 2), meters

    @property
    def k(self) -> int:
        return len(self.ue_positions)


@dataclass(frozen=True)
class ChannelRealization:
    g: np.ndarray     # (N, Nt) BS -> RIS
    h_ru: np.ndarray  # (k, N)  RIS -> UE_i
    drawn_at: int = 0

    def __post_init__(self):
        if self.g.ndim != 2 or self.h_ru.ndim != 2 or self.h_ru.shape[1] != self.g.shape[0]:
            raise ShapeMismatchError(
                f"incompatible channel shapes g={self.g.shape}, h_ru={self.h_ru.shape}")


@dataclass(frozen=True)
class BeamformerState:
    w: np.ndarray    # (Nt, k) complex
    phi: np.ndarray  # (N,) phases in [0, 2*pi)

    @property
    def reflection(self) -> np.ndarray:
        return np.exp(1j * self.phi)


def place_ues(config: SceneConfig, rng: np.random.Generator) -> ScenePlacement:
    """Draw ``k`` distinct UE positions uniformly over the placement grid."""
    ix, iy = config.grid_axes()
    n_points = len(ix) * len(iy)
    if n_points < config.k:
        raise RegionTooSmallError(
            f"UE region holds {n_points} grid points, fewer than k={config.k}")
    taken: set[tuple[int, int]] = set()
    cells = []
    while len(cells) < config.k:
        cell = (int(ix[rng.integers(len(ix))]), int(iy[rng.integers(len(iy))]))
        if cell in taken:
            continue
        taken.add(cell)
        cells.append(cell)
    positions = np.round(np.asarray(cells, dtype=float) * config.grid_step, 10)
    return ScenePlacement(ue_positions=positions)


def steering_vector(array_size: int, element_spacing: float, angle) -> np.ndarray:
    """ULA response; a scalar angle gives shape (M,), an array of angles (..., M)."""
    m = np.arange(array_size)
    phase = 2.0 * np.pi * element_spacing * np.multiply.outer(np.sin(angle), m)
    return np.exp(1j * phase)


def path_gain(config: SceneConfig, distance, exponent: float):
    return 10.0 ** (config.pathloss_ref_db / 10.0) * np.asarray(distance, dtype=float) ** (-exponent)


def bearing(origin, target, orientation_deg: float) -> float:
    """Angle of ``target`` seen from ``origin``, relative to the array broadside, in (-pi, pi]."""
    dx, dy = np.asarray(target, dtype=float) - np.asarray(origin, dtype=float)
    rel = math.atan2(dy, dx) - math.radians(orientation_deg)
    return math.atan2(math.sin(rel), math.cos(rel))


def _complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _rician(los: np.ndarray, k_factor: float, gain: float, rng: np.random.Generator) -> np.ndarray:
    nlos = _complex_gaussian(rng, los.shape)
    if math.isinf(k_factor):
        return math.sqrt(gain) * los
    return math.sqrt(gain) * (math.sqrt(k_factor / (k_factor + 1.0)) * los
                              + math.sqrt(1.0 / (k_factor + 1.0)) * nlos)


def draw_channels(config: SceneConfig, placement: ScenePlacement,
                  rng: np.random.Generator, drawn_at: int = 0) -> ChannelRealization:
    """Rician block-fading realization of G (N x Nt) and h_ru (k x N)."""
    bs, ris = config.bs_position, config.ris_position
    d_br = math.dist(bs, ris)
    theta_out = bearing(bs, ris, config.bs_orientation_deg)
    theta_in = bearing(ris, bs, config.ris_orientation_deg)
    los_g = np.outer(steering_vector(config.n_ris, config.element_spacing, theta_in),
                     steering_vector(config.nt, config.element_spacing, theta_out))
    g = _rician(los_g, config.rician_k_bs_ris,
                float(path_gain(config, d_br, config.pathloss_exp_bs_ris)), rng)

    h_ru = np.empty((placement.k, config.n_ris), dtype=complex)
    for i, ue in enumerate(placement.ue_positions):
        theta_ue = bearing(ris, ue, config.ris_orientation_deg)
        los_h = steering_vector(config.n_ris, config.element_spacing, theta_ue)
        gain = float(path_gain(config, math.dist(ris, ue), config.pathloss_exp_ris_ue))
        h_ru[i] = _rician(los_h, config.rician_k_ris_ue, gain, rng)
    return ChannelRealization(g=g, h_ru=h_ru, drawn_at=drawn_at)


def effective_channels(g: np.ndarray, h_ru: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Row i is h_ru[i]^T diag(e^{j phi}) G; shape (..., k, Nt).

    The uplink channel of UE i is the transpose of row i (reciprocity).
    """
    if g.shape[-2] != h_ru.shape[-1] or phi.shape[-1] != h_ru.shape[-1]:
        raise ShapeMismatchError(
            f"g {g.shape}, h_ru {h_ru.shape} and phi {phi.shape} disagree on N")
    return (h_ru * np.exp(1j * phi)[..., None, :]) @ g


def downlink_sinr(g, h_ru, w, phi, noise: float) -> np.ndarray:
    h_eff = effective_channels(g, h_ru, phi)
    if w.shape[-2] != h_eff.shape[-1] or w.shape[-1] != h_eff.shape[-2]:
        raise ShapeMismatchError(f"w {w.shape} does not match (Nt, k) = {h_eff.shape[::-1][:2]}")
    gains = np.abs(h_eff @ w) ** 2          # [..., i, j] = |h_i w_j|^2
    signal = np.diagonal(gains, axis1=-2, axis2=-1)
    interference = gains.sum(axis=-1) - signal
    return signal / (interference + noise)


def uplink_sinr(g, h_ru, phi, p_ue: float, noise: float) -> np.ndarray:
    u = effective_channels(g, h_ru, phi)    # u[..., i, :] is UE i's uplink channel (transposed)
    norms2 = np.sum(np.abs(u) ** 2, axis=-1)
    cross = np.abs(np.conj(u) @ np.swapaxes(u, -1, -2)) ** 2   # |u_i^H u_j|^2
    safe = np.where(norms2 > 0, norms2, 1.0)
    signal = p_ue * norms2
    interference = p_ue * (cross.sum(axis=-1) - norms2 ** 2) / safe
    sinr = signal / (np.maximum(interference, 0.0) + noise)
    return np.where(norms2 > 0, sinr, 0.0)


def downlink_rates(channel: ChannelRealization, beam: BeamformerState,
                   config: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-user downlink ``(SINR, log2(1 + SINR))``."""
    sinr = downlink_sinr(channel.g, channel.h_ru, beam.w, beam.phi, config.noise_dl)
    return sinr, np.log2(1.0 + sinr)


def uplink_rates(channel: ChannelRealization, beam: BeamformerState,
                 config: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-user uplink ``(SINR, log2(1 + SINR))`` with MRC at the BS."""
    if beam.w.shape[-2] != channel.g.shape[-1]:
        raise ShapeMismatchError(f"w {beam.w.shape} does not match Nt={channel.g.shape[-1]}")
    sinr = uplink_sinr(channel.g, channel.h_ru, beam.phi, config.p_ue, config.noise_ul)
    return sinr, np.log2(1.0 + sinr)


def beam_pattern(weights, element_spacing: float, angle_grid) -> np.ndarray:
    """Radiated power |a(theta)^T weights|^2 on each grid angle (linear scale)."""
    weights = np.asarray(weights)
    angle_grid = np.asarray(angle_grid, dtype=float)
    if weights.ndim != 1 or angle_grid.size == 0:
        raise ShapeMismatchError("weights must be a vector and the angle grid non-empty")
    response = steering_vector(len(weights), element_spacing, angle_grid)
    return np.abs(response @ weights) ** 2


def peak_angle(angle_grid, power, front_only: bool = True) -> float:
    """Grid angle of maximal power; ``front_only`` ignores the mirror lobe behind the array."""
    angle_grid = np.asarray(angle_grid, dtype=float)
    power = np.asarray(power, dtype=float)
    if front_only:
        mask = np.abs(angle_grid) <= np.pi / 2
        angle_grid, power = angle_grid[mask], power[mask]
    return float(angle_grid[np.argmax(power)])
