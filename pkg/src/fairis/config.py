"""Run configuration: one flat ``section.key: value`` YAML file plus overrides.

Sections are ``scene``, ``thresholds``, ``env``, ``agent`` and ``run``.  Any
key left out takes its default; unknown keys, wrong types and constraint
violations raise :class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from .agents import AgentConfig
from .env import ActionLayout, EnvConfig, ObservationLayout
from .geometry import SceneConfig
from .rewards import ThresholdConfig

__all__ = ["RunConfig", "ConfigError", "parse_config", "load_config_file"]


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(message if message.startswith(key) else f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    decisive_reward: str = "baseline"
    steps_per_episode: int = 250
    redraw_channels_each_step: bool = False
    episodes: int = 5000
    parallel_envs: int = 15
    master_seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_interval: int = 100

    @property
    def env(self) -> EnvConfig:
        return EnvConfig(scene=self.scene, thresholds=self.thresholds,
                         decisive_reward=self.decisive_reward,
                         steps_per_episode=self.steps_per_episode,
                         redraw_channels_each_step=self.redraw_channels_each_step)

    @property
    def obs_dim(self) -> int:
        return ObservationLayout.from_scene(self.scene).dim

    @property
    def action_dim(self) -> int:
        return ActionLayout.from_scene(self.scene).dim

    @property
    def label(self) -> str:
        return f"{self.agent.variant}-{self.decisive_reward}"

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        for section, (owner, names) in _sections().items():
            obj = getattr(self, owner) if owner else self
            for name in names:
                value = getattr(obj, name)
                flat[f"{section}.{name}"] = list(value) if isinstance(value, tuple) else value
        return flat


def _field_names(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]


def _sections() -> dict[str, tuple[str | None, list[str]]]:
    return {
        "scene": ("scene", _field_names(SceneConfig)),
        "thresholds": ("thresholds", _field_names(ThresholdConfig)),
        "env": (None, ["decisive_reward", "steps_per_episode", "redraw_channels_each_step"]),
        "agent": ("agent", _field_names(AgentConfig)),
        "run": (None, ["episodes", "parallel_envs", "master_seed", "output_dir",
                       "checkpoint_interval"]),
    }


def _default(cls, name: str) -> Any:
    f = next(f for f in dataclasses.fields(cls) if f.name == name)
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(key, f"cannot parse {value!r}") from exc
        if isinstance(value, str):
            # YAML 1.1 reads "1e-4" as a string
            try:
                value = float(value)
            except ValueError:
                pass
    if key in ("thresholds.eps_d", "thresholds.eps_u"):
        if _is_number(value):
            return float(value)
        if isinstance(value, (list, tuple)) and value and all(_is_number(v) for v in value):
            return tuple(float(v) for v in value)
        raise ConfigError(key, f"expected a number or a list of numbers, got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not (isinstance(value, int) or
                                           (isinstance(value, float) and value.is_integer())):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if not _is_number(value):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(_is_number(v) for v in value):
            raise ConfigError(key, f"expected a list of numbers, got {value!r}")
        if key == "agent.hidden_sizes":
            if not all(float(v).is_integer() for v in value):
                raise ConfigError(key, "layer widths must be integers")
            return tuple(int(v) for v in value)
        if len(value) != len(default):
            raise ConfigError(key, f"expected {len(default)} numbers, got {len(value)}")
        return tuple(float(v) for v in value)
    raise ConfigError(key, "unsupported setting")


def _flatten(mapping: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in mapping.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config_file(path: str | os.PathLike) -> dict[str, Any]:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        return {}
    if not isinstance(doc, Mapping):
        raise ConfigError(os.fspath(path), "config file must hold a mapping of dotted keys")
    return _flatten(doc)


def parse_config(source: str | os.PathLike | Mapping[str, Any] | None = None,
                 overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Resolve a config file (or flat mapping) plus overrides into a :class:`RunConfig`."""
    if source is None:
        values: dict[str, Any] = {}
    elif isinstance(source, Mapping):
        values = _flatten(source)
    else:
        values = load_config_file(source)
    values.update(_flatten(overrides or {}))

    sections = _sections()
    grouped: dict[str, dict[str, Any]] = {s: {} for s in sections}
    for key, raw in values.items():
        section, _, name = key.partition(".")
        if section not in sections or name not in sections[section][1]:
            raise ConfigError(key, "unknown key")
        owner = sections[section][0]
        cls = {"scene": SceneConfig, "thresholds": ThresholdConfig,
               "agent": AgentConfig}.get(owner, RunConfig)
        grouped[section][name] = _coerce(key, raw, _default(cls, name))

    def build(section: str, cls):
        try:
            return cls(**grouped[section])
        except ValueError as exc:
            raise ConfigError(_offending_key(section, str(exc)), str(exc)) from exc

    scene = build("scene", SceneConfig)
    thresholds = build("thresholds", ThresholdConfig)
    agent = build("agent", AgentConfig)
    for name, eps in (("eps_d", thresholds.eps_d), ("eps_u", thresholds.eps_u)):
        if isinstance(eps, tuple) and len(eps) != scene.k:
            raise ConfigError(f"thresholds.{name}", f"needs {scene.k} values (one per UE), got {len(eps)}")
    top = {**grouped["env"], **grouped["run"]}
    try:
        cfg = RunConfig(scene=scene, thresholds=thresholds, agent=agent, **top)
        cfg.env  # validates env fields
    except ValueError as exc:
        raise ConfigError(_offending_key("env", str(exc)), str(exc)) from exc
    for name in ("episodes", "parallel_envs", "checkpoint_interval"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"run.{name}", "must be >= 1")
    if cfg.master_seed < 0:
        raise ConfigError("run.master_seed", "must be >= 0")
    return cfg


def _offending_key(section: str, message: str) -> str:
    first = message.split()[0] if message else section
    return first if "." in first else section
