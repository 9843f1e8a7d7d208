"""Run configuration: YAML file plus command-line overrides (flags win)."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import yaml

from .lie import ErrorMode
from .runner import RunOptions
from .sim import DynamicConfig, SimConfig
from .states import NoiseParams

MODE_NAMES = {
    "standard": ErrorMode.STANDARD,
    "invariant": ErrorMode.FULL_INVARIANT,
    "partial": ErrorMode.PARTIAL_INVARIANT,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: ErrorMode = ErrorMode.PARTIAL_INVARIANT
    seed: int = 0
    out: str = "runs"
    runs: int = 25
    window: int = 11
    sim: SimConfig = field(default_factory=SimConfig)
    toggles: RunOptions = field(default_factory=RunOptions)

    def options(self) -> RunOptions:
        self.toggles.n_max = self.window
        return self.toggles


def _build(cls, data: dict, context: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {context}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {context}: {exc}") from exc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional YAML file and override mapping.

    Every key is defaulted; unknown keys are rejected. Overrides (typically
    parsed flags) take precedence over the file.
    """
    data = {}
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("wheel_rotation", "wheel_velocity", "plane",
                   "outlier_detection"):
            data.setdefault("toggles", {})[key] = value
        else:
            data[key] = value

    allowed = {"mode", "seed", "out", "runs", "window", "sim", "toggles"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")

    mode_name = str(data.get("mode", "partial")).lower()
    if mode_name not in MODE_NAMES:
        raise ConfigError(
            f"mode must be one of {sorted(MODE_NAMES)}, got '{mode_name}'")

    sim_data = dict(data.get("sim") or {})
    noise = _build(NoiseParams, dict(sim_data.pop("noise", {}) or {}),
                   "sim.noise")
    dynamic = sim_data.pop("dynamic", None)
    if dynamic is not None:
        dynamic = _build(DynamicConfig, dict(dynamic), "sim.dynamic")
    sim_data.pop("seed", None)  # the top-level seed is authoritative
    sim = _build(SimConfig,
                 {**sim_data, "noise": noise, "dynamic": dynamic,
                  "seed": int(data.get("seed", 0))}, "sim")

    toggles = _build(RunOptions, dict(data.get("toggles") or {}), "toggles")
    return RunConfig(
        mode=MODE_NAMES[mode_name],
        seed=int(data.get("seed", 0)),
        out=str(data.get("out", "runs")),
        runs=int(data.get("runs", 25)),
        window=int(data.get("window", 11)),
        sim=sim,
        toggles=toggles,
    )
