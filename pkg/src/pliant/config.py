"""Run configuration: one static JSON file plus flag overrides.

The config is a plain nested dict (auditable, copied verbatim into every
output directory); this module owns the defaults, file loading, validation,
and typed accessors for the subsystems.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .compliance import DEFAULT_PRESETS, ControllerConfig
from .denoiser import DenoiserConfig
from .errors import ConfigError
from .simworld import TASKS, SimParams, TaskGeometry

DEFAULTS: dict = {
    "task": "erase",
    "episode_date": None,  # resolved to today when null; pin for reproducibility
    "sim": {
        "control_rate_hz": 50.0,
        "substeps": 10,
        "body_mass": 1.0,
        "body_inertia": 0.25,
        "contact_stiffness": 5000.0,
        "contact_damping": 100.0,
        "friction_mu": 0.8,
        "friction_vel_eps": 0.01,
        "f_min": 0.5,
        "f_damage": 15.0,
        "grind_rate": 0.22,   # calibrated: see calibrate module
        "erase_rate": 1.1,    # calibrated: see calibrate module
        "gripper_tau": 0.1,
        "max_speed": 10.0,
        "grid_size": 24,
    },
    "geometry": {},  # TaskGeometry field overrides
    "controller": {
        "damping_ratio": 1.0,
        "virtual_mass": 1.0,
        "virtual_inertia": 0.25,
        "max_force": 50.0,
        "max_torque": 5.0,
        "k_min": 50.0,
        "k_max": 2000.0,
    },
    "presets": DEFAULT_PRESETS,
    "model": {
        "d_model": 128,
        "n_heads": 4,
        "n_encoder_layers": 2,
        "n_decoder_layers": 3,
        "horizon": 48,
        "action_dim": 16,
        "n_diffusion_steps": 100,
        "grid_size": 24,
        "patch_size": 8,
        "ffn_mult": 2,
        "dtype": "float32",
    },
    "diffusion": {
        "schedule": "squared_cosine",
        "n_infer_steps": 16,
    },
    "runtime": {
        "replan_interval": 16,
        "ensemble_decay": 0.1,
    },
    "training": {
        "steps": 3000,
        "batch_size": 16,
        "lr": 3e-4,
        "seed": 0,
        "log_every": 100,
    },
    "collect": {
        "noise_pos": 0.002,
        "noise_rot": 0.02,
        "timing_jitter": 0.1,
        "episodes": {"grind": 40, "erase": 60, "round_insert": 60, "cuboid_insert": 60},
    },
    "episode_ticks": {"grind": 4000, "erase": 1400, "round_insert": 500, "cuboid_insert": 500},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'", category="config.unknown_key")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "presets":
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
    cfg = default_config()
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}", category="config.missing_file")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}", category="config.bad_json")
        cfg = _merge(cfg, file_cfg)
    if overrides:
        cfg = _merge(cfg, overrides)
    return RunConfig(cfg)


class RunConfig:
    """Typed accessors over the validated config dict."""

    def __init__(self, raw: dict):
        self.raw = raw
        if raw["task"] not in TASKS:
            raise ConfigError(f"unknown task '{raw['task']}'", category="config.unknown_task")
        if raw["diffusion"]["schedule"] not in ("squared_cosine", "linear"):
            raise ConfigError(f"unknown schedule '{raw['diffusion']['schedule']}'",
                              category="config.unknown_schedule")
        # constructing the typed views validates their invariants up front
        self.sim = SimParams(**raw["sim"])
        self.geometry = TaskGeometry(**{k: tuple(v) if isinstance(v, list) else v
                                        for k, v in raw["geometry"].items()})
        self.controller = ControllerConfig(**raw["controller"])
        try:
            self.model = DenoiserConfig(**raw["model"])
        except ValueError as e:
            raise ConfigError(str(e), category="config.bad_model")
        if self.model.grid_size != self.sim.grid_size:
            raise ConfigError("model.grid_size must match sim.grid_size",
                              category="config.bad_model")

    @property
    def task(self) -> str:
        return self.raw["task"]

    def presets_for(self, task: str) -> list[dict]:
        presets = self.raw["presets"]
        if task not in presets:
            raise ConfigError(f"no presets for task '{task}'", category="config.unknown_task")
        return presets[task]

    def episode_ticks(self, task: str) -> int:
        return int(self.raw["episode_ticks"][task])

    def with_task(self, task: str) -> "RunConfig":
        if task not in TASKS:
            raise ConfigError(f"unknown task '{task}'", category="config.unknown_task")
        raw = copy.deepcopy(self.raw)
        raw["task"] = task
        return RunConfig(raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.raw, indent=2, sort_keys=True) + "\n")
