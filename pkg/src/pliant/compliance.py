"""Cartesian impedance law and the per-task stiffness presets.

The controller is a virtual spring-damper between the measured and target
EE pose: w = k * pose_error - d * velocity with d_i = 2 zeta sqrt(k_i m_i).
Damping is computed against the virtual mass (translation) and virtual
inertia (rotation) of the free-floating EE body; the commanded wrench is
saturated component-wise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownPreset
from .geometry import Pose, Wrench, pose_error

# position (N/m) and rotation (N.m/rad) presets per task; insert tasks list
# one entry per arm (arm 0 holds the peg, arm 1 supports the mating part)
DEFAULT_PRESETS: dict[str, list[dict[str, list[float]]]] = {
    "grind": [
        {"low": [300.0] * 3 + [100.0] * 3, "high": [800.0] * 3 + [150.0] * 3},
    ],
    "erase": [
        {"low": [800.0] * 3 + [150.0] * 3, "high": [1200.0] * 3 + [300.0] * 3},
    ],
    "round_insert": [
        {"low": [200.0] * 3 + [100.0] * 3, "high": [800.0] * 3 + [150.0] * 3},
        {"low": [800.0] * 3 + [150.0] * 3, "high": [1200.0] * 3 + [300.0] * 3},
    ],
    "cuboid_insert": [
        {"low": [200.0] * 3 + [100.0] * 3, "high": [800.0] * 3 + [150.0] * 3},
        {"low": [800.0] * 3 + [150.0] * 3, "high": [1200.0] * 3 + [300.0] * 3},
    ],
}


@dataclass
class ControllerConfig:
    damping_ratio: float = 1.0
    virtual_mass: float = 1.0
    virtual_inertia: float = 0.25
    max_force: float = 50.0
    max_torque: float = 5.0
    k_min: float = 50.0
    k_max: float = 2000.0

    @property
    def mass_diag(self) -> np.ndarray:
        return np.array([self.virtual_mass] * 3 + [self.virtual_inertia] * 3)


@dataclass
class ControllerState:
    """Damping context plus the last commanded wrench (single-writer)."""

    config: ControllerConfig = field(default_factory=ControllerConfig)
    last_wrench: Wrench = field(default_factory=Wrench.zero)

    @property
    def damping_ratio(self) -> float:
        return self.config.damping_ratio


def clamp_stiffness(k: np.ndarray, config: ControllerConfig) -> np.ndarray:
    """Bound a stiffness diagonal to [k_min, k_max]; always positive."""
    return np.clip(np.asarray(k, dtype=np.float64), config.k_min, config.k_max)


def validate_stiffness(k: np.ndarray, config: ControllerConfig) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (6,):
        raise ValueError(f"stiffness diagonal must have 6 entries, got {k.shape}")
    if np.any(k <= 0) or np.any(k < config.k_min) or np.any(k > config.k_max):
        raise ValueError(f"stiffness {k} outside [{config.k_min}, {config.k_max}]")
    return k


def impedance_wrench(current: Pose, velocity: np.ndarray, target: Pose,
                     k: np.ndarray, state: ControllerState) -> Wrench:
    """Spring-damper wrench on the EE body, saturated component-wise."""
    cfg = state.config
    k = np.asarray(k, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    err = pose_error(current, target)
    d = 2.0 * cfg.damping_ratio * np.sqrt(k * cfg.mass_diag)
    w = k * err - d * velocity
    w[:3] = np.clip(w[:3], -cfg.max_force, cfg.max_force)
    w[3:] = np.clip(w[3:], -cfg.max_torque, cfg.max_torque)
    out = Wrench(w[:3], w[3:])
    state.last_wrench = out
    return out


def set_stiffness_mode(mode: str, task: str, arm: int = 0,
                       presets: dict | None = None) -> np.ndarray:
    """Look up the preset stiffness diagonal for (task, arm, mode)."""
    table = presets if presets is not None else DEFAULT_PRESETS
    if task not in table:
        raise UnknownPreset(f"no stiffness presets for task '{task}'")
    arms = table[task]
    if not 0 <= arm < len(arms):
        raise UnknownPreset(f"task '{task}' has no arm {arm}")
    if mode not in arms[arm]:
        raise UnknownPreset(f"task '{task}' arm {arm} has no mode '{mode}'")
    return np.asarray(arms[arm][mode], dtype=np.float64)
