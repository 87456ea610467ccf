"""Control-loop glue: actions in, impedance wrenches down, observations out.

TaskEnv owns one WorldState and one impedance controller per arm. Each tick
the caller supplies a 16-D action for the policy arm (arm 0); any supporting
arm holds its initial pose at its own high preset. Target rotations always
pass through the Gram-Schmidt decoder before execution, and stiffness
commands are clamped to the configured bounds.
"""
from __future__ import annotations

import numpy as np

from . import simworld
from .compliance import ControllerState, clamp_stiffness, set_stiffness_mode
from .config import RunConfig
from .errors import EnvTerminated
from .geometry import Pose, sixd_to_rotmat
from .simworld import Observation, WorldState

POLICY_ARM = 0


def action_to_targets(action: np.ndarray, env: "TaskEnv") -> tuple[Pose, float, np.ndarray]:
    """Decode [pos3 | rot6 | gripper1 | stiffness6] into controller targets."""
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (16,):
        raise ValueError(f"action must be a 16-vector, got {a.shape}")
    target = Pose(a[:3].copy(), sixd_to_rotmat(a[3:9]))
    gripper = float(np.clip(a[9], 0.0, 1.0))
    stiffness = clamp_stiffness(a[10:16], env.controller_cfg)
    return target, gripper, stiffness


class TaskEnv:
    def __init__(self, cfg: RunConfig, task: str | None = None, max_ticks: int | None = None):
        self.cfg = cfg
        self.task_name = task or cfg.task
        self.sim_params = cfg.sim
        self.geom = cfg.geometry
        self.controller_cfg = cfg.controller
        self.presets = cfg.presets_for(self.task_name)
        self.max_ticks = max_ticks if max_ticks is not None else cfg.episode_ticks(self.task_name)
        self.world: WorldState | None = None

    # -- lifecycle -----------------------------------------------------------
    def reset(self, seed: int) -> Observation:
        rng = np.random.default_rng(seed)
        self.world = simworld.make_world(self.task_name, self.sim_params, self.geom, rng)
        # small start-pose jitter on the policy arm
        self.world.arms[POLICY_ARM].position[:2] += rng.uniform(-0.002, 0.002, size=2)
        self.controllers = [ControllerState(self.controller_cfg) for _ in self.world.arms]
        self._targets: list[tuple[Pose, float, np.ndarray]] = []
        for arm, body in enumerate(self.world.arms):
            k_hold = set_stiffness_mode("high", self.task_name, arm=min(arm, len(self.presets) - 1),
                                        presets={self.task_name: self.presets})
            self._targets.append((body.pose, 0.0, k_hold))
        self._history: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = []
        first = [simworld.render_tick(self.world, arm) for arm in range(self.world.n_arms)]
        self._history = [first, first]  # (t-1, t) start identical
        self.failed = False
        return self.observe(POLICY_ARM)

    def _require_world(self) -> WorldState:
        if self.world is None:
            raise EnvTerminated("environment not reset")
        return self.world

    # -- observation ----------------------------------------------------------
    def observe(self, arm: int) -> Observation:
        prev, cur = self._history
        return Observation(
            pose9=np.stack([prev[arm][0], cur[arm][0]]),
            wrench=np.stack([prev[arm][1], cur[arm][1]]),
            grid=np.stack([prev[arm][2], cur[arm][2]]),
        )

    @property
    def tick(self) -> int:
        return self._require_world().tick

    @property
    def done(self) -> bool:
        return self._require_world().tick >= self.max_ticks

    # -- stepping --------------------------------------------------------------
    def apply_action(self, action: np.ndarray, arm: int = POLICY_ARM) -> Observation:
        world = self._require_world()
        if self.done:
            raise EnvTerminated(f"episode tick budget {self.max_ticks} exhausted")
        self._targets[arm] = action_to_targets(action, self)
        targets = []
        for i, (target, gripper, k) in enumerate(self._targets):
            world.gripper_cmd[i] = gripper
            targets.append((target, k))
        simworld.step_targets(world, targets, self.controllers, self.sim_params.dt)
        if isinstance(world.task, simworld.EraseTask) and world.task.damaged:
            self.failed = True
        ticks = [simworld.render_tick(world, i) for i in range(world.n_arms)]
        self._history = [self._history[1], ticks]
        return self.observe(POLICY_ARM)

    # -- outcomes ----------------------------------------------------------------
    def metric(self) -> float:
        world = self._require_world()
        task = world.task
        if isinstance(task, simworld.GrindTask):
            return task.fine / task.total
        if isinstance(task, simworld.EraseTask):
            return 1.0 - float(task.marks.sum()) / task.initial_mark_sum
        return 1.0 if simworld.task_insert_check(world) else 0.0

    def success(self) -> bool:
        world = self._require_world()
        task = world.task
        if isinstance(task, simworld.GrindTask):
            return self.metric() >= 0.7
        if isinstance(task, simworld.EraseTask):
            return not task.damaged and self.metric() >= 0.99
        return simworld.task_insert_check(world)

    def episode_meta(self, seed: int, source: str) -> dict:
        """Self-describing metadata snapshot taken at episode end."""
        world = self._require_world()
        meta = {
            "task": self.task_name,
            "seed": int(seed),
            "control_rate_hz": self.sim_params.control_rate_hz,
            "stiffness_presets": self.presets,
            "date": self.cfg.raw.get("episode_date") or "unset",
            "source": source,
            "success": bool(self.success()),
            "metric": float(self.metric()),
            "render": {
                "window_half": simworld._window_half(world),
                "mortar_radius": self.geom.mortar_radius,
            },
        }
        if isinstance(world.task, simworld.EraseTask):
            meta["damaged"] = bool(world.task.damaged)
        return meta
