"""Scripted demonstrators standing in for human teleoperators.

Each expert is a per-episode timeline of waypoint segments (piecewise-linear
pose targets, plus circular orbit segments for grinding). Segments carry the
stiffness mode: high in free space, low while pressing, exactly the task's
two presets. Seeded per-episode noise perturbs waypoints and durations so
demonstrations vary without losing the phase structure.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .compliance import set_stiffness_mode
from .datastore import Episode
from .envs import TaskEnv
from .errors import ExpertFailure, TaskMismatch
from .geometry import rot_z, rotmat_to_6d
from .simworld import TASKS, WorldState, hole_entry

log = logging.getLogger(__name__)


@dataclass
class ExpertConfig:
    task: str
    noise_pos: float = 0.002
    noise_rot: float = 0.02
    timing_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise TaskMismatch(f"unknown task '{self.task}'")
        if self.noise_pos < 0 or self.noise_rot < 0:
            raise ValueError("noise std must be >= 0")


@dataclass
class _Segment:
    t0: float
    t1: float
    kind: str          # "line" or "orbit"
    p0: np.ndarray
    p1: np.ndarray     # for orbit: [cx, cy, z], p0 holds [radius, a0, a1]
    yaw0: float
    yaw1: float
    mode: str          # "low" | "high"
    gripper: float


class ScriptedExpert:
    """Finite-state waypoint script for one task."""

    def __init__(self, cfg: ExpertConfig, env: TaskEnv):
        if cfg.task != env.task_name:
            raise TaskMismatch(f"expert for '{cfg.task}' driving env '{env.task_name}'")
        self.cfg = cfg
        self.env = env
        self.dt = env.sim_params.dt
        self.segments: list[_Segment] = []

    # -- timeline construction -------------------------------------------------
    def begin_episode(self, episode_seed: int, world: WorldState) -> None:
        rng = np.random.default_rng((self.cfg.seed, episode_seed))
        horizon_s = self.env.max_ticks * self.dt
        builder = {"grind": self._grind_timeline, "erase": self._erase_timeline,
                   "round_insert": self._insert_timeline,
                   "cuboid_insert": self._insert_timeline}[self.cfg.task]
        self.segments = builder(rng, world, horizon_s)

    def _jit(self, rng, duration: float) -> float:
        return duration * (1.0 + rng.uniform(-self.cfg.timing_jitter, self.cfg.timing_jitter))

    def _np(self, rng) -> np.ndarray:
        return rng.normal(0.0, self.cfg.noise_pos, size=3)

    def _line(self, t: float, dur: float, p0, p1, mode, *, yaw0=0.0, yaw1=0.0,
              gripper=0.0) -> _Segment:
        return _Segment(t, t + dur, "line", np.asarray(p0, dtype=np.float64),
                        np.asarray(p1, dtype=np.float64), yaw0, yaw1, mode, gripper)

    def _grind_timeline(self, rng, world: WorldState, horizon_s: float) -> list[_Segment]:
        press_z = -0.014 + rng.normal(0.0, 0.001)
        hover_z, look_z = 0.03, 0.05
        radius = 0.018 + rng.normal(0.0, 0.001)
        orbit_period = 1.5
        segs: list[_Segment] = []
        t = 0.0
        pos = world.arms[0].position.copy()
        angle = 0.0
        first = True
        while t < horizon_s:
            edge = np.array([radius * np.cos(angle), radius * np.sin(angle), hover_z])
            d = self._jit(rng, 1.0 if first else 0.9)
            segs.append(self._line(t, d, pos, edge + self._np(rng), "high"))
            t = segs[-1].t1
            press = segs[-1].p1.copy()
            press[2] = press_z + rng.normal(0.0, 0.0005)
            d = self._jit(rng, 0.5)
            segs.append(self._line(t, d, segs[-1].p1, press, "low"))
            t = segs[-1].t1
            # circular grinding orbits at constant depth
            n_turns = 3
            dur = self._jit(rng, n_turns * orbit_period)
            a1 = angle + 2 * np.pi * n_turns
            seg = _Segment(t, t + dur, "orbit",
                           np.array([radius, angle, a1]),
                           np.array([0.0, 0.0, press[2]]), 0.0, 0.0, "low", 0.0)
            segs.append(seg)
            t = seg.t1
            angle = a1 % (2 * np.pi)
            exit_p = np.array([radius * np.cos(angle), radius * np.sin(angle), press_z])
            look = np.array([0.055, 0.0, look_z]) + self._np(rng)
            d = self._jit(rng, 1.0)
            segs.append(self._line(t, d, exit_p, look, "high"))  # move out to look
            t = segs[-1].t1
            pos = segs[-1].p1
            first = False
        return segs

    def _erase_timeline(self, rng, world: WorldState, horizon_s: float) -> list[_Segment]:
        x_r, x_l = 0.08, -0.08
        z_h, z_p = 0.02, -0.006
        segs: list[_Segment] = []
        pos = world.arms[0].position.copy()
        right = np.array([x_r, 0.0, z_h]) + self._np(rng)
        segs.append(self._line(0.0, self._jit(rng, 0.6), pos, right, "high"))
        t = segs[-1].t1
        while t < horizon_s:
            y = rng.normal(0.0, self.cfg.noise_pos)
            down = np.array([x_r + rng.normal(0.0, self.cfg.noise_pos), y,
                             z_p + rng.normal(0.0, 0.0005)])
            segs.append(self._line(t, self._jit(rng, 0.3), segs[-1].p1, down, "low"))
            t = segs[-1].t1
            left = down.copy()
            left[0] = x_l + rng.normal(0.0, self.cfg.noise_pos)
            segs.append(self._line(t, self._jit(rng, 1.45), down, left, "low"))  # the stroke
            t = segs[-1].t1
            up = left.copy()
            up[2] = z_h
            segs.append(self._line(t, self._jit(rng, 0.25), left, up, "high"))
            t = segs[-1].t1
            back = np.array([x_r + rng.normal(0.0, self.cfg.noise_pos),
                             rng.normal(0.0, self.cfg.noise_pos), z_h])
            segs.append(self._line(t, self._jit(rng, 0.8), up, back, "high"))
            t = segs[-1].t1
        return segs

    def _insert_timeline(self, rng, world: WorldState, horizon_s: float) -> list[_Segment]:
        entry = hole_entry(world)
        geom = self.env.geom
        yaw_target = rng.normal(0.0, self.cfg.noise_rot) if self.cfg.task == "cuboid_insert" else 0.0
        segs: list[_Segment] = []
        pos = world.arms[0].position.copy()
        above = entry + np.array([0.0, 0.0, 0.03]) + self._np(rng)
        segs.append(self._line(0.0, self._jit(rng, 1.2), pos, above,
                               "high", yaw1=yaw_target))
        t = segs[-1].t1
        deep = entry + np.array([rng.normal(0.0, self.cfg.noise_pos),
                                 rng.normal(0.0, self.cfg.noise_pos),
                                 -(geom.target_depth + 0.004)])
        segs.append(self._line(t, self._jit(rng, 1.6), above, deep, "low",
                               yaw0=yaw_target, yaw1=yaw_target))
        t = segs[-1].t1
        segs.append(self._line(t, self._jit(rng, 0.5), deep, deep, "low",
                               yaw0=yaw_target, yaw1=yaw_target))
        t = segs[-1].t1
        segs.append(self._line(t, self._jit(rng, 0.6), deep, deep, "low",
                               yaw0=yaw_target, yaw1=yaw_target, gripper=1.0))  # release
        t = segs[-1].t1
        out = entry + np.array([0.0, 0.0, 0.06])
        segs.append(self._line(t, self._jit(rng, 1.0), deep, out, "high", gripper=1.0))
        t = segs[-1].t1
        segs.append(self._line(t, horizon_s - t + 1.0, out, out, "high", gripper=1.0))
        return segs

    # -- per-tick action ---------------------------------------------------------
    def expert_action(self, world: WorldState, tick: int) -> np.ndarray:
        """16-D action for this tick; stiffness is exactly a task preset."""
        if not self.segments:
            raise TaskMismatch("begin_episode was not called")
        t = tick * self.dt
        seg = self.segments[-1]
        for s in self.segments:
            if t < s.t1:
                seg = s
                break
        u = 1.0 if seg.t1 == seg.t0 else float(np.clip((t - seg.t0) / (seg.t1 - seg.t0), 0.0, 1.0))
        if seg.kind == "line":
            pos = seg.p0 + u * (seg.p1 - seg.p0)
        else:  # orbit: p0 = [radius, a0, a1], p1 = [cx, cy, z]
            radius, a0, a1 = seg.p0
            a = a0 + u * (a1 - a0)
            pos = np.array([seg.p1[0] + radius * np.cos(a),
                            seg.p1[1] + radius * np.sin(a), seg.p1[2]])
        yaw = seg.yaw0 + u * (seg.yaw1 - seg.yaw0)
        stiff = set_stiffness_mode(seg.mode, self.env.task_name, arm=0,
                                   presets={self.env.task_name: self.env.presets})
        return np.concatenate([pos, rotmat_to_6d(rot_z(yaw)), [seg.gripper], stiff])

    def current_mode(self, tick: int) -> str:
        t = tick * self.dt
        for s in self.segments:
            if t < s.t1:
                return s.mode
        return self.segments[-1].mode


def run_expert_episode(env: TaskEnv, expert: ScriptedExpert, episode_seed: int) -> Episode:
    """Roll one scripted episode and package it for the datastore."""
    env.reset(episode_seed)
    expert.begin_episode(episode_seed, env.world)
    rows = {"pose9": [], "wrench": [], "grid": [], "action": []}
    obs = env.observe(0)
    while not env.done:
        action = expert.expert_action(env.world, env.tick)
        rows["pose9"].append(obs.pose9[1])
        rows["wrench"].append(obs.wrench[1])
        rows["grid"].append(obs.grid[1])
        rows["action"].append(action)
        obs = env.apply_action(action)
    return Episode(
        meta=env.episode_meta(episode_seed, "expert"),
        pose9=np.asarray(rows["pose9"], dtype=np.float32),
        wrench=np.asarray(rows["wrench"], dtype=np.float32),
        grid=np.asarray(rows["grid"], dtype=np.float32),
        action=np.asarray(rows["action"], dtype=np.float32),
    )


def collect_demos(task: str, n_episodes: int, env: TaskEnv, expert_cfg: ExpertConfig,
                  base_seed: int = 0) -> list[Episode]:
    """Collect n successful episodes; failed rollouts are discarded and logged."""
    expert = ScriptedExpert(expert_cfg, env)
    episodes: list[Episode] = []
    attempt = 0
    max_attempts = max(3 * n_episodes, n_episodes + 10)
    while len(episodes) < n_episodes and attempt < max_attempts:
        ep = run_expert_episode(env, expert, base_seed + attempt)
        attempt += 1
        if ep.meta["success"]:
            episodes.append(ep)
        else:
            log.warning("expert failed %s rollout (seed %d, metric %.3f); discarded",
                        task, ep.meta["seed"], ep.meta["metric"])
    if len(episodes) < n_episodes:
        raise ExpertFailure(f"only {len(episodes)}/{n_episodes} expert rollouts succeeded")
    return episodes
