"""Deterministic rigid-body contact simulator with four task analogs.

Each arm is a free-floating 6-DOF EE body driven by a commanded wrench plus
penalty contact forces evaluated at an internal substep. Two drivers: step()
holds a raw wrench for the whole control tick; step_targets() re-evaluates
the impedance law every substep (the inner control loop real arms run).
Contact: normal force k_s * penetration + c_s * penetration_rate (clamped
>= 0) and smoothed Coulomb friction. Task state (powder masses, mark grid,
peg/hole) advances inside the same substep loop, so force-dependent task
rates see the actual contact forces.

Task analogs: grind (pestle in a mortar dish), erase (block rubbing a
marked pad), round/cuboid insert (two arms, peg into a chamfered hole).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Diverged
from .geometry import Pose, Wrench, rotmat_to_6d, sixd_to_rotmat, so3_exp

GRID_SIZE_DEFAULT = 24
TASKS = ("grind", "erase", "round_insert", "cuboid_insert")


@dataclass
class SimParams:
    control_rate_hz: float = 50.0
    substeps: int = 10
    body_mass: float = 1.0
    body_inertia: float = 0.25
    contact_stiffness: float = 5000.0
    contact_damping: float = 100.0
    friction_mu: float = 0.8
    friction_vel_eps: float = 0.01
    f_min: float = 0.5
    f_damage: float = 15.0
    grind_rate: float = 0.22
    erase_rate: float = 1.1
    gripper_tau: float = 0.1
    max_speed: float = 10.0
    grid_size: int = GRID_SIZE_DEFAULT

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate_hz


@dataclass
class TaskGeometry:
    """Static per-task scene constants (meters / radians)."""

    # grind
    mortar_radius: float = 0.05
    tip_radius: float = 0.01
    powder_total: float = 1.0
    # erase
    pad_half: float = 0.12
    eraser_half: float = 0.025
    mark_x: tuple = (-0.06, 0.06)
    mark_y: tuple = (-0.02, 0.02)
    # insert
    hole_clearance: float = 0.002
    funnel_radius: float = 0.006
    hole_depth: float = 0.03
    target_depth: float = 0.022
    hole_top_z: float = 0.06
    part_offset_z: float = -0.04   # hole entry relative to the supporting arm
    yaw_tol: float = 0.08
    # observation window half-width per task
    window_half_grind: float = 0.06
    window_half_erase: float = 0.12
    window_half_insert: float = 0.08


@dataclass
class BodyState:
    position: np.ndarray
    rotation: np.ndarray
    velocity: np.ndarray  # [vx vy vz wx wy wz], world frame

    @staticmethod
    def at(x: float, y: float, z: float) -> "BodyState":
        return BodyState(np.array([x, y, z], dtype=np.float64), np.eye(3), np.zeros(6))

    @property
    def pose(self) -> Pose:
        return Pose(self.position.copy(), self.rotation.copy())


@dataclass
class GrindTask:
    fine: float = 0.0
    total: float = 1.0

    @property
    def coarse(self) -> float:
        return self.total - self.fine


@dataclass
class EraseTask:
    marks: np.ndarray = None
    initial_mark_sum: float = 0.0
    damaged: bool = False


@dataclass
class InsertTask:
    peg_attached: bool = True
    peg_tip: np.ndarray = None          # world position once released
    peg_yaw: float = 0.0                # yaw at release
    cuboid: bool = False


@dataclass
class WorldState:
    task_name: str
    params: SimParams
    geom: TaskGeometry
    arms: list[BodyState]
    gripper: np.ndarray         # opening in [0, 1] per arm
    gripper_cmd: np.ndarray
    task: object
    time: float = 0.0
    tick: int = 0
    contact_wrench: list[Wrench] = field(default_factory=list)

    @property
    def n_arms(self) -> int:
        return len(self.arms)


@dataclass
class Observation:
    """(t-1, t) stacked observation for one arm."""

    pose9: np.ndarray   # [2, 9]
    wrench: np.ndarray  # [2, 6]
    grid: np.ndarray    # [2, G, G]


def make_world(task_name: str, params: SimParams, geom: TaskGeometry,
               rng: np.random.Generator) -> WorldState:
    """Fresh world with task-dependent layout; rng drives start jitter."""
    if task_name == "grind":
        arms = [BodyState.at(0.02, 0.0, 0.08)]
        task = GrindTask(fine=0.0, total=geom.powder_total)
    elif task_name == "erase":
        arms = [BodyState.at(0.08, 0.0, 0.05)]
        g = params.grid_size
        marks = np.zeros((g, g))
        half, cell = geom.pad_half, 2 * geom.pad_half / g
        centers = -half + cell * (np.arange(g) + 0.5)
        in_x = (centers >= geom.mark_x[0]) & (centers <= geom.mark_x[1])
        in_y = (centers >= geom.mark_y[0]) & (centers <= geom.mark_y[1])
        marks[np.ix_(in_y, in_x)] = 1.0  # row = y cell, col = x cell
        task = EraseTask(marks=marks, initial_mark_sum=float(marks.sum()))
    elif task_name in ("round_insert", "cuboid_insert"):
        dx, dy = rng.uniform(-0.005, 0.005, size=2)  # hole pose jitter
        support = BodyState.at(dx, dy, 0.1)
        peg = BodyState.at(0.0, 0.0, 0.14)
        arms = [peg, support]
        task = InsertTask(cuboid=(task_name == "cuboid_insert"))
    else:
        raise ValueError(f"unknown task '{task_name}'")
    state = WorldState(task_name=task_name, params=params, geom=geom, arms=arms,
                       gripper=np.zeros(len(arms)), gripper_cmd=np.zeros(len(arms)),
                       task=task)
    state.contact_wrench = [Wrench.zero() for _ in arms]
    return state


def hole_entry(state: WorldState) -> np.ndarray:
    """World position of the hole opening center (held by the support arm)."""
    support = state.arms[1]
    return support.position + support.rotation @ np.array([0.0, 0.0, state.geom.part_offset_z])


def _yaw(R: np.ndarray) -> float:
    return float(np.arctan2(R[1, 0], R[0, 0]))


def _friction(f_n: float, v_t: np.ndarray, params: SimParams) -> np.ndarray:
    speed = np.linalg.norm(v_t)
    if speed < 1e-12 or f_n <= 0.0:
        return np.zeros(3)
    return -params.friction_mu * f_n * np.tanh(speed / params.friction_vel_eps) * (v_t / speed)


def _plane_normal_force(pen: float, pen_rate: float, params: SimParams) -> float:
    if pen <= 0.0:
        return 0.0
    return max(0.0, params.contact_stiffness * pen + params.contact_damping * pen_rate)


def _contact_single_plane(body: BodyState, params: SimParams) -> tuple[np.ndarray, float, np.ndarray]:
    """Penalty contact of the tool point with the z=0 plane."""
    pen = -body.position[2]
    f_n = _plane_normal_force(pen, -body.velocity[2], params)
    v_t = body.velocity[:3].copy()
    v_t[2] = 0.0
    force = np.array([0.0, 0.0, f_n]) + _friction(f_n, v_t, params)
    return force, f_n, v_t


def _contact_insert(state: WorldState) -> tuple[np.ndarray, float]:
    """Force on the peg tip from the hole part; reaction goes to the holder.

    Returns (force_on_peg, normal_force_magnitude).
    """
    geom, params = state.geom, state.params
    peg = state.arms[0]
    entry = hole_entry(state)
    tip = peg.position
    lateral = tip[:2] - entry[:2]
    r = float(np.linalg.norm(lateral))
    top_z = entry[2]
    force = np.zeros(3)
    f_n = 0.0
    if tip[2] >= top_z:
        return force, f_n
    aligned = r <= geom.funnel_radius
    if isinstance(state.task, InsertTask) and state.task.cuboid:
        aligned = aligned and abs(_wrap_angle(_yaw(peg.rotation) - _yaw(state.arms[1].rotation))) <= geom.yaw_tol
    if aligned:
        wall = 0.5 * geom.hole_clearance  # tapered lead-in centers the peg
        if r > wall:
            f_lat = params.contact_stiffness * (r - wall)
            force[:2] = -f_lat * lateral / max(r, 1e-12)
            f_n = f_lat
        bottom_z = top_z - geom.hole_depth
        pen = bottom_z - tip[2]
        f_b = _plane_normal_force(pen, -peg.velocity[2], params)
        force[2] += f_b
        f_n = max(f_n, f_b)
    else:
        # missed the funnel: rests on the part's top face
        pen = top_z - tip[2]
        f_top = _plane_normal_force(pen, -peg.velocity[2], params)
        force[2] += f_top
        f_n = f_top
    return force, f_n


def _wrap_angle(a: float) -> float:
    return (a + np.pi) % (2 * np.pi) - np.pi


def task_grind_update(state: WorldState, f_n: float, v_t: np.ndarray, h: float) -> None:
    """Convert coarse powder to fine while pressing and sliding in the dish."""
    task: GrindTask = state.task
    tip = state.arms[0].position
    if float(np.hypot(tip[0], tip[1])) > state.geom.mortar_radius:
        return
    drive = max(0.0, f_n - state.params.f_min) * float(np.linalg.norm(v_t))
    if drive <= 0.0 or task.coarse <= 0.0:
        return
    frac = task.coarse / task.total
    d_fine = min(state.params.grind_rate * drive * frac * h, task.coarse)
    task.fine += d_fine


def task_erase_update(state: WorldState, f_n: float, v_t: np.ndarray, h: float) -> None:
    """Fade mark cells under the eraser footprint; too much force tears."""
    task: EraseTask = state.task
    if f_n <= 0.0:
        return
    if f_n > state.params.f_damage:
        task.damaged = True
    rate = state.params.erase_rate * max(0.0, f_n - state.params.f_min) * float(np.linalg.norm(v_t))
    if rate <= 0.0:
        return
    geom, g = state.geom, state.params.grid_size
    half, cell = geom.pad_half, 2 * geom.pad_half / g
    centers = -half + cell * (np.arange(g) + 0.5)
    pos = state.arms[0].position
    cols = np.abs(centers - pos[0]) <= geom.eraser_half
    rows = np.abs(centers - pos[1]) <= geom.eraser_half
    if cols.any() and rows.any():
        region = np.ix_(rows, cols)
        task.marks[region] = np.maximum(task.marks[region] - rate * h, 0.0)


def task_insert_check(state: WorldState) -> bool:
    """Inserted to depth, laterally within clearance, and released."""
    if not isinstance(state.task, InsertTask):
        return False
    task: InsertTask = state.task
    if task.peg_attached:
        return False
    entry = hole_entry(state)
    tip = task.peg_tip
    depth = entry[2] - tip[2]
    lateral = float(np.linalg.norm(tip[:2] - entry[:2]))
    return depth >= state.geom.target_depth and lateral <= state.geom.hole_clearance


def _release_peg(state: WorldState) -> None:
    """Detach and drop-project the peg onto whatever supports it."""
    task: InsertTask = state.task
    peg = state.arms[0]
    entry = hole_entry(state)
    tip = peg.position.copy()
    lateral = float(np.linalg.norm(tip[:2] - entry[:2]))
    if lateral <= state.geom.hole_clearance:
        tip[2] = entry[2] - state.geom.hole_depth  # falls to the hole bottom
    else:
        tip[2] = max(entry[2], 0.0)                # rests on the part top face
    task.peg_attached = False
    task.peg_tip = tip
    task.peg_yaw = _yaw(peg.rotation)


def step(state: WorldState, wrenches: list[Wrench], dt: float) -> WorldState:
    """Advance one control tick under zero-order-hold commanded wrenches."""
    if len(wrenches) != state.n_arms:
        raise ValueError(f"expected {state.n_arms} wrenches, got {len(wrenches)}")
    return _advance(state, lambda: wrenches, dt)


def step_targets(state: WorldState, targets, controllers, dt: float) -> WorldState:
    """Advance one tick with the impedance law re-evaluated every substep.

    targets: per arm (Pose, stiffness diagonal). The inner control loop runs
    at the physics rate, which keeps the spring-damper dissipative; a wrench
    held over a whole 20 ms tick can inject energy at desk stiffnesses.
    """
    from .compliance import impedance_wrench

    if len(targets) != state.n_arms:
        raise ValueError(f"expected {state.n_arms} targets, got {len(targets)}")

    def wrench_fn():
        return [impedance_wrench(body.pose, body.velocity, pose, k, ctl)
                for body, (pose, k), ctl in zip(state.arms, targets, controllers)]

    return _advance(state, wrench_fn, dt)


def _advance(state: WorldState, wrench_fn, dt: float) -> WorldState:
    params = state.params
    if abs(dt - params.dt) > 1e-12:
        raise ValueError(f"dt must equal 1/control_rate = {params.dt}, got {dt}")
    h = dt / params.substeps
    inv_m = 1.0 / params.body_mass
    inv_i = 1.0 / params.body_inertia

    for _ in range(params.substeps):
        wrenches = wrench_fn()
        contact_forces = [np.zeros(3) for _ in state.arms]
        task_fn, task_vt = 0.0, np.zeros(3)

        if state.task_name in ("grind", "erase"):
            force, f_n, v_t = _contact_single_plane(state.arms[0], params)
            if state.task_name == "grind":
                # the dish floor only exists inside the mortar footprint
                tip = state.arms[0].position
                inside = float(np.hypot(tip[0], tip[1])) <= state.geom.mortar_radius
                if not inside:
                    force, f_n, v_t = np.zeros(3), 0.0, np.zeros(3)
            contact_forces[0] = force
            task_fn, task_vt = f_n, v_t
        elif isinstance(state.task, InsertTask) and state.task.peg_attached:
            force, f_n = _contact_insert(state)
            contact_forces[0] = force
            contact_forces[1] = -force  # reaction on the supporting arm
            task_fn = f_n

        # semi-implicit Euler on every arm
        for i, body in enumerate(state.arms):
            f = wrenches[i].force + contact_forces[i]
            tau = wrenches[i].torque
            body.velocity[:3] += h * f * inv_m
            body.velocity[3:] += h * tau * inv_i
            body.position += h * body.velocity[:3]
            body.rotation = so3_exp(body.velocity[3:] * h) @ body.rotation

        # gripper first-order lag toward the commanded opening
        alpha = min(1.0, h / params.gripper_tau)
        state.gripper += alpha * (state.gripper_cmd - state.gripper)

        if state.task_name == "grind":
            task_grind_update(state, task_fn, task_vt, h)
        elif state.task_name == "erase":
            task_erase_update(state, task_fn, task_vt, h)
        elif isinstance(state.task, InsertTask):
            if state.task.peg_attached and state.gripper[0] >= 0.5:
                _release_peg(state)

        state.contact_wrench = [Wrench(cf.copy(), np.zeros(3)) for cf in contact_forces]
        state.time += h

    for body in state.arms:
        # re-orthonormalize against float drift from incremental rotation
        body.rotation = sixd_to_rotmat(np.concatenate([body.rotation[:, 0], body.rotation[:, 1]]))
        speed = float(np.linalg.norm(body.velocity[:3]))
        spin = float(np.linalg.norm(body.velocity[3:]))
        if speed > params.max_speed or spin > params.max_speed:
            raise Diverged(f"body speed {max(speed, spin):.2f} exceeds {params.max_speed}")
    state.tick += 1
    return state


# ---------------------------------------------------------------------------
# observation rendering


def _window_half(state: WorldState) -> float:
    return {"grind": state.geom.window_half_grind,
            "erase": state.geom.window_half_erase}.get(state.task_name,
                                                       state.geom.window_half_insert)


def _cell_index(x: float, half: float, g: int) -> int:
    return int(np.clip((x + half) / (2 * half) * g, 0, g - 1))


def render_grid(state: WorldState) -> np.ndarray:
    """Top-down intensity image of the task state, values in [0, 1]."""
    g = state.params.grid_size
    half = _window_half(state)
    grid = np.zeros((g, g))
    if state.task_name == "grind":
        task: GrindTask = state.task
        centers = -half + 2 * half / g * (np.arange(g) + 0.5)
        xx, yy = np.meshgrid(centers, centers)
        inside = xx ** 2 + yy ** 2 <= state.geom.mortar_radius ** 2
        grid[inside] = task.coarse / task.total
        tip = state.arms[0].position
        if abs(tip[0]) < half and abs(tip[1]) < half:
            grid[_cell_index(tip[1], half, g), _cell_index(tip[0], half, g)] = 1.0
    elif state.task_name == "erase":
        grid = state.task.marks.copy()
    else:
        task: InsertTask = state.task
        entry = hole_entry(state)
        r_part, r_hole = 0.02, state.geom.hole_clearance + 0.002
        centers = -half + 2 * half / g * (np.arange(g) + 0.5)
        xx, yy = np.meshgrid(centers, centers)
        part = (xx - entry[0]) ** 2 + (yy - entry[1]) ** 2 <= r_part ** 2
        hole = (xx - entry[0]) ** 2 + (yy - entry[1]) ** 2 <= r_hole ** 2
        grid[part] = 0.5
        grid[hole] = 0.0
        tip = state.arms[0].position if task.peg_attached else task.peg_tip
        if abs(tip[0]) < half and abs(tip[1]) < half:
            grid[_cell_index(tip[1], half, g), _cell_index(tip[0], half, g)] = 1.0
    return grid


def render_tick(state: WorldState, arm: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-tick (pose9, wrench6, grid) for one arm; pure function of state."""
    body = state.arms[arm]
    pose9 = np.concatenate([body.position, rotmat_to_6d(body.rotation)])
    wrench = state.contact_wrench[arm].as_vector()
    return pose9, wrench, render_grid(state)
