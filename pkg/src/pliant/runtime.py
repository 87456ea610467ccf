"""Normalization, chunk scheduling, and temporal ensembling.

Pose and wrench dimensions are z-scored; gripper and stiffness are min-max
mapped to [-1, 1] (demo stiffness is two discrete presets, so min-max keeps
it bounded and invertible). Constant dimensions normalize to 0 and
denormalize back to their constant.

Overlapping chunks are blended per tick with ACT-style weights: the chunks
covering a tick are ordered oldest first and chunk i gets exp(-m * i), so
older predictions dominate and replan transitions stay smooth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import diffusion as dif
from .denoiser import ObservationInput
from .errors import InferenceFailure, MissingStats, NoCoverage
from .simworld import Observation

STD_FLOOR = 1e-8


@dataclass
class NormalizationStats:
    obs_pose_mean: np.ndarray
    obs_pose_std: np.ndarray
    obs_wrench_mean: np.ndarray
    obs_wrench_std: np.ndarray
    act_pose_mean: np.ndarray
    act_pose_std: np.ndarray
    act_grip_min: float
    act_grip_max: float
    act_stiff_min: np.ndarray
    act_stiff_max: np.ndarray

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()}

    @staticmethod
    def from_dict(d: dict) -> "NormalizationStats":
        args = {k: (np.asarray(v, dtype=np.float64) if isinstance(v, list) else float(v))
                for k, v in d.items()}
        return NormalizationStats(**args)


def _require(stats: NormalizationStats | None) -> NormalizationStats:
    if stats is None:
        raise MissingStats("normalization stats not computed")
    return stats


def _z(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    live = std > STD_FLOOR
    out = np.zeros_like(x, dtype=np.float64)
    out[..., live] = (x[..., live] - mean[live]) / std[live]
    return out


def _z_inv(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    live = std > STD_FLOOR
    out = np.empty_like(x, dtype=np.float64)
    out[..., live] = x[..., live] * std[live] + mean[live]
    out[..., ~live] = mean[~live]
    return out


def _minmax(x, lo, hi):
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    span = hi - lo
    live = span > STD_FLOOR
    out = np.zeros_like(np.asarray(x, dtype=np.float64))
    out[..., live] = 2.0 * (np.asarray(x)[..., live] - lo[live]) / span[live] - 1.0
    return out


def _minmax_inv(x, lo, hi):
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    span = hi - lo
    live = span > STD_FLOOR
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    out[..., live] = (np.asarray(x)[..., live] + 1.0) * span[live] / 2.0 + lo[live]
    out[..., ~live] = lo[~live]
    return out


def normalize_observation(obs: Observation, stats: NormalizationStats) -> ObservationInput:
    stats = _require(stats)
    return ObservationInput(
        grid=np.asarray(obs.grid, dtype=np.float64),  # already in [0, 1]
        pose=_z(np.asarray(obs.pose9), stats.obs_pose_mean, stats.obs_pose_std),
        wrench=_z(np.asarray(obs.wrench), stats.obs_wrench_mean, stats.obs_wrench_std),
    )


def normalize_action(a: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    stats = _require(stats)
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    out[..., :9] = _z(a[..., :9], stats.act_pose_mean, stats.act_pose_std)
    out[..., 9:10] = _minmax(a[..., 9:10], np.array([stats.act_grip_min]),
                             np.array([stats.act_grip_max]))
    out[..., 10:16] = _minmax(a[..., 10:16], stats.act_stiff_min, stats.act_stiff_max)
    return out


def denormalize_action(a: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    stats = _require(stats)
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    out[..., :9] = _z_inv(a[..., :9], stats.act_pose_mean, stats.act_pose_std)
    out[..., 9:10] = _minmax_inv(a[..., 9:10], np.array([stats.act_grip_min]),
                                 np.array([stats.act_grip_max]))
    out[..., 10:16] = _minmax_inv(a[..., 10:16], stats.act_stiff_min, stats.act_stiff_max)
    return out


# ---------------------------------------------------------------------------
# temporal ensemble


class EnsembleBuffer:
    """Ring of (chunk, birth_tick) entries with exponential age weighting."""

    def __init__(self, horizon: int, replan_interval: int, decay: float):
        self.horizon = horizon
        self.replan_interval = replan_interval
        self.decay = decay
        self.max_live = int(np.ceil(horizon / replan_interval)) + 1
        self.entries: list[tuple[np.ndarray, int]] = []

    def push(self, chunk: np.ndarray, birth_tick: int) -> None:
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.shape[0] != self.horizon:
            raise ValueError(f"chunk length {chunk.shape[0]} != horizon {self.horizon}")
        self.entries.append((chunk, birth_tick))
        self.entries.sort(key=lambda e: e[1])
        if len(self.entries) > self.max_live:
            self.entries = self.entries[-self.max_live:]

    def evict_expired(self, tick: int) -> None:
        self.entries = [e for e in self.entries if e[1] + self.horizon > tick]

    def covering(self, tick: int) -> list[tuple[np.ndarray, int]]:
        return [e for e in self.entries if e[1] <= tick < e[1] + self.horizon]


def ensemble_action(buffer: EnsembleBuffer, tick: int) -> np.ndarray:
    """Weighted average of every chunk's prediction for this tick.

    Covering chunks ordered oldest first get weights exp(-m * i); weights
    are normalized to sum to one.
    """
    covering = buffer.covering(tick)
    if not covering:
        raise NoCoverage(f"no chunk covers tick {tick}")
    weights = np.exp(-buffer.decay * np.arange(len(covering)))
    weights /= weights.sum()
    out = np.zeros_like(covering[0][0][0])
    for w, (chunk, birth) in zip(weights, covering):
        out += w * chunk[tick - birth]
    return out


# ---------------------------------------------------------------------------
# policy rollout


def run_policy(model, env, stats: NormalizationStats, sched, *,
               replan_interval: int, n_infer_steps: int, ensemble_decay: float,
               seed: int, source: str = "policy"):
    """Roll one episode: replan every replan_interval ticks, blend, execute.

    The env must already be reset; the seed drives only the sampler noise.
    Returns a datastore Episode of what was observed and executed.
    """
    from .datastore import Episode  # local import keeps the module DAG acyclic

    rng = np.random.default_rng(seed)
    replan_interval = min(replan_interval, model.horizon)  # keep every tick covered
    buffer = EnsembleBuffer(model.horizon, replan_interval, ensemble_decay)
    obs = env.observe(0)
    rows = {"pose9": [], "wrench": [], "grid": [], "action": []}
    while not env.done:
        tick = env.tick
        buffer.evict_expired(tick)
        if tick % replan_interval == 0:
            with ad.no_grad():
                tokens = model.encode_observation(normalize_observation(obs, stats))
            chunk = dif.sample(model, tokens, sched, n_infer_steps, rng)
            if not np.all(np.isfinite(chunk)):
                raise InferenceFailure(f"non-finite chunk sampled at tick {tick}")
            buffer.push(chunk, tick)
        action = denormalize_action(ensemble_action(buffer, tick), stats)
        rows["pose9"].append(obs.pose9[1])
        rows["wrench"].append(obs.wrench[1])
        rows["grid"].append(obs.grid[1])
        rows["action"].append(action)
        obs = env.apply_action(action)

    return Episode(
        meta=env.episode_meta(seed, source),
        pose9=np.asarray(rows["pose9"], dtype=np.float32),
        wrench=np.asarray(rows["wrench"], dtype=np.float32),
        grid=np.asarray(rows["grid"], dtype=np.float32),
        action=np.asarray(rows["action"], dtype=np.float32),
    )
