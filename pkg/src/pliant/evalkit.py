"""Task metrics, force-profile aggregation, and the regression baseline.

All metrics are pure functions of recorded episodes; evaluation never
mutates its inputs. Force profiles align episodes at the start tick and run
to the shortest episode so every tick aggregates the same episode count.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datastore import Episode
from .errors import EmptySet
from .runtime import EnsembleBuffer, denormalize_action, ensemble_action, normalize_observation
from .train import train_bc as bc_baseline_train  # noqa: F401  (re-export)


def normal_force(ep: Episode) -> np.ndarray:
    """Per-tick normal contact force: upward component, clamped at zero."""
    return np.maximum(ep.wrench[:, 2].astype(np.float64), 0.0)


def force_profile(episodes: list[Episode]) -> tuple[np.ndarray, np.ndarray]:
    """Per-tick mean and population std of normal contact force."""
    if not episodes:
        raise EmptySet("force_profile needs at least one episode")
    n = min(ep.n_ticks for ep in episodes)
    forces = np.stack([normal_force(ep)[:n] for ep in episodes])
    return forces.mean(axis=0), forces.std(axis=0)


def write_force_profile_csv(path: str | Path, mean: np.ndarray, std: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tick", "mean_N", "std_N"])
        for t, (m, s) in enumerate(zip(mean, std)):
            w.writerow([t, repr(float(m)), repr(float(s))])


def metric_fine_powder(ep: Episode) -> float:
    """Fine-powder fraction at episode end, read off the final grid frame.

    Inside the dish the rendered intensity is the coarse fraction; the
    median over dish cells ignores the single tool-marker cell.
    """
    render = ep.meta.get("render", {})
    half = float(render.get("window_half", 0.06))
    radius = float(render.get("mortar_radius", 0.05))
    g = ep.grid.shape[-1]
    centers = -half + 2 * half / g * (np.arange(g) + 0.5)
    xx, yy = np.meshgrid(centers, centers)
    inside = xx ** 2 + yy ** 2 <= radius ** 2
    coarse = float(np.median(ep.grid[-1][inside]))
    return float(np.clip(1.0 - coarse, 0.0, 1.0))


ERASE_SUCCESS_THRESHOLD = 0.99


def metric_erased(ep: Episode) -> tuple[float, bool]:
    """Erased fraction from first/final mark grids; success at >= 0.99."""
    initial = float(ep.grid[0].sum())
    if initial <= 0.0:
        return 1.0, not ep.meta.get("damaged", False)
    fraction = float(np.clip(1.0 - ep.grid[-1].sum() / initial, 0.0, 1.0))
    success = fraction >= ERASE_SUCCESS_THRESHOLD and not ep.meta.get("damaged", False)
    return fraction, success


def metric_insertion(ep: Episode) -> bool:
    """Insert success recorded at rollout time by the simulator's check."""
    return bool(ep.meta.get("success", False))


def evaluate_episodes(episodes: list[Episode]) -> list[dict]:
    """One metrics row per episode: id, task, metric, success."""
    if not episodes:
        raise EmptySet("no episodes to evaluate")
    rows = []
    for ep in episodes:
        task = ep.meta.get("task", "unknown")
        if task == "grind":
            value = metric_fine_powder(ep)
            success = value >= 0.7
        elif task == "erase":
            value, success = metric_erased(ep)
        elif task in ("round_insert", "cuboid_insert"):
            success = metric_insertion(ep)
            value = 1.0 if success else 0.0
        else:
            value = float(ep.meta.get("metric", 0.0))
            success = bool(ep.meta.get("success", False))
        rows.append({
            "episode": f"{task}-s{ep.meta.get('seed', '?')}-{ep.meta.get('source', '?')}",
            "task": task,
            "metric": value,
            "success": success,
        })
    return rows


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode", "task", "metric", "success"])
        for r in rows:
            w.writerow([r["episode"], r["task"], repr(float(r["metric"])), int(r["success"])])


# ---------------------------------------------------------------------------
# regression-baseline rollout (no diffusion anywhere)


def bc_baseline_rollout(bc, env, stats, *, replan_interval: int, ensemble_decay: float,
                        seed: int) -> Episode:
    """Chunked execution of the regression baseline through the same ensemble."""
    from .datastore import Episode as _Episode

    replan_interval = min(replan_interval, bc.horizon)  # keep every tick covered
    buffer = EnsembleBuffer(bc.horizon, replan_interval, ensemble_decay)
    obs = env.observe(0)
    rows = {"pose9": [], "wrench": [], "grid": [], "action": []}
    while not env.done:
        tick = env.tick
        buffer.evict_expired(tick)
        if tick % replan_interval == 0:
            with ad.no_grad():
                chunk = bc.predict_chunk(normalize_observation(obs, stats))
            buffer.push(chunk, tick)
        action = denormalize_action(ensemble_action(buffer, tick), stats)
        rows["pose9"].append(obs.pose9[1])
        rows["wrench"].append(obs.wrench[1])
        rows["grid"].append(obs.grid[1])
        rows["action"].append(action)
        obs = env.apply_action(action)
    return _Episode(
        meta=env.episode_meta(seed, "bc"),
        pose9=np.asarray(rows["pose9"], dtype=np.float32),
        wrench=np.asarray(rows["wrench"], dtype=np.float32),
        grid=np.asarray(rows["grid"], dtype=np.float32),
        action=np.asarray(rows["action"], dtype=np.float32),
    )
