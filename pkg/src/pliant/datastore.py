"""Episode files, dataset loading, chunk extraction, normalization stats.

One file per episode: a short text header (magic line, JSON metadata line,
array count line) followed by raw little-endian float32 arrays, each
prefixed with a name/dtype/shape record. The binary layout matches the
weight checkpoint container so both round-trip bit-exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import CorruptFile, EmptyDataset, VersionMismatch
from .runtime import STD_FLOOR, NormalizationStats, normalize_action

MAGIC_LINE = b"#EPISODE v1\n"
ARRAY_NAMES = ("pose9", "wrench", "grid", "action")


@dataclass
class Episode:
    """Per-tick arrays plus free-form metadata; all arrays share length T."""

    meta: dict
    pose9: np.ndarray   # [T, 9]
    wrench: np.ndarray  # [T, 6]
    grid: np.ndarray    # [T, G, G]
    action: np.ndarray  # [T, 16]

    def __post_init__(self):
        lengths = {name: getattr(self, name).shape[0] for name in ARRAY_NAMES}
        if len(set(lengths.values())) != 1:
            raise ValueError(f"array lengths differ: {lengths}")

    @property
    def n_ticks(self) -> int:
        return self.pose9.shape[0]


def write_episode(path: str | Path, ep: Episode) -> None:
    import json

    blob = bytearray()
    blob += MAGIC_LINE
    blob += json.dumps(ep.meta, sort_keys=True).encode("utf-8") + b"\n"
    blob += f"#ARRAYS {len(ARRAY_NAMES)}\n".encode("ascii")
    for name in ARRAY_NAMES:
        arr = np.ascontiguousarray(getattr(ep, name), dtype="<f4")
        name_b = name.encode("ascii")
        blob += struct.pack("<H", len(name_b)) + name_b
        blob += struct.pack("<BB", 0, arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(blob))


def read_episode(path: str | Path) -> Episode:
    import json

    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CorruptFile("unexpected end of episode file", offset=pos)
        out = buf[pos:pos + n]
        pos += n
        return out

    def take_line() -> bytes:
        nonlocal pos
        end = buf.find(b"\n", pos)
        if end < 0:
            raise CorruptFile("missing newline in header", offset=pos)
        out = buf[pos:end + 1]
        pos = end + 1
        return out

    first = take_line()
    if not first.startswith(b"#EPISODE v"):
        raise CorruptFile("bad episode magic", offset=0)
    if first != MAGIC_LINE:
        raise VersionMismatch(f"unsupported episode version {first.strip().decode()}")
    try:
        meta = json.loads(take_line().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"bad metadata: {e}", offset=len(MAGIC_LINE)) from e
    count_line = take_line()
    if not count_line.startswith(b"#ARRAYS "):
        raise CorruptFile("missing array count line", offset=pos - len(count_line))
    n_arrays = int(count_line.split()[1])

    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("ascii")
        tag, rank = struct.unpack("<BB", take(2))
        if tag != 0:
            raise CorruptFile(f"unknown dtype tag {tag} in '{name}'", offset=pos - 2)
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(take(n * 4), dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(buf):
        raise CorruptFile("trailing bytes after last array", offset=pos)
    missing = [n for n in ARRAY_NAMES if n not in arrays]
    if missing:
        raise CorruptFile(f"episode file lacks arrays {missing}", offset=pos)
    return Episode(meta=meta, **{n: arrays[n] for n in ARRAY_NAMES})


def episode_filename(index: int, seed: int) -> str:
    return f"{index:05d}-s{seed}.ep"


def write_dataset(root: str | Path, task: str, episodes: list[Episode]) -> list[Path]:
    paths = []
    for i, ep in enumerate(episodes):
        p = Path(root) / task / episode_filename(i, int(ep.meta.get("seed", i)))
        write_episode(p, ep)
        paths.append(p)
    return paths


def load_dataset(root: str | Path, task: str | None = None) -> list[Episode]:
    root = Path(root)
    base = root / task if task else root
    files = sorted(base.rglob("*.ep"))
    return [read_episode(f) for f in files]


# ---------------------------------------------------------------------------
# stats and batching


def compute_stats(episodes: list[Episode]) -> NormalizationStats:
    """Single deterministic pass over every tick of every episode."""
    if not episodes:
        raise EmptyDataset("cannot compute stats from zero episodes")
    pose = np.concatenate([ep.pose9 for ep in episodes]).astype(np.float64)
    wrench = np.concatenate([ep.wrench for ep in episodes]).astype(np.float64)
    action = np.concatenate([ep.action for ep in episodes]).astype(np.float64)
    return NormalizationStats(
        obs_pose_mean=pose.mean(axis=0),
        obs_pose_std=pose.std(axis=0),
        obs_wrench_mean=wrench.mean(axis=0),
        obs_wrench_std=wrench.std(axis=0),
        act_pose_mean=action[:, :9].mean(axis=0),
        act_pose_std=action[:, :9].std(axis=0),
        act_grip_min=float(action[:, 9].min()),
        act_grip_max=float(action[:, 9].max()),
        act_stiff_min=action[:, 10:16].min(axis=0),
        act_stiff_max=action[:, 10:16].max(axis=0),
    )


def constant_dims(stats: NormalizationStats) -> dict[str, np.ndarray]:
    """Boolean masks of dimensions flagged constant."""
    return {
        "obs_pose": stats.obs_pose_std <= STD_FLOOR,
        "obs_wrench": stats.obs_wrench_std <= STD_FLOOR,
        "act_pose": stats.act_pose_std <= STD_FLOOR,
        "act_grip": np.array([stats.act_grip_max - stats.act_grip_min <= STD_FLOOR]),
        "act_stiff": (stats.act_stiff_max - stats.act_stiff_min) <= STD_FLOOR,
    }


class TrainBatch(NamedTuple):
    grid: np.ndarray    # [B, 2, G, G]
    pose: np.ndarray    # [B, 2, 9]   normalized
    wrench: np.ndarray  # [B, 2, 6]   normalized
    chunk: np.ndarray   # [B, H, 16]  normalized actions


def extract_chunk(ep: Episode, t: int, horizon: int) -> np.ndarray:
    """Actions [t, t+H); past the end the final action repeats."""
    avail = ep.action[t:t + horizon]
    if avail.shape[0] < horizon:
        pad = np.repeat(ep.action[-1:], horizon - avail.shape[0], axis=0)
        avail = np.concatenate([avail, pad])
    return avail


def draw_indices(episodes: list[Episode], batch: int,
                 rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform draw over all (episode, tick) pairs."""
    if not episodes:
        raise EmptyDataset("cannot sample from zero episodes")
    cum = np.cumsum([ep.n_ticks for ep in episodes])
    flat = rng.integers(0, cum[-1], size=batch)
    out = []
    for f in flat:
        e = int(np.searchsorted(cum, f, side="right"))
        out.append((e, int(f - (cum[e - 1] if e else 0))))
    return out


def sample_batch(episodes: list[Episode], stats: NormalizationStats, batch: int,
                 horizon: int, rng: np.random.Generator) -> TrainBatch:
    """Uniform over all (episode, tick) pairs; observation pair is (t-1, t)."""
    grids, poses, wrenches, chunks = [], [], [], []
    for e, t in draw_indices(episodes, batch, rng):
        ep = episodes[e]
        prev = max(t - 1, 0)
        grids.append(np.stack([ep.grid[prev], ep.grid[t]]))
        poses.append(np.stack([ep.pose9[prev], ep.pose9[t]]))
        wrenches.append(np.stack([ep.wrench[prev], ep.wrench[t]]))
        chunks.append(extract_chunk(ep, t, horizon))
    pose = np.asarray(poses, dtype=np.float64)
    wrench = np.asarray(wrenches, dtype=np.float64)
    from .runtime import _z  # same z-scoring as single-sample normalization

    return TrainBatch(
        grid=np.asarray(grids, dtype=np.float64),
        pose=_z(pose, stats.obs_pose_mean, stats.obs_pose_std),
        wrench=_z(wrench, stats.obs_wrench_mean, stats.obs_wrench_std),
        chunk=normalize_action(np.asarray(chunks, dtype=np.float64), stats),
    )
