import numpy as np
import pytest

from pliant.datastore import (
    draw_indices,
    Episode,
    compute_stats,
    constant_dims,
    extract_chunk,
    load_dataset,
    read_episode,
    sample_batch,
    write_dataset,
    write_episode,
)
from pliant.errors import CorruptFile, EmptyDataset, VersionMismatch
from pliant.runtime import denormalize_action, normalize_action

G = 4


def _episode(rng, ticks=20, seed=0, grip=None, stiff_values=(300.0, 800.0)):
    action = rng.normal(size=(ticks, 16)).astype(np.float32)
    action[:, 9] = rng.uniform(0, 1, ticks) if grip is None else grip
    action[:, 10:16] = rng.choice(stiff_values, size=(ticks, 1))
    return Episode(
        meta={"task": "erase", "seed": seed, "source": "expert", "success": True,
              "metric": 1.0, "control_rate_hz": 50.0, "date": "2026-01-01",
              "stiffness_presets": []},
        pose9=rng.normal(size=(ticks, 9)).astype(np.float32),
        wrench=rng.normal(size=(ticks, 6)).astype(np.float32),
        grid=rng.uniform(0, 1, size=(ticks, G, G)).astype(np.float32),
        action=action,
    )


def test_write_read_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    ep = _episode(rng)
    path = tmp_path / "e.ep"
    write_episode(path, ep)
    back = read_episode(path)
    assert back.meta == ep.meta
    for name in ("pose9", "wrench", "grid", "action"):
        assert getattr(back, name).tobytes() == getattr(ep, name).tobytes()
    # identical content -> identical bytes
    path2 = tmp_path / "e2.ep"
    write_episode(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_truncated_file_corrupt_with_offset(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "e.ep"
    write_episode(path, _episode(rng))
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(CorruptFile) as ei:
        read_episode(path)
    assert ei.value.offset > 0


def test_bad_magic_and_version(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "e.ep"
    write_episode(path, _episode(rng))
    blob = bytearray(path.read_bytes())
    good = bytes(blob)
    blob[:4] = b"#EPX"
    path.write_bytes(bytes(blob))
    with pytest.raises(CorruptFile):
        read_episode(path)
    path.write_bytes(good.replace(b"#EPISODE v1", b"#EPISODE v9", 1))
    with pytest.raises(VersionMismatch):
        read_episode(path)


def test_trailing_bytes_rejected(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "e.ep"
    write_episode(path, _episode(rng))
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CorruptFile):
        read_episode(path)


def test_mismatched_lengths_rejected():
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        Episode(meta={}, pose9=np.zeros((5, 9)), wrench=np.zeros((4, 6)),
                grid=np.zeros((5, G, G)), action=np.zeros((5, 16)))


def test_dataset_directory_round_trip_and_tick_count(tmp_path):
    rng = np.random.default_rng(5)
    episodes = [_episode(rng, ticks=10 + i, seed=i) for i in range(6)]
    write_dataset(tmp_path, "erase", episodes)
    loaded = load_dataset(tmp_path, "erase")
    assert len(loaded) == 6
    assert sum(ep.n_ticks for ep in loaded) == sum(ep.n_ticks for ep in episodes)
    # <task>/<episode-id>.ep layout
    assert all(p.parent.name == "erase" for p in (tmp_path / "erase").glob("*.ep"))


# ---------------------------------------------------------------------------
# stats


def test_single_constant_episode_flags_all_constant():
    ep = Episode(meta={}, pose9=np.ones((8, 9), np.float32),
                 wrench=np.zeros((8, 6), np.float32),
                 grid=np.zeros((8, G, G), np.float32),
                 action=np.tile(np.arange(16, dtype=np.float32), (8, 1)))
    stats = compute_stats([ep])
    flags = constant_dims(stats)
    assert all(mask.all() for mask in flags.values())


def test_two_value_stiffness_minmax_equals_presets():
    rng = np.random.default_rng(6)
    eps = [_episode(rng, stiff_values=(300.0, 800.0)) for _ in range(3)]
    stats = compute_stats(eps)
    np.testing.assert_array_equal(stats.act_stiff_min, np.full(6, 300.0))
    np.testing.assert_array_equal(stats.act_stiff_max, np.full(6, 800.0))


def test_stats_match_independent_recomputation():
    rng = np.random.default_rng(7)
    eps = [_episode(rng, ticks=15 + i) for i in range(4)]
    stats = compute_stats(eps)
    # second, element-loop implementation
    rows = np.concatenate([ep.pose9.astype(np.float64) for ep in eps])
    for d in range(9):
        col = rows[:, d]
        mean = sum(col) / len(col)
        var = sum((x - mean) ** 2 for x in col) / len(col)
        assert abs(stats.obs_pose_mean[d] - mean) < 1e-9
        assert abs(stats.obs_pose_std[d] - np.sqrt(var)) < 1e-9


def test_empty_dataset_errors():
    with pytest.raises(EmptyDataset):
        compute_stats([])
    with pytest.raises(EmptyDataset):
        sample_batch([], None, 4, 8, np.random.default_rng(0))


def test_normalize_round_trip_on_stored_actions():
    rng = np.random.default_rng(8)
    eps = [_episode(rng) for _ in range(3)]
    stats = compute_stats(eps)
    for ep in eps:
        a = ep.action.astype(np.float64)
        np.testing.assert_allclose(denormalize_action(normalize_action(a, stats), stats),
                                   a, atol=1e-9)


# ---------------------------------------------------------------------------
# batching


def test_chunk_padding_repeats_final_action():
    rng = np.random.default_rng(9)
    ep = _episode(rng, ticks=10)
    chunk = extract_chunk(ep, 8, horizon=6)
    np.testing.assert_array_equal(chunk[0], ep.action[8])
    np.testing.assert_array_equal(chunk[1], ep.action[9])
    for row in chunk[2:]:
        np.testing.assert_array_equal(row, ep.action[9])
    # tick exactly at the end: the final action repeated H times
    chunk = extract_chunk(ep, 9, horizon=4)
    for row in chunk:
        np.testing.assert_array_equal(row, ep.action[9])


def test_sample_batch_deterministic():
    rng = np.random.default_rng(10)
    eps = [_episode(rng, ticks=12 + i) for i in range(3)]
    stats = compute_stats(eps)
    b1 = sample_batch(eps, stats, 8, 6, np.random.default_rng(42))
    b2 = sample_batch(eps, stats, 8, 6, np.random.default_rng(42))
    for a, b in zip(b1, b2):
        np.testing.assert_array_equal(a, b)


def test_sample_batch_observation_pair_semantics():
    rng = np.random.default_rng(11)
    eps = [_episode(rng, ticks=10)]
    stats = compute_stats(eps)
    # tick 0 duplicates itself as its own predecessor; later ticks use t-1
    batch = sample_batch(eps, stats, 64, 4, np.random.default_rng(0))
    assert batch.pose.shape == (64, 2, 9)
    assert batch.grid.shape == (64, 2, G, G)
    assert batch.chunk.shape == (64, 4, 16)


def test_tick_sampling_uniform():
    rng = np.random.default_rng(12)
    eps = [_episode(rng, ticks=7), _episode(rng, ticks=13)]
    total = 20
    n_draws = 100_000
    counts = np.zeros((2, 13))
    for e, t in draw_indices(eps, n_draws, np.random.default_rng(123)):
        counts[e, t] += 1
    assert counts[0, 7:].sum() == 0  # no out-of-range ticks
    # chi-square style: every live cell within 3 sigma of uniform expectation
    expect = n_draws / total
    sigma = np.sqrt(n_draws * (1 / total) * (1 - 1 / total))
    live = np.concatenate([counts[0, :7], counts[1]])
    assert np.all(np.abs(live - expect) <= 3 * sigma)
