import json

import numpy as np
import pytest

from pliant.cli import main
from pliant.config import default_config, load_config
from pliant.datastore import load_dataset
from pliant.errors import ConfigError

TINY_MODEL = {"d_model": 32, "n_heads": 2, "n_encoder_layers": 1, "n_decoder_layers": 1,
              "horizon": 8, "n_diffusion_steps": 20, "grid_size": 24, "patch_size": 12}


def test_defaults_valid():
    cfg = load_config()
    assert cfg.task == "erase"
    assert cfg.model.horizon == 48
    assert cfg.sim.control_rate_hz == 50.0


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as ei:
        load_config(overrides={"sim": {"gravity": 9.8}})
    assert ei.value.category == "config.unknown_key"


def test_unknown_task_category():
    with pytest.raises(ConfigError) as ei:
        load_config(overrides={"task": "juggle"})
    assert ei.value.category == "config.unknown_task"


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"task": "grind", "training": {"steps": 123}}))
    cfg = load_config(path)
    assert cfg.task == "grind"
    assert cfg.raw["training"]["steps"] == 123
    assert cfg.raw["training"]["batch_size"] == default_config()["training"]["batch_size"]


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError) as ei:
        load_config(tmp_path / "nope.json")
    assert ei.value.category == "config.missing_file"


def test_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.category == "config.bad_json"


# ---------------------------------------------------------------------------
# CLI


def _write_tiny_config(tmp_path, **extra):
    cfg = {"model": TINY_MODEL, "episode_ticks": {"grind": 300, "erase": 300,
                                                  "round_insert": 400, "cuboid_insert": 400},
           "training": {"steps": 60, "batch_size": 4, "lr": 1e-3, "seed": 0,
                        "log_every": 20},
           "episode_date": "2026-02-03"}
    cfg.update(extra)
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(cfg))
    return path


def test_cli_unknown_task_exit_code_and_category(tmp_path, capsys):
    rc = main(["collect", "--task", "juggle", "--episodes", "1",
               "--out", str(tmp_path / "o")])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("error config.unknown_task:")
    assert "\n" not in err.strip()  # single line, machine parseable


def test_cli_full_pipeline(tmp_path, capsys):
    cfgp = _write_tiny_config(tmp_path)
    data = tmp_path / "demos"
    rc = main(["--config", str(cfgp), "collect", "--task", "round_insert",
               "--episodes", "2", "--expert", "--seed", "7", "--out", str(data)])
    assert rc == 0
    files = sorted((data / "round_insert").glob("*.ep"))
    assert len(files) == 2
    assert (data / "config.json").exists()  # provenance copy

    run = tmp_path / "run1"
    rc = main(["--config", str(cfgp), "train", "--data", str(data),
               "--out", str(run), "--steps", "60"])
    assert rc == 0
    out = capsys.readouterr().out
    assert (run / "model.ckpt").exists()
    assert (run / "train_log.txt").exists()
    log_lines = (run / "train_log.txt").read_text().strip().splitlines()
    assert any(line.startswith("step ") for line in log_lines)
    # loss decreased between the first and last logged step
    import re

    losses = [float(re.search(r"loss (\d+\.\d+)", ln).group(1))
              for ln in log_lines if "loss" in ln]
    assert losses[-1] < losses[0]

    rolls = tmp_path / "rolls"
    rc = main(["--config", str(cfgp), "rollout", "--weights", str(run / "model.ckpt"),
               "--task", "round_insert", "--episodes", "2", "--seed", "3",
               "--out", str(rolls)])
    assert rc == 0
    eps = load_dataset(rolls, "round_insert")
    assert len(eps) == 2
    assert all(ep.meta["source"] == "policy" for ep in eps)

    evald = tmp_path / "eval"
    rc = main(["--config", str(cfgp), "eval", "--episodes", str(rolls),
               "--out", str(evald)])
    assert rc == 0
    assert (evald / "metrics.csv").exists()
    assert (evald / "force_profile.csv").exists()


def test_cli_collect_deterministic_given_seed(tmp_path):
    cfgp = _write_tiny_config(tmp_path)
    for d in ("a", "b"):
        rc = main(["--config", str(cfgp), "collect", "--task", "round_insert",
                   "--episodes", "1", "--expert", "--seed", "5",
                   "--out", str(tmp_path / d)])
        assert rc == 0
    fa = sorted((tmp_path / "a" / "round_insert").glob("*.ep"))[0]
    fb = sorted((tmp_path / "b" / "round_insert").glob("*.ep"))[0]
    assert fa.read_bytes() == fb.read_bytes()
