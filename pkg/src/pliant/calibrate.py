"""Sweep the grind/erase rate constants against the scripted experts.

The contact-task rates cannot be derived from first principles, so they are
set empirically: run the expert across seeds for each candidate value and
pick the smallest one whose worst-case metric clears the target with margin.
The chosen values are recorded in the default config.

Usage: python -m pliant.calibrate [--task grind|erase] [--seeds N]
"""
from __future__ import annotations

import argparse

import numpy as np

from .config import load_config
from .envs import TaskEnv
from .experts import ExpertConfig, ScriptedExpert, run_expert_episode

TARGETS = {"grind": 0.70, "erase": 0.95}
MARGIN = 0.08
SWEEPS = {
    "grind": ("grind_rate", [0.10, 0.14, 0.18, 0.22, 0.26, 0.30]),
    "erase": ("erase_rate", [0.6, 0.8, 1.0, 1.1, 1.3, 1.5]),
}


def sweep(task: str, n_seeds: int = 3) -> list[tuple[float, float, float]]:
    key, values = SWEEPS[task]
    rows = []
    for value in values:
        cfg = load_config(overrides={"task": task, "sim": {key: value}})
        env = TaskEnv(cfg)
        expert = ScriptedExpert(ExpertConfig(task=task), env)
        metrics = [run_expert_episode(env, expert, s).meta["metric"]
                   for s in range(n_seeds)]
        rows.append((value, float(np.mean(metrics)), float(np.min(metrics))))
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", choices=list(SWEEPS), default=None)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args(argv)
    tasks = [args.task] if args.task else list(SWEEPS)
    for task in tasks:
        key, _ = SWEEPS[task]
        target = TARGETS[task]
        print(f"\n{task}: expert metric vs {key} (target {target:.2f} + margin {MARGIN:.2f})")
        print(f"{key:>12s} {'mean':>8s} {'min':>8s}")
        chosen = None
        for value, mean, worst in sweep(task, args.seeds):
            mark = ""
            if chosen is None and worst >= target + MARGIN:
                chosen = value
                mark = "  <- smallest passing value"
            print(f"{value:12.2f} {mean:8.3f} {worst:8.3f}{mark}")
        if chosen is None:
            print("no candidate met the target; widen the sweep")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
