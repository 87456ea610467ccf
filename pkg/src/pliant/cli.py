"""Operator entry point: collect, train, rollout, eval, serve.

Every run is reproducible from (config file, seed); the resolved config is
copied into the output directory for provenance. Errors exit nonzero with a
single machine-parseable line: ``error <category>: <message>``.
"""
from __future__ import annotations

import argparse
import datetime
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .datastore import load_dataset, write_dataset
from .diffusion import build_schedule
from .envs import TaskEnv
from .errors import PliantError
from .evalkit import evaluate_episodes, force_profile, write_force_profile_csv, write_metrics_csv
from .experts import ExpertConfig, collect_demos
from .runtime import run_policy
from .train import load_trained, save_trained, train_denoiser


def _prepare(cfg: RunConfig, out: str | Path) -> Path:
    if cfg.raw.get("episode_date") is None:
        cfg.raw["episode_date"] = datetime.date.today().isoformat()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    return out


def cmd_collect(args) -> int:
    cfg = load_config(args.config, overrides={"task": args.task})
    out = _prepare(cfg, args.out)
    if args.teleop:
        from .teleop import TeleopBridge

        bridge = TeleopBridge(cfg, args.task, out, port=args.port, seed=args.seed)
        port = bridge.start()
        print(f"teleop bridge on ws://127.0.0.1:{port} ; waiting for "
              f"{args.episodes} recorded episode(s)")
        try:
            while len(bridge.episodes_written) < args.episodes:
                bridge.run(max_ticks=50)
        except KeyboardInterrupt:
            pass
        finally:
            bridge.stop()
        print(f"collected {len(bridge.episodes_written)} teleop episodes under {out}")
        return 0
    env = TaskEnv(cfg)
    expert_cfg = ExpertConfig(
        task=args.task,
        noise_pos=float(cfg.raw["collect"]["noise_pos"]),
        noise_rot=float(cfg.raw["collect"]["noise_rot"]),
        timing_jitter=float(cfg.raw["collect"]["timing_jitter"]),
        seed=args.seed,
    )
    episodes = collect_demos(args.task, args.episodes, env, expert_cfg, base_seed=args.seed)
    paths = write_dataset(out, args.task, episodes)
    metrics = [ep.meta["metric"] for ep in episodes]
    print(f"wrote {len(paths)} episodes under {out / args.task} "
          f"(metric mean {np.mean(metrics):.3f})")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    episodes = load_dataset(args.data)
    if episodes:
        task = episodes[0].meta.get("task", cfg.task)
        cfg = cfg.with_task(task)
    out = _prepare(cfg, args.out)
    log_path = out / "train_log.txt"
    log_file = open(log_path, "w")

    def log_fn(line: str) -> None:
        print(line)
        log_file.write(line + "\n")
        log_file.flush()

    try:
        model, stats, history = train_denoiser(episodes, cfg, steps=args.steps, log_fn=log_fn)
    finally:
        log_file.close()
    ckpt = out / "model.ckpt"
    save_trained(ckpt, model, stats, cfg, history)
    print(f"model written to {ckpt} (final loss {history[-1]:.6f})")
    return 0


def cmd_rollout(args) -> int:
    cfg = load_config(args.config, overrides={"task": args.task})
    out = _prepare(cfg, args.out)
    model, stats, meta = load_trained(args.weights)
    sched = build_schedule(meta.get("schedule", cfg.raw["diffusion"]["schedule"]),
                           model.config.n_diffusion_steps)
    env = TaskEnv(cfg)
    episodes = []
    for i in range(args.episodes):
        seed = args.seed + i
        env.reset(seed)
        ep = run_policy(model, env, stats, sched,
                        replan_interval=int(cfg.raw["runtime"]["replan_interval"]),
                        n_infer_steps=int(cfg.raw["diffusion"]["n_infer_steps"]),
                        ensemble_decay=float(cfg.raw["runtime"]["ensemble_decay"]),
                        seed=seed)
        episodes.append(ep)
        print(f"rollout {i}: metric {ep.meta['metric']:.3f} success {ep.meta['success']}")
    write_dataset(out, args.task, episodes)
    print(f"mean metric {np.mean([e.meta['metric'] for e in episodes]):.3f}, "
          f"success rate {np.mean([e.meta['success'] for e in episodes]):.2f}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out = _prepare(cfg, args.out)
    episodes = load_dataset(args.episodes)
    rows = evaluate_episodes(episodes)
    write_metrics_csv(out / "metrics.csv", rows)
    mean, std = force_profile(episodes)
    write_force_profile_csv(out / "force_profile.csv", mean, std)
    rate = np.mean([r["success"] for r in rows])
    print(f"evaluated {len(rows)} episodes: mean metric "
          f"{np.mean([r['metric'] for r in rows]):.3f}, success rate {rate:.2f}")
    print(f"wrote {out / 'metrics.csv'} and {out / 'force_profile.csv'}")
    return 0


def cmd_serve(args) -> int:
    from .teleop import TeleopBridge

    cfg = load_config(args.config, overrides={"task": args.task})
    out = _prepare(cfg, args.out) if args.out else None
    bridge = TeleopBridge(cfg, args.task, out, port=args.port, seed=args.seed,
                          lockstep=args.lockstep)
    port = bridge.start()
    print(f"serving task '{args.task}' on ws://127.0.0.1:{port} "
          f"({'lockstep' if args.lockstep else 'realtime'}); Ctrl-C to stop")
    try:
        bridge.run()
    except KeyboardInterrupt:
        pass
    finally:
        bridge.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pliant",
                                description="diffusion-policy compliant manipulation, desk scale")
    p.add_argument("--config", default=None, help="JSON config file (defaults built in)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", help="record demonstration episodes")
    c.add_argument("--task", required=True)
    c.add_argument("--episodes", type=int, default=10)
    g = c.add_mutually_exclusive_group()
    g.add_argument("--expert", action="store_true", default=True)
    g.add_argument("--teleop", action="store_true", default=False)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--port", type=int, default=8765)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_collect)

    t = sub.add_parser("train", help="train the denoiser on recorded episodes")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None)
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("rollout", help="execute a trained policy")
    r.add_argument("--weights", required=True)
    r.add_argument("--task", required=True)
    r.add_argument("--episodes", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_rollout)

    e = sub.add_parser("eval", help="metrics and force profiles from episodes")
    e.add_argument("--episodes", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("serve", help="teleoperation bridge")
    s.add_argument("--task", required=True)
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.add_argument("--lockstep", action="store_true")
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PliantError as e:
        print(f"error {e.category}: {e.message}", file=sys.stderr)
        return 2 if e.category.startswith("config.") else 1


if __name__ == "__main__":
    sys.exit(main())
