"""Training loops for the denoiser and the regression baseline."""
from __future__ import annotations

import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .datastore import Episode, compute_stats, sample_batch
from .denoiser import BCRegressor, DenoisingPolicyNet
from .diffusion import build_schedule
from .runtime import NormalizationStats


def noise_batch(chunk: np.ndarray, n: np.ndarray, eps: np.ndarray, alpha_bar: np.ndarray) -> np.ndarray:
    """Row-wise forward noising; matches the single-sample op exactly."""
    ab = alpha_bar[n][:, None, None]
    return np.sqrt(ab) * chunk + np.sqrt(1.0 - ab) * eps


def train_denoiser(episodes: list[Episode], cfg: RunConfig, *, steps: int | None = None,
                   stats: NormalizationStats | None = None,
                   log_fn: Callable[[str], None] | None = None,
                   ) -> tuple[DenoisingPolicyNet, NormalizationStats, list[float]]:
    """Train the denoiser on recorded episodes; returns loss history too."""
    tcfg = cfg.raw["training"]
    steps = int(tcfg["steps"] if steps is None else steps)
    batch_size = int(tcfg["batch_size"])
    stats = stats or compute_stats(episodes)
    model = DenoisingPolicyNet(cfg.model, seed=int(tcfg["seed"]))
    sched = build_schedule(cfg.raw["diffusion"]["schedule"], cfg.model.n_diffusion_steps)
    opt = ad.Adam(list(model.params.values()), lr=float(tcfg["lr"]))
    rng = np.random.default_rng(int(tcfg["seed"]))
    log_every = int(tcfg["log_every"])
    history: list[float] = []
    t0 = time.time()
    for step in range(steps):
        batch = sample_batch(episodes, stats, batch_size, cfg.model.horizon, rng)
        n = rng.integers(1, cfg.model.n_diffusion_steps + 1, size=batch_size)
        eps = rng.standard_normal(batch.chunk.shape)
        noisy = noise_batch(batch.chunk, n, eps, sched.alpha_bar)
        tokens = model.encode_batch(batch.grid, batch.pose, batch.wrench)
        pred = model.predict_batch(noisy, n, tokens)
        loss = ad.mse(pred, ad.constant(batch.chunk.astype(model.np_dtype)))
        ad.backward(loss)
        opt.step()
        opt.zero_grad()
        history.append(loss.item())
        if log_fn and (step % log_every == 0 or step == steps - 1):
            log_fn(f"step {step:6d}  loss {loss.item():.6f}  "
                   f"elapsed {time.time() - t0:7.1f}s")
    return model, stats, history


def save_trained(path: str | Path, model: DenoisingPolicyNet, stats: NormalizationStats,
                 cfg: RunConfig, history: list[float]) -> None:
    model.save(path, extra_meta={
        "stats": stats.to_dict(),
        "schedule": cfg.raw["diffusion"]["schedule"],
        "task": cfg.task,
        "final_loss": history[-1] if history else None,
    })


def load_trained(path: str | Path) -> tuple[DenoisingPolicyNet, NormalizationStats, dict]:
    model, meta = DenoisingPolicyNet.load(path)
    stats = NormalizationStats.from_dict(meta["stats"])
    return model, stats, meta


def train_bc(episodes: list[Episode], cfg: RunConfig, *, steps: int | None = None,
             stats: NormalizationStats | None = None,
             log_fn: Callable[[str], None] | None = None,
             ) -> tuple[BCRegressor, NormalizationStats, list[float]]:
    """Train the mean-regression baseline with plain MSE on chunks."""
    tcfg = cfg.raw["training"]
    steps = int(tcfg["steps"] if steps is None else steps)
    batch_size = int(tcfg["batch_size"])
    stats = stats or compute_stats(episodes)
    bc = BCRegressor(cfg.model, seed=int(tcfg["seed"]))
    opt = ad.Adam([bc.params[k] for k in sorted(bc.params)], lr=float(tcfg["lr"]))
    rng = np.random.default_rng(int(tcfg["seed"]))
    history: list[float] = []
    for step in range(steps):
        batch = sample_batch(episodes, stats, batch_size, cfg.model.horizon, rng)
        pred = bc.predict_chunk_batch(batch.grid, batch.pose, batch.wrench)
        loss = ad.mse(pred, ad.constant(batch.chunk.astype(bc.np_dtype)))
        ad.backward(loss)
        opt.step()
        opt.zero_grad()
        history.append(loss.item())
        if log_fn and step % int(tcfg["log_every"]) == 0:
            log_fn(f"bc step {step:6d}  loss {loss.item():.6f}")
    return bc, stats, history
