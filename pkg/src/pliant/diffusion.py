"""Noise schedule, forward noising, training loss, and deterministic sampling.

The schedule stores cumulative signal fractions alpha_bar[0..N] with
alpha_bar[0] = 1 by convention, so step n = 0 is the clean sample. The
sampler is the deterministic (eta = 0) variant: each update re-derives the
noise estimate from the model's clean-sample prediction and re-noises to the
previous step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import StepOrderViolation, StepOutOfRange, UnknownScheduleKind

SCHEDULE_KINDS = ("squared_cosine", "linear")


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative products of per-step signal retention, length N + 1."""

    n_steps: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = self.alpha_bar
        if ab.shape != (self.n_steps + 1,):
            raise ValueError(f"alpha_bar must have {self.n_steps + 1} entries, got {ab.shape}")


def build_schedule(kind: str = "squared_cosine", n_steps: int = 100) -> NoiseSchedule:
    """Build a schedule; alpha_bar strictly decreasing from 1 to < 0.01."""
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    if kind == "squared_cosine":
        s = 0.008
        t = np.arange(n_steps + 1, dtype=np.float64)
        f = np.cos((t / n_steps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 0.0, 0.999)
    elif kind == "linear":
        # classic (1e-4, 0.02) range is tuned for 1000 steps; rescale so the
        # terminal signal fraction stays below 1% for any N
        lo = 1e-4 * 1000.0 / n_steps
        hi = 0.02 * 1000.0 / n_steps
        betas = np.clip(np.linspace(lo, hi, n_steps), 0.0, 0.999)
    else:
        raise UnknownScheduleKind(f"unknown schedule kind '{kind}'")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    if not (np.all(np.diff(alpha_bar) < 0) and alpha_bar[-1] > 0):
        raise ValueError("schedule is not strictly decreasing and positive")
    if alpha_bar[-1] >= 0.01:
        raise ValueError(f"terminal alpha_bar {alpha_bar[-1]:.4f} >= 0.01")
    return NoiseSchedule(n_steps, alpha_bar)


def _check_step(sched: NoiseSchedule, n: int) -> None:
    if not 0 <= n <= sched.n_steps:
        raise StepOutOfRange(f"step {n} outside [0, {sched.n_steps}]")


def forward_noise(a0: np.ndarray, n: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """a^n = sqrt(alpha_bar_n) a^0 + sqrt(1 - alpha_bar_n) eps."""
    _check_step(sched, n)
    a0 = np.asarray(a0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    ab = sched.alpha_bar[n]
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def training_loss(a0: np.ndarray, n: int, eps: np.ndarray, tokens, model,
                  sched: NoiseSchedule) -> ad.Tensor:
    """Mean squared error between the clean chunk and the model's estimate.

    The estimate comes from the noised input; if the model returns a plain
    array (test oracles) it is wrapped as a constant.
    """
    noisy = forward_noise(a0, n, eps, sched)
    if hasattr(model, "predict_batch"):  # differentiable path for real nets
        batched = model.predict_batch(noisy[None], np.array([n]), tokens)
        pred = ad.reshape(batched, batched.shape[1:])
    else:
        pred = model.predict_clean_chunk(noisy, n, tokens)
        if not isinstance(pred, ad.Tensor):
            pred = ad.constant(np.asarray(pred, dtype=np.float64))
    return ad.mse(ad.constant(np.asarray(a0, dtype=pred.data.dtype)), pred)


def ddim_step(a_n: np.ndarray, a0_hat: np.ndarray, n: int, n_prev: int,
              sched: NoiseSchedule) -> np.ndarray:
    """Deterministic denoising update from step n to n_prev < n.

    Recovers eps_hat = (a^n - sqrt(ab_n) a0_hat) / sqrt(1 - ab_n) and
    re-noises the clean estimate to step n_prev with that same noise.
    """
    if not 0 <= n_prev < n <= sched.n_steps:
        raise StepOrderViolation(f"need 0 <= n_prev < n <= {sched.n_steps}, got ({n_prev}, {n})")
    a_n = np.asarray(a_n, dtype=np.float64)
    a0_hat = np.asarray(a0_hat, dtype=np.float64)
    ab_n = sched.alpha_bar[n]
    ab_prev = sched.alpha_bar[n_prev]
    eps_hat = (a_n - np.sqrt(ab_n) * a0_hat) / np.sqrt(1.0 - ab_n)
    return np.sqrt(ab_prev) * a0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def stride_steps(n_steps: int, n_infer_steps: int) -> np.ndarray:
    """Evenly strided sub-schedule [0 ... N], ascending, K+1 unique entries."""
    if not 1 <= n_infer_steps <= n_steps:
        raise StepOutOfRange(f"n_infer_steps {n_infer_steps} outside [1, {n_steps}]")
    steps = np.unique(np.round(np.linspace(0, n_steps, n_infer_steps + 1)).astype(int))
    return steps


def sample(model, tokens, sched: NoiseSchedule, n_infer_steps: int,
           rng: np.random.Generator | int) -> np.ndarray:
    """Draw one action chunk by iterating the deterministic update.

    Starts from a pure Gaussian chunk at step N and walks the strided
    sub-schedule down to step 0. Deterministic given (weights, seed).
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    steps = stride_steps(sched.n_steps, n_infer_steps)
    a = rng.standard_normal((model.horizon, model.action_dim))
    for i in range(len(steps) - 1, 0, -1):
        n, n_prev = int(steps[i]), int(steps[i - 1])
        a0_hat = np.asarray(model.predict_clean_chunk(a, n, tokens), dtype=np.float64)
        a = ddim_step(a, a0_hat, n, n_prev, sched)
    return a
