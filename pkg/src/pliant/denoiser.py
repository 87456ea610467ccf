"""Conditional denoising network predicting clean action chunks.

The observation encoder self-attends over [grid patch | pose | wrench]
tokens from two consecutive timesteps (learned slot and per-timestep
embeddings added); the action decoder embeds the noisy chunk, adds a
sinusoidal diffusion-step embedding to every token, self-attends across the
chunk and cross-attends into the observation tokens. The head regresses the
clean chunk directly (the network predicts the sample, not the noise).

Pre-norm residual blocks throughout; all math runs on the package's own
reverse-mode tensors.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ShapeMismatch, StepOutOfRange

OBS_TIMESTEPS = 2  # (t-1, t)
POSE_DIM = 9
WRENCH_DIM = 6


@dataclass(frozen=True)
class DenoiserConfig:
    d_model: int = 128
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 3
    horizon: int = 48
    action_dim: int = 16
    n_diffusion_steps: int = 100
    grid_size: int = 24
    patch_size: int = 8
    ffn_mult: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.action_dim != 16:
            raise ValueError(f"action_dim must be 16, got {self.action_dim}")
        if self.grid_size % self.patch_size:
            raise ValueError(f"grid {self.grid_size} not divisible by patch {self.patch_size}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32/float64, got {self.dtype}")

    @property
    def n_patches(self) -> int:
        return (self.grid_size // self.patch_size) ** 2

    @property
    def tokens_per_step(self) -> int:
        return self.n_patches + 2

    @property
    def n_obs_tokens(self) -> int:
        return OBS_TIMESTEPS * self.tokens_per_step

    @property
    def ffn_dim(self) -> int:
        return self.ffn_mult * self.d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "DenoiserConfig":
        return DenoiserConfig(**d)


class ObservationInput(NamedTuple):
    """Normalized observation arrays for one sample (leading axis = 2 timesteps)."""

    grid: np.ndarray    # [2, G, G]
    pose: np.ndarray    # [2, 9]
    wrench: np.ndarray  # [2, 6]


def _sinusoid_table(n_rows: int, d: int) -> np.ndarray:
    pos = np.arange(n_rows)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, 2 * (i // 2) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


class DenoisingPolicyNet:
    """Weights plus forward passes; single-writer during training."""

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        self.config = config
        self.np_dtype = np.float32 if config.dtype == "float32" else np.float64
        self.params: dict[str, ad.Tensor] = {}
        self._init_params(seed)
        self.step_table = _sinusoid_table(config.n_diffusion_steps + 1,
                                          config.d_model).astype(self.np_dtype)
        self._ts_index = np.repeat(np.arange(OBS_TIMESTEPS), config.tokens_per_step)

    # -- properties used by the sampler -------------------------------------
    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def action_dim(self) -> int:
        return self.config.action_dim

    # -- parameters ----------------------------------------------------------
    def _add_linear(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.params[f"{name}.w"] = ad.tensor(w.astype(self.np_dtype), requires_grad=True)
        self.params[f"{name}.b"] = ad.tensor(np.zeros(fan_out, dtype=self.np_dtype), requires_grad=True)

    def _add_table(self, rng, name: str, rows: int) -> None:
        t = rng.uniform(-0.02, 0.02, size=(rows, self.config.d_model))
        self.params[name] = ad.tensor(t.astype(self.np_dtype), requires_grad=True)

    def _add_ln(self, name: str) -> None:
        d = self.config.d_model
        self.params[f"{name}.g"] = ad.tensor(np.ones(d, dtype=self.np_dtype), requires_grad=True)
        self.params[f"{name}.b"] = ad.tensor(np.zeros(d, dtype=self.np_dtype), requires_grad=True)

    def _add_attn(self, rng, name: str) -> None:
        d = self.config.d_model
        for part in ("wq", "wk", "wv", "wo"):
            self._add_linear(rng, f"{name}.{part}", d, d)

    def _add_ffn(self, rng, name: str) -> None:
        self._add_linear(rng, f"{name}.l1", self.config.d_model, self.config.ffn_dim)
        self._add_linear(rng, f"{name}.l2", self.config.ffn_dim, self.config.d_model)

    def _init_params(self, seed: int) -> None:
        cfg = self.config
        rng = np.random.default_rng(seed)
        self._add_linear(rng, "obs.patch", cfg.patch_size ** 2, cfg.d_model)
        self._add_linear(rng, "obs.pose", POSE_DIM, cfg.d_model)
        self._add_linear(rng, "obs.wrench", WRENCH_DIM, cfg.d_model)
        self._add_table(rng, "obs.pos", cfg.n_obs_tokens)
        self._add_table(rng, "obs.ts", OBS_TIMESTEPS)
        for i in range(cfg.n_encoder_layers):
            self._add_ln(f"enc.{i}.ln1")
            self._add_attn(rng, f"enc.{i}.attn")
            self._add_ln(f"enc.{i}.ln2")
            self._add_ffn(rng, f"enc.{i}.ffn")
        self._add_ln("enc.out_ln")
        self._add_linear(rng, "dec.act", cfg.action_dim, cfg.d_model)
        self._add_table(rng, "dec.pos", cfg.horizon)
        for i in range(cfg.n_decoder_layers):
            self._add_ln(f"dec.{i}.ln1")
            self._add_attn(rng, f"dec.{i}.self")
            self._add_ln(f"dec.{i}.ln2")
            self._add_attn(rng, f"dec.{i}.cross")
            self._add_ln(f"dec.{i}.ln3")
            self._add_ffn(rng, f"dec.{i}.ffn")
        self._add_ln("dec.out_ln")
        self._add_linear(rng, "head", cfg.d_model, cfg.action_dim)

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward helpers -------------------------------------------------------
    def _linear(self, x: ad.Tensor, name: str) -> ad.Tensor:
        return ad.add_bias(ad.matmul(x, self.params[f"{name}.w"]), self.params[f"{name}.b"])

    def _ln(self, x: ad.Tensor, name: str) -> ad.Tensor:
        return ad.layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _mha(self, name: str, q_in: ad.Tensor, kv_in: ad.Tensor) -> ad.Tensor:
        d, h = self.config.d_model, self.config.n_heads
        dh = d // h
        b, tq, _ = q_in.shape
        tk = kv_in.shape[1]

        def heads(x: ad.Tensor, t: int, proj: str) -> ad.Tensor:
            y = self._linear(ad.reshape(x, (b * t, d)), f"{name}.{proj}")
            y = ad.transpose(ad.reshape(y, (b, t, h, dh)), (0, 2, 1, 3))
            return ad.reshape(y, (b * h, t, dh))

        q = heads(q_in, tq, "wq")
        k = heads(kv_in, tk, "wk")
        v = heads(kv_in, tk, "wv")
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
        ctx = ad.matmul(ad.softmax(scores, axis=-1), v)
        ctx = ad.transpose(ad.reshape(ctx, (b, h, tq, dh)), (0, 2, 1, 3))
        out = self._linear(ad.reshape(ctx, (b * tq, d)), f"{name}.wo")
        return ad.reshape(out, (b, tq, d))

    def _ffn(self, name: str, x: ad.Tensor) -> ad.Tensor:
        b, t, d = x.shape
        y = ad.reshape(x, (b * t, d))
        y = self._linear(ad.gelu(self._linear(y, f"{name}.l1")), f"{name}.l2")
        return ad.reshape(y, (b, t, d))

    # -- encoder -------------------------------------------------------------
    def encode_batch(self, grid: np.ndarray, pose: np.ndarray, wrench: np.ndarray,
                     use_pos_embeddings: bool = True) -> ad.Tensor:
        """Encode normalized observations [B,2,G,G] / [B,2,9] / [B,2,6]."""
        cfg = self.config
        g, ps = cfg.grid_size, cfg.patch_size
        grid = np.asarray(grid, dtype=self.np_dtype)
        pose = np.asarray(pose, dtype=self.np_dtype)
        wrench = np.asarray(wrench, dtype=self.np_dtype)
        if grid.ndim != 4 or grid.shape[1:] != (OBS_TIMESTEPS, g, g):
            raise ShapeMismatch(f"grid: expected [B, {OBS_TIMESTEPS}, {g}, {g}], got {grid.shape}")
        b = grid.shape[0]
        if pose.shape != (b, OBS_TIMESTEPS, POSE_DIM) or wrench.shape != (b, OBS_TIMESTEPS, WRENCH_DIM):
            raise ShapeMismatch(f"pose {pose.shape} / wrench {wrench.shape} inconsistent with grid {grid.shape}")

        npatch, side = cfg.n_patches, g // ps
        # input rearrangement happens outside the graph (pure data movement)
        patches = grid.reshape(b, OBS_TIMESTEPS, side, ps, side, ps)
        patches = patches.transpose(0, 1, 2, 4, 3, 5).reshape(b * OBS_TIMESTEPS * npatch, ps * ps)

        pt = self._linear(ad.constant(patches), "obs.patch")
        pt = ad.reshape(pt, (b, OBS_TIMESTEPS, npatch, cfg.d_model))
        po = self._linear(ad.constant(pose.reshape(b * OBS_TIMESTEPS, POSE_DIM)), "obs.pose")
        po = ad.reshape(po, (b, OBS_TIMESTEPS, 1, cfg.d_model))
        wr = self._linear(ad.constant(wrench.reshape(b * OBS_TIMESTEPS, WRENCH_DIM)), "obs.wrench")
        wr = ad.reshape(wr, (b, OBS_TIMESTEPS, 1, cfg.d_model))

        x = ad.concat([pt, po, wr], axis=2)  # [B, 2, per_t, d]
        x = ad.reshape(x, (b, cfg.n_obs_tokens, cfg.d_model))
        if use_pos_embeddings:
            slot_and_ts = ad.add(self.params["obs.pos"],
                                 ad.embedding_lookup(self.params["obs.ts"], self._ts_index))
            x = ad.add_bias(x, slot_and_ts)

        for i in range(cfg.n_encoder_layers):
            normed = self._ln(x, f"enc.{i}.ln1")
            x = ad.add(x, self._mha(f"enc.{i}.attn", normed, normed))
            x = ad.add(x, self._ffn(f"enc.{i}.ffn", self._ln(x, f"enc.{i}.ln2")))
        return self._ln(x, "enc.out_ln")

    # -- decoder -------------------------------------------------------------
    def predict_batch(self, noisy: np.ndarray, n: np.ndarray, tokens: ad.Tensor) -> ad.Tensor:
        """Estimate clean chunks [B,H,A] from noisy ones at diffusion steps n."""
        cfg = self.config
        noisy = np.asarray(noisy, dtype=self.np_dtype)
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        b, h, a = noisy.shape if noisy.ndim == 3 else (None, None, None)
        if b is None or (h, a) != (cfg.horizon, cfg.action_dim):
            raise ShapeMismatch(f"noisy chunk: expected [B, {cfg.horizon}, {cfg.action_dim}], "
                                f"got {np.asarray(noisy).shape}")
        if n.shape != (b,):
            raise ShapeMismatch(f"steps: expected [{b}], got {n.shape}")
        if n.min() < 0 or n.max() > cfg.n_diffusion_steps:
            raise StepOutOfRange(f"diffusion step outside [0, {cfg.n_diffusion_steps}]")

        x = self._linear(ad.constant(noisy.reshape(b * h, a)), "dec.act")
        x = ad.reshape(x, (b, h, cfg.d_model))
        x = ad.add_bias(x, self.params["dec.pos"])
        # sinusoidal step embedding added to every decoder token
        step_emb = np.repeat(self.step_table[n][:, None, :], h, axis=1)
        x = ad.add(x, ad.constant(step_emb))

        for i in range(cfg.n_decoder_layers):
            normed = self._ln(x, f"dec.{i}.ln1")
            x = ad.add(x, self._mha(f"dec.{i}.self", normed, normed))
            x = ad.add(x, self._mha(f"dec.{i}.cross", self._ln(x, f"dec.{i}.ln2"), tokens))
            x = ad.add(x, self._ffn(f"dec.{i}.ffn", self._ln(x, f"dec.{i}.ln3")))
        x = self._ln(x, "dec.out_ln")
        out = self._linear(ad.reshape(x, (b * h, cfg.d_model)), "head")
        return ad.reshape(out, (b, h, a))

    # -- single-sample surface ------------------------------------------------
    def encode_observation(self, obs: ObservationInput) -> ad.Tensor:
        """Tokens for one normalized observation pair (batch axis kept at 1)."""
        return self.encode_batch(obs.grid[None], obs.pose[None], obs.wrench[None])

    def predict_clean_chunk(self, noisy: np.ndarray, n: int, tokens: ad.Tensor) -> np.ndarray:
        """Clean-chunk estimate [H, A] for one noisy chunk at step n (no graph)."""
        with ad.no_grad():
            out = self.predict_batch(np.asarray(noisy)[None], np.array([int(n)]), tokens)
        return np.asarray(out.data[0], dtype=np.float64)

    # -- persistence -----------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"kind": "denoiser", "config": self.config.to_dict()}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.state_arrays(), meta)

    @staticmethod
    def load(path) -> tuple["DenoisingPolicyNet", dict]:
        tensors, meta = load_checkpoint(path)
        model = DenoisingPolicyNet(DenoiserConfig.from_dict(meta["config"]))
        for name, arr in tensors.items():
            if name not in model.params:
                raise ShapeMismatch(f"unexpected tensor '{name}' in checkpoint")
            if model.params[name].data.shape != arr.shape:
                raise ShapeMismatch(f"'{name}': checkpoint {arr.shape} vs model "
                                    f"{model.params[name].data.shape}")
            model.params[name].data = arr.astype(model.np_dtype)
        return model, meta


def analytic_param_count(cfg: DenoiserConfig) -> int:
    """Closed-form parameter count; must agree with the live model."""
    d, f = cfg.d_model, cfg.ffn_dim
    lin = lambda fi, fo: fi * fo + fo
    attn = 4 * lin(d, d)
    ln = 2 * d
    ffn = lin(d, f) + lin(f, d)
    total = lin(cfg.patch_size ** 2, d) + lin(POSE_DIM, d) + lin(WRENCH_DIM, d)
    total += cfg.n_obs_tokens * d + OBS_TIMESTEPS * d
    total += cfg.n_encoder_layers * (2 * ln + attn + ffn) + ln
    total += lin(cfg.action_dim, d) + cfg.horizon * d
    total += cfg.n_decoder_layers * (3 * ln + 2 * attn + ffn) + ln
    total += lin(d, cfg.action_dim)
    return total


class BCRegressor:
    """Mean-regression baseline: same observation encoder, direct chunk head.

    Mean-pools the observation tokens and regresses the whole chunk with an
    MLP; no diffusion anywhere, so it exposes the unimodal failure the
    denoiser is meant to avoid.
    """

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        self.config = config
        self.np_dtype = np.float32 if config.dtype == "float32" else np.float64
        # reuse the encoder weights/structure wholesale
        self._enc = DenoisingPolicyNet(config, seed=seed)
        self.params = {k: v for k, v in self._enc.params.items()
                       if k.startswith(("obs.", "enc."))}
        rng = np.random.default_rng(seed + 1)
        d = config.d_model
        self._enc._add_linear(rng, "bc.h1", d, d)
        self._enc._add_linear(rng, "bc.out", d, config.horizon * config.action_dim)
        for k in ("bc.h1.w", "bc.h1.b", "bc.out.w", "bc.out.b"):
            self.params[k] = self._enc.params[k]

    @property
    def horizon(self) -> int:
        return self.config.horizon

    @property
    def action_dim(self) -> int:
        return self.config.action_dim

    def predict_chunk_batch(self, grid, pose, wrench) -> ad.Tensor:
        cfg = self.config
        tokens = self._enc.encode_batch(grid, pose, wrench)  # [B,T,d]
        b, t, d = tokens.shape
        pool = np.full((b, 1, t), 1.0 / t, dtype=self.np_dtype)
        pooled = ad.reshape(ad.matmul(ad.constant(pool), tokens), (b, d))
        h = ad.gelu(self._enc._linear(pooled, "bc.h1"))
        out = self._enc._linear(h, "bc.out")
        return ad.reshape(out, (b, cfg.horizon, cfg.action_dim))

    def predict_chunk(self, obs: ObservationInput) -> np.ndarray:
        with ad.no_grad():
            out = self.predict_chunk_batch(obs.grid[None], obs.pose[None], obs.wrench[None])
        return np.asarray(out.data[0], dtype=np.float64)
