"""Miniature encoder-generator-discriminator carrier for the motion and
detail indicators, with the reconstruction and adversarial objectives."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .memory import DetailIndicator, address_motion_source, recall
from .motion import MotionIndicator, ensure_batched, motion_difference

PROB_EPS = 1e-7  # probability clamp inside the adversarial terms


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple = (4, 4, 8, 64, 4)
    spatial: tuple = (12, 10, 8, 6, 2)
    d_top: int = 16
    d_z: int = 16
    d_model: int = 32
    num_queries: int = 8
    num_blocks: int = 2
    ffn_hidden: int = 64
    xi: float = 0.1
    slots: int = 64
    d_c: int = 32
    heads: int = 4
    gen_hidden: int = 64
    disc_hidden: int = 16
    # scale of the fused motion embedding; keeps z commensurate with the
    # compressed detail token inside the concatenated addressing query
    motion_scale: float = 0.1

    def validate(self):
        if len(self.channels) != 5 or len(self.spatial) != 5:
            raise ConfigError("model needs exactly five feature scales")
        if any(s2 >= s1 for s1, s2 in zip(self.spatial, self.spatial[1:])) or self.spatial[-1] < 1:
            raise ConfigError(f"spatial sizes must be strictly decreasing and >= 1, got {self.spatial}")
        if self.channels[3] % self.d_c != 0:
            raise ConfigError(f"channels[3]={self.channels[3]} must be divisible by d_c={self.d_c}")
        if self.channels[3] % self.heads != 0:
            raise ConfigError(f"channels[3]={self.channels[3]} must be divisible by heads={self.heads}")
        for name in ("d_top", "d_z", "d_model", "num_queries", "num_blocks", "slots", "d_c",
                     "heads", "gen_hidden", "disc_hidden", "ffn_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")


@dataclass
class MultiScaleFeatures:
    """Per-scale feature grids plus the top-level code for one image batch."""
    grids: tuple
    top: Tensor


def _linear(rng, fan_in, fan_out, dtype):
    return Tensor((rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in)).astype(dtype),
                  requires_grad=True)


class Encoder:
    """Five per-scale linear+tanh maps from the observation to feature grids,
    plus a top-code map."""

    def __init__(self, d_img: int, config: ModelConfig, rng, dtype=np.float32):
        self.d_img = d_img
        self.config = config
        self.scales = []
        for c, s in zip(config.channels, config.spatial):
            w = _linear(rng, d_img, c * s * s, dtype)
            b = Tensor(np.zeros(c * s * s, dtype=dtype), requires_grad=True)
            self.scales.append((w, b))
        self.top_w = _linear(rng, d_img, config.d_top, dtype)
        self.top_b = Tensor(np.zeros(config.d_top, dtype=dtype), requires_grad=True)

    def __call__(self, obs: Tensor) -> MultiScaleFeatures:
        obs, _ = ensure_batched(obs, 2)
        if obs.shape[-1] != self.d_img:
            raise ShapeError(f"encoder expects observations of width {self.d_img}, got {obs.shape}")
        b = obs.shape[0]
        grids = []
        for (w, bias), c, s in zip(self.scales, self.config.channels, self.config.spatial):
            h = ad.tanh(ad.add(ad.matmul(obs, w), bias))
            grids.append(ad.reshape(h, (b, c, s, s)))
        top = ad.tanh(ad.add(ad.matmul(obs, self.top_w), self.top_b))
        return MultiScaleFeatures(grids=tuple(grids), top=top)

    def parameters(self):
        params = OrderedDict()
        for k, (w, bias) in enumerate(self.scales):
            params[f"scale{k + 1}.w"] = w
            params[f"scale{k + 1}.b"] = bias
        params["top.w"] = self.top_w
        params["top.b"] = self.top_b
        return params


class Generator:
    """Reconstructs an observation from the source top code shifted by the
    motion embedding, with additive skip injections from all five scales."""

    def __init__(self, d_img: int, config: ModelConfig, rng, dtype=np.float32):
        self.d_img = d_img
        self.config = config
        self.lift_w = _linear(rng, config.d_z, config.d_top, dtype)
        self.in_w = _linear(rng, config.d_top, config.gen_hidden, dtype)
        self.skip_w = [
            _linear(rng, c * s * s, config.gen_hidden, dtype)
            for c, s in zip(config.channels, config.spatial)
        ]
        self.hidden_b = Tensor(np.zeros(config.gen_hidden, dtype=dtype), requires_grad=True)
        self.out_w = _linear(rng, config.gen_hidden, d_img, dtype)
        self.out_b = Tensor(np.zeros(d_img, dtype=dtype), requires_grad=True)

    def __call__(self, f_top: Tensor, z: Tensor, grids: Sequence[Tensor],
                 fused4: Tensor | None = None) -> Tensor:
        code = ad.add(f_top, ad.matmul(z, self.lift_w))
        pre = ad.add(ad.matmul(code, self.in_w), self.hidden_b)
        for k, grid in enumerate(grids):
            use = fused4 if (k == 3 and fused4 is not None) else grid
            flat = ad.reshape(use, (use.shape[0], -1))
            pre = ad.add(pre, ad.matmul(flat, self.skip_w[k]))
        h = ad.tanh(pre)
        return ad.add(ad.matmul(h, self.out_w), self.out_b)

    def parameters(self):
        params = OrderedDict()
        params["lift.w"] = self.lift_w
        params["in.w"] = self.in_w
        for k, w in enumerate(self.skip_w):
            params[f"skip{k + 1}.w"] = w
        params["hidden.b"] = self.hidden_b
        params["out.w"] = self.out_w
        params["out.b"] = self.out_b
        return params


class Discriminator:
    """Small real/fake critic; output stays strictly inside (0, 1)."""

    def __init__(self, d_img: int, config: ModelConfig, rng, dtype=np.float32):
        self.w1 = _linear(rng, d_img, config.disc_hidden, dtype)
        self.b1 = Tensor(np.zeros(config.disc_hidden, dtype=dtype), requires_grad=True)
        self.w2 = _linear(rng, config.disc_hidden, 1, dtype)
        self.b2 = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)

    def __call__(self, obs: Tensor) -> Tensor:
        h = ad.tanh(ad.add(ad.matmul(obs, self.w1), self.b1))
        logits = ad.add(ad.matmul(h, self.w2), self.b2)
        return ad.reshape(ad.sigmoid(logits), (obs.shape[0],))

    def parameters(self):
        return OrderedDict([("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)])


def reconstruction_loss(i_d: Tensor, i_g: Tensor) -> Tensor:
    """Mean absolute error; the mean keeps the weight scale-free in d_img."""
    if i_d.shape != i_g.shape:
        raise ShapeError(f"observation shapes differ: {i_d.shape} vs {i_g.shape}")
    return ad.mean(ad.absolute(ad.sub(i_d, i_g)))


def adversarial_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Discriminator objective log D(real) + log(1 - D(fake)), probability
    inputs clamped away from 0 and 1."""
    r = ad.clip(ad.as_tensor(d_real), PROB_EPS, 1.0 - PROB_EPS)
    f = ad.clip(ad.as_tensor(d_fake), PROB_EPS, 1.0 - PROB_EPS)
    value = ad.add(ad.log(r), ad.log(ad.sub(1.0, f)))
    return ad.mean(value) if value.ndim > 0 else value


def generator_adversarial_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator form -log D(fake)."""
    f = ad.clip(ad.as_tensor(d_fake), PROB_EPS, 1.0 - PROB_EPS)
    value = ad.neg(ad.log(f))
    return ad.mean(value) if value.ndim > 0 else value


class AnimationModel:
    """Full assembly: encoder, motion indicator, detail memory, generator and
    discriminator. All parameters exist regardless of the ablation flags so
    checkpoints stay structurally identical across ablations; the flags only
    select which paths run."""

    def __init__(self, d_img: int, config: ModelConfig, seed: int = 0,
                 emi_on: bool = True, edi_on: bool = True, dtype=np.float32):
        config.validate()
        self.d_img = d_img
        self.config = config
        self.emi_on = emi_on
        self.edi_on = edi_on
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(d_img, config, rng, dtype)
        self.motion = MotionIndicator(config.channels, config.d_z, config.d_model,
                                      config.num_queries, config.num_blocks,
                                      config.ffn_hidden, rng, dtype,
                                      scale=config.motion_scale)
        self.detail = DetailIndicator(config.channels[3], config.spatial[3], config.d_c,
                                      config.d_z, config.slots, config.heads, rng, dtype)
        self.generator = Generator(d_img, config, rng, dtype)
        self.discriminator = Discriminator(d_img, config, rng, dtype)

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict()
        for prefix, module in (("enc", self.encoder), ("emi", self.motion),
                               ("edi", self.detail), ("gen", self.generator),
                               ("disc", self.discriminator)):
            for name, t in module.parameters().items():
                params[f"{prefix}.{name}"] = t
        return params

    def _as_obs(self, obs) -> Tensor:
        if isinstance(obs, Tensor):
            return obs
        arr = np.asarray(obs, dtype=self.dtype)
        if arr.ndim == 1:
            arr = arr[None, :]
        return Tensor(arr)

    def encode(self, obs) -> MultiScaleFeatures:
        return self.encoder(self._as_obs(obs))

    def motion_embed(self, feats: MultiScaleFeatures) -> Tensor:
        if self.emi_on:
            return self.motion.embed(feats.grids)
        return self.motion.embed_pooled_mean(feats.grids)

    def motion_of(self, obs) -> np.ndarray:
        """Motion embeddings for raw observations (inference helper)."""
        return self.motion_embed(self.encode(obs)).data

    def recall_for(self, feats_s: MultiScaleFeatures, z_s: Tensor, z_d: Tensor):
        """Inference-side memory read: address the driven-identity bank with
        the source token and the motion offset."""
        f_s_pi = self.detail.compressor(feats_s.grids[3])
        z_ds = motion_difference(z_d, z_s)
        omega_ms = address_motion_source(f_s_pi, z_ds, self.detail.banks)
        return recall(omega_ms, self.detail.banks), omega_ms, f_s_pi

    def fused_skip(self, feats_s: MultiScaleFeatures, recalled: Tensor) -> Tensor:
        return self.detail.fuser(feats_s.grids[3], self.detail.decompressor(recalled))

    def animate(self, source_obs, driven_obs, swap_scale: int | str | None = None) -> np.ndarray:
        """Generate observations carrying the source identity and driven motion.

        ``swap_scale`` substitutes the driven grid (or top code, ``"top"``) for
        the source one in the skip path before any detail fusion; this is the
        measurement hook used by the leakage probes.
        """
        feats_s = self.encode(source_obs)
        feats_d = self.encode(driven_obs)
        z_s = self.motion_embed(feats_s)
        z_d = self.motion_embed(feats_d)
        grids = list(feats_s.grids)
        top = feats_s.top
        if swap_scale == "top":
            top = feats_d.top
        elif swap_scale is not None:
            if not 1 <= int(swap_scale) <= 5:
                raise ShapeError(f"swap_scale must be 1..5 or 'top', got {swap_scale}")
            grids[int(swap_scale) - 1] = feats_d.grids[int(swap_scale) - 1]
        feats_for_fusion = MultiScaleFeatures(grids=tuple(grids), top=top)
        fused = None
        if self.edi_on:
            recalled, _, _ = self.recall_for(feats_s, z_s, z_d)
            fused = self.fused_skip(feats_for_fusion, recalled)
        out = self.generator(top, z_d, grids, fused)
        return out.data
