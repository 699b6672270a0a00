"""Self-supervised trainer: reconstruction + adversarial objectives on
same-identity pairs, with the disentanglement and memory losses mounted on
top according to the ablation flags."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .errors import ConfigError, TrainingAborted
from .memory import address_driven, address_motion_source, alignment_loss, memory_loss, recall
from .model import (
    AnimationModel,
    ModelConfig,
    adversarial_loss,
    generator_adversarial_loss,
    reconstruction_loss,
)
from .motion import disentanglement_loss, motion_difference
from .world import SyntheticWorld


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    seed: int = 0
    lr: float = 1e-3
    rms_decay: float = 0.99
    lambda_rec: float = 1.0
    lambda_adv: float = 0.1
    lambda_dis: float = 1.0
    lambda_dmem: float = 1.0
    lambda_align: float = 1.0
    emi_on: bool = True
    edi_on: bool = True
    ldis_on: bool = True
    train_uses_recall: bool = True
    eval_every: int = 10
    eval_pairs: int = 256

    def validate(self):
        for name in ("lambda_rec", "lambda_adv", "lambda_dis", "lambda_dmem", "lambda_align"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be nonnegative")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("train.steps must be >= 0 and train.batch_size >= 1")
        if self.lr <= 0 or not 0 <= self.rms_decay < 1:
            raise ConfigError("train.lr must be positive and train.rms_decay in [0, 1)")
        if self.eval_every < 1 or self.eval_pairs < 1:
            raise ConfigError("train.eval_every and train.eval_pairs must be >= 1")


class RMSProp:
    """Momentum-free adaptive step: per-weight running mean of squared grads."""

    def __init__(self, params: dict, lr: float = 1e-3, decay: float = 0.99, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.v = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad
            v = self.v[name]
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            t.data -= (self.lr * g / (np.sqrt(v) + self.eps)).astype(t.data.dtype)


def _check_finite(name: str, value: float, step: int) -> float:
    if not np.isfinite(value):
        raise TrainingAborted(name, step)
    return value


def train_step(model: AnimationModel, batch, cfg: TrainConfig,
               opt_gen: RMSProp, opt_disc: RMSProp, step: int) -> dict:
    """One alternating optimization step; returns the per-term loss report."""
    obs_s, obs_d = batch
    src = Tensor(np.asarray(obs_s, dtype=model.dtype))
    drv = Tensor(np.asarray(obs_d, dtype=model.dtype))

    opt_gen.zero_grad()
    terms: dict[str, Tensor] = {}
    with Tape() as tape:
        feats_s = model.encoder(src)
        feats_d = model.encoder(drv)
        z_s = model.motion_embed(feats_s)
        z_d = model.motion_embed(feats_d)
        fused = None
        if cfg.edi_on:
            f_s_pi = model.detail.compressor(feats_s.grids[3])
            f_d_pi = model.detail.compressor(feats_d.grids[3])
            z_ds = motion_difference(z_d, z_s)
            omega_d = address_driven(f_d_pi, model.detail.banks)
            omega_ms = address_motion_source(f_s_pi, z_ds, model.detail.banks)
            recalled = recall(omega_d, model.detail.banks)
            terms["L_dmem"] = memory_loss(f_d_pi, recalled)
            terms["L_align"] = alignment_loss(omega_ms, omega_d)
            token_for_gen = recalled if cfg.train_uses_recall else f_d_pi
            fused = model.fused_skip(feats_s, token_for_gen)
        i_g = model.generator(feats_s.top, z_d, feats_s.grids, fused)
        terms["L_rec"] = reconstruction_loss(drv, i_g)
        d_fake = model.discriminator(i_g)
        terms["L_adv"] = generator_adversarial_loss(d_fake)
        if cfg.emi_on and cfg.ldis_on:
            terms["L_dis"] = disentanglement_loss(z_s, z_d, model.config.xi)

        weights = {"L_rec": cfg.lambda_rec, "L_adv": cfg.lambda_adv, "L_dis": cfg.lambda_dis,
                   "L_dmem": cfg.lambda_dmem, "L_align": cfg.lambda_align}
        total = None
        for name, term in terms.items():
            _check_finite(name, term.item(), step)
            piece = ad.mul(term, weights[name])
            total = piece if total is None else ad.add(total, piece)
        _check_finite("total", total.item(), step)
        backward(total, tape)
    opt_gen.step()

    if cfg.lambda_adv > 0:
        opt_disc.zero_grad()
        with Tape() as tape_d:
            d_real = model.discriminator(drv)
            d_fake_frozen = model.discriminator(Tensor(i_g.data))
            disc_loss = ad.neg(adversarial_loss(d_real, d_fake_frozen))
            _check_finite("L_disc", disc_loss.item(), step)
            backward(disc_loss, tape_d)
        opt_disc.step()

    report = {"step": step}
    for name in ("L_rec", "L_adv", "L_dis", "L_dmem", "L_align"):
        if name in terms:
            report[name] = float(terms[name].item())
    report["total"] = float(total.item())
    return report


def heldout_alignment_kl(model: AnimationModel, obs_s: np.ndarray, obs_d: np.ndarray) -> float:
    """Mean KL between motion-source and driven addresses on fixed held-out pairs."""
    feats_s = model.encode(obs_s)
    feats_d = model.encode(obs_d)
    z_s = model.motion_embed(feats_s)
    z_d = model.motion_embed(feats_d)
    f_s_pi = model.detail.compressor(feats_s.grids[3])
    f_d_pi = model.detail.compressor(feats_d.grids[3])
    omega_ms = address_motion_source(f_s_pi, motion_difference(z_d, z_s), model.detail.banks)
    omega_d = address_driven(f_d_pi, model.detail.banks)
    kl = ad.kl_divergence(omega_ms, omega_d, axis=-1)
    return float(kl.data.mean())


def run_training(world: SyntheticWorld, model_config: ModelConfig, train_config: TrainConfig,
                 record_hook: Callable[[dict], None] | None = None):
    """Train a model on the world; returns (model, metrics records).

    Deterministic given (world seed, configs): model init, batch sampling and
    the held-out evaluation set all come from seed-derived streams.
    """
    model_config.validate()
    train_config.validate()
    init_ss, data_ss, eval_ss, guard_ss = np.random.SeedSequence(train_config.seed).spawn(4)
    model = AnimationModel(world.config.d_img, model_config, seed=init_ss,
                           emi_on=train_config.emi_on, edi_on=train_config.edi_on)
    data_rng = np.random.default_rng(data_ss)
    eval_rng = np.random.default_rng(eval_ss)
    guard_rng = np.random.default_rng(guard_ss)

    held_s, held_d, *_ = world.sample_pair_batch(eval_rng, train_config.eval_pairs, cross=False)

    params = model.parameters()
    gen_params = {n: t for n, t in params.items() if not n.startswith("disc.")}
    disc_params = {n: t for n, t in params.items() if n.startswith("disc.")}
    opt_gen = RMSProp(gen_params, lr=train_config.lr, decay=train_config.rms_decay)
    opt_disc = RMSProp(disc_params, lr=train_config.lr, decay=train_config.rms_decay)

    metrics = []
    for step in range(train_config.steps):
        obs_s, obs_d, *_ = world.sample_pair_batch(data_rng, train_config.batch_size)
        report = train_step(model, (obs_s, obs_d), train_config, opt_gen, opt_disc, step)
        model.detail.banks.reinit_underflowed(guard_rng)
        if train_config.edi_on and (step % train_config.eval_every == 0
                                    or step == train_config.steps - 1):
            report["heldout_align_kl"] = heldout_alignment_kl(model, held_s, held_d)
        metrics.append(report)
        if record_hook is not None:
            record_hook(report)
    return model, metrics
