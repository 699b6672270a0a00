"""Procedural identity x motion world with exact ground-truth factors.

Observations stand in for video frames: a frozen nonlinear renderer maps an
identity latent (unit sphere) and a motion latent (box) to a flat observation
vector. Because the generating factors are known exactly, identity leakage
downstream is a measurable quantity instead of a visual impression.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 0
    d_id: int = 8
    d_mo: int = 4
    d_img: int = 64
    identity_count: int = 16
    motions_per_identity: int = 64
    mixing_depth: int = 2


@dataclass(frozen=True)
class SyntheticSample:
    identity_index: int
    identity_latent: np.ndarray
    motion_latent: np.ndarray
    observation: np.ndarray


class SyntheticWorld:
    """Frozen renderer plus a fixed roster of unit-norm identity latents.

    The renderer is immutable after construction and safe to share; sampling
    takes caller-supplied RNG streams so parallel samplers do not contend.
    """

    def __init__(self, config: WorldConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        ids = rng.normal(size=(config.identity_count, config.d_id))
        self.identities = ids / np.linalg.norm(ids, axis=1, keepdims=True)
        width = 4 * (config.d_id + config.d_mo)
        self._layers = []
        prev = config.d_id + config.d_mo
        for _ in range(config.mixing_depth):
            w = rng.normal(size=(width, prev)) / np.sqrt(prev)
            b = rng.normal(size=width) * 0.1
            self._layers.append((w, b))
            prev = width
        self._w_out = rng.normal(size=(config.d_img, prev)) * np.sqrt(2.0 / prev)
        self._b_out = rng.normal(size=config.d_img) * 0.1

    def render(self, identity_latent: np.ndarray, motion_latent: np.ndarray) -> np.ndarray:
        """Deterministic observation for (a, m); accepts single vectors or batches."""
        a = np.asarray(identity_latent, dtype=np.float64)
        m = np.asarray(motion_latent, dtype=np.float64)
        single = a.ndim == 1
        if single:
            a = a[None, :]
            m = m[None, :]
        if a.shape[-1] != self.config.d_id or m.shape[-1] != self.config.d_mo:
            raise ShapeError(
                f"render expects latents of widths ({self.config.d_id}, {self.config.d_mo}), "
                f"got ({a.shape[-1]}, {m.shape[-1]})"
            )
        x = np.concatenate([a, m], axis=-1)
        for w, b in self._layers:
            x = np.tanh(x @ w.T + b)
        obs = x @ self._w_out.T + self._b_out
        return obs[0] if single else obs

    def sample_motion(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = (self.config.d_mo,) if n is None else (n, self.config.d_mo)
        return rng.uniform(-1.0, 1.0, size=shape)

    def _make_sample(self, identity: int, motion: np.ndarray) -> SyntheticSample:
        a = self.identities[identity]
        return SyntheticSample(identity, a, motion, self.render(a, motion))

    def sample_pair(self, identity: int, rng: np.random.Generator):
        """Source/driven pair sharing one identity with independent motions."""
        if not 0 <= identity < self.config.identity_count:
            raise ContractError(f"identity index {identity} out of range")
        source = self._make_sample(identity, self.sample_motion(rng))
        driven = self._make_sample(identity, self.sample_motion(rng))
        return source, driven

    def sample_cross_pair(self, id_s: int, id_d: int, rng: np.random.Generator):
        """Source/driven pair with distinct identities and independent motions."""
        if id_s == id_d:
            raise ContractError("cross pair requires distinct identities")
        for idx in (id_s, id_d):
            if not 0 <= idx < self.config.identity_count:
                raise ContractError(f"identity index {idx} out of range")
        source = self._make_sample(id_s, self.sample_motion(rng))
        driven = self._make_sample(id_d, self.sample_motion(rng))
        return source, driven

    def sample_pair_batch(self, rng: np.random.Generator, batch: int, cross: bool = False):
        """Arrays (source_obs, driven_obs, source_ids, driven_ids, source_m, driven_m)."""
        n_id = self.config.identity_count
        if cross:
            src_ids = rng.integers(0, n_id, size=batch)
            offsets = rng.integers(1, n_id, size=batch)
            drv_ids = (src_ids + offsets) % n_id
        else:
            src_ids = rng.integers(0, n_id, size=batch)
            drv_ids = src_ids.copy()
        m_s = self.sample_motion(rng, batch)
        m_d = self.sample_motion(rng, batch)
        obs_s = self.render(self.identities[src_ids], m_s)
        obs_d = self.render(self.identities[drv_ids], m_d)
        return obs_s, obs_d, src_ids, drv_ids, m_s, m_d

    def dataset(self, rng: np.random.Generator, per_identity: int | None = None):
        """Round-robin observations with their factors, for probe fitting."""
        per = per_identity if per_identity is not None else self.config.motions_per_identity
        ids = np.repeat(np.arange(self.config.identity_count), per)
        motions = self.sample_motion(rng, len(ids))
        obs = self.render(self.identities[ids], motions)
        return obs, self.identities[ids], motions, ids
