"""Dual external memory for detail recall.

During training the compressed driven-side token is written (by gradient) into
a driven-identity bank while a parallel motion-source bank learns to produce
the same slot addresses from information that is still available at inference
time: the source token plus the motion offset. At inference the driven-identity
bank is read through the motion-source addresses and the recalled token is
fused back into the scale-4 skip path with multi-head cross-attention.
"""

from __future__ import annotations

import logging
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import EPS, Tensor
from .errors import ContractError, DegenerateInputError, ShapeError
from .motion import ensure_batched, grid_to_tokens, tokens_to_grid

logger = logging.getLogger(__name__)

SLOT_NORM_FLOOR = 1e-6


class FeatureCompressor:
    """Average pooling followed by a learned convex recombination of channel
    groups, turning a (c4, s4, s4) grid into a length d_c token."""

    def __init__(self, c4: int, d_c: int, rng: np.random.Generator, dtype=np.float32):
        if c4 % d_c != 0:
            raise ShapeError(f"channel count {c4} must be divisible by token width {d_c}")
        self.c4 = c4
        self.d_c = d_c
        self.group = c4 // d_c
        self.logits = Tensor(np.zeros((d_c, self.group), dtype=dtype), requires_grad=True)
        del rng  # weighting starts uniform; kept for interface symmetry

    def __call__(self, f4: Tensor) -> Tensor:
        f4, single = ensure_batched(f4, 4)
        if f4.shape[1] != self.c4:
            raise ShapeError(f"compressor expects {self.c4} channels, got shape {f4.shape}")
        pooled = ad.avg_pool_spatial(f4)
        grouped = ad.reshape(pooled, (pooled.shape[0], self.d_c, self.group))
        weights = ad.softmax(self.logits, axis=-1)
        token = ad.sum_(ad.mul(grouped, weights), axis=-1)
        return ad.reshape(token, (self.d_c,)) if single else token

    def parameters(self):
        return OrderedDict([("pi.logits", self.logits)])


class FeatureDecompressor:
    """Linear lift of a token back to channels, broadcast over the grid and
    offset by learned positional embeddings."""

    def __init__(self, d_c: int, c4: int, s4: int, rng: np.random.Generator, dtype=np.float32):
        if c4 < d_c:
            raise ShapeError(f"cannot lift token of width {d_c} injectively into {c4} channels")
        self.d_c = d_c
        self.target_shape = (c4, s4, s4)
        self.w = Tensor((rng.normal(size=(d_c, c4)) / np.sqrt(d_c)).astype(dtype),
                        requires_grad=True)
        self.pos = Tensor((rng.normal(size=(c4, s4, s4)) * 0.02).astype(dtype),
                          requires_grad=True)

    def __call__(self, token: Tensor, target: tuple | None = None) -> Tensor:
        if target is not None and tuple(target) != self.target_shape:
            raise ShapeError(
                f"decompressor is configured for {self.target_shape}, asked for {tuple(target)}"
            )
        token, single = ensure_batched(token, 2)
        if token.shape[-1] != self.d_c:
            raise ShapeError(f"decompressor expects tokens of width {self.d_c}, got {token.shape}")
        lifted = ad.matmul(token, self.w)
        b = lifted.shape[0]
        c, s, _ = self.target_shape
        grid = ad.add(ad.reshape(lifted, (b, c, 1, 1)), self.pos)
        return ad.reshape(grid, self.target_shape) if single else grid

    def init_rank(self) -> int:
        return int(np.linalg.matrix_rank(self.w.data.astype(np.float64)))

    def parameters(self):
        return OrderedDict([("lambda.w", self.w), ("lambda.pos", self.pos)])


class MemoryBanks:
    """Aligned slot banks: driven-identity values and motion-source keys."""

    def __init__(self, slots: int, d_c: int, d_z: int, rng: np.random.Generator, dtype=np.float32):
        self.slots = slots
        self.m_d = Tensor(_unit_rows(rng, slots, d_c).astype(dtype), requires_grad=True)
        self.m_ms = Tensor(_unit_rows(rng, slots, d_c + d_z).astype(dtype), requires_grad=True)

    def reinit_underflowed(self, rng: np.random.Generator) -> int:
        """Re-draw any slot whose norm fell below the floor; cosine addressing
        is undefined at zero.  Returns the number of rows touched."""
        touched = 0
        for name, bank in (("m_d", self.m_d), ("m_ms", self.m_ms)):
            norms = np.linalg.norm(bank.data, axis=1)
            mask = norms < SLOT_NORM_FLOOR
            if np.any(mask):
                rows = _unit_rows(rng, int(mask.sum()), bank.data.shape[1])
                bank.data[mask] = rows.astype(bank.data.dtype)
                touched += int(mask.sum())
                logger.warning("re-initialized %d underflowed slots in %s", int(mask.sum()), name)
        return touched

    def parameters(self):
        return OrderedDict([("M_d", self.m_d), ("M_ms", self.m_ms)])


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _cosine_address(query: Tensor, slots: Tensor) -> Tensor:
    query, single = ensure_batched(query, 2)
    if query.shape[-1] != slots.shape[-1]:
        raise ShapeError(f"query width {query.shape} does not match slots {slots.shape}")
    q_norms = np.linalg.norm(query.data, axis=-1)
    s_norms = np.linalg.norm(slots.data, axis=-1)
    if np.any(q_norms < EPS):
        raise DegenerateInputError("addressing query has zero norm")
    if np.any(s_norms < EPS):
        raise DegenerateInputError("memory bank contains a zero-norm slot")
    qn = ad.div(query, ad.add(ad.l2_norm(query, axis=-1, keepdims=True), EPS))
    sn = ad.div(slots, ad.add(ad.l2_norm(slots, axis=-1, keepdims=True), EPS))
    sims = ad.matmul(qn, ad.transpose(sn, (1, 0)))
    omega = ad.softmax(sims, axis=-1)
    return ad.reshape(omega, (slots.shape[0],)) if single else omega


def address_driven(f_d_pi: Tensor, banks: MemoryBanks) -> Tensor:
    """Slot address from the driven token: softmax over cosine similarities."""
    return _cosine_address(f_d_pi, banks.m_d)


def address_motion_source(f_s_pi: Tensor, z_ds: Tensor, banks: MemoryBanks) -> Tensor:
    """Slot address from the source token concatenated with the motion offset."""
    f_s_pi, single = ensure_batched(f_s_pi, 2)
    z_ds, _ = ensure_batched(z_ds, 2)
    query = ad.concat([f_s_pi, z_ds], axis=-1)
    omega = _cosine_address(query, banks.m_ms)
    return ad.reshape(omega, (banks.slots,)) if single else omega


def recall(omega: Tensor, banks: MemoryBanks) -> Tensor:
    """Convex combination of driven-identity slots under the given address."""
    omega_b, single = ensure_batched(omega, 2)
    sums = omega_b.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-5) or np.any(omega_b.data < -1e-5):
        raise ContractError("recall weights violate the probability simplex beyond 1e-5")
    token = ad.matmul(omega_b, banks.m_d)
    return ad.reshape(token, (token.shape[-1],)) if single else token


def memory_loss(f_d_pi: Tensor, recalled: Tensor) -> Tensor:
    """L2 distance between the driven token and its recall (batch-averaged)."""
    if f_d_pi.shape != recalled.shape:
        raise ShapeError(f"token shapes differ: {f_d_pi.shape} vs {recalled.shape}")
    dist = ad.l2_norm(ad.sub(f_d_pi, recalled), axis=-1)
    return ad.mean(dist) if dist.ndim > 0 else dist


def alignment_loss(omega_ms: Tensor, omega_d: Tensor) -> Tensor:
    """KL(omega_ms || omega_d) with the driven address treated as a fixed
    target, so alignment moves the key side toward the value side."""
    kl = ad.kl_divergence(omega_ms, ad.detach(omega_d), axis=-1)
    return ad.mean(kl) if kl.ndim > 0 else kl


class CrossAttentionFuser:
    """Multi-head cross-attention that spatially integrates the recalled grid
    into the source grid, with a residual connection to the source."""

    def __init__(self, c4: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if c4 % heads != 0:
            raise ShapeError(f"head count {heads} must divide channel width {c4}")
        self.c4 = c4
        self.heads = heads
        self.head_dim = c4 // heads
        scale = 1.0 / np.sqrt(c4)
        self.wq = Tensor((rng.normal(size=(c4, c4)) * scale).astype(dtype), requires_grad=True)
        self.wk = Tensor((rng.normal(size=(c4, c4)) * scale).astype(dtype), requires_grad=True)
        self.wv = Tensor((rng.normal(size=(c4, c4)) * scale).astype(dtype), requires_grad=True)

    def _split_heads(self, t: Tensor) -> Tensor:
        b, n, _ = t.shape
        return ad.transpose(ad.reshape(t, (b, n, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, f_s4: Tensor, f_hat4: Tensor) -> Tensor:
        f_s4, single = ensure_batched(f_s4, 4)
        f_hat4, _ = ensure_batched(f_hat4, 4)
        if f_s4.shape != f_hat4.shape:
            raise ShapeError(f"fusion grids differ in shape: {f_s4.shape} vs {f_hat4.shape}")
        _, c, s, _ = f_s4.shape
        q_tokens = grid_to_tokens(f_s4)
        kv_tokens = grid_to_tokens(f_hat4)
        q = self._split_heads(ad.matmul(q_tokens, self.wq))
        k = self._split_heads(ad.matmul(kv_tokens, self.wk))
        v = self._split_heads(ad.matmul(kv_tokens, self.wv))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.head_dim))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, v)
        b, _, n, _ = ctx.shape
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, c))
        fused = tokens_to_grid(ad.add(q_tokens, merged), c, s)
        return ad.reshape(fused, (c, s, s)) if single else fused

    def parameters(self):
        return OrderedDict([("mhca.wq", self.wq), ("mhca.wk", self.wk), ("mhca.wv", self.wv)])


class DetailIndicator:
    """Compressor, decompressor, slot banks and fuser bundled as one unit."""

    def __init__(self, c4: int, s4: int, d_c: int, d_z: int, slots: int, heads: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.compressor = FeatureCompressor(c4, d_c, rng, dtype)
        self.decompressor = FeatureDecompressor(d_c, c4, s4, rng, dtype)
        self.banks = MemoryBanks(slots, d_c, d_z, rng, dtype)
        self.fuser = CrossAttentionFuser(c4, heads, rng, dtype)

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict()
        for sub in (self.banks, self.compressor, self.decompressor, self.fuser):
            for name, t in sub.parameters().items():
                params[name] = t
        return params
