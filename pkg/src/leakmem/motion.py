"""Enhanced motion extraction: learnable-query attention over the leakage-prone
scale plus pooled multi-scale fusion, trained with a hinge cosine penalty that
pushes same-identity embeddings apart so only motion survives."""

from __future__ import annotations

from collections import OrderedDict
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError, ShapeError


def grid_to_tokens(f: Tensor) -> Tensor:
    """(batch, c, s, s) grid -> (batch, s*s, c) token sequence."""
    b, c, s1, s2 = f.shape
    return ad.transpose(ad.reshape(f, (b, c, s1 * s2)), (0, 2, 1))


def tokens_to_grid(tokens: Tensor, c: int, s: int) -> Tensor:
    b = tokens.shape[0]
    return ad.reshape(ad.transpose(tokens, (0, 2, 1)), (b, c, s, s))


def ensure_batched(f: Tensor, ndim: int):
    """Add a leading batch axis when ``f`` is a single sample."""
    if f.ndim == ndim - 1:
        return ad.reshape(f, (1,) + f.shape), True
    if f.ndim != ndim:
        raise ShapeError(f"expected {ndim - 1}- or {ndim}-dimensional input, got shape {f.shape}")
    return f, False


def _linear_init(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> Tensor:
    w = rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in)
    return Tensor(w.astype(dtype), requires_grad=True)


def normalized_projection(x: Tensor, v: Tensor, scale: float = 1.0) -> Tensor:
    """Bias-free linear map with Frobenius-normalized, fixed-scale weights.

    Keeps projected motion contributions at a controlled scale, so the fused
    embedding stays commensurate with the compressed detail token inside the
    concatenated memory-addressing query.
    """
    frob = ad.sqrt(ad.add(ad.sum_(ad.mul(v, v)), 1e-12))
    return ad.mul(ad.div(ad.matmul(x, v), ad.add(frob, ad.EPS)), float(scale))


class QueryExtractor:
    """Learnable query tokens attending over a feature grid.

    Stacked cross-attention + feed-forward blocks; the queries select what to
    read from the grid tokens, and the surviving query tokens are mean-pooled
    to one vector. No positional encoding is applied to the grid tokens, so
    the output is invariant to their order.
    """

    def __init__(self, c_in: int, d_model: int, num_queries: int, num_blocks: int,
                 ffn_hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.c_in = c_in
        self.d_model = d_model
        self.num_queries = num_queries
        self.num_blocks = num_blocks
        self.q_l = Tensor(
            (rng.normal(size=(num_queries, d_model)) / np.sqrt(d_model)).astype(dtype),
            requires_grad=True,
        )
        self.token_proj = _linear_init(rng, c_in, d_model, dtype)
        self.blocks = []
        for _ in range(num_blocks):
            self.blocks.append({
                "wq": _linear_init(rng, d_model, d_model, dtype),
                "wk": _linear_init(rng, d_model, d_model, dtype),
                "wv": _linear_init(rng, d_model, d_model, dtype),
                "ffn_w1": _linear_init(rng, d_model, ffn_hidden, dtype),
                "ffn_b1": Tensor(np.zeros(ffn_hidden, dtype=dtype), requires_grad=True),
                "ffn_w2": _linear_init(rng, ffn_hidden, d_model, dtype),
                "ffn_b2": Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True),
            })

    def __call__(self, f4: Tensor) -> Tensor:
        """Read a (batch, c4, s4, s4) grid into a (batch, d_model) vector."""
        f4, single = ensure_batched(f4, 4)
        if f4.shape[1] != self.c_in:
            raise ShapeError(f"extractor expects {self.c_in} channels, got shape {f4.shape}")
        tokens = grid_to_tokens(f4)
        kv = ad.matmul(tokens, self.token_proj)
        scale = 1.0 / np.sqrt(self.d_model)
        q = self.q_l
        for i, blk in enumerate(self.blocks):
            qp = ad.matmul(q, blk["wq"])
            kp = ad.matmul(kv, blk["wk"])
            vp = ad.matmul(kv, blk["wv"])
            scores = ad.mul(ad.matmul(qp, ad.transpose(kp, (0, 2, 1))), scale)
            attn = ad.softmax(scores, axis=-1)
            q = ad.add(q, ad.matmul(attn, vp))
            hidden = ad.tanh(ad.add(ad.matmul(q, blk["ffn_w1"]), blk["ffn_b1"]))
            q = ad.add(q, ad.add(ad.matmul(hidden, blk["ffn_w2"]), blk["ffn_b2"]))
            if not np.all(np.isfinite(q.data)):
                raise NumericError(f"non-finite activations in extractor block {i}")
        pooled = ad.mean(q, axis=-2)
        return ad.reshape(pooled, (self.d_model,)) if single else pooled

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict()
        params["q_l"] = self.q_l
        params["token_proj"] = self.token_proj
        for i, blk in enumerate(self.blocks):
            for key in ("wq", "wk", "wv", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
                params[f"block{i}.{key}"] = blk[key]
        return params


class MotionIndicator:
    """Multi-scale motion embedding: query extraction on the fourth scale,
    spatial pooling elsewhere, merged by a learned convex weighting."""

    def __init__(self, channels: Sequence[int], d_z: int, d_model: int, num_queries: int,
                 num_blocks: int, ffn_hidden: int, rng: np.random.Generator, dtype=np.float32,
                 scale: float = 1.0):
        if len(channels) != 5:
            raise ShapeError(f"expected 5 scales, got {len(channels)}")
        self.d_z = d_z
        self.scale = float(scale)
        self.extractor = QueryExtractor(channels[3], d_model, num_queries, num_blocks,
                                        ffn_hidden, rng, dtype)
        # per-scale projections are bias-free so fusion stays a convex mix of
        # comparable vectors
        self.proj = [_linear_init(rng, c, d_z, dtype) for c in channels]
        self.proj_p = _linear_init(rng, d_model, d_z, dtype)
        self.fusion_logits = Tensor(np.zeros(5, dtype=dtype), requires_grad=True)

    def scale_contributions(self, grids: Sequence[Tensor]) -> list[Tensor]:
        """Projected per-scale vectors; scale 4 goes through the query extractor."""
        out = []
        for k, grid in enumerate(grids):
            if k == 3:
                out.append(normalized_projection(self.extractor(grid), self.proj_p, self.scale))
            else:
                out.append(normalized_projection(ad.avg_pool_spatial(grid), self.proj[k],
                                                 self.scale))
        return out

    def embed(self, grids: Sequence[Tensor]) -> Tensor:
        """Enhanced motion embedding z for a batch of multi-scale grids."""
        return ad.weighted_sum(self.scale_contributions(grids), self.fusion_logits)

    def embed_pooled_mean(self, grids: Sequence[Tensor]) -> Tensor:
        """Fallback used when the extractor is ablated: plain mean of the
        pooled, projected scales."""
        parts = [normalized_projection(ad.avg_pool_spatial(g), self.proj[k], self.scale)
                 for k, g in enumerate(grids)]
        return ad.mean(ad.stack(parts, axis=0), axis=0)

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict()
        for name, t in self.extractor.parameters().items():
            params[name] = t
        for k, p in enumerate(self.proj):
            params[f"proj{k + 1}"] = p
        params["proj_p"] = self.proj_p
        params["fusion_logits"] = self.fusion_logits
        return params


def motion_difference(z_d: Tensor, z_s: Tensor) -> Tensor:
    """Elementwise motion offset z_d - z_s."""
    if z_d.shape != z_s.shape:
        raise ShapeError(f"motion embeddings differ in shape: {z_d.shape} vs {z_s.shape}")
    return ad.sub(z_d, z_s)


def disentanglement_loss(z_s: Tensor, z_d: Tensor, xi: float = 0.1) -> Tensor:
    """Hinge on the cosine between source and driven motion embeddings.

    Zero (with zero gradient) once the embeddings are dissimilar enough;
    batched inputs are averaged.
    """
    cos = ad.cosine_similarity(z_s, z_d, axis=-1)
    hinge = ad.maximum(ad.sub(cos, float(xi)), 0.0)
    return ad.mean(hinge) if hinge.ndim > 0 else hinge
