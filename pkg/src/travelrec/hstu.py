"""Pointwise-attention decoder layer with relative position and time biases.

One layer projects its input through a SiLU-activated linear map, splits the
result into gates, values, queries, and keys, scores query/key pairs with
SiLU (no softmax), adds bucketed positional and temporal biases, and applies
a multiplicative causal mask. Masked score entries are exactly zero after
activation and each query's attention sum is divided by its count of visible
keys, so magnitudes stay bounded without a softmax. The residual connection
belongs to the caller.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParameterStore, register_normal

N_TIME_DELTA_BUCKETS = 32
MAX_TIME_DELTA_MS = 90 * 24 * 60 * 60 * 1000  # the corpus spans 90 days
_LOG2_MAX_DELTA = math.log2(MAX_TIME_DELTA_MS)


def time_delta_bucket(delta_ms: np.ndarray) -> np.ndarray:
    """Log2-spaced bucket ids over [1 ms, 90 days]; bucket 0 holds deltas <= 0."""
    delta = np.maximum(np.asarray(delta_ms, dtype=np.float64), 0.0)
    with np.errstate(divide="ignore"):
        scaled = 1.0 + np.floor(
            (N_TIME_DELTA_BUCKETS - 1) * np.log2(np.maximum(delta, 1.0)) / _LOG2_MAX_DELTA
        )
    buckets = np.where(delta < 1.0, 0.0, scaled)
    return np.clip(buckets, 0, N_TIME_DELTA_BUCKETS - 1).astype(np.int64)


def causal_mask(valid: np.ndarray, dtype=np.float64) -> np.ndarray:
    """(B, 1, T, T) multiplicative mask: key j visible to query i iff j <= i
    and both positions are real tokens."""
    b, t = valid.shape
    tri = np.tril(np.ones((t, t), dtype=bool))
    mask = valid[:, None, :, None] & valid[:, None, None, :] & tri[None, None, :, :]
    return mask.astype(dtype)


def bias_bucket_ids(timestamps: np.ndarray, max_len: int) -> tuple:
    """Bucket id matrices shared by every layer over one batch:
    (T, T) positional offset rows and (B, T, T) time-delta rows."""
    b, t = timestamps.shape
    offsets = np.arange(t)[:, None] - np.arange(t)[None, :]
    pos_rows = np.clip(offsets + (max_len - 1), 0, 2 * max_len - 2)
    deltas = timestamps[:, :, None].astype(np.int64) - timestamps[:, None, :].astype(np.int64)
    return pos_rows, time_delta_bucket(deltas)


class HstuLayer:
    """One decoder layer; parameters live in the shared store under a prefix."""

    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        width: int,
        rng,
        heads: int = 1,
        max_len: int = 120,
        dtype=np.float64,
    ):
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.max_len = max_len
        self.f1_w = register_normal(store, f"{prefix}.f1.w", rng, (width, 4 * width), dtype=dtype)
        self.f1_b = store.register(f"{prefix}.f1.b", np.zeros(4 * width, dtype=dtype))
        self.f2_w = register_normal(store, f"{prefix}.f2.w", rng, (width, width), dtype=dtype)
        self.f2_b = store.register(f"{prefix}.f2.b", np.zeros(width, dtype=dtype))
        # bias tables start at zero: the layer begins as unbiased attention
        self.pos_bias = store.register(f"{prefix}.bias.pos", np.zeros((2 * max_len - 1, heads), dtype=dtype))
        self.time_bias = store.register(
            f"{prefix}.bias.time", np.zeros((N_TIME_DELTA_BUCKETS, heads), dtype=dtype)
        )

    def relative_bias(self, bias_ids: tuple) -> Tensor:
        """(B, heads, T, T) bias: positional bucket of i-j plus the log bucket
        of the clamped time delta t_i - t_j."""
        pos_rows, time_rows = bias_ids
        t = pos_rows.shape[0]
        pos = ad.embedding(self.pos_bias, pos_rows)  # (T, T, heads)
        pos = ad.transpose(pos, (2, 0, 1))
        pos = ad.reshape(pos, (1, self.heads, t, t))
        tb = ad.embedding(self.time_bias, time_rows)  # (B, T, T, heads)
        tb = ad.transpose(tb, (0, 3, 1, 2))
        return ad.add(pos, tb)

    def forward(self, x: Tensor, bias_ids: tuple, mask: np.ndarray) -> Tensor:
        """x is (B, T, C); ``bias_ids`` comes from :func:`bias_bucket_ids`;
        mask is the multiplicative (B, 1, T, T) causal mask."""
        b, t, c = x.shape
        h, d = self.heads, self.head_dim
        proj = ad.silu(ad.add(ad.matmul(x, self.f1_w), self.f1_b))
        u = ad.narrow(proj, 2, 0, c)
        v = ad.reshape(ad.narrow(proj, 2, c, c), (b, t, h, d))
        q = ad.reshape(ad.narrow(proj, 2, 2 * c, c), (b, t, h, d))
        k = ad.reshape(ad.narrow(proj, 2, 3 * c, c), (b, t, h, d))

        scores = ad.matmul(ad.transpose(q, (0, 2, 1, 3)), ad.transpose(k, (0, 2, 3, 1)))  # (B, H, T, T)
        scores = ad.silu(ad.add(scores, self.relative_bias(bias_ids)))
        scores = ad.mul(scores, mask)  # masked entries exactly zero after activation

        counts = mask.sum(axis=-1)  # visible keys per query, (B, 1, T)
        inv = (1.0 / np.maximum(counts, 1.0))[:, :, :, None]  # (B, 1, T, 1)
        attn = ad.matmul(scores, ad.transpose(v, (0, 2, 1, 3)))  # (B, H, T, D)
        attn = ad.mul(attn, inv)
        attn = ad.reshape(ad.transpose(attn, (0, 2, 1, 3)), (b, t, h * d))

        gated = ad.mul(ad.layer_norm(attn), u)
        return ad.add(ad.matmul(gated, self.f2_w), self.f2_b)
