"""Per-task selection over decoder depth.

Each layer's multi-stream output is averaged into one vector per token. A
two-layer MLP maps each task's embedding to one raw scalar per layer; the
scalars weight the layer outputs, which are then mean-pooled over depth into
the task's representation. The MLP's output bias starts at one so gating
begins as plain average pooling.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParameterStore, register_normal


def aggregate_streams(x: Tensor) -> Tensor:
    """(B, T, n, C) -> (B, T, C) by averaging the stream rows."""
    return x.mean(axis=2)


class LayerGatePool:
    def __init__(self, store: ParameterStore, prefix: str, width: int, depth: int, rng, dtype=np.float64):
        self.depth = depth
        self.w1 = register_normal(store, f"{prefix}.mlp.w1", rng, (width, width), dtype=dtype)
        self.b1 = store.register(f"{prefix}.mlp.b1", np.zeros(width, dtype=dtype))
        self.w2 = register_normal(store, f"{prefix}.mlp.w2", rng, (width, depth), dtype=dtype)
        self.b2 = store.register(f"{prefix}.mlp.b2", np.ones(depth, dtype=dtype))

    def layer_gates(self, task_embedding: Tensor) -> Tensor:
        """One raw (unsquashed) scalar per layer from the task embedding (C,)."""
        e = ad.reshape(task_embedding, (1, task_embedding.shape[-1]))
        hidden = ad.silu(ad.add(ad.matmul(e, self.w1), self.b1))
        return ad.reshape(ad.add(ad.matmul(hidden, self.w2), self.b2), (self.depth,))


def gate_and_pool(layer_outputs: list, gates: Tensor | None) -> Tensor:
    """Mean over depth of gate[l] * z_l; gates=None means ungated pooling."""
    scaled = []
    for l, z in enumerate(layer_outputs):
        if gates is None:
            scaled.append(z)
        else:
            scaled.append(ad.mul(z, ad.narrow(gates, 0, l, 1)))
    total = scaled[0]
    for z in scaled[1:]:
        total = ad.add(total, z)
    return ad.mul(total, 1.0 / len(scaled))
