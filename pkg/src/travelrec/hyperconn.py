"""Multi-stream residual mixing with per-task gates around a decoder layer.

Each token carries n parallel residual streams. A layer computes mixing
vectors from the normalized streams (a learned static part plus a tanh
dynamic part scaled by a scalar gate), gates the pre and res mixes per task,
averages the gated mixes over tasks, and wraps the inner attention layer:
the pre mix collapses streams to one row for attention, the post mix spreads
the attention output back across streams, and the res mix carries the
multi-stream residual.

Initialization makes depth-one behavior equal a standard residual network:
the res mix starts as the identity, pre and post start as "first stream
only", the dynamic scalars start at zero, and every task gate starts at one.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hstu import HstuLayer
from .optim import ParameterStore, register_normal


def init_streams(embeddings: Tensor, n_streams: int) -> Tensor:
    """Replicate (B, T, C) token embeddings into (B, T, n, C) stream state."""
    if n_streams < 1:
        raise ValueError(f"need at least one stream, got {n_streams}")
    b, t, c = embeddings.shape
    return ad.expand(ad.reshape(embeddings, (b, t, 1, c)), (b, t, n_streams, c))


class TaskGatedHyperLayer:
    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        n_streams: int,
        width: int,
        tasks: tuple,
        rng,
        dtype=np.float64,
    ):
        n = n_streams
        self.n_streams = n
        self.width = width
        self.tasks = tuple(tasks)
        first_stream = np.zeros(n, dtype=dtype)
        first_stream[0] = 1.0
        self.static_pre = store.register(f"{prefix}.static.pre", first_stream)
        self.static_post = store.register(f"{prefix}.static.post", first_stream)
        self.static_res = store.register(f"{prefix}.static.res", np.eye(n, dtype=dtype))
        self.dyn_pre = register_normal(store, f"{prefix}.dyn.pre", rng, (width,), dtype=dtype)
        self.dyn_post = register_normal(store, f"{prefix}.dyn.post", rng, (width,), dtype=dtype)
        self.dyn_res = register_normal(store, f"{prefix}.dyn.res", rng, (n, width), dtype=dtype)
        self.scale_pre = store.register(f"{prefix}.scale.pre", np.zeros((), dtype=dtype))
        self.scale_post = store.register(f"{prefix}.scale.post", np.zeros((), dtype=dtype))
        self.scale_res = store.register(f"{prefix}.scale.res", np.zeros((), dtype=dtype))
        self.task_gates = {
            task: store.register(f"{prefix}.gate.{task}", np.ones(n, dtype=dtype)) for task in tasks
        }

    def hc_matrices(self, x: Tensor) -> tuple:
        """Per-token mixes from normalized streams: pre/post are (B, T, n),
        res is (B, T, n, n) with res[i, j] mixing source stream j into i."""
        normed = ad.rms_norm(x)
        pre = ad.add(ad.mul(self.scale_pre, ad.tanh(ad.einsum("c,btnc->btn", self.dyn_pre, normed))), self.static_pre)
        post = ad.add(ad.mul(self.scale_post, ad.tanh(ad.einsum("c,btnc->btn", self.dyn_post, normed))), self.static_post)
        res = ad.add(ad.mul(self.scale_res, ad.tanh(ad.einsum("ic,btjc->btij", self.dyn_res, normed))), self.static_res)
        return pre, post, res


def apply_task_gate(h_pre: Tensor, h_res: Tensor, gate: Tensor) -> tuple:
    """Gate the pre mix elementwise and scale res column j (source stream j)
    by gate[j]."""
    return ad.mul(h_pre, gate), ad.mul(h_res, gate)


def _mean_over_tasks(parts: list) -> Tensor:
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return ad.mul(total, 1.0 / len(parts))


def hyper_layer_forward(
    layer: TaskGatedHyperLayer,
    inner: HstuLayer,
    x: Tensor,
    bias_ids: tuple,
    mask: np.ndarray,
    gate_pre: bool = True,
    gate_res: bool = True,
) -> Tensor:
    """One multi-stream layer step: X' = mean_k(Jres_k X) + post^T inner(mean_k(Jpre_k X))."""
    h_pre, h_post, h_res = layer.hc_matrices(x)
    if gate_pre:
        pre_mix = _mean_over_tasks([ad.mul(h_pre, layer.task_gates[t]) for t in layer.tasks])
    else:
        pre_mix = h_pre
    if gate_res:
        res_mix = _mean_over_tasks([ad.mul(h_res, layer.task_gates[t]) for t in layer.tasks])
    else:
        res_mix = h_res

    collapsed = ad.einsum("btn,btnc->btc", pre_mix, x)
    attended = inner.forward(collapsed, bias_ids, mask)
    spread = ad.einsum("btn,btc->btnc", h_post, attended)
    residual = ad.einsum("btij,btjc->btic", res_mix, x)
    return ad.add(residual, spread)
