"""Task-conditioned output heads composed from shared and private experts.

Every expert holds one candidate projection (a square weight and a bias).
For a task, a context vector (task embedding concatenated with the user's
profile embedding) is mapped to one logit per expert; each weight is twice a
sigmoid, so it lives in (0, 2) and can amplify an expert beyond one. The
task's projection is the weighted sum over the shared experts plus that
task's own private experts only, which keeps every other task's loss away
from this task's private parameters. In parallel a sigmoid gate computed
from the features and the context filters the task representation before
the composed projection is applied.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import ParameterStore, register_normal


class ExpertComposedHead:
    def __init__(
        self,
        store: ParameterStore,
        prefix: str,
        width: int,
        profile_width: int,
        tasks: tuple,
        rng,
        n_shared: int = 2,
        n_private: int = 1,
        dtype=np.float64,
    ):
        self.width = width
        self.tasks = tuple(tasks)
        self.n_shared = n_shared
        self.n_private = n_private
        self._expert_w: list = []
        self._expert_b: list = []
        self._slots: dict = {"shared": list(range(n_shared))}
        self._names: list = []

        def add_expert(name):
            idx = len(self._expert_w)
            self._expert_w.append(register_normal(store, f"{prefix}.{name}.w", rng, (width, width), dtype=dtype))
            self._expert_b.append(store.register(f"{prefix}.{name}.b", np.zeros(width, dtype=dtype)))
            self._names.append(f"{prefix}.{name}")
            return idx

        for j in range(n_shared):
            add_expert(f"shared{j}")
        for task in tasks:
            self._slots[task] = [add_expert(f"private.{task}{j}") for j in range(n_private)]

        n_experts = len(self._expert_w)
        ctx = width + profile_width
        self.mix_w1 = register_normal(store, f"{prefix}.mix.w1", rng, (ctx, width), dtype=dtype)
        self.mix_b1 = store.register(f"{prefix}.mix.b1", np.zeros(width, dtype=dtype))
        self.mix_w2 = register_normal(store, f"{prefix}.mix.w2", rng, (width, n_experts), dtype=dtype)
        self.mix_b2 = store.register(f"{prefix}.mix.b2", np.zeros(n_experts, dtype=dtype))
        self.gate_w1 = register_normal(store, f"{prefix}.filter.w1", rng, (width + ctx, width), dtype=dtype)
        self.gate_b1 = store.register(f"{prefix}.filter.b1", np.zeros(width, dtype=dtype))
        self.gate_w2 = register_normal(store, f"{prefix}.filter.w2", rng, (width, width), dtype=dtype)
        self.gate_b2 = store.register(f"{prefix}.filter.b2", np.zeros(width, dtype=dtype))

    @property
    def n_experts(self) -> int:
        return len(self._expert_w)

    def expert_indices(self, task: str) -> list:
        return self._slots["shared"] + self._slots[task]

    def private_param_names(self, task: str) -> list:
        names = []
        for idx in self._slots[task]:
            names.extend([f"{self._names[idx]}.w", f"{self._names[idx]}.b"])
        return names

    def context(self, task_embedding: Tensor, profile_embedding: Tensor) -> Tensor:
        """R = concat(task embedding, profile embedding) per batch row."""
        b = profile_embedding.shape[0]
        e = ad.expand(ad.reshape(task_embedding, (1, self.width)), (b, self.width))
        return ad.concat([e, profile_embedding], axis=1)

    def expert_weights(self, context: Tensor) -> Tensor:
        """(B, n_experts) logits through 2*sigmoid; all slots computed, only
        the task's slice is consumed downstream."""
        hidden = ad.silu(ad.add(ad.matmul(context, self.mix_w1), self.mix_b1))
        logits = ad.add(ad.matmul(hidden, self.mix_w2), self.mix_b2)
        return ad.mul(ad.sigmoid(logits), 2.0)

    def compose_parameters(self, weights: Tensor, task: str) -> tuple:
        """Weighted sums over the shared plus this task's private experts."""
        w_total = None
        b_total = None
        for idx in self.expert_indices(task):
            beta = ad.reshape(ad.narrow(weights, 1, idx, 1), (weights.shape[0],))
            w_part = ad.einsum("b,ij->bij", beta, self._expert_w[idx])
            b_part = ad.einsum("b,j->bj", beta, self._expert_b[idx])
            w_total = w_part if w_total is None else ad.add(w_total, w_part)
            b_total = b_part if b_total is None else ad.add(b_total, b_part)
        return w_total, b_total

    def filter_features(self, z: Tensor, context: Tensor) -> Tensor:
        """Elementwise sigmoid gate over z from (z, context)."""
        b, t, c = z.shape
        ctx = ad.expand(ad.reshape(context, (b, 1, context.shape[-1])), (b, t, context.shape[-1]))
        joined = ad.concat([z, ctx], axis=2)
        hidden = ad.silu(ad.add(ad.matmul(joined, self.gate_w1), self.gate_b1))
        gate = ad.sigmoid(ad.add(ad.matmul(hidden, self.gate_w2), self.gate_b2))
        return ad.mul(z, gate)

    def forward(self, z: Tensor, task: str, task_embedding: Tensor, profile_embedding: Tensor) -> Tensor:
        """(B, T, C) task features -> (B, T, C) query representations."""
        ctx = self.context(task_embedding, profile_embedding)
        weights = self.expert_weights(ctx)
        w, b = self.compose_parameters(weights, task)
        filtered = self.filter_features(z, ctx)
        out = ad.matmul(filtered, ad.transpose(w, (0, 2, 1)))
        return ad.add(out, ad.reshape(b, (b.shape[0], 1, self.width)))


class SharedMlpHead:
    """Plain two-layer MLP used by the head-replacement ablation; one set of
    weights serves every task."""

    def __init__(self, store: ParameterStore, prefix: str, width: int, rng, dtype=np.float64):
        self.w1 = register_normal(store, f"{prefix}.w1", rng, (width, width), dtype=dtype)
        self.b1 = store.register(f"{prefix}.b1", np.zeros(width, dtype=dtype))
        self.w2 = register_normal(store, f"{prefix}.w2", rng, (width, width), dtype=dtype)
        self.b2 = store.register(f"{prefix}.b2", np.zeros(width, dtype=dtype))

    def forward(self, z: Tensor, task: str, task_embedding: Tensor, profile_embedding: Tensor) -> Tensor:
        hidden = ad.silu(ad.add(ad.matmul(z, self.w1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)
