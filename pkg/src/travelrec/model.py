"""The full multi-task recommender network.

Token embeddings fuse additively per token kind: scenario tokens sum block,
region, weather, and half-hour embeddings; item tokens use the POI table;
feedback tokens sum action and travel-mode embeddings. The decoder is a
stack of multi-stream gated layers around pointwise attention (or a plain
residual stack when the stream machinery is switched off). Depth gating
pools per-layer outputs into one representation per task, and the expert
head turns it into a query vector scored against candidate embeddings.

The destination and via tasks share the POI table between the input side
and the candidate side; the departure-time and travel-mode tasks likewise
score against their input embedding tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import SEED_INIT
from .experts import ExpertComposedHead, SharedMlpHead
from .gating import LayerGatePool, aggregate_streams, gate_and_pool
from .hstu import HstuLayer, bias_bucket_ids, causal_mask
from .hyperconn import TaskGatedHyperLayer, hyper_layer_forward, init_streams
from .objective import TaskTargets, infonce, score_candidates, score_vocabulary, total_loss
from .optim import ParameterStore, register_normal
from .sequence import KIND_F, KIND_I, KIND_S, TASKS, Batch, Vocabulary


@dataclass
class ModelSettings:
    width: int = 96
    depth: int = 3
    streams: int = 2
    heads: int = 1
    max_len: int = 120
    shared_experts: int = 2
    private_experts: int = 1
    tasks: tuple = TASKS
    embed_std: float = 0.05
    # ablation switches; the default is the full model
    use_hyper: bool = True
    gate_pre: bool = True
    gate_res: bool = True
    tsg_final_only: bool = False
    tsg_task_gating: bool = True
    expert_head: bool = True
    use_time_features: bool = True
    use_mode_features: bool = True
    zero_item_embeddings: bool = False
    task_weights: dict = field(default_factory=dict)
    dtype: type = np.float64

    @property
    def profile_width(self) -> int:
        return max(self.width // 2, 1)


class RecommenderModel:
    def __init__(self, store: ParameterStore, vocab: Vocabulary, settings: ModelSettings, seed: int):
        self.store = store
        self.vocab = vocab
        self.s = settings
        rng = np.random.default_rng(np.random.SeedSequence([seed, SEED_INIT]))
        c, dt, std = settings.width, settings.dtype, settings.embed_std

        def table(name, size, width=c):
            return register_normal(store, name, rng, (size, width), std=std, dtype=dt)

        self.poi_table = table("emb.poi", vocab.poi.size)
        self.gid_table = table("emb.gid", vocab.gid.size)
        self.arid_table = table("emb.arid", vocab.arid.size)
        self.weather_table = table("emb.weather", vocab.weather.size)
        self.tbucket_table = table("emb.tbucket", vocab.n_time_buckets)
        self.action_table = table("emb.action", vocab.action.size)
        self.mode_table = table("emb.mode", vocab.mode.size)
        self.profile_tables = [
            table(f"emb.profile{i}", vocab.profiles[i].size, settings.profile_width) for i in range(6)
        ]
        self.task_table = table("emb.task", len(settings.tasks))
        self._task_row = {task: i for i, task in enumerate(settings.tasks)}

        self.att_layers = [
            HstuLayer(store, f"layer{l}.att", c, rng, heads=settings.heads, max_len=settings.max_len, dtype=dt)
            for l in range(settings.depth)
        ]
        self.hyper_layers = (
            [
                TaskGatedHyperLayer(store, f"layer{l}.mix", settings.streams, c, settings.tasks, rng, dtype=dt)
                for l in range(settings.depth)
            ]
            if settings.use_hyper
            else []
        )
        self.selector = (
            LayerGatePool(store, "select", c, settings.depth, rng, dtype=dt)
            if settings.tsg_task_gating
            else None
        )
        if settings.expert_head:
            self.head = ExpertComposedHead(
                store,
                "head",
                c,
                settings.profile_width,
                settings.tasks,
                rng,
                n_shared=settings.shared_experts,
                n_private=settings.private_experts,
                dtype=dt,
            )
        else:
            self.head = SharedMlpHead(store, "head", c, rng, dtype=dt)

    # -- embeddings --------------------------------------------------------

    def task_embedding(self, task: str) -> Tensor:
        row = self._task_row[task]
        return ad.reshape(ad.narrow(self.task_table, 0, row, 1), (self.s.width,))

    def profile_embedding(self, batch: Batch) -> Tensor:
        total = None
        for i, tbl in enumerate(self.profile_tables):
            part = ad.embedding(tbl, batch.profile_rows[:, i])
            total = part if total is None else ad.add(total, part)
        return total

    def embed_tokens(self, batch: Batch) -> Tensor:
        dt = self.s.dtype
        is_s = batch.kind_mask(KIND_S).astype(dt)[:, :, None]
        is_i = batch.kind_mask(KIND_I).astype(dt)[:, :, None]
        is_f = batch.kind_mask(KIND_F).astype(dt)[:, :, None]

        scenario = ad.add(ad.embedding(self.gid_table, batch.gid), ad.embedding(self.arid_table, batch.arid))
        scenario = ad.add(scenario, ad.embedding(self.weather_table, batch.weather))
        if self.s.use_time_features:
            scenario = ad.add(scenario, ad.embedding(self.tbucket_table, batch.tbucket))
        feedback = ad.embedding(self.action_table, batch.action)
        if self.s.use_mode_features:
            feedback = ad.add(feedback, ad.embedding(self.mode_table, batch.mode))

        emb = ad.add(ad.mul(scenario, is_s), ad.mul(feedback, is_f))
        if not self.s.zero_item_embeddings:
            emb = ad.add(emb, ad.mul(ad.embedding(self.poi_table, batch.poi), is_i))
        return emb

    def candidate_table(self, task: str) -> Tensor:
        if task == "when":
            return self.tbucket_table
        if task == "how":
            return ad.narrow(self.mode_table, 0, 0, self.vocab.n_modes)
        raise ValueError(f"task {task} scores sampled candidates, not a vocabulary")

    # -- forward -----------------------------------------------------------

    def forward_queries(self, batch: Batch) -> dict:
        """Per-task query representations, (B, T, C) each."""
        s = self.s
        emb = self.embed_tokens(batch)
        mask = causal_mask(batch.valid, dtype=s.dtype)
        bias_ids = bias_bucket_ids(batch.timestamp, s.max_len)

        layer_outputs = []
        if s.use_hyper:
            x = init_streams(emb, s.streams)
            for mix, att in zip(self.hyper_layers, self.att_layers):
                x = hyper_layer_forward(mix, att, x, bias_ids, mask, gate_pre=s.gate_pre, gate_res=s.gate_res)
                layer_outputs.append(aggregate_streams(x))
        else:
            x = emb
            for att in self.att_layers:
                x = ad.add(x, att.forward(x, bias_ids, mask))
                layer_outputs.append(x)

        profile = self.profile_embedding(batch)
        queries = {}
        for task in s.tasks:
            e = self.task_embedding(task)
            use_gates = self.selector is not None and s.tsg_task_gating
            gates = self.selector.layer_gates(e) if use_gates else None
            if s.tsg_final_only:
                zs = layer_outputs[-1:]
                g = ad.narrow(gates, 0, s.depth - 1, 1) if gates is not None else None
            else:
                zs, g = layer_outputs, gates
            z = gate_and_pool(zs, g)
            queries[task] = self.head.forward(z, task, e, profile)
        return queries

    def task_logits(self, queries: dict, targets: TaskTargets) -> Tensor:
        """Score one task's labeled rows against its candidates."""
        q = queries[targets.task]
        b, t, c = q.shape
        rows = ad.take_rows(ad.reshape(q, (b * t, c)), targets.flat_rows)
        if targets.cand_rows is None:
            return score_vocabulary(rows, self.candidate_table(targets.task))
        cand_emb = ad.embedding(self.poi_table, targets.cand_rows)
        return score_candidates(rows, cand_emb)

    def batch_loss(self, batch: Batch, targets_by_task: dict) -> tuple:
        """(total loss Tensor, per-task mean losses, per-task sample counts)."""
        queries = self.forward_queries(batch)
        losses, counts = {}, {}
        for task, targets in targets_by_task.items():
            counts[task] = targets.count
            if targets.count == 0:
                continue
            logits = self.task_logits(queries, targets)
            losses[task] = infonce(logits, targets.positives, targets.cand_mask)
        return total_loss(losses, self.s.task_weights), losses, counts
