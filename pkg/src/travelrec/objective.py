"""Candidate scoring, the summed multi-task contrastive loss, and metrics.

The departure-time and travel-mode tasks score against their whole (small)
vocabularies. The destination and via tasks score against per-example hybrid
candidate sets: the ground truth first, then 14 uniform corpus negatives
plus up to 50 negatives sharing the ground truth's geographic block,
deduplicated. Each task's loss is the mean negative log-softmax of the
ground truth over valid labeled positions; the total is the plain sum of
task losses. Null-labeled and padded positions are never gathered into the
graph, so their loss and gradient contributions are exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, negatives_rng, sample_negatives
from .sequence import TASKS, Batch, Vocabulary

TASK_INDEX = {task: i for i, task in enumerate(TASKS)}
SAMPLED_TASKS = ("where", "via")


class MetricError(ValueError):
    pass


@dataclass
class TaskTargets:
    """Per-task supervision for one batch.

    ``flat_rows`` indexes the flattened (B*T) token grid. For vocabulary
    tasks ``positives`` holds label ids and the candidate arrays are None.
    For sampled tasks the positive sits in candidate column 0.
    """

    task: str
    flat_rows: np.ndarray
    positives: np.ndarray
    cand_rows: np.ndarray | None = None
    cand_mask: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.flat_rows)

    def candidate_counts(self) -> np.ndarray:
        if self.cand_mask is None:
            raise MetricError(f"task {self.task} has no sampled candidates")
        return self.cand_mask.sum(axis=1).astype(np.int64)


def _label_arrays(batch: Batch, task: str) -> tuple:
    return {
        "when": (batch.when_label, batch.when_mask),
        "how": (batch.how_label, batch.how_mask),
        "where": (batch.where_label, batch.where_mask),
        "via": (batch.via_label, batch.via_mask),
    }[task]


def build_task_targets(
    batch: Batch,
    task: str,
    dataset: Dataset,
    vocab: Vocabulary,
    seed: int,
    epoch_key: int = 0,
    eval_tag: int = 0,
    cache: dict | None = None,
) -> TaskTargets:
    """Collect labeled positions and, for sampled tasks, per-example candidates.

    Negative draws are keyed by (seed, epoch key, user, interaction ordinal,
    task), so they are independent of batch composition; ``epoch_key`` stays
    0 in the default fixed-per-example mode. A ``cache`` dict avoids
    redrawing identical candidate lists across epochs.
    """
    labels, mask = _label_arrays(batch, task)
    b, t = mask.shape
    flat_mask = mask.reshape(-1)
    flat_rows = np.nonzero(flat_mask)[0]
    positives = labels.reshape(-1)[flat_rows]
    if task not in SAMPLED_TASKS:
        return TaskTargets(task=task, flat_rows=flat_rows, positives=positives)

    user_grid = np.broadcast_to(batch.user_ids[:, None], (b, t)).reshape(-1)
    ordinal_grid = batch.ordinal.reshape(-1)
    cand_lists = []
    for row, pos_row in zip(flat_rows, positives):
        key = (eval_tag, epoch_key, int(user_grid[row]), int(ordinal_grid[row]), TASK_INDEX[task])
        cands = cache.get(key) if cache is not None else None
        if cands is None:
            raw_positive = vocab.poi_ids_by_row[pos_row]
            negatives = sample_negatives(dataset, int(raw_positive), negatives_rng(seed, *key))
            cands = [pos_row] + [vocab.poi.row(p) for p in negatives]
            if cache is not None:
                cache[key] = cands
        cand_lists.append(cands)
    width = max((len(c) for c in cand_lists), default=1)
    cand_rows = np.zeros((len(cand_lists), width), dtype=np.int64)
    cand_mask = np.zeros((len(cand_lists), width), dtype=np.float64)
    for i, cands in enumerate(cand_lists):
        cand_rows[i, : len(cands)] = cands
        cand_mask[i, : len(cands)] = 1.0
    return TaskTargets(
        task=task,
        flat_rows=flat_rows,
        positives=np.zeros(len(cand_lists), dtype=np.int64),
        cand_rows=cand_rows,
        cand_mask=cand_mask,
    )


def score_candidates(queries: Tensor, candidate_embeddings: Tensor) -> Tensor:
    """Inner products: (P, C) queries against (P, W, C) candidate embeddings."""
    p, c = queries.shape
    rows = ad.reshape(queries, (p, 1, c))
    scores = ad.matmul(rows, ad.transpose(candidate_embeddings, (0, 2, 1)))
    return ad.reshape(scores, (p, candidate_embeddings.shape[1]))


def score_vocabulary(queries: Tensor, table: Tensor) -> Tensor:
    """(P, C) queries against every row of a (V, C) embedding table."""
    return ad.matmul(queries, ad.transpose(table, (1, 0)))


def infonce(logits: Tensor, positive_idx: np.ndarray, cand_mask: np.ndarray | None = None) -> Tensor:
    """Mean over rows of log-sum-exp(logits) minus the positive logit."""
    lse = ad.logsumexp(logits, mask=cand_mask)
    pos = ad.select_columns(logits, positive_idx)
    return ad.add(lse, ad.mul(pos, -1.0)).mean()


def total_loss(task_losses: dict, weights: dict | None = None) -> Tensor:
    """Sum of per-task mean losses; the optional weights default to one."""
    total = None
    for task, loss in task_losses.items():
        w = 1.0 if weights is None else float(weights.get(task, 1.0))
        term = loss if w == 1.0 else ad.mul(loss, w)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise MetricError("no task produced a loss term")
    return total


# ---------------------------------------------------------------------------
# Evaluation metrics

def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise MetricError("empty test set")
    return float(np.mean(predictions == labels))


def mean_absolute_error(
    predictions: np.ndarray, labels: np.ndarray, circular: bool = False, period: int = 48
) -> float:
    if len(labels) == 0:
        raise MetricError("empty test set")
    diff = np.abs(predictions.astype(np.int64) - labels.astype(np.int64))
    if circular:
        diff = np.minimum(diff, period - diff)
    return float(np.mean(diff))


def top_k_miss_rate(rankings: np.ndarray, labels: np.ndarray, k: int = 3) -> float:
    """Fraction of rows whose label is absent from the first k ranked entries."""
    if len(labels) == 0:
        raise MetricError("empty test set")
    top = rankings[:, :k]
    hits = (top == labels[:, None]).any(axis=1)
    return float(np.mean(~hits))


def hit_rate(rankings: np.ndarray, truths: np.ndarray, n: int) -> float:
    if len(truths) == 0:
        raise MetricError("empty test set")
    top = rankings[:, :n]
    return float(np.mean((top == truths[:, None]).any(axis=1)))


def category_inconsistency_rate(rankings: np.ndarray, truths: np.ndarray, cid_of: dict) -> float:
    """Fraction of rows whose top-1 item is neither the truth nor shares its
    category."""
    if len(truths) == 0:
        raise MetricError("empty test set")
    bad = 0
    for top1, truth in zip(rankings[:, 0], truths):
        if top1 not in cid_of or truth not in cid_of:
            raise MetricError(f"unknown POI in ranking: {top1 if top1 not in cid_of else truth}")
        if top1 != truth and cid_of[top1] != cid_of[truth]:
            bad += 1
    return bad / len(truths)


def classification_metrics(
    predictions: np.ndarray, labels: np.ndarray, rankings: np.ndarray | None = None,
    circular_mae: bool = False, period: int = 48,
) -> tuple:
    """(accuracy, mean absolute error, top-3 miss rate); the miss rate needs
    rankings and is None without them."""
    acc = accuracy(predictions, labels)
    mae = mean_absolute_error(predictions, labels, circular=circular_mae, period=period)
    bcr = None if rankings is None else top_k_miss_rate(rankings, labels, k=3)
    return acc, mae, bcr


def retrieval_metrics(rankings: np.ndarray, truths: np.ndarray, cid_of: dict, n_list=(1, 5)) -> dict:
    out = {f"hr@{n}": hit_rate(rankings, truths, n) for n in n_list}
    out["cir"] = category_inconsistency_rate(rankings, truths, cid_of)
    return out


@dataclass
class MetricsReport:
    """Per-task evaluation results plus sample and exclusion counts."""

    values: dict = field(default_factory=dict)  # flat "task.metric" -> float
    counts: dict = field(default_factory=dict)  # "task" -> evaluated samples
    excluded: dict = field(default_factory=dict)  # "task" -> skipped samples

    def put(self, task: str, metric: str, value: float) -> None:
        self.values[f"{task}.{metric}"] = value

    def get(self, task: str, metric: str) -> float:
        return self.values[f"{task}.{metric}"]

    def to_lines(self) -> list:
        lines = []
        for key in sorted(self.values):
            lines.append(f"{key} = {self.values[key]:.6f}")
        for task in sorted(self.counts):
            lines.append(f"{task}.samples = {self.counts[task]}")
        for task in sorted(self.excluded):
            lines.append(f"{task}.excluded = {self.excluded[task]}")
        return lines

    def __str__(self) -> str:
        return "\n".join(self.to_lines())
