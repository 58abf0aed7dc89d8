"""Evaluation over temporal splits, plus the popularity baseline.

For each user the evaluation sequence is the history up to and including
the held-out interaction; labels are kept only on that interaction's S and
I tokens, so metrics measure prediction of the held-out journey given
everything before it. Candidate sets use the same per-example sampler as
training. Examples whose optional label is missing (travel mode, via) are
excluded from that task's metrics and reported in the exclusion counts.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .data import Dataset, DatasetSplit
from .model import RecommenderModel
from .objective import (
    MetricsReport,
    build_task_targets,
    category_inconsistency_rate,
    hit_rate,
    mean_absolute_error,
    top_k_miss_rate,
)
from .sequence import TASKS, Vocabulary, batchify, build_labeled_sequence

RETRIEVAL_TASKS = ("where", "via")


def eval_sequences(dataset: Dataset, split: DatasetSplit, vocab: Vocabulary, max_len: int, which: str) -> list:
    if which not in ("val", "test"):
        raise ValueError(f"unknown split {which!r}; expected 'val' or 'test'")
    users_by_id = {u.user_id: u for u in dataset.users}
    sequences = []
    for user in dataset.users:
        us = split.users[user.user_id]
        eval_idx = us.val if which == "val" else us.test
        if eval_idx is None:
            continue
        recs = dataset.interactions[user.user_id][: eval_idx + 1]
        seq = build_labeled_sequence(users_by_id[user.user_id], recs, max_len, vocab, ordinals=range(eval_idx + 1))
        seq.keep_labels_at([len(seq) - 3, len(seq) - 2])
        sequences.append(seq)
    return sequences


def _ranked_vocab(logits: np.ndarray) -> np.ndarray:
    return np.argsort(-logits, axis=1, kind="stable")


def _ranked_candidates(logits: np.ndarray, cand_rows: np.ndarray, cand_mask: np.ndarray, vocab: Vocabulary):
    """Per row: candidate poi ids ranked by logit, invalid slots dropped."""
    masked = np.where(cand_mask > 0, logits, -np.inf)
    order = np.argsort(-masked, axis=1, kind="stable")
    ids_by_row = np.asarray(vocab.poi_ids_by_row)
    ranked_ids = []
    for r, row_order in enumerate(order):
        keep = row_order[cand_mask[r, row_order] > 0]
        ranked_ids.append(ids_by_row[cand_rows[r, keep]])
    return ranked_ids


def _pad_rankings(ranked_ids: list) -> np.ndarray:
    width = max(len(r) for r in ranked_ids)
    out = np.full((len(ranked_ids), width), -1, dtype=np.int64)
    for i, r in enumerate(ranked_ids):
        out[i, : len(r)] = r
    return out


def _cid_lookup(vocab: Vocabulary) -> dict:
    ids = vocab.poi_ids_by_row
    return {int(ids[row]): int(vocab.poi_cid_rows[row]) for row in range(len(ids))}


def evaluate(
    model: RecommenderModel,
    dataset: Dataset,
    split: DatasetSplit,
    vocab: Vocabulary,
    config: RunConfig,
    which: str = "test",
    active_tasks: tuple = TASKS,
) -> MetricsReport:
    sequences = eval_sequences(dataset, split, vocab, config.max_seq_len, which)
    if not sequences:
        raise ValueError(f"split {which!r} is empty")
    users_by_id = {u.user_id: u for u in dataset.users}
    batches = batchify(sequences, vocab, users_by_id, config.batch_size)

    collected: dict = {task: {"preds": [], "labels": [], "rankings": []} for task in active_tasks}
    eligible = len(sequences)
    counted: dict = {task: 0 for task in active_tasks}
    cid_of = _cid_lookup(vocab)

    for batch in batches:
        queries = model.forward_queries(batch)
        for task in active_tasks:
            targets = build_task_targets(batch, task, dataset, vocab, config.seed)
            if targets.count == 0:
                continue
            counted[task] += targets.count
            logits = model.task_logits(queries, targets).data
            store = collected[task]
            if task in RETRIEVAL_TASKS:
                ranked = _ranked_candidates(logits, targets.cand_rows, targets.cand_mask, vocab)
                truths = np.asarray(vocab.poi_ids_by_row)[targets.cand_rows[:, 0]]
                store["rankings"].extend(ranked)
                store["labels"].append(truths)
            else:
                ranks = _ranked_vocab(logits)
                store["rankings"].append(ranks)
                store["preds"].append(ranks[:, 0])
                store["labels"].append(targets.positives)

    report = MetricsReport()
    for task in active_tasks:
        store = collected[task]
        report.counts[task] = counted[task]
        report.excluded[task] = eligible - counted[task]
        if counted[task] == 0:
            continue
        labels = np.concatenate(store["labels"])
        if task == "when":
            preds = np.concatenate(store["preds"])
            report.put(task, "acc", float(np.mean(preds == labels)))
            report.put(task, "mae", mean_absolute_error(preds, labels, circular=config.circular_mae))
        elif task == "how":
            preds = np.concatenate(store["preds"])
            rankings = np.concatenate(store["rankings"], axis=0)
            report.put(task, "acc", float(np.mean(preds == labels)))
            report.put(task, "bcr", top_k_miss_rate(rankings, labels, k=3))
        else:
            rankings = _pad_rankings(store["rankings"])
            report.put(task, "hr@1", hit_rate(rankings, labels, 1))
            report.put(task, "hr@5", hit_rate(rankings, labels, 5))
            report.put(task, "cir", category_inconsistency_rate(rankings, labels, cid_of))
    return report


def train_popularity(dataset: Dataset, split: DatasetSplit, vocab: Vocabulary) -> np.ndarray:
    """Per-vocab-row score: train-set visit count, nscore as the tiebreak."""
    counts = np.zeros(vocab.poi.size, dtype=np.float64)
    for user in dataset.users:
        recs = dataset.interactions[user.user_id]
        for i in split.users[user.user_id].train:
            counts[vocab.poi.row(recs[i].target_poi_id)] += 1.0
    for p in dataset.pois:
        counts[vocab.poi.row(p.poi_id)] += p.nscore  # nscore < 1 only breaks ties
    return counts


def popularity_baseline(
    dataset: Dataset,
    split: DatasetSplit,
    vocab: Vocabulary,
    config: RunConfig,
    which: str = "test",
    tasks: tuple = RETRIEVAL_TASKS,
) -> MetricsReport:
    """Rank every candidate set by global train popularity instead of the model."""
    sequences = eval_sequences(dataset, split, vocab, config.max_seq_len, which)
    if not sequences:
        raise ValueError(f"split {which!r} is empty")
    users_by_id = {u.user_id: u for u in dataset.users}
    batches = batchify(sequences, vocab, users_by_id, config.batch_size)
    scores = train_popularity(dataset, split, vocab)
    cid_of = _cid_lookup(vocab)

    report = MetricsReport()
    for task in tasks:
        ranked_all, truth_all = [], []
        for batch in batches:
            targets = build_task_targets(batch, task, dataset, vocab, config.seed)
            if targets.count == 0:
                continue
            logits = scores[targets.cand_rows]
            ranked_all.extend(_ranked_candidates(logits, targets.cand_rows, targets.cand_mask, vocab))
            truth_all.append(np.asarray(vocab.poi_ids_by_row)[targets.cand_rows[:, 0]])
        if not ranked_all:
            continue
        rankings = _pad_rankings(ranked_all)
        truths = np.concatenate(truth_all)
        report.counts[task] = len(truths)
        report.put(task, "hr@1", hit_rate(rankings, truths, 1))
        report.put(task, "hr@5", hit_rate(rankings, truths, 5))
        report.put(task, "cir", category_inconsistency_rate(rankings, truths, cid_of))
    return report
