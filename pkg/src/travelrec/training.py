"""Training loop, loss logs, and bit-exact checkpointing.

Runs are deterministic functions of (config, seed): epoch order, batch
composition, and negative draws are all derived from the seed with fixed
stream tags, never from a long-lived RNG whose state would need saving.
Resuming from a checkpoint therefore replays the exact remaining schedule,
and the next step's loss matches an uninterrupted run bit for bit.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, backward
from .config import RunConfig, parse_config_text
from .data import Dataset, DatasetSplit, temporal_split
from .model import ModelSettings, RecommenderModel
from .objective import build_task_targets
from .optim import ParameterStore, adam_step
from .sequence import TASKS, Vocabulary, batchify, build_labeled_sequence, shuffled

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "travelrec-ckpt-1"
LOSS_LOG_NAME = "loss_log.tsv"
VAL_LOG_NAME = "val_log.tsv"


class TrainingAborted(RuntimeError):
    """Raised when the loss turns non-finite; the last checkpoint survives."""


def save_checkpoint(path, store: ParameterStore, config: RunConfig, step: int) -> None:
    arrays = store.state_arrays()
    arrays["meta/version"] = np.array(CHECKPOINT_VERSION)
    arrays["meta/config"] = np.array(config.to_text())
    arrays["meta/step"] = np.array(step, dtype=np.int64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    path.write_bytes(buffer.getvalue())


def load_checkpoint(path) -> tuple:
    """Returns (config, step, raw arrays); refuses version mismatches."""
    with np.load(path, allow_pickle=False) as loaded:
        arrays = {k: loaded[k] for k in loaded.files}
    version = str(arrays.pop("meta/version"))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {version!r} does not match {CHECKPOINT_VERSION!r}")
    config = parse_config_text(str(arrays.pop("meta/config")))
    step = int(arrays.pop("meta/step"))
    return config, step, arrays


def training_sequences(dataset: Dataset, split: DatasetSplit, vocab: Vocabulary, max_len: int) -> list:
    users_by_id = {u.user_id: u for u in dataset.users}
    sequences = []
    for user in dataset.users:
        idx = split.users[user.user_id].train
        recs = [dataset.interactions[user.user_id][i] for i in idx]
        if not recs:
            continue
        sequences.append(build_labeled_sequence(users_by_id[user.user_id], recs, max_len, vocab, ordinals=idx))
    return sequences


@dataclass
class TrainState:
    model: RecommenderModel
    store: ParameterStore
    vocab: Vocabulary
    split: DatasetSplit
    sequences: list
    users_by_id: dict


def prepare(config: RunConfig, dataset: Dataset, settings: ModelSettings | None = None) -> TrainState:
    vocab = Vocabulary.from_dataset(dataset)
    split = temporal_split(dataset)
    sequences = training_sequences(dataset, split, vocab, config.max_seq_len)
    if not sequences:
        raise ValueError("no training sequences; is the dataset empty?")
    store = ParameterStore()
    model = RecommenderModel(store, vocab, settings or config.model_settings(), config.seed)
    return TrainState(
        model=model,
        store=store,
        vocab=vocab,
        split=split,
        sequences=sequences,
        users_by_id={u.user_id: u for u in dataset.users},
    )


def _epoch_batches(state: TrainState, config: RunConfig, epoch: int) -> list:
    ordered = shuffled(state.sequences, config.seed, epoch)
    return batchify(ordered, state.vocab, state.users_by_id, config.batch_size)


def _format_loss_line(step: int, total: float, losses: dict) -> str:
    cells = [str(step), repr(total)]
    for task in TASKS:
        cells.append(repr(losses[task].item()) if task in losses else "")
    return "\t".join(cells)


def train(
    config: RunConfig,
    dataset: Dataset,
    out_dir,
    settings: ModelSettings | None = None,
    active_tasks: tuple = TASKS,
    start_state: TrainState | None = None,
    start_step: int = 0,
    eval_hook=None,
) -> TrainState:
    """Run the configured steps, writing the loss log and checkpoints.

    ``eval_hook(state, step)`` runs every ``eval_every`` steps and returns
    lines for the validation log.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = start_state or prepare(config, dataset, settings)

    steps_per_epoch = (len(state.sequences) + config.batch_size - 1) // config.batch_size
    total_steps = config.max_steps if config.max_steps > 0 else config.epochs * steps_per_epoch

    loss_path = out_dir / LOSS_LOG_NAME
    val_path = out_dir / VAL_LOG_NAME
    header = "step\ttotal\t" + "\t".join(TASKS)
    mode = "a" if start_step > 0 and loss_path.exists() else "w"
    loss_log = open(loss_path, mode, encoding="utf-8", newline="\n")
    if mode == "w":
        loss_log.write(header + "\n")
    val_lines = []

    checkpoint_path = out_dir / "checkpoint.npz"
    batches = []
    epoch = -1
    candidate_cache: dict = {}
    try:
        for step in range(start_step, total_steps):
            if step // steps_per_epoch != epoch:
                epoch = step // steps_per_epoch
                batches = _epoch_batches(state, config, epoch)
                if config.negatives == "per_epoch":
                    candidate_cache.clear()
            batch = batches[step % steps_per_epoch]
            epoch_key = epoch if config.negatives == "per_epoch" else 0
            targets = {
                task: build_task_targets(
                    batch, task, dataset, state.vocab, config.seed,
                    epoch_key=epoch_key, cache=candidate_cache,
                )
                for task in active_tasks
            }
            try:
                total, losses, _ = state.model.batch_loss(batch, targets)
                total_value = total.item()
            except NonFiniteError:
                total_value = float("nan")
            if not np.isfinite(total_value):
                loss_log.close()
                raise TrainingAborted(
                    f"non-finite loss at step {step}; last checkpoint kept at {checkpoint_path}"
                )
            backward(total)
            adam_step(state.store, config.learning_rate)
            loss_log.write(_format_loss_line(step, total_value, losses) + "\n")

            done = step + 1
            if config.checkpoint_every and done % config.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, state.store, config, done)
            if eval_hook and config.eval_every and done % config.eval_every == 0:
                val_lines.extend(eval_hook(state, done))
    finally:
        if not loss_log.closed:
            loss_log.close()

    save_checkpoint(checkpoint_path, state.store, config, total_steps)
    if val_lines:
        val_path.write_text("\n".join(val_lines) + "\n", encoding="utf-8")
    return state


def resume(checkpoint_path, dataset: Dataset, out_dir, settings: ModelSettings | None = None,
           active_tasks: tuple = TASKS) -> TrainState:
    """Continue a run from its checkpoint; the schedule picks up mid-stream."""
    config, step, arrays = load_checkpoint(checkpoint_path)
    state = prepare(config, dataset, settings)
    state.store.load_state_arrays(arrays)
    return train(
        config,
        dataset,
        out_dir,
        settings=settings,
        active_tasks=active_tasks,
        start_state=state,
        start_step=step,
    )


def read_loss_log(path) -> list:
    """Rows of (step, total, per-task dict) parsed from a loss log."""
    rows = []
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split("\t")
        per_task = {
            task: float(cells[2 + i]) for i, task in enumerate(TASKS) if cells[2 + i] != ""
        }
        rows.append((int(cells[0]), float(cells[1]), per_task))
    return rows
