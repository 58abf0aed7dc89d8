"""Whole-model gradient verification on a tiny configuration.

Builds a two-layer, width-8, two-stream, two-task model over a two-user
synthetic log, then compares every parameter's analytic gradient of the
multi-task loss against central finite differences. Warming nudges every
parameter off its initialization point (zeros, ones, identities) so each
computation path carries a nonzero gradient instead of passing vacuously.
"""

from __future__ import annotations

import numpy as np

from .data import GeneratorSettings, generate_synthetic
from .model import ModelSettings, RecommenderModel
from .objective import build_task_targets
from .optim import ParameterStore, grad_check
from .sequence import Vocabulary, batchify, build_labeled_sequence

TINY_TASKS = ("when", "where")
TOLERANCE = 1e-4


def tiny_setup(seed: int = 0):
    """(model, store, loss_fn) for the check configuration."""
    settings = GeneratorSettings(
        users=2,
        pois=24,
        gids=5,
        categories=4,
        arids=3,
        weathers=4,
        actions=3,
        modes=3,
        interactions_mean=3.0,
        max_interactions=4,
    )
    dataset = generate_synthetic(settings, seed)
    vocab = Vocabulary.from_dataset(dataset)
    users_by_id = {u.user_id: u for u in dataset.users}
    sequences = [
        build_labeled_sequence(u, dataset.interactions[u.user_id], max_len=6, vocab=vocab)
        for u in dataset.users
    ]
    batch = batchify(sequences, vocab, users_by_id, batch_size=2)[0]

    store = ParameterStore()
    model = RecommenderModel(
        store,
        vocab,
        ModelSettings(width=8, depth=2, streams=2, max_len=6, tasks=TINY_TASKS, embed_std=0.5),
        seed,
    )
    # Warm every parameter well off its init point (zeros, ones, identities):
    # small multipliers would leave path gradients in the finite-difference
    # noise floor and make the check vacuous for those paths.
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    for name in store.names():
        t = store[name]
        t.data = np.asarray(t.data + rng.normal(0.0, 0.3, size=t.data.shape))

    targets = {
        task: build_task_targets(batch, task, dataset, vocab, seed) for task in TINY_TASKS
    }

    def loss_fn():
        return model.batch_loss(batch, targets)[0]

    return model, store, loss_fn


def run_gradcheck(h: float = 1e-5, seed: int = 0, samples_per_param: int = 3) -> dict:
    """Worst relative error per parameter group."""
    _, store, loss_fn = tiny_setup(seed)
    return grad_check(loss_fn, store, h=h, samples_per_param=samples_per_param, seed=seed)


def format_report(errors: dict, tolerance: float = TOLERANCE) -> tuple:
    """(lines, passed) with one line per parameter group."""
    lines = []
    width = max(len(n) for n in errors)
    for name in sorted(errors):
        status = "ok" if errors[name] <= tolerance else "FAIL"
        lines.append(f"{name:<{width}}  {errors[name]:.3e}  {status}")
    worst = max(errors.values())
    passed = worst <= tolerance
    lines.append(f"worst relative error {worst:.3e} ({'PASS' if passed else 'FAIL'} at {tolerance:g})")
    return lines, passed
