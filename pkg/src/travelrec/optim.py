"""Named parameter registry, Adam updates, and finite-difference checking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class GradCheckError(RuntimeError):
    """Raised when a perturbed loss evaluation is non-finite."""


@dataclass
class Slot:
    tensor: Tensor
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class ParameterStore:
    """Maps unique names to parameters plus their Adam moment state."""

    _slots: dict[str, Slot] = field(default_factory=dict)
    _warned_missing: set[str] = field(default_factory=set)

    def register(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._slots:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, copy=True), requires_grad=True)
        self._slots[name] = Slot(tensor=t, m=np.zeros_like(t.data), v=np.zeros_like(t.data))
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._slots

    def __getitem__(self, name: str) -> Tensor:
        return self._slots[name].tensor

    def __len__(self) -> int:
        return len(self._slots)

    def names(self) -> list[str]:
        return list(self._slots)

    def slot(self, name: str) -> Slot:
        return self._slots[name]

    def zero_grads(self) -> None:
        for slot in self._slots.values():
            slot.tensor.zero_grad()

    def count_values(self) -> int:
        return sum(s.tensor.data.size for s in self._slots.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat array view for checkpointing; exact round trip."""
        out: dict[str, np.ndarray] = {}
        for name, slot in self._slots.items():
            out[f"param/{name}"] = slot.tensor.data
            out[f"adam_m/{name}"] = slot.m
            out[f"adam_v/{name}"] = slot.v
            out[f"adam_t/{name}"] = np.array(slot.step, dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, slot in self._slots.items():
            data = arrays[f"param/{name}"]
            if data.shape != slot.tensor.data.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {name!r}: {data.shape} vs {slot.tensor.data.shape}"
                )
            slot.tensor.data = np.array(data, copy=True)
            slot.m = np.array(arrays[f"adam_m/{name}"], copy=True)
            slot.v = np.array(arrays[f"adam_v/{name}"], copy=True)
            slot.step = int(arrays[f"adam_t/{name}"])
            slot.tensor.zero_grad()


def register_normal(store: ParameterStore, name: str, rng, shape, std: float = 0.02, dtype=np.float64) -> Tensor:
    return store.register(name, rng.normal(0.0, std, size=shape).astype(dtype))


def register_const(store: ParameterStore, name: str, value, dtype=np.float64) -> Tensor:
    return store.register(name, np.asarray(value, dtype=dtype))


def adam_step(store: ParameterStore, lr: float) -> None:
    """One Adam update over every parameter with a populated gradient.

    Gradients are zeroed afterwards; parameters without a gradient are
    skipped and logged once.
    """
    for name, slot in store._slots.items():
        g = slot.tensor.grad
        if g is None:
            if name not in store._warned_missing:
                logger.warning("adam_step: no gradient for %s, skipping", name)
                store._warned_missing.add(name)
            continue
        slot.step += 1
        t = slot.step
        slot.m = ADAM_BETA1 * slot.m + (1.0 - ADAM_BETA1) * g
        slot.v = ADAM_BETA2 * slot.v + (1.0 - ADAM_BETA2) * (g * g)
        m_hat = slot.m / (1.0 - ADAM_BETA1**t)
        v_hat = slot.v / (1.0 - ADAM_BETA2**t)
        slot.tensor.data = np.asarray(slot.tensor.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
        slot.tensor.zero_grad()


def grad_check(
    fn,
    store: ParameterStore,
    h: float = 1e-5,
    samples_per_param: int = 4,
    seed: int = 0,
    names: list[str] | None = None,
) -> dict[str, float]:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild a scalar loss from the store's parameters on every
    call. Returns the worst relative error per parameter name, where the
    relative error of a sampled coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    Coordinate sampling is seeded and reproducible.
    """
    names = names if names is not None else store.names()
    store.zero_grads()
    loss = fn()
    backward(loss)
    analytic = {}
    for name in names:
        g = store[name].grad
        analytic[name] = np.zeros_like(store[name].data) if g is None else g.copy()
    store.zero_grads()

    errors: dict[str, float] = {}
    for i, name in enumerate(sorted(names)):
        tensor = store[name]
        size = tensor.data.size
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        n_coords = min(samples_per_param, size)
        coords = rng.choice(size, size=n_coords, replace=False)
        worst = 0.0
        for c in coords:
            # index the original buffer: reshape views break on 0-d arrays
            idx = np.unravel_index(c, tensor.data.shape) if tensor.data.ndim else ()
            original = tensor.data[idx]
            step = (original + h) - original  # exactly representable step
            tensor.data[idx] = original + step
            loss_plus = fn().item()
            tensor.data[idx] = original - step
            loss_minus = fn().item()
            tensor.data[idx] = original
            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise GradCheckError(f"non-finite loss while perturbing {name!r}")
            numeric = (loss_plus - loss_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        errors[name] = worst
    return errors
