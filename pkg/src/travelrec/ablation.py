"""The runnable model variants.

Component variants flip one architectural switch. Task variants keep the
full four-task architecture (so parameters line up with the full model under
the same seed) and instead drop the task's loss, labels, and its associated
input features: the departure-time variant removes the half-hour feature,
the travel-mode variant removes mode features, the destination variant
zeroes item-token embeddings, and the via variant drops only the label
channel since via data never feeds the input side.
"""

from __future__ import annotations

from dataclasses import replace

from .model import ModelSettings
from .sequence import TASKS

VARIANTS = (
    "no_Jpre",
    "no_Jres",
    "no_Jpre_Jres",
    "no_TIP",
    "no_hidden_states",
    "no_task_gating",
    "no_TSF",
    "no_When",
    "no_How",
    "no_Where",
    "no_Via",
)

_COMPONENT_SWITCHES = {
    "no_Jpre": {"gate_pre": False},
    "no_Jres": {"gate_res": False},
    "no_Jpre_Jres": {"gate_pre": False, "gate_res": False},
    "no_TIP": {"use_hyper": False},
    "no_hidden_states": {"tsg_final_only": True},
    "no_task_gating": {"tsg_task_gating": False},
    "no_TSF": {"expert_head": False},
}

_TASK_SWITCHES = {
    "no_When": ("when", {"use_time_features": False}),
    "no_How": ("how", {"use_mode_features": False}),
    "no_Where": ("where", {"zero_item_embeddings": True}),
    "no_Via": ("via", {}),
}


class UnknownVariant(ValueError):
    def __init__(self, variant: str):
        super().__init__(f"unknown variant {variant!r}; valid variants: {', '.join(VARIANTS)}")


def apply_variant(settings: ModelSettings, variant: str | None) -> tuple:
    """Returns (variant settings, active task tuple) for training and eval."""
    if variant is None or variant == "full":
        return settings, TASKS
    if variant in _COMPONENT_SWITCHES:
        return replace(settings, **_COMPONENT_SWITCHES[variant]), TASKS
    if variant in _TASK_SWITCHES:
        dropped, switches = _TASK_SWITCHES[variant]
        active = tuple(t for t in TASKS if t != dropped)
        return replace(settings, **switches), active
    raise UnknownVariant(variant)
