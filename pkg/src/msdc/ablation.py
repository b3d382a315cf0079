"""Single-state (off/on) comparison variant.

Collapsing a multi-state labelling to two states and training the unchanged
pipeline with M=2 isolates what the extra states contribute.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .states import StateModel, StateSequence


@dataclass(frozen=True)
class AblationSpec:
    mode: str = "multi_state"
    threshold: float | None = None

    def __post_init__(self):
        mode = self.mode.replace("-", "_")
        if mode not in ("single_state", "multi_state"):
            raise DataError(f"unknown ablation mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if mode == "single_state" and not (self.threshold is not None and self.threshold > 0):
            raise DataError("single-state ablation needs a positive power threshold")


def collapse_states(model: StateModel, sequence: StateSequence,
                    threshold: float) -> tuple[StateModel, StateSequence]:
    """Map states with center below ``threshold`` to off (0), the rest to on (1).

    The on-center is the occupancy-weighted mean of the merged centers, i.e.
    the average power while on.
    """
    centers = np.asarray(model.centers)
    if not centers[0] < threshold <= centers[-1]:
        raise DataError(
            f"threshold {threshold} must lie in ({centers[0]}, {centers[-1]}]"
        )
    on = centers >= threshold
    labels = on[sequence.labels].astype(np.int64)
    counts = np.bincount(sequence.labels, minlength=centers.size).astype(float)
    off_w, on_w = counts[~on], counts[on]
    off_center = float(np.average(centers[~on], weights=off_w) if off_w.sum() else centers[~on].mean())
    on_center = float(np.average(centers[on], weights=on_w) if on_w.sum() else centers[on].mean())
    collapsed = StateModel(model.appliance_id, (off_center, on_center), model.bandwidth)
    return collapsed, StateSequence(labels, 2)
