"""Power-state discovery by one-dimensional flat-kernel mean shift."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .series import PowerSeries


@dataclass(frozen=True)
class StateModel:
    appliance_id: str
    centers: tuple[float, ...]
    bandwidth: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.centers)
        if not c:
            raise DataError("a state model needs at least one center")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise DataError(f"state centers must be strictly increasing: {c}")
        object.__setattr__(self, "centers", c)

    @property
    def n_states(self) -> int:
        return len(self.centers)

    def assign(self, values) -> "StateSequence":
        return StateSequence(nearest_center(values, self.centers), self.n_states)


@dataclass(frozen=True)
class StateSequence:
    labels: np.ndarray = field(repr=False)
    n_states: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_states):
            raise DataError(f"state labels must lie in [0, {self.n_states})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ExtractionConfig:
    bandwidth: float | None = None
    bandwidth_fraction: float = 0.05
    min_bandwidth: float = 1.0
    min_fraction: float = 0.005
    tol: float = 1e-3
    max_iters: int = 500
    max_seeds: int = 10_000


def nearest_center(values, centers) -> np.ndarray:
    """Index of the closest center; ties go to the lower index."""
    centers = np.asarray(centers, float)
    mids = (centers[1:] + centers[:-1]) / 2.0
    return np.searchsorted(mids, np.asarray(values, float), side="left").astype(np.int64)


def mean_shift(values, bandwidth: float, *, tol: float = 1e-3, max_iters: int = 500,
               max_seeds: int = 10_000) -> np.ndarray:
    """Modes of a flat-kernel density estimate of 1-D data.

    Seeds are every k-th sorted point. Each seed moves to the mean of the data
    within ``bandwidth`` until it shifts by less than ``tol``; converged modes
    closer than ``bandwidth / 2`` are merged (seed-count weighted).
    """
    x = np.sort(np.asarray(values, float).ravel())
    if x.size == 0:
        raise DataError("mean shift needs at least one value")
    if not bandwidth > 0:
        raise DataError(f"bandwidth must be positive, got {bandwidth}")
    csum = np.concatenate(([0.0], np.cumsum(x)))
    step = max(1, math.ceil(x.size / max_seeds))
    modes, seed_counts = np.unique(x[::step], return_counts=True)

    active = np.arange(modes.size)
    for _ in range(max_iters):
        if active.size == 0:
            break
        m = modes[active]
        lo = np.searchsorted(x, m - bandwidth, side="left")
        hi = np.searchsorted(x, m + bandwidth, side="right")
        new = (csum[hi] - csum[lo]) / (hi - lo)
        modes[active] = new
        active = active[np.abs(new - m) >= tol]
    if active.size:
        raise NumericalError(
            f"mean shift did not converge: {active.size} seeds still moving after {max_iters} iterations"
        )

    order = np.argsort(modes, kind="stable")
    modes, seed_counts = modes[order], seed_counts[order]
    centers = []
    group_start = 0
    for i in range(1, modes.size + 1):
        if i == modes.size or modes[i] - modes[group_start] >= bandwidth / 2:
            w = seed_counts[group_start:i]
            centers.append(float(np.dot(modes[group_start:i], w) / w.sum()))
            group_start = i
    return np.asarray(centers)


def extract_state_model(appliance: PowerSeries | np.ndarray, config: ExtractionConfig | None = None,
                        appliance_id: str = "") -> tuple[StateModel, StateSequence]:
    """Discover the power states of one appliance and label every timestep."""
    config = config or ExtractionConfig()
    values = appliance.values if isinstance(appliance, PowerSeries) else np.asarray(appliance, float)
    if values.size == 0:
        raise DataError("cannot extract states from an empty series")
    bandwidth = config.bandwidth
    if bandwidth is None:
        bandwidth = max(config.bandwidth_fraction * float(values.max()), config.min_bandwidth)
    centers = mean_shift(values, bandwidth, tol=config.tol, max_iters=config.max_iters,
                         max_seeds=config.max_seeds)

    labels = nearest_center(values, centers)
    counts = np.bincount(labels, minlength=centers.size)
    keep = counts >= config.min_fraction * values.size
    if not keep.any():
        keep[np.argmax(counts)] = True
    centers = centers[keep]
    labels = nearest_center(values, centers)

    model = StateModel(appliance_id, tuple(centers), float(bandwidth))
    return model, StateSequence(labels, model.n_states)


def one_hot(states: StateSequence | np.ndarray, n_states: int) -> np.ndarray:
    labels = np.asarray(getattr(states, "labels", states), dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_states):
        raise DataError(f"label out of range for {n_states} states")
    out = np.zeros(labels.shape + (n_states,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def write_state_sidecar(path, model: StateModel, sequence: StateSequence) -> None:
    """``# centers: c0,c1,...`` header then ``index<TAB>label`` per timestep."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "# centers: " + ",".join(f"{c:.4f}" for c in model.centers)
    lines = [header] + [f"{i}\t{label}" for i, label in enumerate(sequence.labels)]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_state_sidecar(path) -> tuple[tuple[float, ...], StateSequence]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"state sidecar not found: {path} (run `msdc extract-states` first)")
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("# centers:"):
            raise DataError(f"{path}: missing '# centers:' header")
        centers = tuple(float(v) for v in header.split(":", 1)[1].split(","))
        labels = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            idx, label = line.split("\t")
            if int(idx) != len(labels):
                raise DataError(f"{path}:{lineno}: expected index {len(labels)}, got {idx}")
            labels.append(int(label))
    return centers, StateSequence(np.asarray(labels, dtype=np.int64), len(centers))
