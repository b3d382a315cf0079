"""Time-series containers, normalization and sliding-window mechanics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PowerSeries:
    """Uniformly sampled power signal in watts."""

    start_timestamp: float
    interval: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.interval > 0:
            raise DataError(f"interval must be positive, got {self.interval}")
        arr = _frozen_array(self.values)
        if arr.ndim != 1:
            raise DataError("values must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise DataError("power series contains non-finite values")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def timestamps(self) -> np.ndarray:
        return self.start_timestamp + self.interval * np.arange(len(self.values))

    def cleaned(self) -> "PowerSeries":
        """Copy with negative readings clamped to 0 W."""
        return PowerSeries(self.start_timestamp, self.interval, np.maximum(self.values, 0.0))

    def slice(self, start: int, stop: int) -> "PowerSeries":
        return PowerSeries(
            self.start_timestamp + start * self.interval,
            self.interval,
            self.values[start:stop],
        )

    def with_values(self, values) -> "PowerSeries":
        return PowerSeries(self.start_timestamp, self.interval, values)


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DataError(f"normalization std must be positive, got {self.std}")


@dataclass(frozen=True)
class WindowSpec:
    """Input length ``w``, output length ``q`` and center step ``stride``.

    For a center ``t`` the input window covers ``t - w//2 .. t + ceil(w/2) - 1``
    and the output window ``t - q//2 .. t + ceil(q/2) - 1``.
    """

    input_len: int
    output_len: int
    stride: int

    def __post_init__(self):
        w, q, s = self.input_len, self.output_len, self.stride
        if not 0 < q < w:
            raise DataError(f"window lengths need 0 < q < w, got q={q}, w={w}")
        if not 0 < s <= q:
            raise DataError(f"stride must satisfy 0 < stride <= q, got {s}")

    def input_range(self, center: int) -> range:
        w = self.input_len
        return range(center - w // 2, center + (w + 1) // 2)

    def output_range(self, center: int) -> range:
        q = self.output_len
        return range(center - q // 2, center + (q + 1) // 2)


@dataclass(frozen=True)
class WindowBatch:
    centers: np.ndarray
    inputs: np.ndarray
    target_power: np.ndarray
    target_states: np.ndarray

    def __len__(self) -> int:
        return len(self.centers)


def compute_normalization(series: PowerSeries | np.ndarray) -> NormalizationStats:
    values = series.values if isinstance(series, PowerSeries) else np.asarray(series, float)
    if values.size == 0:
        raise DataError("cannot normalize an empty series")
    mean = float(np.mean(values))
    std = float(np.std(values))  # population std
    if std == 0.0:
        raise DataError("degenerate series: standard deviation is zero")
    return NormalizationStats(mean, std)


def normalize(series: PowerSeries | np.ndarray, stats: NormalizationStats) -> np.ndarray:
    values = series.values if isinstance(series, PowerSeries) else np.asarray(series, float)
    return (values - stats.mean) / stats.std


def denormalize(values, stats: NormalizationStats) -> np.ndarray:
    return np.asarray(values, float) * stats.std + stats.mean


def window_centers(length: int, spec: WindowSpec) -> np.ndarray:
    """Centers whose output windows tile ``[0, length)``.

    Output windows start at multiples of the stride; when the stride does not
    land exactly on the end, one extra window is anchored to the last sample.
    """
    q = spec.output_len
    if length < q:
        raise DataError(f"series length {length} shorter than output window {q}")
    starts = list(range(0, length - q + 1, spec.stride))
    if starts[-1] != length - q:
        starts.append(length - q)
    return np.asarray(starts, dtype=np.int64) + q // 2


def padded_input(aggregate: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Replicate-pad so every center in ``[0, T)`` has a full input window."""
    w = spec.input_len
    return np.pad(np.asarray(aggregate, float), (w // 2, w // 2), mode="edge")


def input_windows(aggregate, spec: WindowSpec, stats: NormalizationStats,
                  centers: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    values = aggregate.values if isinstance(aggregate, PowerSeries) else np.asarray(aggregate, float)
    if centers is None:
        centers = window_centers(len(values), spec)
    padded = normalize(padded_input(values, spec), stats)
    # in padded coordinates the input window of center t starts at t
    view = np.lib.stride_tricks.sliding_window_view(padded, spec.input_len)
    return centers, np.ascontiguousarray(view[centers])


def make_windows(aggregate: PowerSeries, appliance: PowerSeries, states,
                 spec: WindowSpec, stats: NormalizationStats) -> WindowBatch:
    labels = np.asarray(getattr(states, "labels", states), dtype=np.int64)
    T = len(aggregate)
    if len(appliance) != T or len(labels) != T:
        raise DataError(
            f"length mismatch: aggregate {T}, appliance {len(appliance)}, states {len(labels)}"
        )
    centers, inputs = input_windows(aggregate, spec, stats)
    q = spec.output_len
    starts = centers - q // 2
    target_power = np.lib.stride_tricks.sliding_window_view(appliance.values, q)[starts]
    target_states = np.lib.stride_tricks.sliding_window_view(labels, q)[starts]
    return WindowBatch(
        centers=centers,
        inputs=inputs,
        target_power=np.ascontiguousarray(target_power),
        target_states=np.ascontiguousarray(target_states),
    )


def stitch_predictions(windows: Iterable[tuple[int, Sequence[float]]], length: int,
                       start_timestamp: float = 0.0, interval: float = 1.0) -> PowerSeries:
    """Average overlapping window predictions into one series clamped at 0 W."""
    total = np.zeros(length)
    count = np.zeros(length, dtype=np.int64)
    for center, pred in windows:
        pred = np.asarray(pred, float)
        q = len(pred)
        lo = int(center) - q // 2
        if lo < 0 or lo + q > length:
            raise DataError(f"window at center {center} falls outside [0, {length})")
        total[lo:lo + q] += pred
        count[lo:lo + q] += 1
    if np.any(count == 0):
        gap = int(np.flatnonzero(count == 0)[0])
        raise DataError(f"coverage gap: index {gap} not covered by any window")
    return PowerSeries(start_timestamp, interval, np.maximum(total / count, 0.0))


def stitch_labels(centers: np.ndarray, labels: np.ndarray, length: int) -> np.ndarray:
    """Per-timestep labels from window labels; the earliest covering window wins."""
    out = np.full(length, -1, dtype=np.int64)
    q = labels.shape[1]
    for center, row in zip(centers, labels):
        lo = int(center) - q // 2
        seg = out[lo:lo + q]
        unset = seg < 0
        seg[unset] = row[unset]
    if np.any(out < 0):
        raise DataError("coverage gap in state labels")
    return out
