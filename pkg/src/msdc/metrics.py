"""Disaggregation error metrics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

DEFAULT_PERIOD = 1200  # samples per hour at 3 s


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    sae: float
    sae_delta: float
    state_accuracy: float


def _pair(pred, truth):
    pred = np.asarray(getattr(pred, "values", pred), float)
    truth = np.asarray(getattr(truth, "values", truth), float)
    if pred.shape != truth.shape:
        raise DataError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        raise DataError("mae needs at least one sample")
    return float(np.mean(np.abs(pred - truth)))


def sae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    total = truth.sum()
    if not total > 0:
        raise DataError("sae undefined: total true energy is zero")
    return float(abs(pred.sum() - total) / total)


def sae_delta(pred, truth, period: int = DEFAULT_PERIOD) -> float:
    """Mean over full periods of |sum(pred) - sum(truth)| / period; the
    trailing partial period is dropped."""
    pred, truth = _pair(pred, truth)
    if period < 1:
        raise DataError("period must be at least one sample")
    n_periods = pred.size // period
    if n_periods == 0:
        raise DataError(f"series of {pred.size} samples shorter than one period ({period})")
    used = n_periods * period
    r_hat = pred[:used].reshape(n_periods, period).sum(axis=1)
    r = truth[:used].reshape(n_periods, period).sum(axis=1)
    return float(np.sum(np.abs(r_hat - r) / period) / n_periods)


def state_accuracy(pred_states, truth_states) -> float:
    pred = np.asarray(getattr(pred_states, "labels", pred_states))
    truth = np.asarray(getattr(truth_states, "labels", truth_states))
    if pred.shape != truth.shape:
        raise DataError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise DataError("state accuracy needs at least one label")
    return float(np.mean(pred == truth))


def evaluate(pred, truth, pred_states, truth_states, period: int = DEFAULT_PERIOD) -> MetricsReport:
    return MetricsReport(
        mae=mae(pred, truth),
        sae=sae(pred, truth),
        sae_delta=sae_delta(pred, truth, period),
        state_accuracy=state_accuracy(pred_states, truth_states),
    )


def write_metrics_csv(path, rows: dict[str, MetricsReport]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["appliance", "mae", "sae", "sae_delta", "state_accuracy"])
        for name, report in rows.items():
            d = asdict(report)
            writer.writerow([name] + [repr(d[k]) for k in ("mae", "sae", "sae_delta", "state_accuracy")])
