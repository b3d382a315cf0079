"""Per-appliance training, prediction and checkpointing."""
from __future__ import annotations

import copy
import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import crf as crf_mod
from .errors import DataError, NumericalError
from .metrics import mae as mae_metric, state_accuracy
from .network import (ArchConfig, DualCnn, batch_loss, combine, decode_states,
                      load_lists_into, state_dict_to_lists)
from .series import (NormalizationStats, PowerSeries, WindowSpec, compute_normalization,
                     input_windows, make_windows, stitch_labels, stitch_predictions,
                     window_centers)
from .states import StateModel, StateSequence

FORMAT_VERSION = 1
LOSS_KINDS = ("msdc", "msdc_crf")


@dataclass
class TrainConfig:
    loss_kind: str = "msdc"
    input_len: int = 400
    output_len: int = 64
    train_stride: int | None = None  # defaults to output_len // 2
    inference_stride: int | None = None  # defaults to output_len
    conv_channels: list[int] = field(default_factory=lambda: [30, 30, 40, 50, 50, 50])
    kernel_sizes: list[int] = field(default_factory=lambda: [10, 8, 6, 5, 5, 5])
    hidden: int = 1024
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    crf_emission: str = "log_prob"

    def __post_init__(self):
        self.loss_kind = self.loss_kind.replace("-", "_")
        if self.loss_kind not in LOSS_KINDS:
            raise DataError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        self.split = tuple(float(r) for r in self.split)
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise DataError(f"split ratios must be three nonnegative numbers summing to 1: {self.split}")
        if self.max_epochs < 0 or self.patience < 1:
            raise DataError("need max_epochs >= 0 and patience >= 1")
        if self.max_epochs > 0 and self.patience > self.max_epochs:
            raise DataError("patience cannot exceed max_epochs")
        if self.crf_emission not in crf_mod.EMISSION_MODES:
            raise DataError(f"crf_emission must be one of {crf_mod.EMISSION_MODES}")

    def window(self, training: bool = True) -> WindowSpec:
        q = self.output_len
        stride = (self.train_stride or max(1, q // 2)) if training else (self.inference_stride or q)
        return WindowSpec(self.input_len, q, stride)

    def arch(self, n_states: int) -> ArchConfig:
        return ArchConfig(self.input_len, self.output_len, n_states, list(self.conv_channels),
                          list(self.kernel_sizes), self.hidden)


@dataclass(frozen=True)
class ApplianceData:
    """Aligned aggregate, appliance power and state labels for one appliance."""

    aggregate: PowerSeries
    appliance: PowerSeries
    states: StateSequence
    state_model: StateModel

    def __post_init__(self):
        if not len(self.aggregate) == len(self.appliance) == len(self.states):
            raise DataError(
                f"length mismatch: aggregate {len(self.aggregate)}, appliance {len(self.appliance)}, "
                f"states {len(self.states)}"
            )
        if self.states.n_states != self.state_model.n_states:
            raise DataError("state labels and state model disagree on the number of states")

    def __len__(self) -> int:
        return len(self.aggregate)

    def slice(self, start: int, stop: int) -> "ApplianceData":
        return ApplianceData(
            self.aggregate.slice(start, stop),
            self.appliance.slice(start, stop),
            StateSequence(self.states.labels[start:stop], self.states.n_states),
            self.state_model,
        )


def split_lengths(T: int, ratios) -> tuple[int, int, int]:
    """Floor each share, then hand leftover samples to the largest fractional parts."""
    exact = [round(T * r, 9) for r in ratios]
    sizes = [math.floor(e) for e in exact]
    order = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: T - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def split_dataset(data: ApplianceData, ratios=(0.7, 0.1, 0.2), min_length: int = 1):
    """Chronological train / validation / test split."""
    sizes = split_lengths(len(data), ratios)
    for name, size, r in zip(("train", "validation", "test"), sizes, ratios):
        if r > 0 and size < min_length:
            raise DataError(f"series too short: {name} split has {size} samples, need {min_length}")
    a, b = sizes[0], sizes[0] + sizes[1]
    return data.slice(0, a), data.slice(a, b), data.slice(b, len(data))


class MsdcModel:
    """Trained dual network plus everything needed to run it on new data."""

    def __init__(self, net: DualCnn, stats: NormalizationStats, state_model: StateModel,
                 loss_kind: str = "msdc", crf: crf_mod.LinearChainCrf | None = None,
                 inference_stride: int | None = None, crf_emission: str = "log_prob"):
        self.net = net
        self.stats = stats
        self.state_model = state_model
        self.loss_kind = loss_kind
        self.crf = crf
        self.crf_emission = crf_emission
        q = net.arch.output_len
        self.window = WindowSpec(net.arch.input_len, q, inference_stride or q)

    @property
    def n_states(self) -> int:
        return self.net.arch.n_states

    def window_outputs(self, aggregate, batch_size: int = 256):
        values = aggregate.values if isinstance(aggregate, PowerSeries) else np.asarray(aggregate, float)
        centers = window_centers(len(values), self.window)
        _, inputs = input_windows(values, self.window, self.stats, centers)
        logits, probs, powers = [], [], []
        self.net.eval()
        with torch.no_grad():
            for i in range(0, len(inputs), batch_size):
                lg, pr, pw = self.net(torch.from_numpy(inputs[i:i + batch_size]))
                logits.append(lg)
                probs.append(pr)
                powers.append(pw)
        return centers, torch.cat(logits), torch.cat(probs), torch.cat(powers)

    def predict(self, aggregate: PowerSeries) -> tuple[PowerSeries, StateSequence]:
        centers, logits, probs, powers = self.window_outputs(aggregate)
        y = combine(probs, powers).numpy()
        if self.crf is not None:
            emissions = crf_mod.emissions_from_logits(logits, self.crf_emission)
            labels, _ = crf_mod.viterbi(emissions, self.crf)
        else:
            labels = decode_states(probs).numpy()
        T = len(aggregate)
        power = stitch_predictions(zip(centers, y), T, aggregate.start_timestamp, aggregate.interval)
        return power, StateSequence(stitch_labels(centers, labels, T), self.n_states)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "arch": asdict(self.net.arch),
            "n_states": self.n_states,
            "power_scale": self.net.power_scale,
            "power_activation": self.net.arch.power_activation,
            "loss_kind": self.loss_kind,
            "crf_emission": self.crf_emission,
            "inference_stride": self.window.stride,
            "normalization": {"mean": self.stats.mean, "std": self.stats.std},
            "state_model": {
                "appliance_id": self.state_model.appliance_id,
                "centers": list(self.state_model.centers),
                "bandwidth": self.state_model.bandwidth,
            },
            "weights": {
                "state_net": state_dict_to_lists(self.net.state_net),
                "value_net": state_dict_to_lists(self.net.value_net),
            },
            "crf": crf_mod.crf_to_dict(self.crf) if self.crf is not None else None,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MsdcModel":
        version = payload.get("format_version")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported checkpoint format_version {version!r}")
        arch = ArchConfig(**payload["arch"])
        net = DualCnn(arch, payload["power_scale"])
        load_lists_into(net.state_net, payload["weights"]["state_net"])
        load_lists_into(net.value_net, payload["weights"]["value_net"])
        sm = payload["state_model"]
        crf = crf_mod.crf_from_dict(payload["crf"]) if payload.get("crf") else None
        return cls(
            net,
            NormalizationStats(**payload["normalization"]),
            StateModel(sm["appliance_id"], tuple(sm["centers"]), sm["bandwidth"]),
            payload["loss_kind"],
            crf,
            payload["inference_stride"],
            payload.get("crf_emission", "log_prob"),
        )

    def save(self, path) -> None:
        write_atomic(path, json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "MsdcModel":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_dict(payload)


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_mae: float
    wall_seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float = math.inf
    final_metrics: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_mae", "wall_seconds"])
            for e in self.epochs:
                writer.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.val_mae),
                                 f"{e.wall_seconds:.3f}"])


def _power_error(model: MsdcModel, batch) -> tuple[float, float]:
    """Window-level power loss and MAE with frozen parameters."""
    if len(batch) == 0:
        return math.nan, math.nan
    sq, ab, n = 0.0, 0.0, 0
    model.net.eval()
    with torch.no_grad():
        for i in range(0, len(batch), 256):
            _, probs, powers = model.net(torch.from_numpy(batch.inputs[i:i + 256]))
            err = torch.from_numpy(batch.target_power[i:i + 256]) - combine(probs, powers)
            sq += float((err ** 2).sum())
            ab += float(err.abs().sum())
            n += err.numel()
    return sq / n, ab / n


def train(data: ApplianceData, config: TrainConfig, run_dir=None) -> tuple[MsdcModel, TrainReport]:
    """Fit the dual network (and CRF) on the training split, early-stopping on
    validation power loss. Deterministic for a fixed seed."""
    train_data, val_data, _ = split_dataset(data, config.split, min_length=config.output_len)
    M = data.state_model.n_states
    stats = compute_normalization(train_data.aggregate)
    peak = float(train_data.appliance.values.max())
    net = DualCnn(config.arch(M), power_scale=peak if peak > 0 else 1.0, seed=config.seed)
    crf = crf_mod.LinearChainCrf(M) if config.loss_kind == "msdc_crf" else None
    model = MsdcModel(net, stats, data.state_model, config.loss_kind, crf,
                      config.inference_stride, config.crf_emission)

    train_batch = make_windows(train_data.aggregate, train_data.appliance, train_data.states,
                               config.window(True), stats)
    monitor = val_data if len(val_data) >= config.output_len else train_data
    val_batch = make_windows(monitor.aggregate, monitor.appliance, monitor.states,
                             config.window(False), stats)

    params = list(net.parameters()) + (list(crf.parameters()) if crf is not None else [])
    optimizer = torch.optim.Adam(params, lr=config.learning_rate,
                                 betas=(config.beta1, config.beta2), eps=config.adam_eps)
    rng = np.random.default_rng(config.seed)
    report = TrainReport()
    best_state = _snapshot(model)
    t0 = time.perf_counter()

    for epoch in range(1, config.max_epochs + 1):
        net.train()
        order = rng.permutation(len(train_batch))
        total, count = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            losses = batch_loss(net, torch.from_numpy(train_batch.inputs[idx]),
                                torch.from_numpy(train_batch.target_power[idx]),
                                torch.from_numpy(train_batch.target_states[idx]),
                                config.loss_kind, crf, config.crf_emission)
            loss = losses["total"]
            if not torch.isfinite(loss):
                raise NumericalError(f"training diverged at epoch {epoch}: loss is {float(loss)}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
            count += len(idx)
        val_loss, val_mae = _power_error(model, val_batch)
        report.epochs.append(EpochLog(epoch, total / count, val_loss, val_mae,
                                      time.perf_counter() - t0))
        if not math.isfinite(val_loss):
            raise NumericalError(f"validation loss is {val_loss} at epoch {epoch}")
        if val_loss < report.best_val_loss:
            report.best_val_loss, report.best_epoch = val_loss, epoch
            best_state = _snapshot(model)
        elif epoch - report.best_epoch >= config.patience:
            break

    last_model = copy.deepcopy(model) if run_dir is not None else None
    _restore(model, best_state)
    if len(val_data) >= config.output_len:
        pred, states = model.predict(val_data.aggregate)
        report.final_metrics = {
            "mae": mae_metric(pred, val_data.appliance),
            "state_accuracy": state_accuracy(states, val_data.states),
        }
    if run_dir is not None:
        run_dir = Path(run_dir)
        model.save(run_dir / "checkpoint.best")
        last_model.save(run_dir / "checkpoint.last")
        report.write_csv(run_dir / "train_log.csv")
    return model, report


def _snapshot(model: MsdcModel) -> dict:
    state = {"net": copy.deepcopy(model.net.state_dict())}
    if model.crf is not None:
        state["crf"] = copy.deepcopy(model.crf.state_dict())
    return state


def _restore(model: MsdcModel, state: dict) -> None:
    model.net.load_state_dict(state["net"])
    if model.crf is not None:
        model.crf.load_state_dict(state["crf"])
