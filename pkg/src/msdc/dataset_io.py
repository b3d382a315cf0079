"""Reading and writing REDD / UK-DALE style low-frequency power datasets.

On disk a house is a directory ``house_<n>/`` holding ``labels.dat`` (lines
``channel name``) and one ``channel_<k>.dat`` per meter (lines
``unix_timestamp watts``).
"""
from __future__ import annotations

import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError
from .series import PowerSeries

log = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.01
MAINS = "mains"


@dataclass(frozen=True)
class RawChannel:
    timestamps: np.ndarray
    watts: np.ndarray
    malformed: int = 0

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class AlignmentReport:
    n_buckets: int
    segments: list[tuple[int, int]] = field(default_factory=list)
    kept: tuple[int, int] = (0, 0)

    @property
    def dropped(self) -> int:
        return self.n_buckets - (self.kept[1] - self.kept[0])


@dataclass(frozen=True)
class HouseBundle:
    house_id: int
    mains: PowerSeries
    channels: dict[str, PowerSeries]
    interval: float
    report: AlignmentReport | None = None


def parse_channel_file(path) -> RawChannel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    ts, watts = [], []
    malformed = 0
    total = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        total += 1
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            t, w = float(parts[0]), float(parts[1])
            if not (math.isfinite(t) and math.isfinite(w)):
                raise ValueError
        except ValueError:
            malformed += 1
            continue
        ts.append(t)
        watts.append(w)
    if total == 0:
        warnings.warn(f"{path}: empty channel file", stacklevel=2)
    elif malformed:
        frac = malformed / total
        if frac > MAX_MALFORMED_FRACTION:
            raise DataError(f"{path}: {malformed}/{total} malformed lines ({frac:.2%}) exceeds 1%")
        warnings.warn(f"{path}: skipped {malformed}/{total} malformed lines", stacklevel=2)
    return RawChannel(np.asarray(ts, float), np.maximum(np.asarray(watts, float), 0.0), malformed)


def _resample(raw: RawChannel, t0: float, n: int, interval: float, max_gap: float):
    order = np.argsort(raw.timestamps, kind="stable")
    ts, w = raw.timestamps[order], raw.watts[order]
    inside = (ts >= t0) & (ts < t0 + n * interval)
    bucket = np.floor((ts[inside] - t0) / interval).astype(np.int64)
    sums = np.bincount(bucket, weights=w[inside], minlength=n)
    counts = np.bincount(bucket, minlength=n)
    out = np.zeros(n)
    has = counts > 0
    out[has] = sums[has] / counts[has]

    starts = t0 + interval * np.arange(n)
    prev = np.searchsorted(ts, starts, side="left") - 1
    can_fill = (~has) & (prev >= 0)
    can_fill[can_fill] &= (starts[can_fill] - ts[prev[can_fill]]) <= max_gap
    out[can_fill] = w[prev[can_fill]]
    return out, has | can_fill


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    edges = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def align_many(raws: dict[str, RawChannel], interval: float, max_gap: float | None = None):
    """Resample several channels onto one grid over their common time range.

    Empty buckets are forward-filled from the latest reading no older than
    ``max_gap`` seconds; longer gaps split the data and only the longest
    segment valid for every channel is kept.
    """
    if max_gap is None:
        max_gap = 3 * interval
    for name, raw in raws.items():
        if len(raw) == 0:
            raise DataError(f"channel {name!r} is empty")
    t0 = max(float(r.timestamps.min()) for r in raws.values())
    t_end = min(float(r.timestamps.max()) for r in raws.values())
    if t_end < t0:
        raise DataError("channels do not overlap in time")
    n = int(math.floor((t_end - t0) / interval)) + 1
    grids, valid = {}, np.ones(n, dtype=bool)
    for name, raw in raws.items():
        grids[name], ok = _resample(raw, t0, n, interval, max_gap)
        valid &= ok
    segments = _runs(valid)
    if not segments:
        raise DataError("no time bucket is valid for all channels")
    lo, hi = max(segments, key=lambda s: (s[1] - s[0], -s[0]))
    report = AlignmentReport(n, segments, (lo, hi))
    if len(segments) > 1:
        log.info("alignment split data into %d segments; kept [%d, %d) of %d buckets",
                 len(segments), lo, hi, n)
    start = t0 + lo * interval
    return {k: PowerSeries(start, interval, v[lo:hi]) for k, v in grids.items()}, report


def align_and_resample(mains: RawChannel, channel: RawChannel, target_interval: float,
                       max_gap: float | None = None):
    out, report = align_many({"mains": mains, "channel": channel}, target_interval, max_gap)
    return out["mains"], out["channel"], report


def _normalize_name(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


def load_name_table() -> dict[str, list[str]]:
    with resources.files("msdc").joinpath("data/appliance_names.json").open() as fh:
        return json.load(fh)


def _aliases(name: str, table: dict[str, list[str]]) -> list[str]:
    key = _normalize_name(name)
    for canonical, aliases in table.items():
        group = [canonical] + aliases
        if key in {_normalize_name(a) for a in group}:
            return sorted({_normalize_name(a) for a in group})
    return [key]


def read_labels(house_dir) -> dict[int, str]:
    path = Path(house_dir) / "labels.dat"
    if not path.exists():
        raise DataError(f"missing labels file: {path}")
    labels = {}
    for line in path.read_text().splitlines():
        if line.strip():
            channel, name = line.split(maxsplit=1)
            labels[int(channel)] = name.strip()
    return labels


def match_channels(labels: dict[int, str], name: str, table=None) -> list[int]:
    table = load_name_table() if table is None else table
    aliases = _aliases(name, table)
    return sorted(ch for ch, label in labels.items()
                  if any(a in _normalize_name(label) for a in aliases))


def _sum_raw(raws: list[RawChannel]) -> RawChannel:
    if len(raws) == 1:
        return raws[0]
    # legs recorded on a shared clock; sum readings at common timestamps
    raws = [RawChannel(r.timestamps[o], r.watts[o])
            for r in raws for o in [np.argsort(r.timestamps, kind="stable")]]
    common = raws[0].timestamps
    for r in raws[1:]:
        common = np.intersect1d(common, r.timestamps)
    total = np.zeros(len(common))
    for r in raws:
        idx = np.searchsorted(r.timestamps, common)
        total += r.watts[idx]
    return RawChannel(common, total)


def load_house(root, house_id: int, appliances: list[str], target_interval: float = 3.0,
               max_gap: float | None = None, zero_fraction: float = 0.995) -> HouseBundle:
    house_dir = Path(root) / f"house_{house_id}"
    labels = read_labels(house_dir)
    table = load_name_table()

    def raw_for(name):
        chans = match_channels(labels, name, table)
        if not chans:
            raise DataError(f"house {house_id}: no channel matches appliance {name!r}")
        return _sum_raw([parse_channel_file(house_dir / f"channel_{c}.dat") for c in chans])

    raws = {MAINS: raw_for(MAINS)}
    for name in appliances:
        raws[name] = raw_for(name)
    aligned, report = align_many(raws, target_interval, max_gap)
    for name in appliances:
        frac = float(np.mean(aligned[name].values == 0.0))
        if frac >= zero_fraction:
            warnings.warn(f"house {house_id}: {name!r} is {frac:.1%} zeros", stacklevel=2)
    mains = aligned.pop(MAINS)
    return HouseBundle(house_id, mains, aligned, target_interval, report)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def write_channel_file(path, series: PowerSeries) -> None:
    lines = [f"{_fmt(t)} {repr(float(w))}" for t, w in zip(series.timestamps, series.values)]
    Path(path).write_text("\n".join(lines) + "\n")


def export_house(root, bundle: HouseBundle) -> Path:
    """Write a bundle in the REDD layout: channel 1 is mains, appliances follow."""
    house_dir = Path(root) / f"house_{bundle.house_id}"
    house_dir.mkdir(parents=True, exist_ok=True)
    label_lines = [f"1 {MAINS}"]
    write_channel_file(house_dir / "channel_1.dat", bundle.mains)
    for k, (name, series) in enumerate(bundle.channels.items(), start=2):
        label_lines.append(f"{k} {name.replace(' ', '_')}")
        write_channel_file(house_dir / f"channel_{k}.dat", series)
    (house_dir / "labels.dat").write_text("\n".join(label_lines) + "\n")
    return house_dir
