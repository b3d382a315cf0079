"""``msdc`` command-line entry point.

Subcommands: extract-states, train, evaluate, simulate, verify-theory. Every
command takes ``--config FILE`` plus ``--section.key=value`` overrides.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import AblationSpec, collapse_states
from .config import data_root, dump_config, load_config
from .dataset_io import HouseBundle, export_house, load_house
from .errors import AssumptionViolation, ConfigError, DataError, MsdcError
from .metrics import evaluate, write_metrics_csv
from .simulator import (AggregationNoiseSpec, ApplianceFsm, VarianceExperimentSpec, aggregate,
                        simulate_appliance, verify_corollary, verify_fact1, verify_theorem1)
from .states import (ExtractionConfig, StateModel, StateSequence, extract_state_model,
                     read_state_sidecar, write_state_sidecar)
from .trainer import ApplianceData, MsdcModel, TrainConfig, split_dataset, train, write_atomic

log = logging.getLogger("msdc")

SPLITS = ("train", "val", "test", "all")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _safe(name: str) -> str:
    return name.replace(" ", "_")


def _house_dir(cfg: dict) -> Path:
    return data_root(cfg) / f"house_{cfg['data']['house']}"


def _sidecar_path(cfg: dict, name: str) -> Path:
    states_dir = cfg["data"]["states_dir"]
    base = Path(states_dir) if states_dir else _house_dir(cfg) / "states"
    return base / f"{_safe(name)}.states"


def _load_bundle(cfg: dict) -> HouseBundle:
    d = cfg["data"]
    return load_house(data_root(cfg), d["house"], list(d["appliances"]), d["interval"],
                      d["max_gap"], d["zero_fraction"])


def _extraction_config(cfg: dict) -> ExtractionConfig:
    return ExtractionConfig(**cfg["extraction"])


def _ablation(cfg: dict) -> AblationSpec:
    try:
        return AblationSpec(cfg["ablation"]["mode"], cfg["ablation"]["threshold"])
    except DataError as exc:
        raise ConfigError(str(exc)) from exc


def _appliance_data(cfg: dict, bundle: HouseBundle, name: str) -> ApplianceData:
    centers, labels = read_state_sidecar(_sidecar_path(cfg, name))
    power = bundle.channels[name]
    if len(labels) != len(power):
        raise DataError(
            f"{name}: sidecar has {len(labels)} labels but the aligned series has {len(power)} "
            f"samples; rerun `msdc extract-states` with the same data settings"
        )
    model = StateModel(name, centers, 0.0)  # bandwidth is not stored in sidecars
    spec = _ablation(cfg)
    if spec.mode == "single_state":
        model, labels = collapse_states(model, labels, spec.threshold)
    return ApplianceData(bundle.mains, power, labels, model)


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    t, n = cfg["trainer"], cfg["network"]
    try:
        return _train_config(cfg, t, n, seed)
    except (DataError, TypeError) as exc:
        raise ConfigError(f"invalid trainer/network settings: {exc}") from exc


def _train_config(cfg, t, n, seed):
    return TrainConfig(
        loss_kind=t["loss"], input_len=n["input_len"], output_len=n["output_len"],
        train_stride=t["train_stride"], inference_stride=t["inference_stride"],
        conv_channels=list(n["conv_channels"]), kernel_sizes=list(n["kernel_sizes"]),
        hidden=n["hidden"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
        beta1=t["beta1"], beta2=t["beta2"], adam_eps=t["adam_eps"], max_epochs=t["max_epochs"],
        patience=t["patience"], seed=t["seed"] if seed is None else seed, split=tuple(t["split"]),
        crf_emission=cfg["crf"]["emission"],
    )


# --- commands --------------------------------------------------------------

def cmd_extract_states(cfg: dict, args) -> int:
    bundle = _load_bundle(cfg)
    ext = _extraction_config(cfg)
    for name in cfg["data"]["appliances"]:
        model, labels = extract_state_model(bundle.channels[name], ext, appliance_id=name)
        path = _sidecar_path(cfg, name)
        write_state_sidecar(path, model, labels)
        centers = ", ".join(f"{c:.1f}" for c in model.centers)
        print(f"{name}: M={model.n_states} centers=[{centers}] -> {path}")
    return 0


def cmd_train(cfg: dict, args) -> int:
    _ablation(cfg)
    train_config(cfg)
    cfg["data"]["root"] = str(data_root(cfg).resolve())
    bundle = _load_bundle(cfg)
    out = Path(args.out or cfg["output"]["dir"])
    base_seed, n_seeds = cfg["trainer"]["seed"], cfg["trainer"]["seeds"]
    if n_seeds < 1:
        raise ConfigError("trainer.seeds must be at least 1")
    for name in cfg["data"]["appliances"]:
        data = _appliance_data(cfg, bundle, name)
        rows = []
        for seed in range(base_seed, base_seed + n_seeds):
            run_dir = out / _safe(name) / f"seed_{seed}"
            snapshot = {**cfg, "trainer": {**cfg["trainer"], "seed": seed, "seeds": 1}}
            write_atomic(run_dir / "config.snapshot", dump_config(snapshot))
            model, report = train(data, train_config(cfg, seed), run_dir)
            m = report.final_metrics
            rows.append((seed, report.best_epoch, m.get("mae", float("nan")),
                         m.get("state_accuracy", float("nan"))))
            print(f"{name} seed {seed}: M={model.n_states} best epoch {report.best_epoch}, "
                  f"val MAE {rows[-1][2]:.3f} W, val state accuracy {rows[-1][3]:.4f} -> {run_dir}")
        if n_seeds > 1:
            path = out / _safe(name) / "seeds_summary.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["seed", "best_epoch", "val_mae", "val_state_accuracy"])
                writer.writerows(rows)
            maes = np.array([r[2] for r in rows])
            print(f"{name}: mean val MAE over {n_seeds} seeds {maes.mean():.3f} W (std {maes.std():.3f})")
    return 0


def _pick_split(cfg: dict, data: ApplianceData, split: str) -> ApplianceData:
    if split == "all":
        return data
    parts = dict(zip(("train", "val", "test"), split_dataset(data, cfg["trainer"]["split"])))
    return parts[split]


def cmd_evaluate(cfg: dict, args) -> int:
    model = MsdcModel.load(args.checkpoint)
    name = model.state_model.appliance_id
    if name not in cfg["data"]["appliances"]:
        raise ConfigError(f"checkpoint appliance {name!r} is not in data.appliances")
    bundle = _load_bundle(cfg)
    data = _pick_split(cfg, _appliance_data(cfg, bundle, name), args.split)
    if data.states.n_states != model.n_states:
        raise DataError(f"checkpoint has {model.n_states} states but labels have {data.states.n_states}")
    if len(data) < model.window.output_len:
        raise DataError(f"{args.split} split has {len(data)} samples, fewer than one output window")
    pred, states = model.predict(data.aggregate)
    report = evaluate(pred, data.appliance, states, data.states, cfg["metrics"]["period"])
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", {name: report})
    with (out / f"predictions_{_safe(name)}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "truth_watts", "pred_watts", "truth_state", "pred_state"])
        for row in zip(data.aggregate.timestamps.tolist(), data.appliance.values.tolist(),
                       pred.values.tolist(), data.states.labels.tolist(), states.labels.tolist()):
            writer.writerow(row)
    print(f"{name} [{args.split}]: MAE {report.mae:.3f} W, SAE {report.sae:.4f}, "
          f"SAE_delta {report.sae_delta:.3f} W, state accuracy {report.state_accuracy:.4f}")
    return 0


def cmd_simulate(cfg: dict, args) -> int:
    sim = cfg["simulator"]
    root = Path(args.out) if args.out else data_root(cfg)
    T, seed = int(sim["length"]), int(sim["seed"])
    channels, truths = {}, {}
    for i, app in enumerate(sim["appliances"]):
        fsm = ApplianceFsm(app["name"], tuple(app["means"]), tuple(app["stds"]),
                           tuple(map(tuple, app["transition"])),
                           tuple(app["initial"]) if app.get("initial") else None)
        power, labels = simulate_appliance(fsm, T, seed + 1 + i, sim["start_timestamp"], sim["interval"])
        channels[app["name"]] = power
        truths[app["name"]] = (fsm, labels)
    noise = AggregationNoiseSpec(sim["base_load"], sim["noise_std"], sim["profile"],
                                 sim["drift_amplitude"], sim["drift_period"])
    mains = aggregate(list(channels.values()), noise, seed)
    house_dir = export_house(root, HouseBundle(cfg["data"]["house"], mains, channels, sim["interval"]))
    for name, (fsm, labels) in truths.items():
        # relabel so that state indices follow increasing mean power
        order = np.argsort(fsm.means, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        model = StateModel(name, tuple(np.asarray(fsm.means)[order]), 0.0)
        write_state_sidecar(house_dir / "truth" / f"{_safe(name)}.states", model,
                            StateSequence(rank[labels.labels], fsm.n_states))
    print(f"wrote {len(channels)} appliances x {T} samples to {house_dir}")
    return 0


def cmd_verify_theory(cfg: dict, args) -> int:
    th = cfg["theory"]
    spec = VarianceExperimentSpec(tuple(th["probs"]), tuple(th["means"]), tuple(th["stds"]),
                                  th["sigma"], int(th["n"]), int(th["seed"]))
    try:
        reports = [verify_fact1(spec), verify_theorem1(spec)]
        if spec.n_states >= 2:
            reports.append(verify_corollary(spec, float(th["xi"])))
    except AssumptionViolation as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return exc.exit_code
    for r in reports:
        values = " ".join(f"{k}={v:.6g}" for k, v in r.values.items())
        print(f"{r.name}: {'PASS' if r.passed else 'FAIL'} {values}")
    if spec.n_states < 2:
        print("corollary: skipped (needs at least two states)")
    return 0 if all(r.passed for r in reports) else 3


COMMANDS = {
    "extract-states": cmd_extract_states,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "verify-theory": cmd_verify_theory,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msdc", description="Multi-state dual CNN energy disaggregation.")
    parser.add_argument("--version", action="version", version=f"msdc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, epilog="Any config key can be overridden with --section.key=value.")
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("train", "evaluate", "simulate"):
            p.add_argument("--out", help="output directory")
        if name == "train":
            p.add_argument("--loss", choices=["msdc", "msdc-crf"])
            p.add_argument("--seeds", type=int, help="train this many consecutive seeds")
            p.add_argument("--ablation", choices=["single-state", "multi-state"])
            p.add_argument("--threshold", type=float, help="on/off threshold in watts for the ablation")
        if name == "evaluate":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", choices=SPLITS, default="test")
    return parser


def split_overrides(argv: list[str]) -> tuple[list[str], list[str]]:
    """Pull ``--section.key=value`` (or ``--section.key value``) out of argv."""
    rest, overrides = [], []
    i = 0
    while i < len(argv):
        tok = argv[i]
        key = tok[2:].split("=", 1)[0] if tok.startswith("--") else ""
        if "." in key:
            if "=" in tok:
                overrides.append(tok[2:])
            elif i + 1 < len(argv):
                overrides.append(f"{key}={argv[i + 1]}")
                i += 1
            else:
                raise ConfigError(f"override {tok} is missing a value")
        else:
            rest.append(tok)
        i += 1
    return rest, overrides


def _flag_overrides(args) -> list[str]:
    out = []
    if getattr(args, "loss", None):
        out.append(f"trainer.loss={args.loss}")
    if getattr(args, "seeds", None) is not None:
        out.append(f"trainer.seeds={args.seeds}")
    if getattr(args, "ablation", None):
        out.append(f"ablation.mode={args.ablation.replace('-', '_')}")
    if getattr(args, "threshold", None) is not None:
        out.append(f"ablation.threshold={args.threshold}")
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = split_overrides(argv)
        args = build_parser().parse_args(rest)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        config_path = args.config
        if config_path is None and args.command == "evaluate":
            snapshot = Path(args.checkpoint).parent / "config.snapshot"
            config_path = snapshot if snapshot.exists() else None
        cfg = load_config(config_path, overrides + _flag_overrides(args))
        return COMMANDS[args.command](cfg, args)
    except MsdcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
