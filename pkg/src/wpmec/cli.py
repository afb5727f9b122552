"""Command-line entry point: config files, sweeps and CSV output."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import DELAY_ESTIMATOR, SCHEDULERS, run
from .model import PER_AP, PER_WD, SystemConfig
from .stochastic import Topology

SECTIONS = {
    "system": ("n_wd", "m_ap", "slot_length", "bandwidth", "penalty_v", "horizon",
               "swipt_enabled", "eta", "queue_weight", "battery_weight", "warmup_fraction"),
    "wd": ("mu", "kappa", "phi", "overhead", "f_max", "p_max", "b_max"),
    "ap": ("p_t_max", "sigma2"),
    "channel": ("theta_u", "path_loss_exp", "downlink_factor", "region_side", "coverage_radius"),
    "arrivals": ("arrival_rate", "arrival_dist"),
    "experiment": ("schedulers", "seeds", "sweep_v", "sweep_n", "sweep_m"),
}
ALIASES = {"lambda": "arrival_rate", "v": "penalty_v", "n": "n_wd", "m": "m_ap"}
AXES = {"V": "penalty_v", "N": "n_wd", "M": "m_ap"}

SUMMARY_COLUMNS = ["sweep_axis", "sweep_value", "scheduler", "seed", "avg_ap_energy_J_per_slot",
                   "avg_delay_slots", "avg_queue_bits", "stable", "adjust_fallback_rate"]
SLOT_COLUMNS = ["t", "ap_energy", "wpt_energy", "edge_energy", "total_queue", "mean_battery",
                "arrivals", "local_bits", "offloaded_bits", "fallback", "violations"]


class ConfigError(ValueError):
    def __init__(self, msg, lineno=None, path=None):
        where = f"{path}:{lineno}: " if lineno is not None else (f"{path}: " if path else "")
        super().__init__(where + msg)
        self.lineno = lineno


def _number(text: str):
    low = text.lower()
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return int(text)
    except ValueError:
        return float(text)


def _value(key: str, text: str):
    if key == "swipt_enabled":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if key == "arrival_dist":
        return text
    if key == "schedulers":
        return tuple(s.strip() for s in text.split(",") if s.strip())
    parts = [p.strip() for p in text.split(",")]
    if any(not p for p in parts):
        raise ValueError(f"empty entry in {text!r}")
    nums = [_number(p) for p in parts]
    if key in ("seeds", "sweep_v", "sweep_n", "sweep_m"):
        return tuple(nums)
    if key in PER_WD or key in PER_AP:
        return nums[0] if len(nums) == 1 else np.array(nums, dtype=float)
    if len(nums) != 1:
        raise ValueError(f"{key} takes a single value")
    return nums[0]


def read_config(path) -> tuple[SystemConfig, dict]:
    """Parse a config file into a system config and the [experiment] settings."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(exc), path=path) from None
    section = None
    values: dict = {}
    lines: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or line[1:-1].strip() not in SECTIONS:
                raise ConfigError(f"unknown or malformed section header {line!r}", lineno, path)
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno, path)
        key, val = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key.lower(), key.lower())
        if section is None:
            raise ConfigError(f"key {key!r} outside any section", lineno, path)
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, path)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno, path)
        if not val:
            raise ConfigError(f"missing value for {key!r}", lineno, path)
        try:
            values[key] = _value(key, val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, path) from None
        lines[key] = lineno

    experiment = {k: values.pop(k) for k in SECTIONS["experiment"] if k in values}
    try:
        config = SystemConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc), _culprit(values, lines), path) from None
    return config, experiment


def _culprit(values: dict, lines: dict):
    """Line of the first key that is invalid on its own (else the last key)."""
    sizes = {k: values[k] for k in ("n_wd", "m_ap") if k in values}
    for key in sorted(values, key=lines.get):
        try:
            SystemConfig(**{**sizes, key: values[key]})
        except (ValueError, TypeError):
            return lines[key]
    return max(lines.values()) if lines else None


def parse_config(path) -> SystemConfig:
    return read_config(path)[0]


@dataclass(frozen=True)
class ExperimentSpec:
    config: SystemConfig
    axis: str | None = None          # "V", "N", "M" or None for a single point
    values: tuple = ()
    schedulers: tuple = ("proposed",)
    seeds: tuple = (0,)
    out: Path = Path("results")
    emit_slots: bool = False
    trace: bool = False
    topology: Path | None = None
    jobs: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis is not None and self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if self.axis is not None and not self.values:
            raise ValueError("a sweep needs at least one value")
        if any(not v > 0 for v in self.values):
            raise ValueError("sweep values must be positive")
        if self.axis in ("N", "M") and any(int(v) != v for v in self.values):
            raise ValueError("N and M sweep values must be integers")
        if not self.schedulers:
            raise ValueError("at least one scheduler is required")
        unknown = [s for s in self.schedulers if s not in SCHEDULERS]
        if unknown:
            raise ValueError(f"unknown scheduler(s): {', '.join(unknown)}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(int(s) != s or s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative integers")

    def points(self) -> list:
        """(sweep value, config) pairs in sweep order."""
        if self.axis is None:
            return [(None, self.config)]
        name = AXES[self.axis]
        cast = float if self.axis == "V" else int
        return [(cast(v), self.config.replace(**{name: cast(v)})) for v in self.values]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _slot_name(axis, value, scheduler, seed, ext) -> str:
    tag = f"{axis}{_fmt(value)}_" if axis else ""
    return f"{tag}{scheduler}_seed{seed}.{ext}"


def _run_cell(args):
    """Worker: one (config, scheduler, seed) run; returns its rows."""
    config, scheduler, seed, topology_path, slots_path, trace_path = args
    topology = Topology.load(topology_path) if topology_path else None
    if topology is not None and (topology.wd_positions.shape[0] != config.n_wd
                                 or topology.ap_positions.shape[0] != config.m_ap):
        raise ValueError("topology file does not match N and M of the config")
    if trace_path:
        with open(trace_path, "w") as fh:
            rec = run(config, scheduler, seed=seed, topology=topology, trace_file=fh)
    else:
        rec = run(config, scheduler, seed=seed, topology=topology)
    if slots_path:
        with open(slots_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SLOT_COLUMNS)
            for t in range(rec.horizon):
                w.writerow([str(t)] + [_fmt(getattr(rec, c)[t]) for c in SLOT_COLUMNS[1:]])
    return rec.summary()


def _mean_row(rows: list) -> dict:
    out = {}
    for key in ("avg_ap_energy_J_per_slot", "avg_delay_slots", "avg_queue_bits",
                "adjust_fallback_rate"):
        vals = [r[key] for r in rows]
        out[key] = None if any(v is None for v in vals) else math.fsum(vals) / len(vals)
    out["stable"] = all(r["stable"] for r in rows)
    return out


def run_experiment(spec: ExperimentSpec, log=sys.stderr) -> int:
    """Run every (sweep value, scheduler, seed) cell and write the CSVs.

    Returns 0 on success and 2 if any run failed; a failure marker row is then
    the last row of the summary.
    """
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for value, config in spec.points():
        for scheduler in spec.schedulers:
            for seed in spec.seeds:
                slots = out / _slot_name(spec.axis, value, scheduler, seed, "csv") \
                    if spec.emit_slots else None
                trace = out / _slot_name(spec.axis, value, scheduler, seed, "jsonl") \
                    if spec.trace else None
                cells.append(((value, scheduler, int(seed)),
                              (config, scheduler, int(seed),
                               str(spec.topology) if spec.topology else None,
                               str(slots) if slots else None, str(trace) if trace else None)))

    results, failure = {}, None
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futures = [(key, pool.submit(_run_cell, args)) for key, args in cells]
            for key, fut in futures:
                try:
                    results[key] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported in the CSV
                    failure = failure or (key, exc)
    else:
        for key, args in cells:
            try:
                results[key] = _run_cell(args)
            except Exception as exc:  # noqa: BLE001 - reported in the CSV
                failure = (key, exc)
                break

    axis = spec.axis or ""
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        means = []
        for value, _ in spec.points():
            for scheduler in spec.schedulers:
                done = []
                for seed in spec.seeds:
                    row = results.get((value, scheduler, int(seed)))
                    if row is None:
                        continue
                    done.append(row)
                    w.writerow([axis, _fmt(value), scheduler, str(int(seed))]
                               + [_fmt(row[c]) for c in SUMMARY_COLUMNS[4:]])
                if done and len(done) == len(spec.seeds):
                    means.append((value, scheduler, _mean_row(done)))
        for value, scheduler, row in means:
            w.writerow([axis, _fmt(value), scheduler, "mean"]
                       + [_fmt(row[c]) for c in SUMMARY_COLUMNS[4:]])
        if failure is not None:
            (value, scheduler, seed), exc = failure
            w.writerow([axis, _fmt(value), scheduler, str(seed), "FAILED",
                        f"{type(exc).__name__}: {exc}", "", "", ""])

    info = {"delay_estimator": DELAY_ESTIMATOR, "sweep_axis": spec.axis,
            "sweep_values": list(spec.values), "schedulers": list(spec.schedulers),
            "seeds": [int(s) for s in spec.seeds], "config": spec.config.as_dict()}
    (out / "run_info.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")

    if failure is not None:
        (value, scheduler, seed), exc = failure
        print(f"run failed (value={value}, scheduler={scheduler}, seed={seed}): {exc}", file=log)
        return 2
    return 0


def _list(cast):
    def parse(text):
        try:
            return tuple(cast(p) for p in text.split(",") if p.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wpmec", description="Simulate online scheduling in a "
                                "wireless-powered edge computing network and write CSV metrics.")
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--scheduler", type=_list(str), help="comma list of proposed, lco, fo")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sweep-v", type=_list(float), help="comma list of V values")
    g.add_argument("--sweep-n", type=_list(int), help="comma list of WD counts")
    g.add_argument("--sweep-m", type=_list(int), help="comma list of AP counts")
    p.add_argument("--seeds", type=_list(int), help="comma list of seeds (default 0)")
    p.add_argument("--slots", type=int, help="horizon H in slots")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--emit-slots", action="store_true", help="write a per-slot CSV per run")
    p.add_argument("--trace", action="store_true", help="write per-slot scheduler traces (JSON lines)")
    p.add_argument("--topology", type=Path, help="fixed node placement file")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            config, exp = read_config(args.config)
        else:
            config, exp = SystemConfig(), {}
        if args.slots is not None:
            if args.slots < 0:
                raise ConfigError("--slots must be >= 0")
            config = config.replace(horizon=args.slots)
        axis, values = None, ()
        for name, flag in (("V", args.sweep_v), ("N", args.sweep_n), ("M", args.sweep_m)):
            if flag is not None:
                axis, values = name, flag
        if axis is None:
            given = [(n, exp[k]) for n, k in (("V", "sweep_v"), ("N", "sweep_n"), ("M", "sweep_m"))
                     if k in exp]
            if len(given) > 1:
                raise ConfigError("only one sweep axis may be given")
            if given:
                axis, values = given[0]
        spec = ExperimentSpec(
            config=config, axis=axis, values=tuple(values),
            schedulers=args.scheduler or exp.get("schedulers", ("proposed",)),
            seeds=args.seeds or exp.get("seeds", (0,)),
            out=args.out, emit_slots=args.emit_slots, trace=args.trace,
            topology=args.topology, jobs=max(1, args.jobs))
        if spec.topology is not None:
            Topology.load(spec.topology)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run_experiment(spec)


if __name__ == "__main__":
    sys.exit(main())
