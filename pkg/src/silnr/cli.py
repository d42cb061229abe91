"""Command-line experiment runner.

    simulate --config run.yaml [--override key=value ...] --out results/

Writes ``results.csv``, ``convergence.csv`` and ``run.json`` into the output
directory. Exit codes: 0 success, 1 config error, 2 partial trial failures,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import yaml

from . import __version__
from .syslevel import BUILTINS, PRECODERS, Scenario, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_IO = 0, 1, 2, 3

RESULT_COLUMNS = [
    "scenario", "precoder", "sweep_name", "sweep_value", "csit_mode", "n_trials", "mean_sum_se",
    "ci95_lo", "ci95_hi", "mean_iterations", "stationarity_pass_rate", "second_order_pass_rate", "wall_seconds",
]
CONVERGENCE_COLUMNS = ["trial", "cell", "outer_round", "inner_iter", "delta_norm", "gamma"]

_SCENARIO_FIELDS = {f.name for f in dataclasses.fields(Scenario)} - {"bs"}


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key path."""


@dataclass
class RunConfig:
    scenario_ref: str
    precoders: list
    sweep_name: str
    sweep_values: list
    n_trials: int
    seed: int
    csit_mode: str = "perfect"
    eps: float = 0.1
    output_dir: Optional[str] = None
    scenario_params: dict = field(default_factory=dict)
    workers: int = 1
    record_wall_time: bool = False
    certify: bool = False

    def build_scenario(self) -> Scenario:
        params = dict(self.scenario_params)
        params.update(csit_mode=self.csit_mode, eps=self.eps, certify=self.certify)
        try:
            if self.scenario_ref in BUILTINS:
                return BUILTINS[self.scenario_ref](**params)
            data = _load_scenario_file(self.scenario_ref)
            data.update(params)
            return Scenario(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario: {exc}") from exc

    def resolved(self) -> dict:
        return dataclasses.asdict(self)


def _load_scenario_file(path: str) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"scenario: cannot read {path!r}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("scenario: file must hold a mapping")
    bad = sorted(set(data) - _SCENARIO_FIELDS)
    if bad:
        raise ConfigError(f"scenario.{bad[0]}: unknown key")
    return data


_KEYS = {
    "scenario", "scenario_params", "precoders", "snr_grid_db", "antenna_grid", "n_trials", "seed",
    "csit_mode", "eps", "output_dir", "workers", "record_wall_time", "certify",
}


def _expect(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def validate(data) -> RunConfig:
    _expect(isinstance(data, dict), "<root>", "config must be a mapping")
    unknown = sorted(set(data) - _KEYS)
    _expect(not unknown, unknown[0] if unknown else "", "unknown key")
    for req in ("scenario", "precoders", "n_trials", "seed"):
        _expect(req in data, req, "missing required key")
    ref = data["scenario"]
    _expect(isinstance(ref, str) and ref, "scenario", "must be a builtin name or a path")
    prec = data["precoders"]
    _expect(isinstance(prec, list) and prec, "precoders", "must be a nonempty list")
    for i, p in enumerate(prec):
        _expect(p in PRECODERS, f"precoders[{i}]", f"unknown precoder {p!r}; choose from {list(PRECODERS)}")
    _expect(_is_int(data["n_trials"]) and data["n_trials"] > 0, "n_trials", "must be a positive integer")
    _expect(_is_int(data["seed"]) and data["seed"] >= 0, "seed", "must be a nonnegative integer")
    axes = [k for k in ("snr_grid_db", "antenna_grid") if k in data]
    _expect(len(axes) == 1, "snr_grid_db|antenna_grid", "exactly one sweep axis is required")
    axis = axes[0]
    vals = data[axis]
    _expect(isinstance(vals, list) and vals, axis, "must be a nonempty list")
    for i, v in enumerate(vals):
        if axis == "antenna_grid":
            _expect(_is_int(v) and v > 0, f"{axis}[{i}]", "must be a positive integer")
        else:
            _expect(_is_num(v), f"{axis}[{i}]", "must be a number")
    csit = data.get("csit_mode", "perfect")
    _expect(csit in ("perfect", "noisy"), "csit_mode", "must be perfect or noisy")
    eps = data.get("eps", 0.1)
    _expect(_is_num(eps) and eps > 0, "eps", "must be a positive number")
    sp = data.get("scenario_params", {}) or {}
    _expect(isinstance(sp, dict), "scenario_params", "must be a mapping")
    for k in sp:
        _expect(k in _SCENARIO_FIELDS - {"name", "kind", "csit_mode", "eps", "certify"}, f"scenario_params.{k}", "unknown key")
    workers = data.get("workers", 1)
    _expect(_is_int(workers) and workers >= 1, "workers", "must be a positive integer")
    for flag in ("record_wall_time", "certify"):
        _expect(isinstance(data.get(flag, False), bool), flag, "must be true or false")
    out = data.get("output_dir")
    _expect(out is None or isinstance(out, str), "output_dir", "must be a path")

    is_link = ref == "two_cell_ll" or (ref not in BUILTINS and _load_scenario_file(ref).get("kind") == "link_level")
    if axis == "snr_grid_db":
        _expect(is_link, "snr_grid_db", "an SNR sweep needs a link-level scenario")
        sweep_name = "snr_db"
    else:
        sweep_name = "n_antennas" if is_link else "n_macro_antennas"
    return RunConfig(
        scenario_ref=ref, precoders=list(prec), sweep_name=sweep_name, sweep_values=list(vals),
        n_trials=data["n_trials"], seed=data["seed"], csit_mode=csit, eps=float(eps), output_dir=out,
        scenario_params=dict(sp), workers=workers, record_wall_time=data.get("record_wall_time", False),
        certify=data.get("certify", False),
    )


def apply_overrides(data: dict, overrides) -> dict:
    """``key=value`` pairs; dotted keys address nested mappings, values parse as YAML."""
    data = dict(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{key}: cannot parse value {raw!r}") from exc
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            child = node.get(p)
            node[p] = dict(child) if isinstance(child, dict) else {}
            node = node[p]
        node[parts[-1]] = value
    return data


def parse_config(text: str, overrides=None) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: malformed config: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    return validate(apply_overrides(data, overrides))


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([
            r.scenario, r.precoder, r.sweep_name, _fmt(r.sweep_value), r.csit_mode, _fmt(r.n_trials),
            _fmt(r.mean_sum_se), _fmt(r.ci95_lo), _fmt(r.ci95_hi), _fmt(r.mean_iterations),
            _fmt(r.stationarity_pass_rate), _fmt(r.second_order_pass_rate), _fmt(r.wall_seconds),
        ])
    return buf.getvalue()


def convergence_csv(conv) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONVERGENCE_COLUMNS)
    for row in conv:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def run(cfg: RunConfig, out_dir: Optional[str] = None):
    """Execute a validated config; returns (exit code, summary rows)."""
    sc = cfg.build_scenario()
    out = Path(out_dir or cfg.output_dir or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory {str(out)!r} is not writable: {exc}", file=sys.stderr)
        return EXIT_IO, []
    rows, per_trial, conv = run_scenario(
        sc, cfg.precoders, cfg.n_trials, cfg.seed, cfg.sweep_name, cfg.sweep_values,
        workers=cfg.workers, record_wall_time=cfg.record_wall_time,
    )
    failures = [
        {"sweep_value": v, "precoder": o.precoder, "trial": o.trial, "error": o.error}
        for v, o in per_trial if o.failed
    ]
    manifest = {
        "config": cfg.resolved(),
        "seed": cfg.seed,
        "scenario": {k: v for k, v in dataclasses.asdict(sc).items() if k != "bs"},
        "per_cell_sum_se": [
            {"precoder": r.precoder, "sweep_value": r.sweep_value, "values": r.per_cell_sum_se} for r in rows
        ],
        "failed_trials": failures,
        "versions": {
            "silnr": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__,
        },
    }
    try:
        (out / "results.csv").write_text(results_csv(rows))
        (out / "convergence.csv").write_text(convergence_csv(conv))
        (out / "run.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    except OSError as exc:
        print(f"error: writing results failed: {exc}", file=sys.stderr)
        return EXIT_IO, rows
    if failures:
        print(f"warning: {len(failures)} trial(s) failed and were excluded; see run.json", file=sys.stderr)
        return EXIT_PARTIAL, rows
    return EXIT_OK, rows


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x).__name__}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="simulate", description="Monte-Carlo precoding experiments.")
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (dotted keys for nested values); repeatable")
    ap.add_argument("--out", default=None, help="output directory (defaults to output_dir in the config)")
    args = ap.parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.override)
        cfg.build_scenario()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, _ = run(cfg, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
