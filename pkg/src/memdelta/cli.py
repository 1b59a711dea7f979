"""Config-driven experiment runner.

``memdelta run config.yaml [--seed N] [--paths N] [--out DIR] [--mode ...]``
executes the estimators requested in the config and writes a CSV (canonical)
plus a JSON mirror.  ``memdelta sweep config.yaml --vary h|paths|eps
--values ...`` repeats the run over a parameter sweep under one master seed.

Configs are YAML with strict keys: anything unrecognized is an error, not a
warning.  Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, replace

import yaml

from .engine import NumericalBlowupError
from .greeks import (
    Estimate,
    McParams,
    Payoff,
    SimulationError,
    delta_fd,
    delta_index,
    malliavin_deltas,
    price,
)
from .models import MODEL_BUILDERS, kp_initial_segment
from .segment import (
    GridError,
    SegmentGrid,
    constant_direction,
    direction_dictionary,
    m2_norm,
    point_direction,
    ramp_direction,
    segment_from_closed_form,
    segment_from_file,
    steps_in,
)

CSV_COLUMNS = ["direction_id", "estimator", "valuation", "mean", "stderr",
               "n_paths", "h", "seed", "model", "params_hash", "mode"]


class ConfigError(ValueError):
    """Invalid or unknown configuration content; the message names the key."""


def _require_keys(block: dict, allowed: set, required: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping")
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {key!r}")
    for key in required:
        if key not in block:
            raise ConfigError(f"{where}: missing key {key!r}")


@dataclass
class RunConfig:
    model_name: str
    model_params: dict
    rate: object
    r: float
    T: float
    h: float
    n_paths: int
    seed: int
    payoff: Payoff
    valuation: str
    estimators: list
    directions: list
    fd_eps: object
    a_function: object
    mode: str
    out_dir: str
    eta_spec: dict
    raw: dict = field(default_factory=dict)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config root: expected a mapping")
    _require_keys(raw, {"model", "grid", "eta", "mc", "payoff", "valuation", "estimators",
                        "directions", "fd_eps", "a_function", "mode", "output"},
                  {"model", "grid", "eta", "mc", "payoff", "valuation", "estimators"},
                  "config root")

    _require_keys(raw["model"], {"name", "params", "rate"}, {"name"}, "model")
    name = raw["model"]["name"]
    if name not in MODEL_BUILDERS:
        raise ConfigError(f"model.name: unknown model {name!r}")
    params = raw["model"].get("params", {}) or {}
    rate = raw["model"].get("rate", 0.0)

    _require_keys(raw["grid"], {"r", "T", "h"}, {"r", "T", "h"}, "grid")
    r, T, h = float(raw["grid"]["r"]), float(raw["grid"]["T"]), float(raw["grid"]["h"])
    try:
        steps_in(r, h, "grid.r")
        steps_in(T, h, "grid.T")
    except GridError as exc:
        raise ConfigError(str(exc)) from exc

    _require_keys(raw["mc"], {"n_paths", "seed"}, {"n_paths", "seed"}, "mc")
    n_paths = int(raw["mc"]["n_paths"])
    if n_paths < 100:
        raise ConfigError("mc.n_paths: need at least 100 paths")
    seed = raw["mc"]["seed"]
    if seed is None:
        raise ConfigError("mc.seed: a seed is mandatory (runs must be reproducible)")
    seed = int(seed)

    _require_keys(raw["payoff"], {"kind", "strike", "window"}, {"kind", "strike"}, "payoff")
    payoff = Payoff(raw["payoff"]["kind"], float(raw["payoff"]["strike"]),
                    raw["payoff"].get("window"))

    valuation = raw["valuation"]
    if valuation not in ("plain", "risk_neutral", "benchmark"):
        raise ConfigError(f"valuation: unknown valuation {valuation!r}")

    estimators = raw["estimators"]
    known = {"price", "delta_malliavin", "delta_fd", "delta_index"}
    for est in estimators:
        if est not in known:
            raise ConfigError(f"estimators: unknown estimator {est!r}")

    _require_keys(raw["eta"], {"form", "params", "path"}, {"form"}, "eta")

    mode = raw.get("mode", "consistent")
    if mode not in ("consistent", "paper_literal"):
        raise ConfigError(f"mode: unknown mode {mode!r}")

    out_block = raw.get("output", {}) or {}
    _require_keys(out_block, {"dir"}, set(), "output")

    return RunConfig(
        model_name=name, model_params=params, rate=rate, r=r, T=T, h=h,
        n_paths=n_paths, seed=seed, payoff=payoff, valuation=valuation,
        estimators=list(estimators), directions=raw.get("directions", ["point"]),
        fd_eps=raw.get("fd_eps"), a_function=raw.get("a_function"),
        mode=mode, out_dir=out_block.get("dir", "out"), eta_spec=raw["eta"], raw=raw,
    )


def build_model(cfg: RunConfig):
    builder = MODEL_BUILDERS[cfg.model_name]
    params = dict(cfg.model_params)
    params.setdefault("r", cfg.r)
    if abs(float(params["r"]) - cfg.r) > 1e-12 and cfg.model_name != "bs":
        raise ConfigError("model.params.r must match grid.r")
    params["r"] = cfg.r
    try:
        return builder(rate=cfg.rate, **params)
    except TypeError as exc:
        raise ConfigError(f"model.params: {exc}") from exc


def build_eta(cfg: RunConfig, model) -> SegmentGrid:
    spec = cfg.eta_spec
    form = spec["form"]
    d_eta = 1 if cfg.model_name == "kp" else model.d
    if form == "file":
        if "path" not in spec:
            raise ConfigError("eta.path: required for eta.form = file")
        seg = segment_from_file(spec["path"], cfg.h, cfg.r, d_eta)
    else:
        seg = segment_from_closed_form(form, spec.get("params", {}) or {}, cfg.h, cfg.r, d_eta)
    if cfg.model_name == "kp":
        seg = kp_initial_segment(model, seg)
    return seg


def build_directions(cfg: RunConfig, model) -> tuple[list[str], list[SegmentGrid]]:
    ids, segs = [], []
    named = {"point": point_direction, "constant": constant_direction, "ramp": ramp_direction}
    for entry in cfg.directions:
        if isinstance(entry, str) and entry in named:
            comp = model.d - 1 if (cfg.model_name == "kp" and entry != "point") else 0
            segs.append(named[entry](cfg.h, cfg.r, model.d, comp))
            ids.append(entry)
        elif isinstance(entry, dict) and "name" in entry:
            extra = set(entry) - {"name", "component"}
            if extra:
                raise ConfigError(f"directions: unknown key {extra.pop()!r}")
            if entry["name"] not in named:
                raise ConfigError(f"directions: unknown direction {entry['name']!r}")
            segs.append(named[entry["name"]](cfg.h, cfg.r, model.d, int(entry.get("component", 0))))
            ids.append(f"{entry['name']}[{entry.get('component', 0)}]")
        elif isinstance(entry, dict) and "file" in entry:
            extra = set(entry) - {"file"}
            if extra:
                raise ConfigError(f"directions: unknown key {extra.pop()!r}")
            segs.append(segment_from_file(entry["file"], cfg.h, cfg.r, model.d))
            ids.append(f"file:{os.path.basename(entry['file'])}")
        else:
            raise ConfigError(f"directions: cannot interpret entry {entry!r}")
    return ids, segs


def params_hash(cfg: RunConfig) -> str:
    blob = json.dumps({"model": cfg.model_name, "params": cfg.model_params,
                       "rate": cfg.rate, "grid": [cfg.r, cfg.T, cfg.h],
                       "payoff": [cfg.payoff.kind, cfg.payoff.strike, cfg.payoff.window],
                       "eta": cfg.eta_spec}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:10]


def _row(cfg: RunConfig, direction_id: str, estimator: str, est: Estimate) -> dict:
    return {
        "direction_id": direction_id, "estimator": estimator, "valuation": cfg.valuation,
        "mean": f"{est.mean:.10g}", "stderr": f"{est.stderr:.10g}",
        "n_paths": est.n_paths, "h": f"{cfg.h:.10g}", "seed": cfg.seed,
        "model": cfg.model_name, "params_hash": params_hash(cfg), "mode": cfg.mode,
    }


def execute(cfg: RunConfig) -> list[dict]:
    model = build_model(cfg)
    eta = build_eta(cfg, model)
    mc = McParams(n_paths=cfg.n_paths, T=cfg.T, h=cfg.h, seed=cfg.seed)
    ids, psis = build_directions(cfg, model)
    rows: list[dict] = []

    if "price" in cfg.estimators:
        est = price(model, eta, cfg.payoff, cfg.valuation, mc)
        rows.append(_row(cfg, "-", "price", est))

    if "delta_malliavin" in cfg.estimators and psis:
        report = malliavin_deltas(model, eta, cfg.payoff, cfg.valuation, mc, psis,
                                  direction_ids=ids, a_name=cfg.a_function, mode=cfg.mode)
        for entry in report.entries:
            rows.append(_row(cfg, entry.direction_id, "delta_rn" if cfg.valuation == "risk_neutral"
                             else f"delta_{cfg.valuation}", entry.estimate))

    if "delta_fd" in cfg.estimators and psis:
        eps = cfg.fd_eps if cfg.fd_eps else 1e-4 * float(m2_norm(eta))
        for did, psi in zip(ids, psis):
            est = delta_fd(model, eta, cfg.payoff, psi, float(eps), cfg.valuation, mc)
            rows.append(_row(cfg, did, "delta_fd", est))

    if "delta_index" in cfg.estimators:
        family = direction_dictionary("grid_basis", cfg.h, cfg.r, model.d)
        fam_ids = [f"grid:{i}" for i in range(len(family))]
        report = delta_index(model, eta, cfg.payoff, cfg.valuation, mc, family,
                             direction_ids=fam_ids, a_name=cfg.a_function, mode=cfg.mode)
        idx_est = Estimate(report.delta_index, report.delta_index_stderr, cfg.n_paths)
        rows.append(_row(cfg, "riesz_norm", "delta_index", idx_est))
    return rows


def write_outputs(cfg: RunConfig, rows: list[dict], out_dir: str, stem: str = "results") -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    json_path = os.path.join(out_dir, f"{stem}.json")
    payload = {
        "rows": [dict(row, ci95=f"{1.96 * float(row['stderr']):.10g}") for row in rows],
        "metadata": {"m2_weighting": "equal", "config": cfg.raw},
    }
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
    return csv_path, json_path


def print_table(rows: list[dict]) -> None:
    header = f"{'estimator':<22} {'direction':<14} {'valuation':<13} {'mean':>14} {'+-ci95':>12}"
    print(header)
    print("-" * len(header))
    for row in rows:
        ci = 1.96 * float(row["stderr"])
        print(f"{row['estimator']:<22} {row['direction_id']:<14} {row['valuation']:<13} "
              f"{float(row['mean']):>14.6g} {ci:>12.3g}")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=int(args.seed))
    if getattr(args, "paths", None) is not None:
        cfg = replace(cfg, n_paths=int(args.paths))
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "mode", None) is not None:
        cfg = replace(cfg, mode=args.mode)
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        rows = execute(cfg)
    except (ConfigError, GridError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, NumericalBlowupError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    csv_path, json_path = write_outputs(cfg, rows, cfg.out_dir)
    print_table(rows)
    print(f"\nwrote {csv_path} and {json_path}")
    return 0


def cmd_sweep(args) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        values = [float(v) for v in args.values.split(",")]
        all_rows = []
        for v in values:
            if args.vary == "h":
                sub = replace(cfg, h=v)
            elif args.vary == "paths":
                sub = replace(cfg, n_paths=int(v))
            elif args.vary == "eps":
                sub = replace(cfg, fd_eps=v)
            else:
                raise ConfigError(f"--vary: unknown sweep variable {args.vary!r}")
            rows = execute(sub)
            for row in rows:
                row["sweep_var"] = args.vary
                row["sweep_value"] = f"{v:.10g}"
            all_rows.extend(rows)
    except (ConfigError, GridError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, NumericalBlowupError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS + ["sweep_var", "sweep_value"])
        writer.writeheader()
        writer.writerows(all_rows)
    print_table(all_rows)
    print(f"\nwrote {csv_path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="memdelta",
                                     description="Monte Carlo prices and initial-path deltas "
                                                 "for market models with memory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--paths", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--mode", choices=["consistent", "paper_literal"])
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="repeat a config over a parameter sweep")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--vary", required=True, choices=["h", "paths", "eps"])
    p_sweep.add_argument("--values", required=True, help="comma-separated sweep values")
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--paths", type=int)
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--mode", choices=["consistent", "paper_literal"])
    p_sweep.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
