"""Command-line workflow for the panel Gompertz analysis.

Subcommands: simulate, pfilter, kalman, mif, profile, mcap. Settings come
from built-in defaults, then run-level presets, then a ``key = value``
config file, then ``--set key=value`` overrides and the explicit flags.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import gompertz as gz
from .design import profile_design, runif_panel_design
from .errors import (
    ConfigError,
    CurvatureError,
    DomainError,
    FilterError,
    FormatError,
    ParseError,
    ShapeError,
    SimulationError,
    UnknownParameterError,
)
from .filter import log_mean_exp, panel_log_mean_exp, replicate_pfilter
from .mcap import mcap
from .model import PanelData
from .params import unit_key
from .pif import CoolingSchedule, RwSd, pif_traces, refine_unit_blocks, run_pif

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# (run level 1, 2, 3)
PRESETS = {
    "pfilter_Np": (10, 200, 1000),
    "nseq": (2, 4, 6),
    "Nmif": (2, 20, 150),
    "mif_Np": (10, 500, 1500),
    "eval_reps": (2, 5, 10),
    "eval_Np": (10, 500, 2500),
    "refine_reps": (2, 4, 6),
    "profile_n": (10, 10, 20),
}

DEFAULTS = {
    "U": 50,                 # units simulated
    "N": 100,                # observations per unit
    "r": 0.1, "sigma": 0.1, "K": 1.0, "tau": 0.1, "X.0": 1.0,
    "data": "data.csv",      # panel data (unit, time, Y)
    "params": "",            # optional parameter CSV (parameter, value) for pfilter/kalman
    "reps": 10,              # pfilter replicates
    "resampler": "multinomial",
    "cooling_fraction": 0.5,
    "rw_sd": 0.02,
    "box_lower": 0.05,       # start box for r, sigma, tau in mif
    "box_upper": 0.2,
    "profile_param": "r",
    "profile_lo": 0.05,
    "profile_hi": 0.2,
    "nprof": 2,
    "profile": "profile.csv",
    "level": 0.95,
    "span": 0.75,
    "grid_size": 1000,
    "kalman_maximize": False,
}

_INT_KEYS = {"U", "N", "reps", "nprof", "grid_size", *PRESETS}


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        default = DEFAULTS.get(key)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


@dataclass
class RunConfig:
    run_level: int = 1
    seed: int = 1
    threads: int = 1
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self) -> dict:
        return dict(run_level=self.run_level, seed=self.seed, threads=self.threads, **self.values)


def make_config(file_values: dict | None = None, overrides: dict | None = None,
                run_level: int | None = None, seed: int | None = None,
                threads: int | None = None) -> RunConfig:
    merged = dict(file_values or {})
    merged.update(overrides or {})
    level = int(run_level if run_level is not None else merged.pop("run_level", 1))
    merged.pop("run_level", None)
    if level not in (1, 2, 3):
        raise ConfigError("run_level must be 1, 2 or 3")
    seed_v = int(seed if seed is not None else merged.pop("seed", 1))
    merged.pop("seed", None)
    threads_v = int(threads if threads is not None else merged.pop("threads", 1))
    merged.pop("threads", None)
    if threads_v < 1:
        raise ConfigError("threads must be positive")
    values = dict(DEFAULTS)
    values.update({k: v[level - 1] for k, v in PRESETS.items()})
    for k, v in merged.items():
        if k not in values:
            raise ConfigError(f"unknown configuration key {k!r}")
        values[k] = _coerce(k, v)
    return RunConfig(level, seed_v, threads_v, values)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _resolve(path: str, out: Path) -> Path:
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    return out / p


def read_panel_csv(path: Path) -> PanelData:
    if not path.exists():
        raise FormatError(f"data file {path} not found")
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in ("unit", "time", "Y") if c not in df.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return PanelData.from_frame(df, obs_names=["Y"])


def read_param_csv(path: Path) -> dict:
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns[:2]) != ["parameter", "value"]:
        raise FormatError(f"{path}: expected columns parameter, value")
    return dict(zip(df["parameter"].astype(str), df["value"].astype(float)))


def _truth(cfg: RunConfig) -> dict:
    return {k: float(cfg[k]) for k in gz.PARAM_NAMES}


def _model_params(cfg: RunConfig, data: PanelData, out: Path) -> dict:
    if cfg["params"]:
        return read_param_csv(_resolve(cfg["params"], out))
    return gz._panel_values(_truth(cfg), list(data.unit_names))


def _estimated(unit_names) -> list[str]:
    return ["r", "sigma"] + [unit_key("tau", u) for u in unit_names]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    m = gz.build_panel_gompertz(U=cfg["U"], N=cfg["N"], params=_truth(cfg), seed=cfg.seed)
    df = m.data.to_frame()
    f1 = write_csv(out / "data.csv", ["unit", "time", "Y"], df.itertuples(index=False))
    f2 = write_csv(out / "params.csv", ["parameter", "value"], m.get_coef().items())
    return [f1, f2]


def _pool(cfg: RunConfig, fn, items):
    items = list(items)
    if cfg.threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, items))


def cmd_pfilter(cfg: RunConfig, out: Path) -> list[Path]:
    data = read_panel_csv(_resolve(cfg["data"], out))
    params = _model_params(cfg, data, out)
    m = gz.panel_gompertz_from_data(data, params)
    R = cfg["reps"]
    if R < 1:
        raise ConfigError("reps must be positive")
    ll = replicate_pfilter(m, J=cfg["pfilter_Np"], R=R, seed=cfg.seed,
                           resampler=cfg["resampler"], threads=cfg.threads)
    rows = [(k + 1, u, ll[k, i]) for k in range(R) for i, u in enumerate(m.unit_names)]
    f1 = write_csv(out / "pfilter.csv", ["replicate", "unit", "loglik"], rows)
    l1 = log_mean_exp(ll.sum(axis=1), se=True)
    l2 = panel_log_mean_exp(ll, se=True)
    exact, _ = gz.gompertz_kalman_loglik(data, m.params)
    f2 = write_csv(out / "pfilter_summary.csv",
                   ["lambda1", "lambda1_se", "lambda2", "lambda2_se", "kalman"],
                   [(l1.estimate, l1.se, l2.estimate, l2.se, exact)])
    return [f1, f2]


def cmd_kalman(cfg: RunConfig, out: Path) -> list[Path]:
    data = read_panel_csv(_resolve(cfg["data"], out))
    params = _model_params(cfg, data, out)
    total, per_unit = gz.gompertz_kalman_loglik(data, params)
    rows = list(zip(data.unit_names, per_unit)) + [("total", total)]
    files = [write_csv(out / "kalman.csv", ["unit", "loglik"], rows)]
    if cfg["kalman_maximize"]:
        fit = gz.maximize_kalman_loglik(data, params, _estimated(data.unit_names))
        rows = list(fit.params.items()) + [("loglik", fit.loglik)]
        files.append(write_csv(out / "kalman_mle.csv", ["parameter", "value"], rows))
    return files


def _search(m, start, cfg: RunConfig, rw: dict, key: str):
    """Global search, tau block refinement and replicated re-evaluation from one start."""
    cooling = CoolingSchedule(cfg["cooling_fraction"])
    fit = run_pif(m, start, M=cfg["Nmif"], J=cfg["mif_Np"], rw_sd=RwSd.from_names(m.spec, rw),
                  cooling=cooling, seed=cfg.seed, replicate=key, resampler=cfg["resampler"])
    refined = refine_unit_blocks(m, fit, ["tau"], reps=cfg["refine_reps"],
                                 rw_sd={"tau": cfg["rw_sd"]}, seed=cfg.seed, tag=f"-{key}-")
    ll = replicate_pfilter(m, refined.point_estimate, J=cfg["eval_Np"], R=cfg["eval_reps"],
                           seed=cfg.seed, resampler=cfg["resampler"], tag=f"eval-{key}-")
    return fit, refined, ll


def cmd_mif(cfg: RunConfig, out: Path) -> list[Path]:
    data = read_panel_csv(_resolve(cfg["data"], out))
    truth = _truth(cfg)
    m = gz.panel_gompertz_from_data(data, truth)
    lo, hi = cfg["box_lower"], cfg["box_upper"]
    lower = {"r": lo, "sigma": lo, "tau": lo, "K": truth["K"], "X.0": truth["X.0"]}
    upper = {"r": hi, "sigma": hi, "tau": hi, "K": truth["K"], "X.0": truth["X.0"]}
    starts = runif_panel_design(lower, upper, gz.SPECIFIC, m.unit_names, cfg["nseq"], cfg.seed)
    rw = {"r": cfg["rw_sd"], "sigma": cfg["rw_sd"], "tau": cfg["rw_sd"]}

    def one(k):
        return _search(m, starts.iloc[k].to_dict(), cfg, rw, f"start{k + 1}")

    results = _pool(cfg, one, range(len(starts)))
    files = []
    rows = []
    for k, (fit, refined, ll) in enumerate(results):
        tr = pif_traces(fit)
        files.append(write_csv(out / f"traces_start{k + 1}.csv", ["iteration", "parameter", "value"],
                               tr.itertuples(index=False)))
        est = panel_log_mean_exp(ll, se=True)
        rows.append((k + 1, refined.point_estimate, est.estimate, est.se))
    rows.sort(key=lambda r: (-r[2], r[0]))
    names = list(m.spec.vector_names())
    files.append(write_csv(out / "mif_results.csv", ["start", *names, "loglik", "loglik.se"],
                           [(s, *[p[n] for n in names], l, se) for s, p, l, se in rows]))
    return files


def cmd_profile(cfg: RunConfig, out: Path) -> list[Path]:
    data = read_panel_csv(_resolve(cfg["data"], out))
    truth = _truth(cfg)
    m = gz.panel_gompertz_from_data(data, truth)
    focal = cfg["profile_param"]
    if focal not in m.spec.shared_names:
        raise ConfigError(f"profile parameter must be shared, got {focal!r}")
    coef = m.get_coef()
    estimated = _estimated(m.unit_names)
    lower, upper = {}, {}
    for k, v in coef.items():
        if k == focal:
            continue
        lower[k] = v / 2 if k in estimated else v
        upper[k] = v * 2 if k in estimated else v
    grid = np.linspace(cfg["profile_lo"], cfg["profile_hi"], cfg["profile_n"])
    design = profile_design(focal, grid, lower, upper, cfg["nprof"], cfg.seed)
    rw = {k: cfg["rw_sd"] for k in ("r", "sigma", "tau") if k != focal}

    def one(k):
        start = design.iloc[k].to_dict()
        fit, refined, ll = _search(m, start, cfg, rw, f"profile{k + 1}")
        est = log_mean_exp(ll.sum(axis=1), se=True)
        return refined.point_estimate, est

    results = _pool(cfg, one, range(len(design)))
    names = list(m.spec.vector_names())
    rows = [(*[p[n] for n in names], e.estimate, e.se) for p, e in results]
    return [write_csv(out / "profile.csv", [*names, "loglik", "loglik.se"], rows)]


def cmd_mcap(cfg: RunConfig, out: Path) -> list[Path]:
    path = _resolve(cfg["profile"], out)
    if not path.exists():
        raise FormatError(f"profile table {path} not found")
    df = pd.read_csv(path, float_precision="round_trip")
    focal = cfg["profile_param"]
    for col in (focal, "loglik"):
        if col not in df.columns:
            raise FormatError(f"{path}: missing column {col!r}")
    if len(df) < 5:
        raise DomainError("need at least 5 profile points")
    res = mcap(df["loglik"].to_numpy(float), df[focal].to_numpy(float), level=cfg["level"],
               span=cfg["span"], grid_size=cfg["grid_size"])
    f1 = write_csv(out / "mcap.csv", ["mle", "se_stat", "se_mc", "delta", "ci_lo", "ci_hi"],
                   [(res.mle, res.se_stat, res.se_mc, res.delta, res.ci[0], res.ci[1])])
    f2 = write_csv(out / "mcap_smoothed.csv", ["x", "smoothed"], zip(res.grid, res.smoothed))
    return [f1, f2]


COMMANDS = {
    "simulate": cmd_simulate,
    "pfilter": cmd_pfilter,
    "kalman": cmd_kalman,
    "mif": cmd_mif,
    "profile": cmd_profile,
    "mcap": cmd_mcap,
}


def write_manifest(out: Path, command: str, cfg: RunConfig, files, seconds: float,
                   caught) -> Path:
    manifest = {
        "command": command,
        "config": cfg.as_dict(),
        "duration_seconds": seconds,
        "files": [{"path": Path(f).name, "sha256": _sha256(f)} for f in files],
        "warnings": [str(w.message) for w in caught],
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def run(command: str, cfg: RunConfig, out: Path) -> list[Path]:
    """Run one subcommand and write its manifest; returns the artifact paths."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        files = COMMANDS[command](cfg, out)
    write_manifest(out, command, cfg, files, time.perf_counter() - t0, caught)
    return files


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panelpomp", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--run-level", type=int, choices=(1, 2, 3))
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = make_config(file_values, _parse_set(args.set), args.run_level, args.seed, args.threads)
    except (ConfigError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files = run(args.command, cfg, Path(args.out))
    except (ConfigError, ParseError, UnknownParameterError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DomainError, ShapeError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (FilterError, SimulationError, CurvatureError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
