"""YAML-configured experiments with deterministic seeding and a run manifest.

A config names one experiment and its model::

    experiment: sweep-ell          # sweep-ell | audit | diffusion-compare | complexity-scan | reproduce-4-1
    seed: 1
    model: {family: standard-normal, d: 200}
    sampler: {n_outer: 2000, n_inner: 50, budget: 24}

Numeric artifacts depend only on the resolved config and seed; wall time and
library versions go to the append-only ``manifest.jsonl``.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import yaml

from . import __version__
from .audit import run_audit_suite
from .diffusion import complexity_scan, diffusion_compare, w1_trend
from .errors import ConfigError, NumericalError
from .rwm import make_rng
from .scaling import (check_upper_bound, consistency_table, default_bracket, ell_grid,
                      roughness_stats, sweep_ell)
from .targets import PRODUCT_FAMILIES, TargetModel, model_from_config

EXPERIMENTS = ("sweep-ell", "audit", "diffusion-compare", "complexity-scan", "reproduce-4-1")
THREADS_ENV = "RWMSCALE_THREADS"

_TOP_KEYS = {"experiment", "seed", "threads", "output", "model", "sampler", "audit", "diffusion", "scan"}
_SAMPLER_KEYS = {"n_outer", "n_inner", "grid", "bracket", "budget", "n_rough"}
_AUDIT_KEYS = {"n_samples", "q", "alpha", "n_pair_points"}
_DIFFUSION_KEYS = {"ell", "d_list", "T", "start", "n_paths", "times", "dt", "clamp", "n_boot", "n_rough"}
_SCAN_KEYS = {"d_list", "n_list", "ell", "metric", "n_chains", "iter_factor",
              "eps", "n_starts", "n_paths", "coord"}

SAMPLER_DEFAULTS = {"n_outer": 2000, "n_inner": 50, "budget": 24, "n_rough": 2000}
AUDIT_DEFAULTS = {"n_samples": 2000, "q": 0.99, "alpha": 0.4, "n_pair_points": 200}
DIFFUSION_DEFAULTS = {"ell": 2.38, "d_list": [50, 100, 200], "T": 1.0, "start": "stationary",
                      "n_paths": 5000, "times": [0.25, 0.5, 1.0], "dt": None, "clamp": 10.0,
                      "n_boot": 100, "n_rough": 2000}
SCAN_DEFAULTS = {"ell": 2.38, "metric": "iact", "n_chains": 64, "iter_factor": 200, "eps": 0.1,
                 "n_starts": 4, "n_paths": 500}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    model: dict
    sampler: dict = field(default_factory=dict)
    audit: dict = field(default_factory=dict)
    diffusion: dict = field(default_factory=dict)
    scan: dict = field(default_factory=dict)
    output: Optional[str] = None
    threads: int = 1
    base_dir: Optional[str] = None
    target: Optional[TargetModel] = field(default=None, repr=False, compare=False)

    def resolved(self) -> dict:
        """Everything that affects numeric output (threads and paths excluded)."""
        out = {"experiment": self.experiment, "seed": self.seed, "model": self.model}
        for key in ("sampler", "audit", "diffusion", "scan"):
            if getattr(self, key):
                out[key] = getattr(self, key)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------------------
# parsing and validation


def _check_keys(section: dict, allowed: set, name: str):
    extra = sorted(set(section) - allowed)
    if extra:
        raise ConfigError(f"unknown key {extra[0]!r}", field=f"{name}.{extra[0]}" if name else extra[0])


def _pos_int(section, key, name, minimum=1):
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"must be an integer >= {minimum}, got {v!r}", field=f"{name}.{key}")


def _pos_real(section, key, name, allow_zero=False):
    v = section[key]
    ok = isinstance(v, (int, float)) and not isinstance(v, bool) and (v >= 0 if allow_zero else v > 0)
    if not ok:
        raise ConfigError(f"must be a {'non-negative' if allow_zero else 'positive'} number, got {v!r}",
                          field=f"{name}.{key}")


def _merge(defaults: dict, given) -> dict:
    out = copy.deepcopy(defaults)
    out.update(given or {})
    return out


def _section(raw, key):
    v = raw.get(key)
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError("must be a mapping", field=key)
    return v


def _check_model(model: dict, experiment: str, base_dir):
    if "family" not in model:
        raise ConfigError("missing model family", field="model.family")
    per_d = experiment in ("diffusion-compare", "complexity-scan")
    if per_d and model["family"] in PRODUCT_FAMILIES:
        probe = dict(model, d=model.get("d", 2))
    elif per_d and str(model["family"]).startswith("hier-gauss"):
        probe = dict(model, n=model.get("n", 2))
    else:
        probe = model
    target = model_from_config(probe, base_dir)
    if not per_d and target.dim < 2:
        raise ConfigError(f"proposal scaling needs d >= 2, got d={target.dim}", field="model.d")
    return target


def parse_config(raw: dict, base_dir=None) -> ExperimentConfig:
    """Validate a raw mapping and fill defaults; raises ``ConfigError`` naming the field."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _check_keys(raw, _TOP_KEYS, "")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"must be one of {', '.join(EXPERIMENTS)}, got {exp!r}", field="experiment")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"must be a non-negative integer, got {seed!r}", field="seed")
    threads = raw.get("threads", 1)
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise ConfigError(f"must be an integer >= 1, got {threads!r}", field="threads")
    model = _section(raw, "model")
    if exp == "reproduce-4-1":
        model = _merge({"family": "hier-gauss", "n": 15, "data": {"synth": {"seed": 1}}}, model)
        if model["family"] != "hier-gauss":
            raise ConfigError("reproduce-4-1 uses the hier-gauss family", field="model.family")
    if not model:
        raise ConfigError("missing model section", field="model")
    cfg = ExperimentConfig(exp, seed, model, output=raw.get("output"), threads=threads,
                           base_dir=str(base_dir) if base_dir is not None else None)

    if exp in ("sweep-ell", "reproduce-4-1"):
        s = _section(raw, "sampler")
        _check_keys(s, _SAMPLER_KEYS, "sampler")
        s = _merge(SAMPLER_DEFAULTS, s)
        for k in ("n_outer", "n_inner"):
            _pos_int(s, k, "sampler")
        _pos_int(s, "n_rough", "sampler", 2)
        _pos_int(s, "budget", "sampler", 10)
        if s.get("grid") is not None:
            g = s["grid"]
            if (not isinstance(g, list) or len(g) < 3 or not all(isinstance(v, (int, float)) for v in g)
                    or not all(v > 0 for v in g) or any(b <= a for a, b in zip(g, g[1:]))):
                raise ConfigError("must be a strictly increasing list of >= 3 positive numbers",
                                  field="sampler.grid")
        if s.get("bracket") is not None:
            b = s["bracket"]
            if not isinstance(b, list) or len(b) != 2 or not 0 < b[0] < b[1]:
                raise ConfigError("must be [lo, hi] with 0 < lo < hi", field="sampler.bracket")
        cfg.sampler = s
    elif exp == "audit":
        a = _section(raw, "audit")
        _check_keys(a, _AUDIT_KEYS, "audit")
        a = _merge(AUDIT_DEFAULTS, a)
        _pos_int(a, "n_samples", "audit", 2)
        _pos_int(a, "n_pair_points", "audit")
        if not isinstance(a["q"], float) or not 0.9 <= a["q"] < 1:
            raise ConfigError(f"must lie in [0.9, 1), got {a['q']!r}", field="audit.q")
        _pos_real(a, "alpha", "audit")
        cfg.audit = a
    elif exp == "diffusion-compare":
        if model.get("family") not in PRODUCT_FAMILIES:
            raise ConfigError("diffusion-compare needs a product family", field="model.family")
        s = _section(raw, "diffusion")
        _check_keys(s, _DIFFUSION_KEYS, "diffusion")
        s = _merge(DIFFUSION_DEFAULTS, s)
        _pos_real(s, "ell", "diffusion")
        _pos_real(s, "T", "diffusion", allow_zero=True)
        _pos_real(s, "clamp", "diffusion")
        for k in ("n_paths", "n_boot"):
            _pos_int(s, k, "diffusion")
        _pos_int(s, "n_rough", "diffusion", 2)
        dl = s["d_list"]
        if not isinstance(dl, list) or not dl or not all(isinstance(d, int) and d >= 2 for d in dl):
            raise ConfigError("must be a non-empty list of integers >= 2", field="diffusion.d_list")
        if not isinstance(s["start"], (int, float)) and s["start"] != "stationary":
            raise ConfigError("must be 'stationary' or a number", field="diffusion.start")
        if any(not 0 <= t <= s["T"] for t in s["times"]):
            raise ConfigError("times must lie in [0, T]", field="diffusion.times")
        if s["dt"] is not None and s["T"] > 0 and not 0 < s["dt"] <= s["T"] / 100:
            raise ConfigError("dt must lie in (0, T/100]", field="diffusion.dt")
        cfg.diffusion = s
    elif exp == "complexity-scan":
        s = _section(raw, "scan")
        _check_keys(s, _SCAN_KEYS, "scan")
        s = _merge(SCAN_DEFAULTS, s)
        hier = str(model.get("family", "")).startswith("hier-gauss")
        key = "n_list" if hier else "d_list"
        if key not in s:
            raise ConfigError("missing size list", field=f"scan.{key}")
        if s["metric"] not in ("iact", "w1-threshold"):
            raise ConfigError(f"must be iact or w1-threshold, got {s['metric']!r}", field="scan.metric")
        ks = s[key]
        if not isinstance(ks, list) or len(ks) < 4 or not all(isinstance(k, int) and k >= 2 for k in ks):
            raise ConfigError("needs >= 4 integers >= 2", field=f"scan.{key}")
        for k in ("n_chains", "iter_factor", "n_starts", "n_paths"):
            _pos_int(s, k, "scan")
        _pos_real(s, "eps", "scan")
        if "coord" not in s:
            # the hierarchy's nu coordinate has O(1/sqrt(n)) spread; track a theta instead
            s["coord"] = -1 if hier else 0
        if isinstance(s["coord"], bool) or not isinstance(s["coord"], int):
            raise ConfigError(f"must be an integer, got {s['coord']!r}", field="scan.coord")
        _pos_real(s, "ell", "scan")
        cfg.scan = s

    target = _check_model(model, exp, base_dir)
    if exp == "complexity-scan":
        dims = [_family(cfg)(k).dim for k in cfg.scan.get("n_list") or cfg.scan["d_list"]]
        if max(dims) < 8 * min(dims):
            raise ConfigError(f"dimensions {dims} span less than a factor of 8",
                              field="scan.n_list" if "n_list" in cfg.scan else "scan.d_list")
    cfg.target = target
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{line}{exc.problem}") from None
    return parse_config(raw if raw is not None else {}, base_dir=path.parent)


# --------------------------------------------------------------------------
# experiments


def _family(cfg: ExperimentConfig):
    model = cfg.model
    if model["family"] in PRODUCT_FAMILIES:
        return lambda d: model_from_config(dict(model, d=int(d)), cfg.base_dir)
    return lambda n: model_from_config(dict(model, n=int(n)), cfg.base_dir)


def _sweep_grid(cfg, target):
    s = cfg.sampler
    rough = roughness_stats(target, s["n_rough"], make_rng(cfg.seed, 0))
    if s.get("grid") is not None:
        grid = np.asarray(s["grid"], dtype=float)
    else:
        bracket = s["bracket"] if s.get("bracket") is not None else default_bracket(rough)
        grid = ell_grid(bracket, s["budget"])
    return rough, grid


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_rows(path: Path, rows: list, columns: list):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


CURVE_COLUMNS = ["ell", "esjd", "esjd_se", "accept", "accept_se"]
CONSISTENCY_COLUMNS = ["ell", "esjd", "asymptotic_esjd", "combined_se", "accept", "asymptotic_accept",
                       "abs_diff", "tolerance", "ok"]
W1_COLUMNS = ["t", "w1_plain", "w1_bounded", "se"]


def _run_sweep(cfg, target, out: Path) -> dict:
    s = cfg.sampler
    rough, grid = _sweep_grid(cfg, target)
    curve = sweep_ell(target, s["n_outer"], s["n_inner"], cfg.seed, grid=grid, rough=rough,
                      threads=cfg.threads)
    curve.write_csv(out / "esjd_curve.csv")
    rows = consistency_table(curve, rough)
    _write_rows(out / "consistency.csv", rows, CONSISTENCY_COLUMNS)
    summary = curve.summary()
    summary["upper_bound"] = check_upper_bound(curve).to_dict()
    summary["consistency_ok"] = all(r["ok"] for r in rows)
    summary["target"] = target.name
    _write_json(out / "summary.json", summary)
    return {"esjd_curve.csv": CURVE_COLUMNS, "consistency.csv": CONSISTENCY_COLUMNS, "summary.json": None}


def _run_audit(cfg, target, out: Path) -> dict:
    a = cfg.audit
    report = run_audit_suite(target, n_samples=a["n_samples"], seed=cfg.seed, q=a["q"], alpha=a["alpha"],
                             n_pair_points=a["n_pair_points"])
    (out / "audit.json").write_text(report.to_json() + "\n")
    (out / "audit.txt").write_text(report.table() + "\n")
    return {"audit.json": None, "audit.txt": None}


def _run_diffusion(cfg, target, out: Path) -> dict:
    s = cfg.diffusion
    reports = diffusion_compare(_family(cfg), s["ell"], s["d_list"], T=s["T"], start=s["start"],
                                n_paths=s["n_paths"], times=s["times"], seed=cfg.seed, n_rough=s["n_rough"],
                                dt=s["dt"], clamp=s["clamp"], n_boot=s["n_boot"])
    files = {}
    for r in reports:
        name = f"w1_d{r.d}.csv"
        r.write_csv(out / name)
        files[name] = W1_COLUMNS
    _write_json(out / "summary.json", {"reports": [r.to_dict() for r in reports], "trend": w1_trend(reports)})
    files["summary.json"] = None
    return files


def _run_scan(cfg, target, out: Path) -> dict:
    s = cfg.scan
    ell = float(s["ell"])
    keys = s.get("n_list") or s["d_list"]
    rep = complexity_scan(_family(cfg), keys, ell_rule=lambda d: ell, metric=s["metric"], seed=cfg.seed,
                          n_chains=s["n_chains"], iter_factor=s["iter_factor"], eps=s["eps"],
                          n_starts=s["n_starts"], n_paths=s["n_paths"], coord=s["coord"])
    rep.write_json(out / "complexity.json")
    return {"complexity.json": None}


_RUNNERS = {"sweep-ell": _run_sweep, "reproduce-4-1": _run_sweep, "audit": _run_audit,
            "diffusion-compare": _run_diffusion, "complexity-scan": _run_scan}


def plan(cfg: ExperimentConfig) -> dict:
    """Resolved plan: target, budgets and, for sweeps, the ell grid."""
    target = cfg.target
    info = {"experiment": cfg.experiment, "seed": cfg.seed, "target": target.name, "dim": target.dim,
            "threads": cfg.threads, "config_hash": cfg.config_hash()}
    if cfg.experiment in ("sweep-ell", "reproduce-4-1"):
        _, grid = _sweep_grid(cfg, target)
        s = cfg.sampler
        info.update(ell_grid=[float(g) for g in grid], n_outer=s["n_outer"], n_inner=s["n_inner"],
                    target_evaluations=int(len(grid) * s["n_outer"] * (s["n_inner"] + 1)))
    else:
        key = {"audit": "audit", "diffusion-compare": "diffusion", "complexity-scan": "scan"}[cfg.experiment]
        info.update(getattr(cfg, key))
    return info


def run(cfg: ExperimentConfig, out_dir) -> dict:
    """Run one experiment, write its artifacts and append a manifest record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = _RUNNERS[cfg.experiment](cfg, cfg.target, out)
    record = {
        "experiment": cfg.experiment,
        "config": cfg.resolved(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "versions": {"rwmscale": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "artifacts": {name: {"columns": cols} if cols else {} for name, cols in files.items()},
    }
    with open(out / "manifest.jsonl", "a") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")
    return record


# --------------------------------------------------------------------------
# command line


def _threads_default() -> int:
    v = os.environ.get(THREADS_ENV)
    if v is None:
        return 1
    try:
        n = int(v)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {v!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _load_with_overrides(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("must be non-negative", field="--seed")
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ConfigError("must be >= 1", field="--threads")
        cfg.threads = args.threads
    elif "threads" not in (yaml.safe_load(Path(args.config).read_text()) or {}):
        cfg.threads = _threads_default()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwmscale", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: config 'output' or ./out)")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    v = sub.add_parser("validate", help="check a config and print the resolved plan")
    v.add_argument("config")
    v.add_argument("--seed", type=int)
    v.add_argument("--threads", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_with_overrides(args)
        if args.command == "validate":
            print(json.dumps(plan(cfg), indent=2, sort_keys=True, default=_json_default))
            return 0
        out = args.out or cfg.output or "out"
        if cfg.output and not args.out and not Path(out).is_absolute() and cfg.base_dir:
            out = str(Path(cfg.base_dir) / out)
        record = run(cfg, out)
        print(f"{cfg.experiment}: wrote {', '.join(record['artifacts'])} to {out} "
              f"({record['wall_time_s']} s)")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
