"""Langevin diffusion limit, sped-up chain paths and the complexity scan.

The first coordinate of an RWM chain, run for ``floor(d t)`` iterations, is
compared with the one-dimensional SDE

    dU = sqrt(h) dB + (h / 2) (log f)'(U) dt,    h = 2 ell^2 Phi(-ell sqrt(I) / 2),

through 1-Wasserstein distances between the two ensembles' marginals on a
common time grid.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, NumericalError
from .rwm import ChainTrace, EnsembleTrace, make_rng, run_chains
from .scaling import norm_cdf, roughness_stats
from .targets import TargetModel

SCORE_WARN = 1e6


def speed_measure(ell: float, I_bar: float) -> float:
    """Time-change rate ``2 ell^2 Phi(-ell sqrt(I_bar) / 2)``."""
    if not ell > 0 or not I_bar > 0:
        raise ConfigError(f"speed_measure needs ell > 0 and I_bar > 0, got {ell}, {I_bar}")
    return float(2.0 * ell**2 * norm_cdf(-ell * math.sqrt(I_bar) / 2.0))


@dataclass
class PathEnsemble:
    times: np.ndarray
    paths: np.ndarray  # (n_paths, n_times)
    origin: str
    start: object = "stationary"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ConfigError("times must be non-negative and strictly increasing")
        if not np.all(np.isfinite(self.paths)):
            raise NumericalError(f"{self.origin} ensemble has non-finite values")

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    def at(self, t: float) -> np.ndarray:
        k = int(np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))[0])
        return self.paths[:, k]


def _as_times(times) -> np.ndarray:
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(t < 0):
        raise ConfigError("times must be non-negative")
    return t


def simulate_sde(score: Callable, h: float, T: float, dt: Optional[float] = None, n_paths: int = 1000,
                 start=0.0, rng=0, times=None) -> PathEnsemble:
    """Euler-Maruyama paths of ``dU = sqrt(h) dB + h score(U) / 2 dt``.

    Args:
        score: vectorized ``(log f)'``.
        h: speed measure.
        T: horizon.
        dt: step; defaults to ``min(1e-3, 0.01 / h)`` and must be ``<= T / 100``.
        start: a scalar or an array of ``n_paths`` starting values.
        times: output grid in ``[0, T]`` (default ``T`` in 100 steps).

    The step is shrunk so that ``T`` is an integer number of steps; each
    grid time reads the nearest completed step.
    """
    if not h > 0:
        raise ConfigError(f"h must be positive, got {h}")
    if T < 0:
        raise ConfigError(f"T must be non-negative, got {T}")
    grid = np.linspace(0.0, T, 101) if times is None else _as_times(times)
    if T == 0:
        grid = grid[:1]
    if grid[-1] > T + 1e-12:
        raise ConfigError("grid extends past T")
    gen = make_rng(rng)
    u = np.broadcast_to(np.asarray(start, dtype=float), (n_paths,)).copy()
    out = np.empty((n_paths, grid.size))
    out[:, 0] = u
    if T == 0:
        return PathEnsemble(grid, out, "sde", start, {"h": h, "dt": 0.0, "n_steps": 0})
    if dt is None:
        dt = min(1e-3, 0.01 / h)
    if dt > T / 100 + 1e-15:
        raise ConfigError(f"dt={dt} exceeds T/100={T / 100}")
    n_steps = int(math.ceil(T / dt - 1e-9))
    dt = T / n_steps
    record = np.rint(grid / dt).astype(int)
    sd = math.sqrt(h * dt)
    slot = 0
    while slot < grid.size and record[slot] == 0:
        out[:, slot] = u
        slot += 1
    warned = False
    for k in range(1, n_steps + 1):
        s = score(u)
        if not warned and np.max(np.abs(s)) > SCORE_WARN:
            warnings.warn(f"|score| exceeds {SCORE_WARN:g} at step {k}", RuntimeWarning)
            warned = True
        u = u + 0.5 * h * s * dt + sd * gen.standard_normal(n_paths)
        if not np.all(np.isfinite(u)):
            bad = int(np.flatnonzero(~np.isfinite(u))[0])
            raise NumericalError(f"SDE path {bad} became non-finite at step {k} (t={k * dt:.6g})")
        while slot < grid.size and record[slot] == k:
            out[:, slot] = u
            slot += 1
    return PathEnsemble(grid, out, "sde", start, {"h": h, "dt": dt, "n_steps": n_steps})


def sped_index(d: int, t) -> np.ndarray:
    """Iteration ``floor(d t)``, rounded first to absorb float noise in ``d t``."""
    return np.floor(np.round(d * np.asarray(t, dtype=float), 9)).astype(int)


def extract_sped_path(trace, d: int, T: float, grid) -> PathEnsemble:
    """``U(t) = X_1(floor(d t))`` from a ``ChainTrace`` or ``EnsembleTrace``."""
    grid = _as_times(grid)
    if isinstance(trace, EnsembleTrace):
        paths = trace.first_coord_paths
    elif isinstance(trace, ChainTrace):
        if trace.first_coord_path is None:
            raise ConfigError("trace has no first-coordinate path")
        paths = trace.first_coord_path[None, :]
    else:
        paths = np.atleast_2d(np.asarray(trace, dtype=float))
    need = int(math.ceil(d * T)) + 1
    if paths.shape[1] < need:
        raise ConfigError(f"path has {paths.shape[1]} entries, needs {need} for T={T}, d={d}")
    idx = sped_index(d, grid)
    return PathEnsemble(grid, paths[:, idx], "chain", info={"d": d})


# --------------------------------------------------------------------------
# distances


def _w1_sorted(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = a.size, b.size
    if na == nb:
        return float(np.mean(np.abs(a - b)))
    # exact quantile coupling: integrate |F_a^-1 - F_b^-1| over merged breakpoints
    u = np.union1d(np.arange(1, na + 1) / na, np.arange(1, nb + 1) / nb)
    lo = np.concatenate(([0.0], u[:-1]))
    mid = 0.5 * (lo + u)
    qa = a[np.minimum((mid * na).astype(int), na - 1)]
    qb = b[np.minimum((mid * nb).astype(int), nb - 1)]
    return float(np.sum((u - lo) * np.abs(qa - qb)))


def w1_distance(a, b, clamp: float = 10.0) -> tuple:
    """Plain and clamped 1-Wasserstein distance between two 1-d samples."""
    a = np.sort(np.ravel(np.asarray(a, dtype=float)))
    b = np.sort(np.ravel(np.asarray(b, dtype=float)))
    if a.size == 0 or b.size == 0:
        raise ConfigError("w1_distance needs non-empty samples")
    plain = _w1_sorted(a, b)
    bounded = _w1_sorted(np.clip(a, -clamp, clamp), np.clip(b, -clamp, clamp))
    return plain, bounded


def _bootstrap_se(a, b, rng, n_boot: int) -> float:
    if n_boot < 2:
        return float("nan")
    vals = np.empty(n_boot)
    for r in range(n_boot):
        vals[r] = w1_distance(rng.choice(a, a.size), rng.choice(b, b.size))[0]
    return float(vals.std(ddof=1))


@dataclass
class W1Report:
    d: int
    times: np.ndarray
    plain: np.ndarray
    bounded: np.ndarray
    se: np.ndarray
    clamp_bound: float
    h: float
    accept_rate: float = float("nan")

    @property
    def max_distance(self) -> float:
        return float(np.max(self.plain))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "w1_plain", "w1_bounded", "se"])
            for row in zip(self.times, self.plain, self.bounded, self.se):
                w.writerow([repr(float(v)) for v in row])

    def to_dict(self) -> dict:
        return {"d": self.d, "times": self.times.tolist(), "plain": self.plain.tolist(),
                "bounded": self.bounded.tolist(), "se": self.se.tolist(),
                "max_distance": self.max_distance, "clamp_bound": self.clamp_bound, "h": self.h,
                "accept_rate": self.accept_rate}


def compare_ensembles(chain: PathEnsemble, sde: PathEnsemble, d: int, h: float, clamp: float = 10.0,
                      rng=0, n_boot: int = 100) -> W1Report:
    gen = make_rng(rng)
    plain, bounded, se = [], [], []
    for k in range(chain.times.size):
        a, b = chain.paths[:, k], sde.paths[:, k]
        p, q = w1_distance(a, b, clamp)
        plain.append(p)
        bounded.append(q)
        se.append(_bootstrap_se(a, b, gen, n_boot) if p > 0 else 0.0)
    return W1Report(d, chain.times.copy(), np.array(plain), np.array(bounded), np.array(se), clamp, h)


def _initial_points(target: TargetModel, start, n_paths, rng) -> np.ndarray:
    x = target.stationary_sample(rng, n_paths)
    if isinstance(start, str):
        if start != "stationary":
            raise ConfigError(f"unknown start {start!r}", field="start")
    else:
        x[:, 0] = float(start)
    return x


def diffusion_compare(family: Callable[[int], TargetModel], ell: float, d_list: Sequence[int],
                      T: float = 1.0, start="stationary", n_paths: int = 5000,
                      times: Optional[Sequence[float]] = None, seed: int = 0, n_rough: int = 2000,
                      dt: Optional[float] = None, clamp: float = 10.0, n_boot: int = 100) -> list:
    """Chain-vs-SDE marginal distances for every dimension in ``d_list``.

    ``start`` is ``"stationary"`` or a value for the first coordinate; the
    remaining coordinates are drawn from the target.  The SDE ensemble starts
    at the chains' first coordinates, so both agree exactly at ``t = 0``.
    """
    grid = np.array([0.0, 0.25 * T, 0.5 * T, T]) if times is None else _as_times(times)
    if grid[0] != 0:
        grid = np.concatenate(([0.0], grid))
    reports = []
    for d in d_list:
        target = family(int(d))
        if target.marginal_score is None:
            raise ConfigError(f"target {target.name!r} has no first-coordinate score", field="model")
        rough = roughness_stats(target, n_rough, make_rng(seed, int(d), 0))
        h = speed_measure(ell, rough.mean)
        x0 = _initial_points(target, start, n_paths, make_rng(seed, int(d), 1))
        n_iter = int(math.ceil(d * T))
        ens = run_chains(target, ell, n_iter, x0, make_rng(seed, int(d), 2))
        chain = extract_sped_path(ens, int(d), T, grid)
        sde = simulate_sde(target.marginal_score, h, T, dt, n_paths, x0[:, 0], make_rng(seed, int(d), 3),
                           grid)
        rep = compare_ensembles(chain, sde, int(d), h, clamp, make_rng(seed, int(d), 4), n_boot)
        rep.accept_rate = ens.acceptance_rate
        reports.append(rep)
    return reports


def w1_trend(reports: Sequence[W1Report], slack: float = 0.02) -> dict:
    """Whether per-time distances are non-increasing in d, up to ``slack``."""
    ordered = sorted(reports, key=lambda r: r.d)
    worst = 0.0
    for lo, hi in zip(ordered, ordered[1:]):
        worst = max(worst, float(np.max(hi.plain - lo.plain)))
    return {"non_increasing": worst <= slack, "max_increase": worst, "slack": slack,
            "d": [r.d for r in ordered]}


# --------------------------------------------------------------------------
# autocorrelation time and the complexity scan


@dataclass
class IactEstimate:
    tau: float
    window: int
    truncation: int
    converged: bool
    n_chains: int
    n_iter: int


def _autocov(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Autocovariance averaged over chains (rows), centred at the pooled mean."""
    x = np.atleast_2d(x)
    n = x.shape[1]
    xc = x - x.mean()
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(xc, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, : max_lag + 1] / n
    return acov.mean(axis=0)


def iact(x, max_lag: Optional[int] = None) -> IactEstimate:
    """Integrated autocorrelation time by initial-positive-sequence truncation.

    ``x`` is one chain or an array of chains (rows).  Pair sums
    ``gamma_2m + gamma_2m+1`` are accumulated until the first non-positive
    one; reaching the window end marks the estimate non-convergent.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    if n < 4:
        raise ConfigError(f"need at least 4 iterations, got {n}")
    window = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    g = _autocov(x, window)
    if not g[0] > 0:
        return IactEstimate(float("nan"), window, 0, False, x.shape[0], n)
    n_pairs = (window + 1) // 2
    pairs = g[0 : 2 * n_pairs : 2] + g[1 : 2 * n_pairs : 2]
    nonpos = np.flatnonzero(pairs <= 0)
    m = int(nonpos[0]) if nonpos.size else n_pairs
    tau = (-g[0] + 2.0 * pairs[:m].sum()) / g[0]
    return IactEstimate(float(tau), window, 2 * m, bool(nonpos.size), x.shape[0], n)


@dataclass
class ScanReport:
    metric: str
    d: list
    values: list
    flags: list
    slope: float
    slope_ci: tuple
    intercept: float
    details: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"metric": self.metric, "d": self.d,
                ("tau" if self.metric == "iact" else "iterations"): self.values,
                "flags": self.flags, "slope": self.slope, "slope_ci": list(self.slope_ci),
                "intercept": self.intercept, "details": self.details}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def loglog_fit(d, values, level: float = 0.95) -> tuple:
    """OLS slope of ``log values`` on ``log d`` with a t-interval."""
    x, y = np.log(np.asarray(d, dtype=float)), np.log(np.asarray(values, dtype=float))
    res = stats.linregress(x, y)
    df = x.size - 2
    half = stats.t.ppf(0.5 + level / 2, df) * res.stderr if df > 0 else float("inf")
    return float(res.slope), (float(res.slope - half), float(res.slope + half)), float(res.intercept)


def _check_d_list(d_list):
    d_list = [int(d) for d in d_list]
    if len(d_list) < 4 or max(d_list) < 8 * min(d_list):
        raise ConfigError("d_list needs >= 4 entries spanning a factor >= 8", field="d_list")
    return d_list


def complexity_scan(family: Callable[[int], TargetModel], d_list: Sequence[int],
                    ell_rule: Callable[[int], float] = lambda d: 2.38, metric: str = "iact",
                    seed: int = 0, n_chains: int = 64, iter_factor: int = 200,
                    eps: float = 0.1, n_starts: int = 4, n_paths: int = 500, n_ref: int = 20_000,
                    clamp: float = 10.0, coord: int = 0) -> ScanReport:
    """Mixing cost of one coordinate as a function of dimension.

    ``iact`` runs ``n_chains`` stationary chains of ``iter_factor * d``
    iterations and estimates the IACT of ``X_1``.  ``w1-threshold`` runs
    ``n_paths`` chains from each of ``n_starts`` points drawn from the target
    and records the first iteration at which the clamped W1 distance of the
    ensemble's first coordinate to a stationary reference drops below
    ``eps``.  ``coord`` selects the tracked coordinate (negative values
    count from the end, e.g. ``-1`` for the last one).  Both fit a log-log slope against the target dimension, so
    ``family`` may be keyed by any size parameter (``d_list`` then lists
    keys, and the span precondition applies to the resulting dimensions).
    """
    if metric not in ("iact", "w1-threshold"):
        raise ConfigError(f"unknown metric {metric!r}", field="metric")
    if len(d_list) < 4:
        raise ConfigError("d_list needs >= 4 entries spanning a factor >= 8", field="d_list")
    targets = [family(int(k)) for k in d_list]
    dims = _check_d_list([t.dim for t in targets])
    values, flags, details = [], [], []
    for d, target in zip(dims, targets):
        ell = float(ell_rule(d))
        c = coord % d
        n_iter = int(iter_factor * d)
        if metric == "iact":
            x0 = target.stationary_sample(make_rng(seed, d, 0), n_chains)
            ens = run_chains(target, ell, n_iter, x0, make_rng(seed, d, 1), coord=c)
            est = iact(ens.first_coord_paths)
            values.append(est.tau)
            flags.append("" if est.converged else "non-convergent")
            details.append({**asdict(est), "d": d, "ell": ell, "coord": c,
                            "accept_rate": ens.acceptance_rate})
        else:
            ref = target.stationary_sample(make_rng(seed, d, 0), n_ref)[:, c]
            hits = []
            for s in range(n_starts):
                x = target.stationary_sample(make_rng(seed, d, 1, s))
                ens = run_chains(target, ell, n_iter, np.tile(x, (n_paths, 1)), make_rng(seed, d, 2, s),
                                 coord=c)
                hit = next((k for k in range(n_iter + 1)
                            if w1_distance(ens.first_coord_paths[:, k], ref, clamp)[1] < eps), None)
                hits.append(hit)
            ok = [k for k in hits if k is not None]
            values.append(float(np.mean(ok)) if ok else float("nan"))
            flags.append("" if len(ok) == len(hits) else "threshold-not-reached")
            details.append({"d": d, "ell": ell, "coord": c, "hits": hits, "eps": eps})
    good = [i for i, v in enumerate(values) if np.isfinite(v) and v > 0]
    if len(good) >= 3:
        slope, ci, icpt = loglog_fit([dims[i] for i in good], [values[i] for i in good])
    else:
        slope, ci, icpt = float("nan"), (float("nan"), float("nan")), float("nan")
    return ScanReport(metric, dims, values, flags, slope, ci, icpt, details)
