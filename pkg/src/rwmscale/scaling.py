"""ESJD and acceptance-rate estimation as functions of the proposal scale ell.

Two routes are provided and meant to be compared:

* ``estimate_esjd`` - nested Monte Carlo over stationary draws and proposals;
* ``asymptotic_esjd`` / ``asymptotic_accept`` - the high-dimensional limit
  ``2 ell^2 E[Phi(-ell sqrt(I_d(X)) / 2)]`` evaluated on roughness samples.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import ndtr
from scipy.stats import norm

from .errors import ConfigError
from .rwm import make_rng, proposal_sigma
from .targets import TargetModel, roughness


def norm_cdf(x):
    """Standard normal CDF.

    Backed by ``scipy.special.ndtr`` (Cephes: erf/erfc rational
    approximations, relative error about 1e-16 over the double range).
    """
    return ndtr(x)


def _optimal_constants():
    # maximizer of ell^2 Phi(-ell/2): 4 Phi(-ell/2) = ell phi(ell/2)
    ell = brentq(lambda t: 4.0 * ndtr(-t / 2.0) - t * norm.pdf(t / 2.0), 1.0, 4.0, xtol=1e-14)
    return ell, 2.0 * ndtr(-ell / 2.0), 2.0 * ell**2 * ndtr(-ell / 2.0)


#: Optimal scale, acceptance rate and speed for unit roughness
#: (about 2.3812, 0.23381 and 1.3257).
OPT_ELL, OPT_ACCEPT, OPT_SPEED = _optimal_constants()


@dataclass(frozen=True)
class EsjdEstimate:
    ell: float
    esjd_mean: float
    esjd_se: float
    accept_mean: float
    accept_se: float
    n_outer: int
    n_inner: int


@dataclass(frozen=True)
class RoughnessStats:
    samples: np.ndarray
    mean: float
    sd: float
    mean_sqrt: float
    cv: float

    @classmethod
    def from_samples(cls, samples) -> "RoughnessStats":
        s = np.asarray(samples, dtype=float).ravel()
        if s.size == 0:
            raise ConfigError("roughness samples are empty")
        if np.any(s < 0):
            raise ConfigError("roughness samples must be non-negative")
        mean = float(s.mean())
        sd = float(s.std(ddof=1)) if s.size > 1 else 0.0
        return cls(s, mean, sd, float(np.sqrt(s).mean()), sd / mean if mean > 0 else float("inf"))

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def mean_se(self) -> float:
        return self.sd / math.sqrt(self.n)

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "sd": self.sd, "mean_sqrt": self.mean_sqrt,
                "cv": self.cv, "mean_se": self.mean_se}


@dataclass
class EsjdCurve:
    points: list
    ell_hat: float
    accept_at_opt: float
    accept_se_at_opt: float = float("nan")
    esjd_at_opt: float = float("nan")
    boundary: bool = False
    roughness: Optional[RoughnessStats] = field(default=None, repr=False)
    dim: int = 0

    @property
    def ells(self) -> np.ndarray:
        return np.array([p.ell for p in self.points])

    @property
    def esjd(self) -> np.ndarray:
        return np.array([p.esjd_mean for p in self.points])

    @property
    def esjd_se(self) -> np.ndarray:
        return np.array([p.esjd_se for p in self.points])

    @property
    def accept(self) -> np.ndarray:
        return np.array([p.accept_mean for p in self.points])

    @property
    def accept_se(self) -> np.ndarray:
        return np.array([p.accept_se for p in self.points])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "esjd", "esjd_se", "accept", "accept_se"])
            for p in self.points:
                w.writerow([repr(p.ell), repr(p.esjd_mean), repr(p.esjd_se),
                            repr(p.accept_mean), repr(p.accept_se)])

    def summary(self) -> dict:
        out = {
            "ell_hat": self.ell_hat,
            "accept_at_opt": self.accept_at_opt,
            "accept_se_at_opt": self.accept_se_at_opt,
            "esjd_at_opt": self.esjd_at_opt,
            "boundary": self.boundary,
            "dim": self.dim,
        }
        if self.roughness is not None:
            ms = self.roughness.mean_sqrt
            out["roughness"] = self.roughness.to_dict()
            out["theoretical_ell_hat"] = OPT_ELL / ms
            out["theoretical_speed"] = OPT_SPEED / ms**2
        return out

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


# --------------------------------------------------------------------------


def estimate_esjd(target: TargetModel, ell: float, n_outer: int, n_inner: int, rng,
                  points: Optional[np.ndarray] = None, chunk: int = 2_000_000) -> EsjdEstimate:
    """Nested Monte-Carlo estimate of ESJD and the expected acceptance rate.

    The outer loop takes ``n_outer`` stationary draws (or the supplied
    ``points``); the inner loop averages ``|Y - X|^2 min(1, pi(Y)/pi(X))``
    and ``min(1, pi(Y)/pi(X))`` over ``n_inner`` proposals per draw.
    Standard errors come from the spread of the per-draw averages.
    """
    if n_outer < 1 or n_inner < 1:
        raise ConfigError(f"n_outer and n_inner must be >= 1, got {n_outer}, {n_inner}")
    gen = make_rng(rng)
    d = target.dim
    sigma = proposal_sigma(ell, d)
    X = target.stationary_sample(gen, n_outer) if points is None else np.asarray(points, float)
    if X.shape != (n_outer, d):
        raise ConfigError(f"points must have shape ({n_outer}, {d})")
    lp_x = target.log_density(X)
    per_jump = np.empty(n_outer)
    per_acc = np.empty(n_outer)
    rows = max(1, chunk // (n_inner * d))
    for s in range(0, n_outer, rows):
        e = min(n_outer, s + rows)
        z = gen.standard_normal((e - s, n_inner, d))
        jump = sigma**2 * np.einsum("oid,oid->oi", z, z)
        lp_y = target.log_density(X[s:e, None, :] + sigma * z)
        alpha = np.exp(np.minimum(0.0, lp_y - lp_x[s:e, None]))
        per_jump[s:e] = np.mean(jump * alpha, axis=1)
        per_acc[s:e] = np.mean(alpha, axis=1)
    if n_outer > 1:
        jse = float(per_jump.std(ddof=1) / math.sqrt(n_outer))
        ase = float(per_acc.std(ddof=1) / math.sqrt(n_outer))
    else:
        jse = ase = float("inf")
    return EsjdEstimate(float(ell), float(per_jump.mean()), jse, float(per_acc.mean()), ase,
                        int(n_outer), int(n_inner))


def _as_samples(rough) -> np.ndarray:
    if isinstance(rough, RoughnessStats):
        return rough.samples
    return np.atleast_1d(np.asarray(rough, dtype=float))


def asymptotic_accept(ell, rough) -> float:
    """Limiting acceptance rate ``2 mean(Phi(-ell sqrt(I) / 2))`` over roughness samples."""
    s = _as_samples(rough)
    return float(2.0 * np.mean(norm_cdf(-0.5 * ell * np.sqrt(s))))


def asymptotic_accept_se(ell, rough) -> float:
    s = _as_samples(rough)
    if s.size < 2:
        return 0.0
    v = 2.0 * norm_cdf(-0.5 * ell * np.sqrt(s))
    return float(v.std(ddof=1) / math.sqrt(s.size))


def asymptotic_esjd(ell, d: Optional[int], rough) -> float:
    """``d/(d-1) * ell^2 * a(ell)``; ``d=None`` drops the finite-d factor."""
    factor = 1.0 if d is None else d / (d - 1.0)
    return factor * ell**2 * asymptotic_accept(ell, rough)


def roughness_stats(target: TargetModel, n_samples: int, rng) -> RoughnessStats:
    """Roughness ``I_d`` at ``n_samples`` stationary draws."""
    if n_samples < 2:
        raise ConfigError(f"n_samples must be >= 2, got {n_samples}")
    X = target.stationary_sample(make_rng(rng), n_samples)
    return RoughnessStats.from_samples(roughness(target, X))


def default_bracket(rough: RoughnessStats, lo: float = 0.2, hi: float = 6.0) -> tuple:
    """Scan bracket ``[lo / sqrt(I_hi), hi / sqrt(I_lo)]`` from roughness quantiles.

    ``I_lo`` and ``I_hi`` are the 5% and 95% roughness quantiles, so for a
    concentrated roughness this is ``[lo, hi] / sqrt(mean I)`` up to the
    spread, while a bimodal roughness widens the bracket to cover both modes.
    """
    q_lo, q_hi = np.quantile(rough.samples, [0.05, 0.95])
    q_lo = max(q_lo, 1e-12)
    return lo / math.sqrt(q_hi), hi / math.sqrt(q_lo)


def ell_grid(bracket, budget: int) -> np.ndarray:
    lo, hi = bracket
    if not 0 < lo < hi:
        raise ConfigError(f"bracket must satisfy 0 < lo < hi, got {bracket}")
    if budget < 10:
        raise ConfigError(f"budget must be >= 10, got {budget}")
    return np.geomspace(lo, hi, int(budget))


@dataclass(frozen=True)
class ArgmaxResult:
    ell_hat: float
    value: float
    boundary: bool
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)


def refine_argmax(grid, values, ses=None, window: int = 5) -> ArgmaxResult:
    """Weighted quadratic fit around the best grid point.

    Fits ``value ~ ell`` with a parabola over ``window`` consecutive grid
    points centred on the raw argmax (weights ``1/se``).  An argmax on the
    first or last grid point is flagged as ``boundary``; so is a fit that is
    not concave or whose vertex leaves the window.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    m = int(np.argmax(values))
    boundary = m == 0 or m == len(grid) - 1
    if len(grid) < 3 or boundary:
        return ArgmaxResult(float(grid[m]), float(values[m]), True, grid, values)
    half = window // 2
    lo = max(0, m - half)
    hi = min(len(grid), lo + window)
    lo = max(0, hi - window)
    x, y = grid[lo:hi], values[lo:hi]
    w = None
    if ses is not None:
        s = np.asarray(ses, dtype=float)[lo:hi]
        if np.all(np.isfinite(s)) and np.all(s > 0):
            w = 1.0 / s
    c2, c1, c0 = np.polyfit(x, y, 2, w=w)
    if c2 >= 0:
        return ArgmaxResult(float(grid[m]), float(values[m]), True, grid, values)
    vertex = -c1 / (2.0 * c2)
    if not x[0] <= vertex <= x[-1]:
        return ArgmaxResult(float(grid[m]), float(values[m]), True, grid, values)
    return ArgmaxResult(float(vertex), float(np.polyval([c2, c1, c0], vertex)), False, grid, values)


def optimize_ell(evaluator: Callable, bracket, budget: int = 24) -> ArgmaxResult:
    """Maximize ``evaluator(ell) -> value`` or ``(value, se)`` over ``bracket``.

    Grid scan with ``budget`` geometrically spaced points, then a local
    quadratic refinement.  When every returned ``se`` is zero (deterministic
    evaluator) the refinement is polished by a bounded scalar search between
    the grid neighbours of the best point.
    """
    grid = ell_grid(bracket, budget)
    vals, ses = [], []
    for ell in grid:
        r = evaluator(float(ell))
        v, s = (r if isinstance(r, tuple) else (r, 0.0))
        vals.append(float(v))
        ses.append(float(s))
    vals, ses = np.array(vals), np.array(ses)
    res = refine_argmax(grid, vals, ses)
    if res.boundary or np.any(ses > 0):
        return res
    m = int(np.argmax(vals))

    def neg(t):
        r = evaluator(float(t))
        return -(r[0] if isinstance(r, tuple) else r)

    opt = minimize_scalar(neg, bounds=(grid[m - 1], grid[m + 1]), method="bounded",
                          options={"xatol": 1e-10 * grid[m]})
    return ArgmaxResult(float(opt.x), float(-opt.fun), False, grid, vals)


def _interp_log(ell, grid, y):
    return float(np.interp(math.log(ell), np.log(grid), y))


def sweep_ell(target: TargetModel, n_outer: int, n_inner: int, seed: int = 0, *,
              grid: Optional[Sequence[float]] = None, bracket=None, budget: int = 24,
              rough: Optional[RoughnessStats] = None, n_rough: int = 2000,
              threads: int = 1) -> EsjdCurve:
    """Estimate ESJD on an ell grid and locate its maximizer.

    Grid point ``k`` draws from the generator keyed ``(seed, 1, k)`` and the
    roughness sample from ``(seed, 0)``, so results do not depend on
    ``threads``.  Without an explicit ``grid`` or ``bracket`` the bracket
    comes from :func:`default_bracket`.
    """
    if rough is None:
        rough = roughness_stats(target, n_rough, make_rng(seed, 0))
    if grid is None:
        grid = ell_grid(bracket if bracket is not None else default_bracket(rough), budget)
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ConfigError("ell grid must be strictly increasing")

    def work(k):
        return estimate_esjd(target, float(grid[k]), n_outer, n_inner, make_rng(seed, 1, k))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(work, range(len(grid))))
    else:
        points = [work(k) for k in range(len(grid))]
    return curve_from_points(points, rough=rough, dim=target.dim)


def curve_from_points(points, rough=None, dim=0) -> EsjdCurve:
    grid = np.array([p.ell for p in points])
    esjd = np.array([p.esjd_mean for p in points])
    if len(points) < 3:
        m = int(np.argmax(esjd))
        return EsjdCurve(list(points), float(grid[m]), points[m].accept_mean, points[m].accept_se,
                         float(esjd[m]), True, rough, dim)
    res = refine_argmax(grid, esjd, [p.esjd_se for p in points])
    acc = np.array([p.accept_mean for p in points])
    acc_se = np.array([p.accept_se for p in points])
    return EsjdCurve(
        points=list(points), ell_hat=res.ell_hat,
        accept_at_opt=_interp_log(res.ell_hat, grid, acc),
        accept_se_at_opt=_interp_log(res.ell_hat, grid, acc_se),
        esjd_at_opt=res.value, boundary=res.boundary, roughness=rough, dim=dim,
    )


@dataclass(frozen=True)
class UpperBoundReport:
    accept_at_opt: float
    bound: float
    slack: float
    holds: bool
    sufficient_scan: bool
    boundary: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_upper_bound(curve: EsjdCurve, discretization: float = 0.005) -> UpperBoundReport:
    """Compare the acceptance rate at the ESJD optimum with ``OPT_ACCEPT``.

    Slack is twice the acceptance standard error at the optimum plus
    ``discretization``.  Curves with fewer than three grid points, or with
    the optimum on the bracket boundary, are reported as insufficient.
    """
    se = curve.accept_se_at_opt if np.isfinite(curve.accept_se_at_opt) else 0.0
    slack = 2.0 * se + discretization
    sufficient = len(curve.points) >= 3 and not curve.boundary
    holds = sufficient and curve.accept_at_opt <= OPT_ACCEPT + slack
    return UpperBoundReport(curve.accept_at_opt, OPT_ACCEPT, slack, bool(holds), sufficient,
                            curve.boundary)


def consistency_table(curve: EsjdCurve, rough: RoughnessStats, rel: float = 0.05) -> list:
    """Per-grid-point comparison of the nested estimate with the asymptotic ESJD.

    A point agrees when ``|est - asym| <= 3 * combined_se + rel * asym``;
    ``combined_se`` adds the estimator's and the roughness-sample errors in
    quadrature.
    """
    d = curve.dim
    rows = []
    for p in curve.points:
        asym = asymptotic_esjd(p.ell, d, rough)
        asym_se = d / (d - 1.0) * p.ell**2 * asymptotic_accept_se(p.ell, rough)
        se = math.hypot(p.esjd_se, asym_se)
        diff = abs(p.esjd_mean - asym)
        rows.append({
            "ell": p.ell, "esjd": p.esjd_mean, "asymptotic_esjd": asym, "combined_se": se,
            "accept": p.accept_mean, "asymptotic_accept": asymptotic_accept(p.ell, rough),
            "abs_diff": diff, "tolerance": 3.0 * se + rel * asym, "ok": diff <= 3.0 * se + rel * asym,
        })
    return rows
