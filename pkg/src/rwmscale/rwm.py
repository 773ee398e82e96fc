"""Random-walk Metropolis with proposal variance ``ell^2 / (d - 1)``."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .targets import TargetModel

_BLOCK = 4096


def make_rng(seed, *key) -> np.random.Generator:
    """Generator keyed by ``(seed, *key)``; independent of creation order."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in key]]))


def proposal_sigma(ell: float, d: int) -> float:
    """Per-coordinate proposal standard deviation ``ell / sqrt(d - 1)``."""
    if d < 2:
        raise ConfigError(f"proposal scaling needs d >= 2, got d={d}")
    if not ell > 0:
        raise ConfigError(f"ell must be positive, got {ell}")
    return ell / math.sqrt(d - 1)


def accept_prob(delta_log_pi) -> np.ndarray:
    """``min(1, exp(delta))`` evaluated in log space (``-inf`` gives 0)."""
    return np.exp(np.minimum(0.0, delta_log_pi))


def _accept(log_u, delta):
    # u in (0, 1]; P(log u <= delta) = min(1, e^delta); NaN rejects
    return log_u <= delta


@dataclass(frozen=True)
class ChainState:
    x: np.ndarray
    log_pi: float

    @classmethod
    def at(cls, target: TargetModel, x) -> "ChainState":
        x = np.array(x, dtype=float)
        lp = float(target.log_density(x))
        if not lp > -np.inf:
            raise ConfigError("initial point has log density -inf")
        return cls(x, lp)


def step(state: ChainState, target: TargetModel, ell: float, rng) -> tuple:
    """One RWM transition; returns ``(new_state, accepted, jump_sq)``."""
    sigma = proposal_sigma(ell, target.dim)
    z = rng.standard_normal(target.dim)
    y = state.x + sigma * z
    lp_y = float(target.log_density(y))
    log_u = math.log1p(-rng.random())
    if _accept(log_u, lp_y - state.log_pi):
        return ChainState(y, lp_y), True, float(np.sum((y - state.x) ** 2))
    return state, False, 0.0


@dataclass
class ChainTrace:
    accept_count: int
    step_count: int
    sum_jump_sq: float
    first_coord_path: Optional[np.ndarray] = None
    thinned_states: Optional[np.ndarray] = None
    seed: Optional[int] = None
    ell: float = float("nan")
    dim: int = 0
    accepted: Optional[np.ndarray] = None
    final_state: Optional[ChainState] = field(default=None, repr=False)

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.step_count

    @property
    def mean_jump_sq(self) -> float:
        return self.sum_jump_sq / self.step_count

    def summary(self) -> dict:
        return {
            "acceptance_rate": self.acceptance_rate,
            "mean_jump_sq": self.mean_jump_sq,
            "step_count": self.step_count,
            "ell": self.ell,
            "dim": self.dim,
            "seed": self.seed,
        }

    def write_csv(self, path):
        """Write ``iteration, x1, accepted`` rows (requires a recorded path)."""
        if self.first_coord_path is None:
            raise ConfigError("trace has no first-coordinate path")
        acc = self.accepted
        if acc is None:
            acc = np.zeros(len(self.first_coord_path), dtype=int)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "x1", "accepted"])
            for t, (x1, a) in enumerate(zip(self.first_coord_path, acc)):
                w.writerow([t, repr(float(x1)), int(a)])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def run_chain(target: TargetModel, ell: float, n_iter: int, rng=0, *, init="stationary",
              record_path=False, thin=None, record_accepts=False) -> ChainTrace:
    """Run one RWM chain for ``n_iter`` steps.

    ``rng`` is a Generator or an integer seed (recorded in the trace).
    ``init`` is ``"stationary"`` (one draw from the target's sampler) or a
    point.  With ``record_path`` the first coordinate is stored at every
    iteration (``n_iter + 1`` values); ``thin`` stores every ``thin``-th state.
    """
    if n_iter < 1:
        raise ConfigError(f"n_iter must be >= 1, got {n_iter}")
    seed = None if isinstance(rng, np.random.Generator) else int(rng)
    gen = make_rng(rng)
    d = target.dim
    sigma = proposal_sigma(ell, d)
    x0 = target.stationary_sample(gen) if isinstance(init, str) and init == "stationary" else init
    state = ChainState.at(target, x0)
    x, lp = state.x.copy(), state.log_pi

    path = np.empty(n_iter + 1) if record_path else None
    accepts = np.zeros(n_iter + 1, dtype=np.int8) if record_accepts else None
    kept = [] if thin else None
    if path is not None:
        path[0] = x[0]
    n_acc = 0
    jump_total = 0.0
    t = 0
    while t < n_iter:
        m = min(_BLOCK, n_iter - t)
        z = sigma * gen.standard_normal((m, d))
        log_u = np.log1p(-gen.random(m))
        for k in range(m):
            y = x + z[k]
            lp_y = float(target.log_density(y))
            if _accept(log_u[k], lp_y - lp):
                x, lp = y, lp_y
                n_acc += 1
                jump_total += float(z[k] @ z[k])
                if accepts is not None:
                    accepts[t + k + 1] = 1
            if path is not None:
                path[t + k + 1] = x[0]
            if kept is not None and (t + k + 1) % thin == 0:
                kept.append(x.copy())
        t += m
    return ChainTrace(
        accept_count=n_acc, step_count=n_iter, sum_jump_sq=jump_total, first_coord_path=path,
        thinned_states=np.array(kept) if kept is not None else None, seed=seed, ell=ell, dim=d,
        accepted=accepts, final_state=ChainState(x, lp),
    )


@dataclass
class EnsembleTrace:
    """Parallel chains run in lockstep: paths of the first coordinate."""

    first_coord_paths: np.ndarray  # (n_chains, n_iter + 1)
    accept_counts: np.ndarray
    step_count: int
    ell: float
    dim: int

    @property
    def acceptance_rate(self) -> float:
        if self.step_count == 0:
            return float("nan")
        return float(self.accept_counts.sum() / (self.step_count * len(self.accept_counts)))


def run_chains(target: TargetModel, ell: float, n_iter: int, init: np.ndarray, rng,
               coord: int = 0) -> EnsembleTrace:
    """Run ``len(init)`` independent RWM chains vectorized over chains.

    All chains share one generator; results are reproducible for a fixed
    generator state and chain count.  The path of coordinate ``coord`` is
    recorded (the first coordinate by default).
    """
    if n_iter < 0:
        raise ConfigError(f"n_iter must be >= 0, got {n_iter}")
    gen = make_rng(rng)
    x = np.array(init, dtype=float)
    if x.ndim != 2 or x.shape[1] != target.dim:
        raise ConfigError(f"init must have shape (n_chains, {target.dim}), got {x.shape}")
    sigma = proposal_sigma(ell, target.dim)
    lp = target.log_density(x)
    if not np.all(lp > -np.inf):
        raise ConfigError("some initial points have log density -inf")
    paths = np.empty((x.shape[0], n_iter + 1))
    paths[:, 0] = x[:, coord]
    acc = np.zeros(x.shape[0], dtype=np.int64)
    for t in range(n_iter):
        y = x + sigma * gen.standard_normal(x.shape)
        lp_y = target.log_density(y)
        ok = _accept(np.log1p(-gen.random(x.shape[0])), lp_y - lp)
        x[ok] = y[ok]
        lp = np.where(ok, lp_y, lp)
        acc += ok
        paths[:, t + 1] = x[:, coord]
    return EnsembleTrace(paths, acc, n_iter, ell, target.dim)
