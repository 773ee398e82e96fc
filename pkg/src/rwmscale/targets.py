"""Target distributions with derivative access and stationary samplers.

Every model works on points of shape ``(..., d)``: ``log_density`` returns
shape ``(...)`` and ``grad`` returns shape ``(..., d)``.  Mixed partials are
addressed by coordinate index, ``partial2(x, i, j)`` and
``partial3(x, i, j, k)``, and fall back to central finite differences of the
gradient when a model does not supply them analytically.

Hierarchical models use the fixed coordinate layout

* toy model (``build_hier_gauss``): ``(nu, mu_1..mu_n, theta_11..theta_nn)``
* realistic model: ``(nu, A, mu_1..mu_n, theta_11..theta_nn)``

with ``theta`` in row-major order, ``theta_ij`` being entry ``[i, j]`` of the
``n x n`` block and attached to column mean ``mu_j``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .errors import ConfigError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

FD_STEP_GRAD = 1e-4
FD_STEP_HIGHER = np.finfo(float).eps ** (1.0 / 3.0)
FD_STEP_THIRD = np.finfo(float).eps ** (1.0 / 4.0)

# Gibbs defaults for the hierarchical models.
GIBBS_BURN_IN = 200
GIBBS_THIN = 5
GIBBS_MAX_CHAINS = 500


@dataclass(frozen=True)
class TargetModel:
    """A d-dimensional unnormalized log-density with derivatives.

    Attributes:
        dim: number of coordinates.
        log_density: ``x -> log pi(x)`` (natural log, unnormalized).
        grad: ``x -> d log pi / dx``.
        sampler: ``(rng, size) -> array (size, dim)`` of stationary draws.
        neighborhoods: ``H_i`` for every coordinate; always contains ``i``.
        factors: cliques of the factor graph, when the model has a known one.
        partial2_fn, partial3_fn, hess_diag_fn: analytic higher derivatives;
            ``None`` selects the finite-difference fallback.
        marginal_score: ``(log f)'`` of the first coordinate's marginal when
            the first coordinate is exactly independent of the rest.
        exact_sampler: ``False`` when ``sampler`` is Gibbs-based.
    """

    dim: int
    log_density: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    neighborhoods: tuple
    name: str = "target"
    factors: Optional[tuple] = None
    partial2_fn: Optional[Callable] = None
    partial3_fn: Optional[Callable] = None
    hess_diag_fn: Optional[Callable] = None
    marginal_score: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_sampler: bool = True
    info: dict = field(default_factory=dict, compare=False)

    @property
    def derivative_mode(self) -> dict:
        return {
            1: "analytic",
            2: "analytic" if self.partial2_fn is not None else "finite-difference",
            3: "analytic" if self.partial3_fn is not None else "finite-difference",
        }

    @property
    def l_d(self) -> int:
        """Largest number of links ``|H_i \\ {i}|`` over coordinates."""
        return max(len(h) - 1 for h in self.neighborhoods)

    def stationary_sample(self, rng, size=None):
        """Draw ``size`` points from the target (one point if ``size`` is None)."""
        rng = np.random.default_rng(rng)
        n = 1 if size is None else int(size)
        out = np.asarray(self.sampler(rng, n), dtype=float)
        return out[0] if size is None else out

    def partial2(self, x, i, j):
        x = np.asarray(x, dtype=float)
        if self.partial2_fn is not None:
            return self.partial2_fn(x, i, j)
        return fd_partial2(self.grad, x, i, j)

    def partial3(self, x, i, j, k):
        x = np.asarray(x, dtype=float)
        if self.partial3_fn is not None:
            return self.partial3_fn(x, i, j, k)
        return fd_partial3(self.grad, x, i, j, k)

    def hess_diag(self, x):
        """Unmixed second partials ``d^2 log pi / dx_i^2`` for every i."""
        x = np.asarray(x, dtype=float)
        if self.hess_diag_fn is not None:
            return self.hess_diag_fn(x)
        return np.stack([self.partial2(x, i, i) for i in range(self.dim)], axis=-1)


# --------------------------------------------------------------------------
# finite differences


def _unit(x, i, h):
    e = np.zeros(x.shape[-1])
    e[i] = 1.0
    return e * h[..., None]


def fd_grad(log_density, x, step=FD_STEP_GRAD):
    """Central-difference gradient with step ``step * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.shape[-1]):
        h = step * (1.0 + np.abs(x[..., i]))
        e = _unit(x, i, h)
        out[..., i] = (log_density(x + e) - log_density(x - e)) / (2.0 * h)
    return out


def fd_partial2(grad, x, i, j, step=FD_STEP_HIGHER):
    h = step * (1.0 + np.abs(x[..., j]))
    e = _unit(x, j, h)
    return (grad(x + e)[..., i] - grad(x - e)[..., i]) / (2.0 * h)


def fd_partial3(grad, x, i, j, k, step=FD_STEP_THIRD):
    hj = step * (1.0 + np.abs(x[..., j]))
    hk = step * (1.0 + np.abs(x[..., k]))
    ej, ek = _unit(x, j, hj), _unit(x, k, hk)
    g = lambda y: grad(y)[..., i]  # noqa: E731
    return (g(x + ej + ek) - g(x + ej - ek) - g(x - ej + ek) + g(x - ej - ek)) / (4.0 * hj * hk)


# --------------------------------------------------------------------------
# one-dimensional densities for product targets


@dataclass(frozen=True)
class _Density1D:
    name: str
    logpdf: Callable
    d1: Callable
    d2: Callable
    d3: Callable
    sample: Callable


def _standard_normal():
    return _Density1D(
        "standard-normal",
        logpdf=lambda x: -0.5 * x**2 - 0.5 * LOG_2PI,
        d1=lambda x: -x,
        d2=lambda x: -np.ones_like(x),
        d3=lambda x: np.zeros_like(x),
        sample=lambda rng, shape: rng.standard_normal(shape),
    )


def _logistic():
    # f(x) = e^{-x} / (1 + e^{-x})^2
    def d2(x):
        s = expit(x)
        return -2.0 * s * (1.0 - s)

    def d3(x):
        s = expit(x)
        return -2.0 * s * (1.0 - s) * (1.0 - 2.0 * s)

    return _Density1D(
        "logistic",
        logpdf=lambda x: log_expit(x) + log_expit(-x),
        d1=lambda x: 1.0 - 2.0 * expit(x),
        d2=d2,
        d3=d3,
        sample=lambda rng, shape: rng.logistic(size=shape),
    )


def _scale_mixture(s1, s2, w):
    if not (s1 > 0 and s2 > 0 and 0 < w < 1):
        raise ConfigError(f"scale mixture needs s1, s2 > 0 and 0 < w < 1, got {(s1, s2, w)}")
    q = np.array([1.0 / s1**2, 1.0 / s2**2])
    logc = np.array([math.log(w) - math.log(s1), math.log1p(-w) - math.log(s2)])

    def resp(x):
        lk = logc - 0.5 * x[..., None] ** 2 * q - 0.5 * LOG_2PI
        lse = np.logaddexp(lk[..., 0], lk[..., 1])
        return lse, np.exp(lk - lse[..., None])

    def logpdf(x):
        return resp(np.asarray(x, dtype=float))[0]

    # component scores g_k = -x q_k, so f''/f = E_r[g^2 - q], f'''/f = E_r[g^3 - 3 g q]
    def moments(x):
        x = np.asarray(x, dtype=float)
        r = resp(x)[1]
        g = -x[..., None] * q
        m1 = np.sum(r * g, axis=-1)
        m2 = np.sum(r * (g**2 - q), axis=-1)
        m3 = np.sum(r * (g**3 - 3.0 * g * q), axis=-1)
        return m1, m2, m3

    def d1(x):
        return moments(x)[0]

    def d2(x):
        m1, m2, _ = moments(x)
        return m2 - m1**2

    def d3(x):
        m1, m2, m3 = moments(x)
        return m3 - 3.0 * m2 * m1 + 2.0 * m1**3

    def sample(rng, shape):
        scale = np.where(rng.random(shape) < w, s1, s2)
        return scale * rng.standard_normal(shape)

    return _Density1D("scale-mixture", logpdf, d1, d2, d3, sample)


def density_1d(family: str, **params) -> _Density1D:
    """Look up a one-dimensional density family by id."""
    if family == "standard-normal":
        return _standard_normal()
    if family == "logistic":
        return _logistic()
    if family == "scale-mixture":
        return _scale_mixture(float(params.get("s1", 1.0)), float(params.get("s2", 5.0)),
                              float(params.get("w", 0.5)))
    raise ConfigError(f"unsupported density family {family!r}")


PRODUCT_FAMILIES = ("standard-normal", "logistic", "scale-mixture")


def build_iid_product(family: str, d: int, **params) -> TargetModel:
    """Product target ``prod_i f(x_i)`` with ``f`` from ``family``.

    ``family`` is one of ``standard-normal``, ``logistic`` or
    ``scale-mixture`` (parameters ``s1``, ``s2``, ``w``: the density
    ``w N(0, s1^2) + (1 - w) N(0, s2^2)`` applied coordinatewise).
    """
    f = density_1d(family, **params)
    d = int(d)
    if d < 1:
        raise ConfigError(f"dimension must be positive, got {d}")

    def log_density(x):
        return np.sum(f.logpdf(np.asarray(x, dtype=float)), axis=-1)

    def grad(x):
        return f.d1(np.asarray(x, dtype=float))

    def partial2(x, i, j):
        if i != j:
            return np.zeros(x.shape[:-1])
        return f.d2(x[..., i])

    def partial3(x, i, j, k):
        if not i == j == k:
            return np.zeros(x.shape[:-1])
        return f.d3(x[..., i])

    return TargetModel(
        dim=d,
        log_density=log_density,
        grad=grad,
        sampler=lambda rng, n: f.sample(rng, (n, d)),
        neighborhoods=tuple(frozenset([i]) for i in range(d)),
        name=f"{family}-product",
        factors=tuple((i,) for i in range(d)),
        partial2_fn=partial2,
        partial3_fn=partial3,
        hess_diag_fn=lambda x: f.d2(x),
        marginal_score=f.d1,
        info={"family": family, "params": dict(params)},
    )


def build_scale_mixture(d: int, s1: float = 1.0, s2: float = 5.0, w: float = 0.5) -> TargetModel:
    """Joint scale mixture ``w N(0, s1^2 I) + (1 - w) N(0, s2^2 I)`` on R^d.

    Unlike the coordinatewise mixture product, the roughness of this target
    stays bimodal as d grows (about ``1/s1^2`` or ``1/s2^2`` depending on the
    component), so the concentration condition fails at every dimension.
    The coordinates are uncorrelated but not independent; mixed partials are
    negligible at typical points and ``neighborhoods`` are the singletons.
    """
    if not (s1 > 0 and s2 > 0 and 0 < w < 1):
        raise ConfigError(f"scale mixture needs s1, s2 > 0 and 0 < w < 1, got {(s1, s2, w)}")
    d = int(d)
    q = np.array([1.0 / s1**2, 1.0 / s2**2])
    logc = np.array([math.log(w) - d * math.log(s1), math.log1p(-w) - d * math.log(s2)])

    def resp(x):
        r2 = np.sum(x**2, axis=-1)
        lk = logc - 0.5 * r2[..., None] * q
        lse = np.logaddexp(lk[..., 0], lk[..., 1])
        return lse, np.exp(lk - lse[..., None])

    def cumulants(x):
        r = resp(x)[1]
        m1 = r @ q
        var = r @ q**2 - m1**2
        k3 = r @ q**3 - 3.0 * m1 * (r @ q**2) + 2.0 * m1**3
        return m1, var, k3

    def log_density(x):
        x = np.asarray(x, dtype=float)
        return resp(x)[0] - 0.5 * d * LOG_2PI

    def grad(x):
        x = np.asarray(x, dtype=float)
        return -x * (resp(x)[1] @ q)[..., None]

    def partial2(x, i, j):
        m1, var, _ = cumulants(x)
        return -(i == j) * m1 + x[..., i] * x[..., j] * var

    def partial3(x, i, j, k):
        _, var, k3 = cumulants(x)
        xi, xj, xk = x[..., i], x[..., j], x[..., k]
        return ((i == j) * xk + (i == k) * xj + (j == k) * xi) * var - xi * xj * xk * k3

    def hess_diag(x):
        m1, var, _ = cumulants(x)
        return -m1[..., None] + x**2 * var[..., None]

    def sampler(rng, n):
        scale = np.where(rng.random(n) < w, s1, s2)
        return scale[:, None] * rng.standard_normal((n, d))

    return TargetModel(
        dim=d,
        log_density=log_density,
        grad=grad,
        sampler=sampler,
        neighborhoods=tuple(frozenset([i]) for i in range(d)),
        name="scale-mixture-joint",
        partial2_fn=partial2,
        partial3_fn=partial3,
        hess_diag_fn=hess_diag,
        info={"family": "scale-mixture-joint", "params": {"s1": s1, "s2": s2, "w": w}},
    )


def build_dense_coupling(d: int, c: float = 1.0) -> TargetModel:
    """``-|x|^2/2 + c sum_{i<j} x_i x_j`` with singleton neighborhoods.

    Built to violate the sparse-coupling condition: every off-diagonal mixed
    partial equals ``c`` although no coordinate declares a neighbour.  The
    density is not normalizable for large ``c``; ``sampler`` returns standard
    normal probe points, not stationary draws.
    """
    d = int(d)

    def log_density(x):
        x = np.asarray(x, dtype=float)
        s = np.sum(x, axis=-1)
        sq = np.sum(x**2, axis=-1)
        return -0.5 * sq + 0.5 * c * (s**2 - sq)

    def grad(x):
        x = np.asarray(x, dtype=float)
        s = np.sum(x, axis=-1, keepdims=True)
        return -x + c * (s - x)

    def partial2(x, i, j):
        return np.full(x.shape[:-1], -1.0 if i == j else c)

    return TargetModel(
        dim=d,
        log_density=log_density,
        grad=grad,
        sampler=lambda rng, n: rng.standard_normal((n, d)),
        neighborhoods=tuple(frozenset([i]) for i in range(d)),
        name="dense-coupling",
        partial2_fn=partial2,
        partial3_fn=lambda x, i, j, k: np.zeros(x.shape[:-1]),
        hess_diag_fn=lambda x: np.full(x.shape, -1.0),
        exact_sampler=False,
        info={"family": "dense-coupling", "params": {"c": c}},
    )


def build_flat(d: int) -> TargetModel:
    """Constant log-density on R^d (improper); probe points are standard normal."""
    d = int(d)
    return TargetModel(
        dim=d,
        log_density=lambda x: np.zeros(np.shape(x)[:-1]),
        grad=lambda x: np.zeros(np.shape(x)),
        sampler=lambda rng, n: rng.standard_normal((n, d)),
        neighborhoods=tuple(frozenset([i]) for i in range(d)),
        name="flat",
        factors=(),
        partial2_fn=lambda x, i, j: np.zeros(x.shape[:-1]),
        partial3_fn=lambda x, i, j, k: np.zeros(x.shape[:-1]),
        hess_diag_fn=lambda x: np.zeros(x.shape),
        marginal_score=lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        exact_sampler=False,
        info={"family": "flat"},
    )


def build_block_product(first: str, rest: TargetModel, **params) -> TargetModel:
    """Target ``f(x_1) g(x_2..x_d)`` with ``f`` a 1-d family and ``g`` = ``rest``."""
    f = density_1d(first, **params)
    d = rest.dim + 1

    def log_density(x):
        x = np.asarray(x, dtype=float)
        return f.logpdf(x[..., 0]) + rest.log_density(x[..., 1:])

    def grad(x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([f.d1(x[..., :1]), rest.grad(x[..., 1:])], axis=-1)

    def partial2(x, i, j):
        if i == 0 or j == 0:
            return f.d2(x[..., 0]) if i == j else np.zeros(x.shape[:-1])
        return rest.partial2(x[..., 1:], i - 1, j - 1)

    def sampler(rng, n):
        return np.concatenate([f.sample(rng, (n, 1)), rest.sampler(rng, n)], axis=-1)

    hoods = (frozenset([0]),) + tuple(frozenset(j + 1 for j in h) for h in rest.neighborhoods)
    factors = None
    if rest.factors is not None:
        factors = ((0,),) + tuple(tuple(j + 1 for j in c) for c in rest.factors)
    return TargetModel(
        dim=d,
        log_density=log_density,
        grad=grad,
        sampler=sampler,
        neighborhoods=hoods,
        name=f"{first}x{rest.name}",
        factors=factors,
        partial2_fn=partial2,
        marginal_score=f.d1,
        exact_sampler=rest.exact_sampler,
        info={"family": "block-product", "first": first, "rest": rest.name},
    )


# --------------------------------------------------------------------------
# hierarchical Gaussian models


@dataclass(frozen=True)
class Hyper:
    """Known constants of the realistic model: noise variances and IG(a, b) prior."""

    V: float = 1.0
    W: float = 1.0
    a: float = 2.0
    b: float = 1.0

    def __post_init__(self):
        for name in ("V", "W", "a", "b"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"hyperparameter {name} must be positive", field=f"hyper.{name}")


@dataclass(frozen=True)
class HierGaussData:
    n: int
    Y: np.ndarray
    hyper: Optional[Hyper] = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.shape != (self.n, self.n):
            raise ConfigError(f"Y must be {self.n}x{self.n}, got shape {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise ConfigError("Y has non-finite entries")
        object.__setattr__(self, "Y", Y)


def synth_data(n: int, *, seed=None, constant=None, hyper: Optional[Hyper] = None) -> HierGaussData:
    """Observations for the hierarchical models.

    Exactly one of ``seed`` (forward simulation with ``nu = 0``) or
    ``constant`` (every ``Y_ij = constant``) must be given.  With ``hyper``
    the forward model is the realistic one (``A ~ IG(a, b)``, variances
    ``V`` and ``W``); otherwise all three layers have unit variance.
    """
    if (seed is None) == (constant is None):
        raise ConfigError("synth_data needs exactly one of seed or constant")
    n = int(n)
    if n < 1:
        raise ConfigError(f"n must be positive, got {n}")
    if constant is not None:
        return HierGaussData(n, np.full((n, n), float(constant)), hyper)
    rng = np.random.default_rng(seed)
    if hyper is None:
        mu = rng.standard_normal(n)
        theta = mu[None, :] + rng.standard_normal((n, n))
        Y = theta + rng.standard_normal((n, n))
    else:
        A = hyper.b / rng.gamma(hyper.a)
        mu = math.sqrt(A) * rng.standard_normal(n)
        theta = mu[None, :] + math.sqrt(hyper.V) * rng.standard_normal((n, n))
        Y = theta + math.sqrt(hyper.W) * rng.standard_normal((n, n))
    return HierGaussData(n, Y, hyper)


def load_y_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=float)


def _hier_graph(n: int, offset: int, extra: Sequence[int] = ()):
    """Factor list and neighborhoods of the three-layer hierarchy.

    ``offset`` is the index of ``mu_1``; ``extra`` are coordinates that join
    every ``(nu, mu_j)`` factor (``A`` in the realistic model).
    """
    d = offset + n + n * n
    mu = [offset + j for j in range(n)]
    theta = lambda i, j: offset + n + i * n + j  # noqa: E731
    factors = [tuple(sorted((0, *extra, mu[j]))) for j in range(n)]
    factors += [(mu[j], theta(i, j)) for i in range(n) for j in range(n)]
    factors += [(theta(i, j),) for i in range(n) for j in range(n)]
    factors += [(e,) for e in extra]
    hoods = [set([k]) for k in range(d)]
    for c in factors:
        for a in c:
            hoods[a].update(c)
    return tuple(factors), tuple(frozenset(h) for h in hoods)


def build_hier_gauss(data: HierGaussData, *, burn_in=GIBBS_BURN_IN, thin=GIBBS_THIN) -> TargetModel:
    """Posterior of the unit-variance three-layer Gaussian hierarchy.

    ``Y_ij ~ N(theta_ij, 1)``, ``theta_ij ~ N(mu_j, 1)``, ``mu_j ~ N(nu, 1)``
    and a flat prior on ``nu``; ``d = n^2 + n + 1``.  Stationary draws come
    from parallel systematic-scan Gibbs chains (``burn_in`` sweeps from an
    overdispersed start, then one draw every ``thin`` sweeps).
    """
    n = data.n
    if n < 2:
        raise ConfigError(f"hierarchical model needs n >= 2, got {n}")
    Y = data.Y
    d = n * n + n + 1

    def split(x):
        return x[..., 0], x[..., 1:n + 1], x[..., n + 1:].reshape(x.shape[:-1] + (n, n))

    def log_density(x):
        x = np.asarray(x, dtype=float)
        nu, mu, th = split(x)
        return -0.5 * (np.sum((mu - nu[..., None]) ** 2, axis=-1)
                       + np.sum((th - mu[..., None, :]) ** 2, axis=(-2, -1))
                       + np.sum((Y - th) ** 2, axis=(-2, -1)))

    def grad(x):
        x = np.asarray(x, dtype=float)
        nu, mu, th = split(x)
        g_nu = np.sum(mu - nu[..., None], axis=-1)
        g_mu = np.sum(th - mu[..., None, :], axis=-2) - (mu - nu[..., None])
        g_th = (Y - th) - (th - mu[..., None, :])
        return np.concatenate([g_nu[..., None], g_mu, g_th.reshape(x.shape[:-1] + (n * n,))], axis=-1)

    diag = np.concatenate([[-float(n)], np.full(n, -(n + 1.0)), np.full(n * n, -2.0)])
    factors, hoods = _hier_graph(n, 1)

    def partial2(x, i, j):
        shape = np.shape(x)[:-1]
        if i == j:
            return np.full(shape, diag[i])
        return np.full(shape, 1.0 if j in hoods[i] else 0.0)

    def sampler(rng, size):
        return _gibbs_draws(lambda s: _gibbs_sweep_toy(s, Y, n, rng), _overdispersed_toy(Y, n, rng, size),
                            size, burn_in, thin)

    return TargetModel(
        dim=d,
        log_density=log_density,
        grad=grad,
        sampler=sampler,
        neighborhoods=hoods,
        name="hier-gauss",
        factors=factors,
        partial2_fn=partial2,
        partial3_fn=lambda x, i, j, k: np.zeros(np.shape(x)[:-1]),
        hess_diag_fn=lambda x: np.broadcast_to(diag, np.shape(x)).copy(),
        exact_sampler=False,
        info={"family": "hier-gauss", "n": n, "Y": Y},
    )


def _overdispersed_toy(Y, n, rng, size):
    m = min(size, GIBBS_MAX_CHAINS)
    theta = Y[None] + 2.0 * rng.standard_normal((m, n, n))
    mu = theta.mean(axis=1) + 2.0 * rng.standard_normal((m, n))
    nu = mu.mean(axis=1) + 2.0 * rng.standard_normal(m)
    return {"nu": nu, "mu": mu, "theta": theta}


def _gibbs_sweep_toy(s, Y, n, rng):
    m = s["nu"].shape[0]
    s["theta"] = 0.5 * (s["mu"][:, None, :] + Y[None]) + math.sqrt(0.5) * rng.standard_normal((m, n, n))
    s["mu"] = ((s["theta"].sum(axis=1) + s["nu"][:, None]) / (n + 1)
               + rng.standard_normal((m, n)) / math.sqrt(n + 1))
    s["nu"] = s["mu"].mean(axis=1) + rng.standard_normal(m) / math.sqrt(n)
    return s


def _pack(s):
    parts = [s["nu"][:, None]]
    if "A" in s:
        parts.append(s["A"][:, None])
    parts += [s["mu"], s["theta"].reshape(s["theta"].shape[0], -1)]
    return np.concatenate(parts, axis=1)


def _gibbs_draws(sweep, state, size, burn_in, thin):
    for _ in range(burn_in):
        state = sweep(state)
    draws = [_pack(state)]
    total = draws[0].shape[0]
    while total < size:
        for _ in range(thin):
            state = sweep(state)
        draws.append(_pack(state))
        total += draws[-1].shape[0]
    return np.concatenate(draws, axis=0)[:size]


def build_hier_gauss_realistic(data: HierGaussData, *, burn_in=GIBBS_BURN_IN,
                                thin=GIBBS_THIN) -> TargetModel:
    """Posterior of the hierarchy with unknown level-2 variance ``A``.

    ``Y_ij ~ N(theta_ij, W)``, ``theta_ij ~ N(mu_j, V)``, ``mu_j ~ N(nu, A)``,
    flat prior on ``nu`` and ``A ~ IG(a, b)``; ``d = n^2 + n + 2`` with ``A``
    at index 1.  ``log_density`` is ``-inf`` for ``A <= 0``.
    """
    n = data.n
    if n < 2:
        raise ConfigError(f"hierarchical model needs n >= 2, got {n}")
    hp = data.hyper or Hyper()
    V, W, a, b = hp.V, hp.W, hp.a, hp.b
    Y = data.Y
    d = n * n + n + 2
    shape_A = a + 1.0 + 0.5 * n

    def split(x):
        return (x[..., 0], x[..., 1], x[..., 2:n + 2],
                x[..., n + 2:].reshape(x.shape[:-1] + (n, n)))

    def log_density(x):
        x = np.asarray(x, dtype=float)
        nu, A, mu, th = split(x)
        ok = A > 0
        As = np.where(ok, A, 1.0)
        ss = np.sum((mu - nu[..., None]) ** 2, axis=-1)
        val = (-shape_A * np.log(As) - (b + 0.5 * ss) / As
               - np.sum((th - mu[..., None, :]) ** 2, axis=(-2, -1)) / (2.0 * V)
               - np.sum((Y - th) ** 2, axis=(-2, -1)) / (2.0 * W))
        return np.where(ok, val, -np.inf)

    def grad(x):
        x = np.asarray(x, dtype=float)
        nu, A, mu, th = split(x)
        dev = mu - nu[..., None]
        S = b + 0.5 * np.sum(dev**2, axis=-1)
        g_nu = np.sum(dev, axis=-1) / A
        g_A = -shape_A / A + S / A**2
        g_mu = np.sum(th - mu[..., None, :], axis=-2) / V - dev / A[..., None]
        g_th = (Y - th) / W - (th - mu[..., None, :]) / V
        return np.concatenate([g_nu[..., None], g_A[..., None], g_mu,
                               g_th.reshape(x.shape[:-1] + (n * n,))], axis=-1)

    def kind(k):
        if k == 0:
            return ("nu",)
        if k == 1:
            return ("A",)
        if k < n + 2:
            return ("mu", k - 2)
        r = k - n - 2
        return ("th", r // n, r % n)

    order = {"nu": 0, "A": 1, "mu": 2, "th": 3}

    def partial2(x, i, j):
        x = np.asarray(x, dtype=float)
        nu, A, mu, th = split(x)
        zero = np.zeros(x.shape[:-1])
        p, q = sorted((kind(i), kind(j)), key=lambda t: (order[t[0]], t[1:]))
        names = (p[0], q[0])
        if names == ("nu", "nu"):
            return -n / A
        if names == ("nu", "A"):
            return -np.sum(mu - nu[..., None], axis=-1) / A**2
        if names == ("nu", "mu"):
            return 1.0 / A
        if names == ("A", "A"):
            S = b + 0.5 * np.sum((mu - nu[..., None]) ** 2, axis=-1)
            return shape_A / A**2 - 2.0 * S / A**3
        if names == ("A", "mu"):
            return (mu[..., q[1]] - nu) / A**2
        if names == ("mu", "mu"):
            return -n / V - 1.0 / A if p[1] == q[1] else zero
        if names == ("mu", "th"):
            return zero + (1.0 / V if q[2] == p[1] else 0.0)
        if names == ("th", "th"):
            return zero + (-1.0 / W - 1.0 / V if p[1:] == q[1:] else 0.0)
        return zero

    def partial3(x, i, j, k):
        x = np.asarray(x, dtype=float)
        nu, A, mu, th = split(x)
        zero = np.zeros(x.shape[:-1])
        ks = sorted((kind(i), kind(j), kind(k)), key=lambda t: (order[t[0]], t[1:]))
        names = tuple(t[0] for t in ks)
        if "th" in names or "A" not in names:
            return zero
        if names == ("nu", "nu", "A"):
            return n / A**2
        if names == ("nu", "A", "A"):
            return 2.0 * np.sum(mu - nu[..., None], axis=-1) / A**3
        if names == ("nu", "A", "mu"):
            return -1.0 / A**2
        if names == ("A", "A", "A"):
            S = b + 0.5 * np.sum((mu - nu[..., None]) ** 2, axis=-1)
            return -2.0 * shape_A / A**3 + 6.0 * S / A**4
        if names == ("A", "A", "mu"):
            return -2.0 * (mu[..., ks[2][1]] - nu) / A**3
        if names == ("A", "mu", "mu"):
            return 1.0 / A**2 if ks[1][1] == ks[2][1] else zero
        return zero

    def hess_diag(x):
        x = np.asarray(x, dtype=float)
        nu, A, mu, th = split(x)
        S = b + 0.5 * np.sum((mu - nu[..., None]) ** 2, axis=-1)
        shape = x.shape[:-1]
        return np.concatenate([
            (-n / A)[..., None],
            (shape_A / A**2 - 2.0 * S / A**3)[..., None],
            np.broadcast_to((-n / V - 1.0 / A)[..., None], shape + (n,)),
            np.full(shape + (n * n,), -1.0 / W - 1.0 / V),
        ], axis=-1)

    factors, hoods = _hier_graph(n, 2, extra=(1,))

    def sampler(rng, size):
        m = min(size, GIBBS_MAX_CHAINS)
        theta = Y[None] + 2.0 * math.sqrt(W) * rng.standard_normal((m, n, n))
        mu = theta.mean(axis=1) + rng.standard_normal((m, n))
        state = {"nu": mu.mean(axis=1) + rng.standard_normal(m), "A": np.ones(m), "mu": mu, "theta": theta}

        def sweep(s):
            s["theta"] = ((W * s["mu"][:, None, :] + V * Y[None]) / (W + V)
                          + math.sqrt(V * W / (W + V)) * rng.standard_normal((m, n, n)))
            A_ = s["A"][:, None]
            s["mu"] = ((A_ * s["theta"].sum(axis=1) + V * s["nu"][:, None]) / (n * A_ + V)
                       + np.sqrt(A_ * V / (n * A_ + V)) * rng.standard_normal((m, n)))
            s["nu"] = s["mu"].mean(axis=1) + np.sqrt(s["A"] / n) * rng.standard_normal(m)
            rate = b + 0.5 * np.sum((s["mu"] - s["nu"][:, None]) ** 2, axis=1)
            s["A"] = rate / rng.gamma(a + 0.5 * n, size=m)
            return s

        return _gibbs_draws(sweep, state, size, burn_in, thin)

    return TargetModel(
        dim=d,
        log_density=log_density,
        grad=grad,
        sampler=sampler,
        neighborhoods=hoods,
        name="hier-gauss-realistic",
        factors=factors,
        partial2_fn=partial2,
        partial3_fn=partial3,
        hess_diag_fn=hess_diag,
        exact_sampler=False,
        info={"family": "hier-gauss-realistic", "n": n, "Y": Y, "hyper": hp},
    )


def hier_gauss_posterior(data: HierGaussData):
    """Exact Gaussian posterior ``(mean, precision)`` of the unit-variance hierarchy.

    Assembles the precision matrix of the quadratic log-density directly and
    solves for the mean; used to validate the Gibbs sampler.
    """
    n, Y = data.n, data.Y
    d = n * n + n + 1
    P = np.zeros((d, d))
    h = np.zeros(d)

    def add_pair(u, v):
        # term -(x_u - x_v)^2 / 2
        P[u, u] += 1.0
        P[v, v] += 1.0
        P[u, v] -= 1.0
        P[v, u] -= 1.0

    for j in range(n):
        add_pair(0, 1 + j)
        for i in range(n):
            t = 1 + n + i * n + j
            add_pair(1 + j, t)
            P[t, t] += 1.0
            h[t] += Y[i, j]
    return np.linalg.solve(P, h), P


# --------------------------------------------------------------------------
# roughness and config loading


def roughness(target: TargetModel, x) -> np.ndarray:
    """Mean squared score ``(1/d) sum_i (d log pi / dx_i)^2`` at ``x``."""
    g = np.asarray(target.grad(np.asarray(x, dtype=float)))
    if not np.all(np.isfinite(g)):
        bad = np.argwhere(~np.isfinite(g))[0]
        raise NumericalError(f"non-finite gradient at coordinate {int(bad[-1])}")
    return np.mean(g**2, axis=-1)


def _data_from_config(source, n, hyper, base_dir):
    if source is None:
        raise ConfigError("hierarchical models need a data source", field="model.data")
    if "inline" in source:
        return HierGaussData(n, np.asarray(source["inline"], dtype=float), hyper)
    if "csv" in source:
        path = Path(source["csv"])
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.exists():
            raise ConfigError(f"data file {str(path)!r} does not exist", field="model.data.csv")
        return HierGaussData(n, load_y_csv(path), hyper)
    if "synth" in source:
        s = source["synth"] or {}
        return synth_data(n, seed=s.get("seed"), constant=s.get("constant"), hyper=hyper)
    raise ConfigError("data needs one of inline, csv, synth", field="model.data")


def model_from_config(cfg: dict, base_dir=None) -> TargetModel:
    """Build a target from a mapping like ``{"family": ..., "d": ..., ...}``.

    Families: the product families, ``scale-mixture-joint``,
    ``dense-coupling``, ``hier-gauss`` and ``hier-gauss-realistic``.
    """
    family = cfg.get("family")
    params = dict(cfg.get("params") or {})
    if family in PRODUCT_FAMILIES or family in ("scale-mixture-joint", "dense-coupling"):
        if "d" not in cfg:
            raise ConfigError("missing dimension", field="model.d")
        d = cfg["d"]
        if not isinstance(d, int) or d < 1:
            raise ConfigError(f"must be a positive integer, got {d!r}", field="model.d")
        if family == "scale-mixture-joint":
            return build_scale_mixture(d, **params)
        if family == "dense-coupling":
            return build_dense_coupling(d, **params)
        return build_iid_product(family, d, **params)
    if family in ("hier-gauss", "hier-gauss-realistic"):
        n = cfg.get("n")
        if not isinstance(n, int) or n < 2:
            raise ConfigError(f"must be an integer >= 2, got {n!r}", field="model.n")
        hyper = None
        if family == "hier-gauss-realistic":
            hyper = Hyper(**(cfg.get("hyper") or {}))
        data = _data_from_config(cfg.get("data"), n, hyper, base_dir)
        if family == "hier-gauss":
            return build_hier_gauss(data)
        return build_hier_gauss_realistic(data)
    raise ConfigError(f"unsupported family {family!r}", field="model.family")
