"""Monte-Carlo audits of the sufficient conditions for optimal scaling.

The conditions are asymptotic statements (``o(.)``/``O(.)`` in d, suprema over
typical sets).  Here every supremum becomes a maximum over sampled typical
points and every rate becomes a ratio against the stated power of d, so each
record is a falsification check that carries its sample size and threshold.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .rwm import make_rng
from .scaling import RoughnessStats
from .targets import TargetModel, roughness

PASS, FLAG, NA = "pass", "flag", "not-applicable"


@dataclass
class AuditRecord:
    check_id: str
    status: str
    statistics: dict
    thresholds: dict
    n_samples: int
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TypicalSet:
    """Roughness band ``[lo, hi]`` holding a fraction ``q`` of the samples."""

    lo: float
    hi: float
    q: float
    n_samples: int
    low_power: bool

    def contains(self, values) -> np.ndarray:
        v = np.asarray(values)
        return (v >= self.lo) & (v <= self.hi)


@dataclass
class AuditReport:
    records: list
    typical_set: Optional[TypicalSet] = None
    target: str = ""

    def __getitem__(self, check_id) -> AuditRecord:
        for r in self.records:
            if r.check_id == check_id:
                return r
        raise KeyError(check_id)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "typical_set": asdict(self.typical_set) if self.typical_set else None,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)

    def table(self) -> str:
        lines = [f"{'check':<8} {'status':<15} {'n':>6}  statistics"]
        for r in self.records:
            stats = ", ".join(f"{k}={_fmt(v)}" for k, v in r.statistics.items())
            lines.append(f"{r.check_id:<8} {r.status:<15} {r.n_samples:>6}  {stats}")
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


# --------------------------------------------------------------------------


def empirical_typical_set(rough: RoughnessStats, q: float = 0.99) -> TypicalSet:
    """Central roughness band covering a fraction ``q`` of the samples."""
    if not 0.9 <= q < 1:
        raise ValueError(f"q must lie in [0.9, 1), got {q}")
    s = rough.samples
    lo, hi = np.quantile(s, [(1 - q) / 2, (1 + q) / 2])
    return TypicalSet(float(lo), float(hi), q, int(s.size), s.size < 100)


def typical_points(target: TargetModel, points, band: TypicalSet) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts[band.contains(roughness(target, pts))]


@dataclass(frozen=True)
class GraphMetrics:
    l_d: int
    m_d: int
    max_clique_card: int
    triangle_count: int
    edges: frozenset = field(default=frozenset(), repr=False, compare=False)


def graph_metrics(target: TargetModel) -> Optional[GraphMetrics]:
    """Exact counts from the target's factor list; ``None`` when it has none.

    ``l_d`` is the largest number of links of a coordinate, ``m_d`` the
    largest number of factors a coordinate belongs to and ``triangle_count``
    the number of 3-cliques of the induced dependence graph.
    """
    if target.factors is None:
        return None
    d = target.dim
    adj = [set() for _ in range(d)]
    member = np.zeros(d, dtype=int)
    card = 0
    for c in target.factors:
        card = max(card, len(c))
        for a in c:
            member[a] += 1
        for a, b in itertools.combinations(c, 2):
            adj[a].add(b)
            adj[b].add(a)
    triangles = 0
    for u in range(d):
        for v in adj[u]:
            if v > u:
                triangles += sum(1 for w in adj[u] & adj[v] if w > v)
    edges = frozenset((u, v) for u in range(d) for v in adj[u] if v > u)
    return GraphMetrics(
        l_d=max((len(a) for a in adj), default=0),
        m_d=int(member.max()) if d else 0,
        max_clique_card=card,
        triangle_count=triangles,
        edges=edges,
    )


def _triangles(target: TargetModel, gm: GraphMetrics):
    adj = [set() for _ in range(target.dim)]
    for u, v in gm.edges:
        adj[u].add(v)
        adj[v].add(u)
    for u, v in sorted(gm.edges):
        for w in sorted(adj[u] & adj[v]):
            if w > v:
                yield u, v, w


def _near_pairs(target: TargetModel):
    return [(i, j) for i, h in enumerate(target.neighborhoods) for j in sorted(h) if j != i]


def _far_pairs(target: TargetModel, rng, limit: int):
    d = target.dim
    hoods = target.neighborhoods
    total = d * (d - 1) - len(_near_pairs(target))
    if total <= limit:
        return [(i, j) for i in range(d) for j in range(d) if j != i and j not in hoods[i]]
    pairs = []
    while len(pairs) < limit:
        i, j = (int(v) for v in rng.integers(0, d, size=2))
        if i != j and j not in hoods[i]:
            pairs.append((i, j))
    return pairs


def _max_abs(fn, pairs, pts):
    best = 0.0
    for p in pairs:
        best = max(best, float(np.max(np.abs(fn(pts, *p)))))
    return best


def audit_A1(target: TargetModel, points, rng=0, eps_far: float = 1e-8,
             n_far: int = 10_000) -> AuditRecord:
    """Mixed second partials: zero off the neighbourhoods, ``o(sqrt(d/l_d))`` on them."""
    pts = np.asarray(points, dtype=float)
    d = target.dim
    near = _near_pairs(target)
    far = _far_pairs(target, make_rng(rng, 11), n_far)
    far_stat = _max_abs(target.partial2, far, pts)
    near_stat = _max_abs(target.partial2, near, pts)
    scale = math.sqrt(d / max(target.l_d, 1))
    ratio = near_stat / scale
    ok = far_stat <= eps_far and ratio <= 1.0
    return AuditRecord(
        "A1", PASS if ok else FLAG,
        {"far_max": far_stat, "near_max": near_stat, "near_ratio": ratio,
         "n_near_pairs": len(near), "n_far_pairs": len(far)},
        {"eps_far": eps_far, "near_scale": scale, "near_ratio_max": 1.0},
        int(pts.shape[0]),
    )


def audit_A3(target: TargetModel, points, rng=0, eps_far: float = 1e-8,
             n_far: int = 2000) -> AuditRecord:
    """Third partials: cross terms, pure cubes and the 3-clique sum, as ratios to their rates."""
    pts = np.asarray(points, dtype=float)
    n = int(pts.shape[0])
    gm = graph_metrics(target)
    if target.partial3_fn is None and gm is None:
        return AuditRecord("A3", NA, {}, {}, n, "no third partials and no factor graph")
    d = target.dim
    l_d = max(target.l_d, 1)
    f3 = target.partial3
    cube = max(float(np.max(np.abs(f3(pts, i, i, i)))) for i in range(d))
    near = _near_pairs(target)
    cross_near = _max_abs(lambda x, i, j: f3(x, i, i, j), near, pts)
    far = _far_pairs(target, make_rng(rng, 13), n_far)
    cross_far = _max_abs(lambda x, i, j: f3(x, i, i, j), far, pts)
    if gm is None:
        tri_sum = float("nan")
        triangles = None
    else:
        triangles = gm.triangle_count
        # 6 ordered index triples per unordered 3-clique
        tri_sum = 6.0 * sum(float(np.max(np.abs(f3(pts, *t)))) for t in _triangles(target, gm))
    stats = {
        "cube_ratio": cube / math.sqrt(d),
        "cross_near_ratio": cross_near / (d / l_d),
        "cross_far_max": cross_far,
        "triangle_count": triangles,
        "triangle_ratio": tri_sum / d**1.5,
    }
    ok = (stats["cube_ratio"] <= 1 and stats["cross_near_ratio"] <= 1 and cross_far <= eps_far
          and not stats["triangle_ratio"] > 1)
    return AuditRecord("A3", PASS if ok else FLAG, stats,
                       {"eps_far": eps_far, "ratio_max": 1.0, "cube_scale": math.sqrt(d),
                        "cross_scale": d / l_d, "triangle_scale": d**1.5}, n)


def max_abs_grad(target: TargetModel, points) -> float:
    return float(np.max(np.abs(target.grad(np.asarray(points, dtype=float)))))


def audit_A4_A5(rough: RoughnessStats, grad_sup: float, d: int, density_sup: Optional[float] = None,
                alpha: float = 0.4, cv_threshold: float = 0.15, grad_const: float = 100.0,
                rough_const: float = 0.01) -> tuple:
    """Gradient and roughness-positivity rates (A4) and roughness concentration (A5).

    ``grad_const`` and ``rough_const`` are the constants in
    ``|d log pi/dx_i| <= grad_const d^alpha`` and
    ``I_d >= rough_const d^(-alpha/2)``.  The density bound is only checked
    when a normalized ``density_sup`` is supplied.
    """
    n = rough.n
    min_I = float(rough.samples.min())
    grad_ratio = grad_sup / (grad_const * d**alpha)
    inv_ratio = (1.0 / min_I) / (d ** (alpha / 2) / rough_const) if min_I > 0 else float("inf")
    stats4 = {"min_roughness": min_I, "grad_sup": grad_sup, "grad_ratio": grad_ratio,
              "inv_roughness_ratio": inv_ratio}
    ok4 = min_I > 0 and grad_ratio <= 1 and inv_ratio <= 1
    note = ""
    if density_sup is not None:
        stats4["density_ratio"] = density_sup / d ** (0.5 - alpha)
        ok4 = ok4 and stats4["density_ratio"] <= 1
    else:
        note = "density bound not applicable (unnormalized target)"
    a4 = AuditRecord("A4", PASS if ok4 else FLAG, stats4,
                     {"alpha": alpha, "grad_const": grad_const, "rough_const": rough_const}, n, note)
    a5 = AuditRecord("A5", PASS if rough.cv <= cv_threshold else FLAG,
                     {"cv": rough.cv, "mean": rough.mean, "sd": rough.sd},
                     {"cv_max": cv_threshold}, n)
    return a4, a5


def rs_diagnostic(target: TargetModel, points, i: int = 0) -> AuditRecord:
    """Mean of ``R + S`` over points (expectation zero under stationarity).

    ``R = (1/(d-1)) sum_{j != i} (d_j log pi)^2`` and
    ``S = (1/(d-1)) sum_{j != i} d_j^2 log pi``.
    """
    pts = np.asarray(points, dtype=float)
    d = target.dim
    mask = np.ones(d, dtype=bool)
    mask[i] = False
    R = np.sum(target.grad(pts)[:, mask] ** 2, axis=1) / (d - 1)
    S = np.sum(target.hess_diag(pts)[:, mask], axis=1) / (d - 1)
    v = R + S
    n = v.size
    mean = float(v.mean())
    sd = float(v.std(ddof=1)) if n > 1 else 0.0
    se = sd / math.sqrt(n)
    return AuditRecord(
        "RS", PASS if abs(mean) <= 3.0 * se else FLAG,
        {"mean": mean, "sd": sd, "se": se, "fifth_abs_moment": float(np.mean(np.abs(v) ** 5)),
         "coordinate": i},
        {"z_max": 3.0}, n,
    )


def gaussian_score_fit(values) -> Callable:
    """Score of a normal fitted to ``values``: ``u -> -(u - m) / v``."""
    v = np.asarray(values, dtype=float)
    m, var = float(v.mean()), float(v.var(ddof=1))
    return lambda u: -(np.asarray(u, dtype=float) - m) / var


def audit_A6(target: TargetModel, points, marginal_score: Optional[Callable] = None,
             threshold: float = 0.1) -> AuditRecord:
    """Distance between the first coordinate's conditional score and a 1-d score."""
    pts = np.asarray(points, dtype=float)
    source = "supplied"
    if marginal_score is None:
        if target.marginal_score is not None:
            marginal_score, source = target.marginal_score, "analytic"
        else:
            marginal_score, source = gaussian_score_fit(pts[:, 0]), "gaussian-fit"
    disc = float(np.max(np.abs(target.grad(pts)[:, 0] - marginal_score(pts[:, 0]))))
    return AuditRecord("A6", PASS if disc <= threshold else FLAG,
                       {"max_discrepancy": disc, "score_source": source},
                       {"max_discrepancy": threshold}, int(pts.shape[0]))


def run_audit_suite(target: TargetModel, n_samples: int = 2000, seed: int = 0, q: float = 0.99,
                    n_pair_points: int = 200, alpha: float = 0.4,
                    density_sup: Optional[float] = None) -> AuditReport:
    """Draw stationary samples and run every audit.

    Pairwise partial scans use the first ``n_pair_points`` typical points.
    Results depend only on ``(target, seed)`` and the settings.
    """
    X = target.stationary_sample(make_rng(seed, 21), n_samples)
    rough = RoughnessStats.from_samples(roughness(target, X))
    band = empirical_typical_set(rough, q)
    typ = X[band.contains(rough.samples)]
    pair_pts = typ[:n_pair_points]
    a4, a5 = audit_A4_A5(rough, max_abs_grad(target, typ), target.dim, density_sup, alpha=alpha)
    records = [
        audit_A1(target, pair_pts, rng=seed),
        audit_A3(target, pair_pts, rng=seed),
        a4,
        a5,
        rs_diagnostic(target, X),
        audit_A6(target, typ),
    ]
    return AuditReport(records, band, target.name)
