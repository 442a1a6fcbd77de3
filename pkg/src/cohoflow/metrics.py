"""Bottleneck / Wasserstein distances between diagrams and Betti-curve correlation.

Ground cost is L-infinity in the birth-death plane; a point's cost to the
diagonal is half its persistence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import InvalidInputError, UndefinedCorrelationError
from .persistence import BettiCurve, PersistenceDiagram, betti_curve

DEFAULT_GRID_SIZE = 64

Match = tuple  # (index into first diagram or None, index into second or None)


@dataclass
class MatchingResult:
    """Optimal partial matching; ``None`` on either side means the diagonal.

    Indices refer to rows of the diagrams' ``pairs`` arrays.
    """

    cost: float
    assignment: list[Match] = field(default_factory=list)
    order: float = math.inf


def _check_pair(a: PersistenceDiagram, b: PersistenceDiagram) -> None:
    if a.dim != b.dim:
        raise InvalidInputError(f"diagram dimensions differ: {a.dim} vs {b.dim}")


def _linf(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.max(np.abs(a[:, None, :] - b[None, :, :]), axis=2)


def pair_cost(a, b) -> float:
    """L-infinity cost of matching two points; ``None`` stands for the diagonal."""
    if a is None and b is None:
        return 0.0
    if a is None:
        return (b[1] - b[0]) / 2.0
    if b is None:
        return (a[1] - a[0]) / 2.0
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def matching_cost(d1: PersistenceDiagram, d2: PersistenceDiagram, assignment, order: float) -> float:
    """Re-evaluate a matching: the max cost for ``order=inf``, else the q-norm."""
    costs = [pair_cost(None if i is None else d1.pairs[i], None if j is None else d2.pairs[j])
             for i, j in assignment]
    costs = [0.0 if math.isnan(c) else c for c in costs]  # inf - inf between essential points
    if not costs:
        return 0.0
    if math.isinf(order):
        return max(costs)
    return sum(c ** order for c in costs) ** (1.0 / order)


def _essential_match(d1: PersistenceDiagram, d2: PersistenceDiagram):
    i1 = np.flatnonzero(np.isinf(d1.deaths))
    i2 = np.flatnonzero(np.isinf(d2.deaths))
    if len(i1) != len(i2):
        return None
    # births only differ; sorted order is optimal on a line
    i1 = i1[np.argsort(d1.births[i1], kind="stable")]
    i2 = i2[np.argsort(d2.births[i2], kind="stable")]
    return list(zip(i1.tolist(), i2.tolist())), np.abs(d1.births[i1] - d2.births[i2])


def _perfect_matching(c: np.ndarray, da: np.ndarray, db: np.ndarray, t: float):
    m, n = c.shape
    size = m + n
    adj = np.zeros((size, size), dtype=bool)
    adj[:m, :n] = c <= t
    adj[np.arange(m), n + np.arange(m)] = da <= t
    adj[m + np.arange(n), np.arange(n)] = db <= t
    adj[m:, n:] = True
    match = maximum_bipartite_matching(sps.csr_matrix(adj), perm_type="column")
    return match if np.all(match >= 0) else None


def bottleneck_distance(d1: PersistenceDiagram, d2: PersistenceDiagram, matching: bool = False):
    """Exact bottleneck distance.

    Binary search over the sorted candidate costs, testing each threshold
    with a maximum bipartite matching on the diagonal-augmented graph.
    Essential classes must occur equally often in both diagrams, otherwise
    the distance is infinite.
    """
    _check_pair(d1, d2)
    ess = _essential_match(d1, d2)
    if ess is None:
        res = MatchingResult(math.inf, [], math.inf)
        return (math.inf, res) if matching else math.inf
    ess_pairs, ess_costs = ess
    f1 = np.flatnonzero(np.isfinite(d1.deaths))
    f2 = np.flatnonzero(np.isfinite(d2.deaths))
    a, b = d1.pairs[f1], d2.pairs[f2]
    m, n = len(a), len(b)
    c = _linf(a, b) if m and n else np.zeros((m, n))
    da = (a[:, 1] - a[:, 0]) / 2.0
    db = (b[:, 1] - b[:, 0]) / 2.0
    cands = np.unique(np.concatenate([[0.0], c.ravel(), da, db]))
    lo, hi = 0, len(cands) - 1
    best = _perfect_matching(c, da, db, cands[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        found = _perfect_matching(c, da, db, cands[mid])
        if found is None:
            lo = mid + 1
        else:
            hi, best = mid, found
    finite_cost = float(cands[lo])
    cost = max(finite_cost, float(ess_costs.max()) if len(ess_costs) else 0.0)
    if not matching:
        return cost
    assignment = list(ess_pairs)
    for row in range(m):
        col = int(best[row])
        assignment.append((int(f1[row]), int(f2[col]) if col < n else None))
    for j in range(n):
        col = int(best[m + j])
        if col < n:
            assignment.append((None, int(f2[col])))
    return cost, MatchingResult(cost, assignment, math.inf)


def _prepare_finite(d: PersistenceDiagram, infinite: str, truncate_at: float | None):
    if infinite == "truncate":
        return np.arange(len(d)), d.truncated(truncate_at).pairs if d.n_essential() else d.pairs
    if infinite == "drop":
        idx = np.flatnonzero(np.isfinite(d.deaths))
        return idx, d.pairs[idx]
    raise InvalidInputError(f"unknown infinite-death policy {infinite!r}")


def wasserstein_distance(d1: PersistenceDiagram, d2: PersistenceDiagram, q: float = 1.0,
                         matching: bool = False, infinite: str = "truncate",
                         truncate_at: float | None = None):
    """q-Wasserstein distance with L-infinity ground cost, solved by the Hungarian method.

    Infinite deaths are truncated to each diagram's ``max_value`` (or
    ``truncate_at``) by default; ``infinite="drop"`` ignores them instead.
    """
    _check_pair(d1, d2)
    if not q >= 1 or math.isinf(q):
        raise InvalidInputError(f"Wasserstein order must be finite and >= 1, got {q}")
    i1, a = _prepare_finite(d1, infinite, truncate_at)
    i2, b = _prepare_finite(d2, infinite, truncate_at)
    m, n = len(a), len(b)
    if m + n == 0:
        res = MatchingResult(0.0, [], q)
        return (0.0, res) if matching else 0.0
    da = (a[:, 1] - a[:, 0]) / 2.0
    db = (b[:, 1] - b[:, 0]) / 2.0
    c = _linf(a, b) ** q if m and n else np.zeros((m, n))
    big = 1.0 + 2.0 * (c.sum() + (da ** q).sum() + (db ** q).sum())
    cost = np.zeros((m + n, m + n))
    cost[:m, :n] = c
    cost[:m, n:] = big
    cost[np.arange(m), n + np.arange(m)] = da ** q
    cost[m:, :n] = big
    cost[m + np.arange(n), np.arange(n)] = db ** q
    rows, cols = linear_sum_assignment(cost)
    # correctly rounded sum: independent of argument order, so d(a, b) == d(b, a) exactly
    total = math.fsum(cost[rows, cols].tolist())
    dist = total ** (1.0 / q)
    if not matching:
        return dist
    assignment = []
    for r, col in zip(rows.tolist(), cols.tolist()):
        if r < m:
            assignment.append((int(i1[r]), int(i2[col]) if col < n else None))
        elif col < n:
            assignment.append((None, int(i2[col])))
    return dist, MatchingResult(dist, assignment, q)


def default_grid(d1: PersistenceDiagram, d2: PersistenceDiagram, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Uniform grid spanning the finite birth/death range of both diagrams."""
    vals = np.concatenate([d1.pairs.ravel(), d2.pairs.ravel()])
    vals = vals[np.isfinite(vals)]
    lo, hi = (float(vals.min()), float(vals.max())) if len(vals) else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, size)


def betti_correlation(c1: BettiCurve, c2: BettiCurve) -> float:
    """Pearson correlation of two Betti curves on one grid."""
    if c1.grid.shape != c2.grid.shape or not np.array_equal(c1.grid, c2.grid):
        raise InvalidInputError("Betti curves are sampled on different grids")
    x = c1.counts.astype(np.float64)
    y = c2.counts.astype(np.float64)
    x = x - x.mean()
    y = y - y.mean()
    sxx, syy = np.dot(x, x), np.dot(y, y)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("Betti curve has zero variance; correlation undefined")
    # sqrt of one product keeps rho(x, x) == 1 exactly
    return float(np.clip(np.dot(x, y) / np.sqrt(sxx * syy), -1.0, 1.0))


def betti_similarity(d1: PersistenceDiagram, d2: PersistenceDiagram, grid=None) -> float:
    if grid is None:
        grid = default_grid(d1, d2)
    return betti_correlation(betti_curve(d1, grid), betti_curve(d2, grid))


def metrics_report(diags_a, diags_b) -> dict:
    """Per-dimension ``{bottleneck, wasserstein_q1, wasserstein_q2, betti_rho}``.

    ``betti_rho`` is ``None`` where a curve is constant.
    """
    if len(diags_a) != len(diags_b):
        raise InvalidInputError("diagram lists differ in length")
    out = {}
    for a, b in zip(diags_a, diags_b):
        try:
            rho = betti_similarity(a, b)
        except UndefinedCorrelationError:
            rho = None
        out[str(a.dim)] = {
            "bottleneck": bottleneck_distance(a, b),
            "wasserstein_q1": wasserstein_distance(a, b, 1.0),
            "wasserstein_q2": wasserstein_distance(a, b, 2.0),
            "betti_rho": rho,
        }
    return out
