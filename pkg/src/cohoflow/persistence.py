"""Persistent homology over Z2 by column reduction with clearing, plus Betti curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sps

from .complex import FilteredComplex
from .errors import InvalidDimensionError, InvalidInputError


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """Birth/death pairs of one homology dimension, sorted by ``(birth, death)``.

    ``generators`` (optional) holds, per pair, the within-dimension index of
    the creating ``dim``-simplex and of the destroying ``(dim+1)``-simplex
    (``-1`` for essential classes).  ``max_value`` is the largest filtration
    value of the generating complex, used to truncate infinite deaths.
    """

    dim: int
    pairs: np.ndarray
    generators: np.ndarray | None = None
    max_value: float | None = None

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 2)
        if np.isnan(pairs).any():
            raise InvalidInputError("diagram contains NaN")
        if np.any(pairs[:, 0] > pairs[:, 1]):
            raise InvalidInputError("diagram pair with birth > death")
        if np.isinf(pairs[:, 0]).any():
            raise InvalidInputError("diagram pair with infinite birth")
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        pairs.flags.writeable = False
        object.__setattr__(self, "pairs", pairs)
        if self.generators is not None:
            gens = np.asarray(self.generators, dtype=np.int64).reshape(-1, 2)
            if len(gens) != len(order):
                raise InvalidInputError("generators must align with pairs")
            gens = gens[order]
            gens.flags.writeable = False
            object.__setattr__(self, "generators", gens)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def births(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def deaths(self) -> np.ndarray:
        return self.pairs[:, 1]

    @property
    def persistence(self) -> np.ndarray:
        return self.pairs[:, 1] - self.pairs[:, 0]

    def n_essential(self) -> int:
        return int(np.isinf(self.pairs[:, 1]).sum())

    def _subset(self, mask: np.ndarray, pairs: np.ndarray | None = None) -> PersistenceDiagram:
        gens = None if self.generators is None else self.generators[mask]
        return PersistenceDiagram(self.dim, (self.pairs if pairs is None else pairs)[mask], gens, self.max_value)

    def finite(self) -> PersistenceDiagram:
        """Drop essential (infinite-death) pairs."""
        return self._subset(np.isfinite(self.pairs[:, 1]))

    def truncated(self, at: float | None = None) -> PersistenceDiagram:
        """Replace infinite deaths by ``at`` (default: the carried ``max_value``)."""
        if at is None:
            at = self.max_value
        if self.n_essential() and (at is None or not np.isfinite(at)):
            raise InvalidInputError("cannot truncate infinite deaths without a finite bound")
        pairs = self.pairs.copy()
        inf = np.isinf(pairs[:, 1])
        if inf.any():
            pairs[inf, 1] = np.maximum(at, pairs[inf, 0])
        return self._subset(np.ones(len(pairs), dtype=bool), pairs)

    def as_multiset(self) -> list[tuple[float, float]]:
        return [(float(b), float(d)) for b, d in self.pairs]

    def same_pairs(self, other: PersistenceDiagram) -> bool:
        return self.dim == other.dim and self.pairs.shape == other.pairs.shape and bool(
            np.array_equal(self.pairs, other.pairs))

    def to_json(self) -> dict:
        return {"dim": self.dim,
                "pairs": [[float(b), float(d) if np.isfinite(d) else "inf"] for b, d in self.pairs]}

    @classmethod
    def from_json(cls, doc: dict, max_value: float | None = None) -> PersistenceDiagram:
        try:
            pairs = [[float(b), math.inf if d == "inf" else float(d)] for b, d in doc["pairs"]]
            return cls(int(doc["dim"]), np.array(pairs, dtype=np.float64).reshape(-1, 2),
                       max_value=doc.get("max_value", max_value))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed diagram document: {exc}") from exc

    def __repr__(self) -> str:
        return f"PersistenceDiagram(dim={self.dim}, pairs={self.as_multiset()})"


@dataclass
class ReductionTranscript:
    """Pivot map and pairing produced by one reduction.

    ``pivots[q]`` maps a reduced column of ``∂_q`` (a q-simplex) to its
    pivot row (a (q-1)-simplex); ``creators[p]`` is the inverse, mapping a
    creating p-simplex to the (p+1)-simplex that kills it.
    """

    fingerprint: str
    pivots: dict[int, dict[int, int]] = field(default_factory=dict)
    creators: dict[int, dict[int, int]] = field(default_factory=dict)
    positive: dict[int, np.ndarray] = field(default_factory=dict)

    def destroyer_of(self, p: int, i: int) -> int | None:
        return self.creators.get(p, {}).get(i)

    def creator_of(self, q: int, j: int) -> int | None:
        """p-simplex paired with the (p+1 = q)-simplex ``j`` (``None`` if ``j`` creates)."""
        return self.pivots.get(q, {}).get(j)

    def persistence_of(self, cx: FilteredComplex, p: int) -> np.ndarray:
        """Per p-simplex persistence of the pair it creates or destroys (0 if unpaired)."""
        out = np.zeros(cx.count(p))
        vals = cx.values(p)
        for i, j in self.creators.get(p, {}).items():
            out[i] = cx.values(p + 1)[j] - vals[i]
        for j, r in self.pivots.get(p, {}).items():
            out[j] = vals[j] - cx.values(p - 1)[r]
        return out


class PersistenceResult(NamedTuple):
    diagrams: list[PersistenceDiagram]
    transcript: ReductionTranscript | None


def _default_max_p(cx: FilteredComplex) -> int:
    return min(2, cx.max_dim)


AUTO_COHOMOLOGY_THRESHOLD = 50_000


def _pairs_twist(cx: FilteredComplex, top: int) -> dict[int, dict[int, int]]:
    """Homology reduction, dimensions high to low, with clearing.

    Returns ``pivots[q]``: reduced column (q-simplex) -> pivot row.
    Columns are Python-int bitsets so a column addition is one XOR.
    """
    pivots: dict[int, dict[int, int]] = {}
    clear: set[int] = set()
    for q in range(top, 0, -1):
        reduced: dict[int, int] = {}
        col_pivot: dict[int, int] = {}
        for j, face in enumerate(cx.face_indices(q).tolist()):
            if j in clear:
                continue
            c = 0
            for f in face:
                c ^= 1 << f
            while c:
                low = c.bit_length() - 1
                other = reduced.get(low)
                if other is None:
                    reduced[low] = c
                    col_pivot[j] = low
                    break
                c ^= other
        pivots[q] = col_pivot
        # rows that became pivots are positive: their own columns reduce to zero
        clear = set(reduced)
    return pivots


def _pairs_cohomology(cx: FilteredComplex, top: int) -> dict[int, dict[int, int]]:
    """Dual reduction of the coboundary, dimensions low to high, with clearing.

    Columns are p-simplices taken youngest first; the pivot of a column is
    its oldest coface.  Yields the same pairing as homology and needs far
    fewer column additions on Rips filtrations.
    """
    pivots: dict[int, dict[int, int]] = {}
    clear: set[int] = set()
    for p in range(0, top):
        cob = _csr_boundary(cx, p + 1)
        ptr, ind = cob.indptr, cob.indices
        reduced: dict[int, np.ndarray] = {}
        col_pivot: dict[int, int] = {}
        for i in range(cx.count(p) - 1, -1, -1):
            if i in clear:
                continue
            col = ind[ptr[i]:ptr[i + 1]]
            while len(col):
                low = int(col[0])
                other = reduced.get(low)
                if other is None:
                    reduced[low] = col
                    col_pivot[low] = i
                    break
                col = np.setxor1d(col, other, assume_unique=True)
        pivots[p + 1] = col_pivot
        clear = set(col_pivot)
    return pivots


def _csr_boundary(cx: FilteredComplex, q: int):
    faces = cx.face_indices(q)
    n = len(faces)
    m = sps.csr_matrix((np.ones(faces.size, dtype=np.int8), (faces.reshape(-1), np.repeat(np.arange(n), q + 1))),
                       shape=(cx.count(q - 1), n))
    m.sort_indices()
    return m


def compute_persistence(cx: FilteredComplex, max_p: int | None = None, include_zero: bool = False,
                        keep_transcript: bool = False, method: str = "auto") -> PersistenceResult:
    """Diagrams ``D_0..D_max_p`` of the filtration over Z2.

    ``method`` selects the twist reduction of the boundary (``"twist"``,
    reducing dimensions high to low with clearing), the dual coboundary
    reduction (``"cohomology"``), or picks by size (``"auto"``: cohomology
    once the top reduced dimension holds more than
    ``AUTO_COHOMOLOGY_THRESHOLD`` simplices).  Both produce identical pairs.
    Classes in dimension ``max_p`` are essential whenever the complex has no
    simplices of dimension ``max_p + 1``.
    """
    if max_p is None:
        max_p = _default_max_p(cx)
    if not 0 <= max_p <= cx.max_dim:
        raise InvalidDimensionError(f"max_p must lie in [0, {cx.max_dim}], got {max_p}")
    top = min(max_p + 1, cx.max_dim)
    if method == "auto":
        method = "cohomology" if cx.count(top) > AUTO_COHOMOLOGY_THRESHOLD else "twist"
    if method == "twist":
        pivots = _pairs_twist(cx, top)
    elif method == "cohomology":
        pivots = _pairs_cohomology(cx, top)
    else:
        raise InvalidInputError(f"unknown reduction method {method!r}")

    creators = {q - 1: {r: j for j, r in cols.items()} for q, cols in pivots.items()}
    diagrams = []
    for p in range(max_p + 1):
        vals = cx.values(p)
        pairs, gens = [], []
        killed = creators.get(p, {})
        up_vals = cx.values(p + 1) if p + 1 <= cx.max_dim else None
        for i, j in killed.items():
            b, d = vals[i], up_vals[j]
            if include_zero or d > b:
                pairs.append((b, d))
                gens.append((i, j))
        destroyers = pivots.get(p, {})
        for i in range(len(vals)):
            if i not in killed and i not in destroyers:
                pairs.append((vals[i], math.inf))
                gens.append((i, -1))
        diagrams.append(PersistenceDiagram(p, np.array(pairs, dtype=np.float64).reshape(-1, 2),
                                           np.array(gens, dtype=np.int64).reshape(-1, 2),
                                           max_value=cx.max_value))
    transcript = None
    if keep_transcript:
        positive = {p: np.array(sorted(c), dtype=np.int64) for p, c in creators.items()}
        transcript = ReductionTranscript(cx.fingerprint, pivots, creators, positive)
    return PersistenceResult(diagrams, transcript)


def naive_persistence(cx: FilteredComplex, max_p: int | None = None,
                      include_zero: bool = False) -> list[PersistenceDiagram]:
    """Textbook left-to-right reduction of the total boundary matrix, no clearing.

    Slow; retained as a reference for the clearing implementation.
    """
    if max_p is None:
        max_p = _default_max_p(cx)
    if not 0 <= max_p <= cx.max_dim:
        raise InvalidDimensionError(f"max_p must lie in [0, {cx.max_dim}], got {max_p}")
    order = cx.filtration_order
    pos = {s: k for k, s in enumerate(order)}
    columns: list[set[int]] = []
    for p, i in order:
        if p == 0:
            columns.append(set())
        else:
            columns.append({pos[(p - 1, int(f))] for f in cx.face_indices(p)[i]})
    lows: dict[int, int] = {}
    paired_low = {}
    for j, col in enumerate(columns):
        while col:
            low = max(col)
            if low not in lows:
                lows[low] = j
                paired_low[j] = low
                break
            col ^= columns[lows[low]]
    pairs: dict[int, list] = {p: [] for p in range(max_p + 1)}
    negative = set(paired_low)
    for j, low in paired_low.items():
        p, i = order[low]
        if p <= max_p:
            b = cx.values(p)[i]
            d = cx.values(p + 1)[order[j][1]]
            if include_zero or d > b:
                pairs[p].append((b, d))
    for k, (p, i) in enumerate(order):
        if p <= max_p and k not in negative and k not in lows:
            pairs[p].append((cx.values(p)[i], math.inf))
    return [PersistenceDiagram(p, np.array(pairs[p], dtype=np.float64).reshape(-1, 2),
                               max_value=cx.max_value) for p in range(max_p + 1)]


@dataclass(frozen=True, eq=False)
class BettiCurve:
    grid: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64).reshape(-1)
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if len(grid) != len(counts):
            raise InvalidInputError("grid and counts differ in length")
        if len(grid) == 0 or np.any(np.diff(grid) <= 0):
            raise InvalidInputError("grid must be nonempty and strictly increasing")
        if np.any(counts < 0):
            raise InvalidInputError("Betti counts must be non-negative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "counts", counts)

    def to_csv(self) -> str:
        lines = ["scale,count"] + [f"{g!r},{c}" for g, c in zip(self.grid.tolist(), self.counts.tolist())]
        return "\n".join(lines) + "\n"


def betti_curve(diagram: PersistenceDiagram, grid: Sequence[float]) -> BettiCurve:
    """``counts[k] = #{(b, d) : b <= grid[k] < d}``."""
    g = np.asarray(grid, dtype=np.float64).reshape(-1)
    if len(g) == 0 or np.any(np.diff(g) <= 0) or not np.all(np.isfinite(g)):
        raise InvalidInputError("grid must be nonempty, finite and strictly increasing")
    b, d = diagram.births, diagram.deaths
    counts = ((b[None, :] <= g[:, None]) & (g[:, None] < d[None, :])).sum(axis=1)
    return BettiCurve(g, counts)
