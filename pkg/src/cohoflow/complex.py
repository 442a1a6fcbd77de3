"""Filtered simplicial complexes and their (co)boundary / Hodge operators.

Simplices are stored per dimension as integer arrays of sorted vertex
indices, ordered within each dimension by ``(value, lexicographic
vertices)``.  The global filtration order additionally breaks value ties by
dimension, so every face precedes its cofaces.

Orientation: a simplex is oriented by increasing vertex order, and the face
obtained by deleting the vertex at position ``i`` carries sign ``(-1)**i``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sps

from .errors import InvalidDimensionError, InvalidInputError

Z2 = "Z2"
REALS = "R"
FIELDS = (Z2, REALS)

MAX_DIM = 3
MAX_VERTICES = 2048

Simplex = tuple[int, ...]


def check_simplex(vertices: Sequence[int]) -> Simplex:
    """Validate and normalise a vertex list into a ``Simplex`` tuple."""
    verts = tuple(int(v) for v in vertices)
    if not verts:
        raise InvalidInputError("a simplex needs at least one vertex")
    if any(v < 0 for v in verts):
        raise InvalidInputError(f"negative vertex index in {verts}")
    if any(a >= b for a, b in zip(verts, verts[1:])):
        raise InvalidInputError(f"simplex vertices must be strictly increasing: {verts}")
    return verts


@dataclass(frozen=True, eq=False)
class SparseFieldMatrix:
    """Column-sparse matrix over Z2 or the reals (CSC storage).

    Entries are kept canonical: indices sorted within each column and no
    stored zeros.  Z2 matrices hold ``int8`` ones.
    """

    matrix: sps.csc_matrix
    field: str

    def __post_init__(self):
        if self.field not in FIELDS:
            raise InvalidInputError(f"unknown field {self.field!r}")
        m = sps.csc_matrix(self.matrix)
        if self.field == Z2:
            m = sps.csc_matrix((np.mod(m.data, 2).astype(np.int8), m.indices, m.indptr), shape=m.shape)
        else:
            m = m.astype(np.float64)
        m.eliminate_zeros()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.matrix.indptr[j], self.matrix.indptr[j + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    def columns(self) -> list[list[tuple[int, float]]]:
        """Per-column ``(row, coefficient)`` lists."""
        out = []
        for j in range(self.cols):
            idx, val = self.column(j)
            out.append([(int(i), v.item()) for i, v in zip(idx, val)])
        return out

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def T(self) -> SparseFieldMatrix:
        return SparseFieldMatrix(self.matrix.T.tocsc(), self.field)

    def __matmul__(self, other):
        if isinstance(other, SparseFieldMatrix):
            if other.field != self.field:
                raise InvalidInputError("cannot multiply matrices over different fields")
            return SparseFieldMatrix((self.matrix.astype(np.int64) @ other.matrix.astype(np.int64))
                                     if self.field == Z2 else self.matrix @ other.matrix, self.field)
        out = self.matrix @ np.asarray(other)
        return np.mod(out, 2) if self.field == Z2 else out

    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def is_zero(self, atol: float = 0.0) -> bool:
        if self.matrix.nnz == 0:
            return True
        return bool(np.max(np.abs(self.matrix.data)) <= atol)

    def bit_columns(self) -> list[int]:
        """Columns as Python-int bitsets (bit ``i`` set iff row ``i`` is nonzero mod 2)."""
        ind, ptr = self.matrix.indices, self.matrix.indptr
        if self.field == REALS:
            odd = np.mod(np.rint(self.matrix.data).astype(np.int64), 2) != 0
        else:
            odd = self.matrix.data != 0
        cols = []
        for j in range(self.cols):
            b = 0
            for i in ind[ptr[j]:ptr[j + 1]][odd[ptr[j]:ptr[j + 1]]]:
                b |= 1 << int(i)
            cols.append(b)
        return cols


def z2_rank(mat: SparseFieldMatrix) -> int:
    """Rank over Z2 by column elimination on bitset columns."""
    pivots: dict[int, int] = {}
    rank = 0
    for col in mat.bit_columns():
        while col:
            low = col.bit_length() - 1
            other = pivots.get(low)
            if other is None:
                pivots[low] = col
                rank += 1
                break
            col ^= other
    return rank


class FilteredComplex:
    """Immutable filtered simplicial complex.

    ``simplices[p]`` is an ``(n_p, p+1)`` int array and ``values[p]`` the
    matching filtration values, both sorted by ``(value, lex vertices)``.
    Construct via :func:`build_rips`, :func:`build_from_weights` or
    :meth:`from_simplices`; the raw constructor trusts its input unless
    ``validate`` is set.
    """

    def __init__(self, simplices: Sequence[np.ndarray], values: Sequence[np.ndarray],
                 n_vertices: int | None = None, validate: bool = True):
        if len(simplices) != len(values) or not simplices:
            raise InvalidInputError("need one simplex array and one value array per dimension")
        max_dim = len(simplices) - 1
        if max_dim > MAX_DIM:
            raise InvalidDimensionError(f"max_dim {max_dim} exceeds cap {MAX_DIM}")
        sims, vals = [], []
        for p, (s, v) in enumerate(zip(simplices, values)):
            s = np.asarray(s, dtype=np.int64).reshape(-1, p + 1)
            v = np.asarray(v, dtype=np.float64).reshape(-1)
            if len(s) != len(v):
                raise InvalidInputError(f"dimension {p}: {len(s)} simplices but {len(v)} values")
            sims.append(s)
            vals.append(v)
        if n_vertices is None:
            n_vertices = int(sims[0].max()) + 1 if len(sims[0]) else 0
        self.n_vertices = int(n_vertices)
        self.max_dim = max_dim
        if self.n_vertices ** (max_dim + 1) >= 2 ** 62:
            raise InvalidInputError("too many vertex labels for the simplex key encoding")

        self._simplices: list[np.ndarray] = []
        self._values: list[np.ndarray] = []
        self._keys: list[np.ndarray] = []
        for p in range(max_dim + 1):
            keys = self._encode(sims[p])
            order = np.lexsort((keys, vals[p]))
            s, v, k = sims[p][order], vals[p][order], keys[order]
            s.flags.writeable = False
            v.flags.writeable = False
            self._simplices.append(s)
            self._values.append(v)
            self._keys.append(k)
        self._key_sort = [np.argsort(k, kind="stable") for k in self._keys]
        if validate:
            self._validate()

    def _encode(self, s: np.ndarray) -> np.ndarray:
        key = np.zeros(len(s), dtype=np.int64)
        for c in range(s.shape[1]):
            key = key * self.n_vertices + s[:, c]
        return key

    def _validate(self) -> None:
        for p in range(self.max_dim + 1):
            s, v = self._simplices[p], self._values[p]
            if not np.all(np.isfinite(v)):
                raise InvalidInputError(f"non-finite filtration values in dimension {p}")
            if len(s) and (s.min() < 0 or s.max() >= self.n_vertices):
                raise InvalidInputError(f"vertex index out of range in dimension {p}")
            if p > 0 and len(s) and np.any(np.diff(s, axis=1) <= 0):
                raise InvalidInputError(f"dimension {p}: vertices must be strictly increasing")
            if len(np.unique(self._keys[p])) != len(s):
                raise InvalidInputError(f"duplicate simplices in dimension {p}")
            if p > 0 and len(s):
                faces = self.face_indices(p)  # raises on missing faces
                if np.any(self._values[p - 1][faces] > v[:, None]):
                    raise InvalidInputError(f"filtration not monotone between dimensions {p - 1} and {p}")

    # construction helpers

    @classmethod
    def from_simplices(cls, items: Iterable[tuple[Sequence[int], float]],
                       max_dim: int | None = None, n_vertices: int | None = None) -> FilteredComplex:
        """Build from ``(vertices, value)`` pairs; the input must be face-closed."""
        by_dim: dict[int, tuple[list, list]] = {}
        for verts, value in items:
            s = check_simplex(verts)
            by_dim.setdefault(len(s) - 1, ([], []))
            by_dim[len(s) - 1][0].append(s)
            by_dim[len(s) - 1][1].append(float(value))
        top = max(by_dim, default=0)
        if max_dim is None:
            max_dim = top
        if top > max_dim:
            raise InvalidDimensionError(f"simplex of dimension {top} exceeds max_dim {max_dim}")
        sims = [np.array(by_dim.get(p, ([], []))[0], dtype=np.int64).reshape(-1, p + 1)
                for p in range(max_dim + 1)]
        vals = [np.array(by_dim.get(p, ([], []))[1], dtype=np.float64) for p in range(max_dim + 1)]
        return cls(sims, vals, n_vertices=n_vertices, validate=True)

    # accessors

    def simplices(self, p: int) -> np.ndarray:
        self._check_dim(p)
        return self._simplices[p]

    def values(self, p: int) -> np.ndarray:
        self._check_dim(p)
        return self._values[p]

    def count(self, p: int) -> int:
        if p < 0 or p > self.max_dim:
            return 0
        return len(self._simplices[p])

    def __len__(self) -> int:
        return sum(len(s) for s in self._simplices)

    def _check_dim(self, p: int) -> None:
        if p < 0 or p > self.max_dim:
            raise InvalidDimensionError(f"dimension {p} outside [0, {self.max_dim}]")

    @property
    def max_value(self) -> float:
        """Largest filtration value present (0 for an empty complex)."""
        m = [v[-1] for v in self._values if len(v)]
        return float(max(m)) if m else 0.0

    @cached_property
    def filtration_order(self) -> list[tuple[int, int]]:
        """Global order as ``(dim, index-within-dim)`` pairs."""
        dims = np.concatenate([np.full(len(v), p) for p, v in enumerate(self._values)])
        idx = np.concatenate([np.arange(len(v)) for v in self._values])
        vals = np.concatenate(self._values)
        keys = np.concatenate(self._keys)
        order = np.lexsort((keys, dims, vals))
        return [(int(dims[o]), int(idx[o])) for o in order]

    def __iter__(self) -> Iterator[tuple[Simplex, float]]:
        for p, i in self.filtration_order:
            yield tuple(int(x) for x in self._simplices[p][i]), float(self._values[p][i])

    def index_of(self, p: int, vertices: np.ndarray) -> np.ndarray:
        """Within-dimension positions of the given ``(m, p+1)`` simplices."""
        self._check_dim(p)
        vertices = np.asarray(vertices, dtype=np.int64).reshape(-1, p + 1)
        keys = self._encode(vertices)
        sorted_keys = self._keys[p][self._key_sort[p]]
        pos = np.searchsorted(sorted_keys, keys)
        pos = np.minimum(pos, max(len(sorted_keys) - 1, 0))
        if len(keys) and (len(sorted_keys) == 0 or np.any(sorted_keys[pos] != keys)):
            raise InvalidInputError(f"complex is not closed under faces (dimension {p})")
        return self._key_sort[p][pos] if len(keys) else np.zeros(0, dtype=np.int64)

    def face_indices(self, p: int) -> np.ndarray:
        """``(n_p, p+1)`` array; column ``i`` indexes the face without vertex ``i``."""
        if p < 1 or p > self.max_dim:
            raise InvalidDimensionError(f"faces need 1 <= p <= {self.max_dim}, got {p}")
        cache = self.__dict__.setdefault("_faces", {})
        if p not in cache:
            s = self._simplices[p]
            out = np.empty((len(s), p + 1), dtype=np.int64)
            for i in range(p + 1):
                out[:, i] = self.index_of(p - 1, np.delete(s, i, axis=1))
            out.flags.writeable = False
            cache[p] = out
        return cache[p]

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(str((self.n_vertices, self.max_dim)).encode())
        for s, v in zip(self._simplices, self._values):
            h.update(np.ascontiguousarray(s).tobytes())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def sublevel(self, eps: float) -> FilteredComplex:
        """Subcomplex ``K_eps`` of simplices with value <= eps."""
        keep = [v <= eps for v in self._values]
        return FilteredComplex([s[k] for s, k in zip(self._simplices, keep)],
                               [v[k] for v, k in zip(self._values, keep)],
                               n_vertices=self.n_vertices, validate=False)

    # serialisation

    def to_json(self) -> dict:
        return {"max_dim": self.max_dim,
                "simplices": [{"v": list(s), "value": v} for s, v in self]}

    @classmethod
    def from_json(cls, doc: dict) -> FilteredComplex:
        try:
            items = [(d["v"], d["value"]) for d in doc["simplices"]]
            return cls.from_simplices(items, max_dim=int(doc["max_dim"]))
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed complex document: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def __repr__(self) -> str:
        counts = ", ".join(str(self.count(p)) for p in range(self.max_dim + 1))
        return f"FilteredComplex(n_vertices={self.n_vertices}, counts=[{counts}])"


def _check_matrix(mat, name: str, zero_diagonal: bool) -> np.ndarray:
    a = np.asarray(mat, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_VERTICES:
        raise InvalidInputError(f"{a.shape[0]} vertices exceeds the limit of {MAX_VERTICES}")
    if np.isnan(a).any():
        raise InvalidInputError(f"{name} contains NaN entries")
    off = a[~np.eye(len(a), dtype=bool)]
    if not np.all(np.isfinite(off)):
        raise InvalidInputError(f"{name} contains infinite entries")
    if np.any(off < 0):
        raise InvalidInputError(f"{name} has negative entries")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise InvalidInputError(f"{name} is not symmetric")
    if zero_diagonal and np.any(np.abs(np.diag(a)) > 1e-12):
        raise InvalidInputError(f"{name} must have a zero diagonal")
    return a


def _check_max_dim(max_dim: int) -> int:
    if not 0 <= int(max_dim) <= MAX_DIM:
        raise InvalidDimensionError(f"max_dim must lie in [0, {MAX_DIM}], got {max_dim}")
    return int(max_dim)


def _clique_filtration(w: np.ndarray, max_dim: int, scale: float, chunk: int = 4096) -> FilteredComplex:
    n = len(w)
    w = np.triu(w, 1)
    w = w + w.T
    adj = w <= scale
    np.fill_diagonal(adj, False)
    sims = [np.arange(n, dtype=np.int64).reshape(-1, 1)]
    vals = [np.zeros(n)]
    later = np.arange(n)
    for p in range(1, max_dim + 1):
        prev_s, prev_v = sims[-1], vals[-1]
        new_s, new_v = [], []
        for lo in range(0, len(prev_s), chunk):
            s, v = prev_s[lo:lo + chunk], prev_v[lo:lo + chunk]
            ok = later[None, :] > s[:, -1:]
            for c in range(s.shape[1]):
                ok &= adj[s[:, c]]
            rows, ext = np.nonzero(ok)
            if not len(rows):
                continue
            val = v[rows]
            for c in range(s.shape[1]):
                val = np.maximum(val, w[s[rows, c], ext])
            new_s.append(np.column_stack([s[rows], ext]))
            new_v.append(val)
        sims.append(np.concatenate(new_s) if new_s else np.zeros((0, p + 1), dtype=np.int64))
        vals.append(np.concatenate(new_v) if new_v else np.zeros(0))
    return FilteredComplex(sims, vals, n_vertices=n, validate=False)


def build_rips(dissimilarity, max_dim: int = 2, max_scale: float = math.inf) -> FilteredComplex:
    """Vietoris-Rips filtration of a dissimilarity matrix.

    Every simplex whose largest pairwise dissimilarity is ``<= max_scale``
    and whose dimension is ``<= max_dim`` is included, valued at that
    largest dissimilarity (vertices at 0).
    """
    d = _check_matrix(dissimilarity, "dissimilarity", zero_diagonal=True)
    return _clique_filtration(d, _check_max_dim(max_dim), float(max_scale))


def build_from_weights(adjacency, max_dim: int = 2, threshold: float = math.inf) -> FilteredComplex:
    """Clique complex of the graph ``{w_ij <= threshold}``; diagonal ignored."""
    if not np.isfinite(threshold):
        raise InvalidInputError("threshold must be finite")
    a = np.array(adjacency, dtype=np.float64)
    if a.ndim == 2 and a.shape[0] == a.shape[1]:
        np.fill_diagonal(a, 0.0)
    a = _check_matrix(a, "adjacency", zero_diagonal=False)
    return _clique_filtration(a, _check_max_dim(max_dim), float(threshold))


def boundary_matrix(cx: FilteredComplex, p: int, field: str = REALS) -> SparseFieldMatrix:
    """``∂_p``: rows are (p-1)-simplices, columns p-simplices, both in filtration order."""
    if not 1 <= p <= cx.max_dim:
        raise InvalidDimensionError(f"boundary needs 1 <= p <= {cx.max_dim}, got {p}")
    faces = cx.face_indices(p)
    n_cols = len(faces)
    rows = faces.reshape(-1)
    cols = np.repeat(np.arange(n_cols), p + 1)
    if field == Z2:
        data = np.ones(len(rows), dtype=np.int8)
    else:
        data = np.tile((-1.0) ** np.arange(p + 1), n_cols)
    m = sps.csc_matrix((data, (rows, cols)), shape=(cx.count(p - 1), n_cols))
    return SparseFieldMatrix(m, field)


def coboundary_matrix(cx: FilteredComplex, p: int, field: str = REALS) -> SparseFieldMatrix:
    """``δ^p = ∂_{p+1}ᵀ``: maps p-cochains to (p+1)-cochains."""
    if not 0 <= p < cx.max_dim:
        raise InvalidDimensionError(f"coboundary needs 0 <= p < {cx.max_dim}, got {p}")
    return boundary_matrix(cx, p + 1, field).T


def hodge_laplacian(cx: FilteredComplex, p: int) -> SparseFieldMatrix:
    """Real Hodge Laplacian ``δ^{p-1}δ^{p-1}ᵀ + δ^pᵀδ^p`` (absent terms dropped)."""
    if not 0 <= p <= cx.max_dim:
        raise InvalidDimensionError(f"Laplacian needs 0 <= p <= {cx.max_dim}, got {p}")
    n = cx.count(p)
    lap = sps.csc_matrix((n, n), dtype=np.float64)
    if p > 0:
        down = coboundary_matrix(cx, p - 1).matrix
        lap = lap + down @ down.T
    if p < cx.max_dim:
        up = coboundary_matrix(cx, p).matrix
        lap = lap + up.T @ up
    return SparseFieldMatrix(lap, REALS)


def up_laplacian(cx: FilteredComplex, p: int) -> SparseFieldMatrix:
    """``δ^pᵀδ^p`` alone (zero at the top dimension)."""
    if not 0 <= p <= cx.max_dim:
        raise InvalidDimensionError(f"Laplacian needs 0 <= p <= {cx.max_dim}, got {p}")
    if p == cx.max_dim:
        return SparseFieldMatrix(sps.csc_matrix((cx.count(p),) * 2), REALS)
    up = coboundary_matrix(cx, p).matrix
    return SparseFieldMatrix(up.T @ up, REALS)


def down_laplacian(cx: FilteredComplex, p: int) -> SparseFieldMatrix:
    """``δ^{p-1}δ^{p-1}ᵀ`` alone (zero at p = 0)."""
    if not 0 <= p <= cx.max_dim:
        raise InvalidDimensionError(f"Laplacian needs 0 <= p <= {cx.max_dim}, got {p}")
    if p == 0:
        return SparseFieldMatrix(sps.csc_matrix((cx.count(0),) * 2), REALS)
    down = coboundary_matrix(cx, p - 1).matrix
    return SparseFieldMatrix(down @ down.T, REALS)


def cohomology_rank(cx: FilteredComplex, p: int, scale: float | None = None) -> int:
    """``dim H^p(K; Z2) = dim ker δ^p - rank δ^{p-1}`` at the given scale (default: all simplices)."""
    if not 0 <= p <= cx.max_dim:
        raise InvalidDimensionError(f"cohomology needs 0 <= p <= {cx.max_dim}, got {p}")
    if scale is not None:
        cx = cx.sublevel(scale)
    rank_up = z2_rank(coboundary_matrix(cx, p, Z2)) if p < cx.max_dim else 0
    rank_down = z2_rank(coboundary_matrix(cx, p - 1, Z2)) if p > 0 else 0
    return cx.count(p) - rank_up - rank_down
