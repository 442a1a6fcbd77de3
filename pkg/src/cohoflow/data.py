"""Synthetic point clouds with planted topology, CSV ingestion and preprocessing.

Random numbers come from numpy's PCG64 bit generator seeded through
``SeedSequence(seed)``; Gaussian noise uses ``Generator.standard_normal``
(ziggurat).  The seed sequence is split into a signal stream and a noise
stream, so ``sigma=0`` with the same seed yields exactly the noiseless
signal underlying any noisy draw.

Inputs are assumed already band-pass / notch filtered; no signal
filtering happens here.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (AsymmetricMatrixError, InvalidInputError, NonNumericCellError, ParseError,
                     RaggedRowError, ZeroVarianceError)

STRUCTURES = ("circle", "two-circles", "sphere", "planted-simplex")
TWO_CIRCLE_OFFSET = 1.5


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    label: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise InvalidInputError("point cloud must be an (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def distances(self) -> np.ndarray:
        return pairwise_distances(self.points)


@dataclass(frozen=True, eq=False)
class TimeSeriesMatrix:
    """``d`` channels by ``T`` timepoints sampled at ``sample_rate`` Hz."""

    data: np.ndarray
    sample_rate: float = 250.0

    def __post_init__(self):
        x = np.asarray(self.data, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] < 2:
            raise InvalidInputError("time series must be (channels, T) with T >= 2")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("time series has non-finite entries")
        if not self.sample_rate > 0:
            raise InvalidInputError("sample rate must be positive")
        object.__setattr__(self, "data", x)


@dataclass(frozen=True, eq=False)
class SpikeCounts:
    """``d`` neurons by ``T`` bins of width ``bin_ms`` milliseconds."""

    counts: np.ndarray
    bin_ms: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise InvalidInputError("spike counts must be (neurons, bins)")
        if not np.all(np.isfinite(c)) or np.any(c < 0) or np.any(np.asarray(c) != np.round(c)):
            raise InvalidInputError("spike counts must be non-negative integers")
        if not self.bin_ms > 0:
            raise InvalidInputError("bin width must be positive")
        object.__setattr__(self, "counts", c.astype(np.int64))


@dataclass(frozen=True, eq=False)
class ConnectivityMatrix:
    """Symmetric non-negative ``d x d`` weights (also used for dissimilarities)."""

    weights: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.weights, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise InvalidInputError("connectivity must be a square matrix")
        if not np.all(np.isfinite(f)):
            raise InvalidInputError("connectivity has non-finite entries")
        if np.any(f < 0):
            raise InvalidInputError("connectivity has negative weights")
        if not np.allclose(f, f.T, rtol=0.0, atol=1e-9):
            raise InvalidInputError("connectivity is not symmetric")
        object.__setattr__(self, "weights", f)


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix, exactly symmetric with zero diagonal."""
    pts = np.asarray(points, dtype=np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    d = np.triu(d, 1)
    return d + d.T


def _streams(seed: int):
    signal, noise = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(signal)), np.random.Generator(np.random.PCG64(noise))


def _parse_structure(structure: str, p: int | None):
    m = re.fullmatch(r"planted-(\d+)-simplex", structure)
    if m:
        return "planted-simplex", int(m.group(1))
    if structure == "planted-simplex":
        return structure, 2 if p is None else int(p)
    if structure not in STRUCTURES:
        raise InvalidInputError(f"unknown structure {structure!r}; choose from {STRUCTURES}")
    return structure, p


def _affine_simplex(rng, p: int, d: int) -> np.ndarray:
    for _ in range(100):
        v = rng.standard_normal((p + 1, d))
        sv = np.linalg.svd(v[1:] - v[0], compute_uv=False)
        if sv[-1] > 0.2 * sv[0]:
            edges = pairwise_distances(v)
            return (v - v.mean(axis=0)) * (2.0 / edges.max())
    raise InvalidInputError("could not draw an affinely independent simplex")


def _simplex_volume(v: np.ndarray) -> float:
    if len(v) == 1:
        return 1.0
    e = v[1:] - v[0]
    return math.sqrt(max(np.linalg.det(e @ e.T), 0.0)) / math.factorial(len(v) - 1)


def gen_synthetic(structure: str, n: int, d: int, sigma: float, seed: int, p: int | None = None,
                  label: int | None = None) -> PointCloud:
    """Noisy samples ``x = signal + eta``, ``eta ~ N(0, sigma^2 I_d)``.

    * ``circle``: unit circle in the first two coordinates.
    * ``two-circles``: two unit circles centred at ``(-1.5, 0)`` and ``(1.5, 0)``.
    * ``sphere``: unit 2-sphere in the first three coordinates.
    * ``planted-simplex`` (or ``planted-<p>-simplex``): the vertices of a
      random affinely independent p-simplex, then points uniform on its
      boundary facets, so the planted feature is a (p-1)-cycle.
    """
    structure, p = _parse_structure(structure, p)
    if sigma < 0 or not np.isfinite(sigma):
        raise InvalidInputError("sigma must be finite and >= 0")
    need_d = {"circle": 2, "two-circles": 2, "sphere": 3, "planted-simplex": p}[structure]
    need_n = {"circle": 3, "two-circles": 6, "sphere": 4, "planted-simplex": (p or 0) + 1}[structure]
    if structure == "planted-simplex" and (p is None or p < 1):
        raise InvalidInputError("planted simplex needs p >= 1")
    if d < need_d:
        raise InvalidInputError(f"{structure} needs ambient dimension >= {need_d}, got {d}")
    if n < need_n:
        raise InvalidInputError(f"{structure} needs at least {need_n} points, got {n}")
    sig_rng, noise_rng = _streams(seed)
    x = np.zeros((n, d))
    if structure == "circle":
        t = sig_rng.uniform(0.0, 2.0 * np.pi, n)
        x[:, 0], x[:, 1] = np.cos(t), np.sin(t)
    elif structure == "two-circles":
        t = sig_rng.uniform(0.0, 2.0 * np.pi, n)
        half = n // 2
        x[:, 0], x[:, 1] = np.cos(t), np.sin(t)
        x[:half, 0] -= TWO_CIRCLE_OFFSET
        x[half:, 0] += TWO_CIRCLE_OFFSET
    elif structure == "sphere":
        g = sig_rng.standard_normal((n, 3))
        x[:, :3] = g / np.linalg.norm(g, axis=1, keepdims=True)
    else:
        v = _affine_simplex(sig_rng, p, d)
        facets = [np.delete(v, i, axis=0) for i in range(p + 1)]
        vol = np.array([_simplex_volume(f) for f in facets])
        x[: p + 1] = v
        rest = n - (p + 1)
        which = sig_rng.choice(p + 1, size=rest, p=vol / vol.sum())
        bary = sig_rng.dirichlet(np.ones(p), size=rest)
        for r in range(rest):
            x[p + 1 + r] = bary[r] @ facets[which[r]]
    if sigma > 0:
        x = x + sigma * noise_rng.standard_normal((n, d))
    return PointCloud(x, label)


def _channel_stats(x: np.ndarray, what: str):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1)
    bad = np.flatnonzero(var <= 1e-24 * np.maximum(1.0, mu.ravel() ** 2))
    if len(bad):
        raise ZeroVarianceError(f"{what} {int(bad[0])} has zero variance", channel=int(bad[0]))
    return mu, var


def zscore(x: TimeSeriesMatrix) -> TimeSeriesMatrix:
    """Per-channel standardisation with population statistics."""
    mu, var = _channel_stats(x.data, "channel")
    z = (x.data - mu) / np.sqrt(var)[:, None]
    # second pass removes the residual rounding in the mean
    z = z - z.mean(axis=1, keepdims=True)
    return TimeSeriesMatrix(z, x.sample_rate)


def _corr_dissimilarity(x: np.ndarray, what: str) -> np.ndarray:
    mu, var = _channel_stats(x, what)
    z = (x - mu) / np.sqrt(var)[:, None]
    corr = (z @ z.T) / x.shape[1]
    w = np.clip(1.0 - corr, 0.0, 2.0)
    w = np.triu(w, 1)
    return w + w.T


def corr_weights(x: TimeSeriesMatrix) -> np.ndarray:
    """``w_ij = 1 - Pearson(x_i, x_j)`` with zero diagonal, in ``[0, 2]``."""
    return _corr_dissimilarity(x.data, "channel")


def cofiring_weights(s: SpikeCounts) -> np.ndarray:
    """Co-firing dissimilarity: one minus the Pearson correlation of binned counts."""
    silent = np.flatnonzero(s.counts.sum(axis=1) == 0)
    if len(silent):
        raise ZeroVarianceError(f"neuron {int(silent[0])} never fires", channel=int(silent[0]))
    return _corr_dissimilarity(s.counts.astype(np.float64), "neuron")


def sym_normalize(f: ConnectivityMatrix) -> ConnectivityMatrix:
    """``F <- D^-1/2 F D^-1/2`` with ``D = diag(row sums)``, after removing self-loops."""
    w = f.weights.copy()
    np.fill_diagonal(w, 0.0)
    deg = w.sum(axis=1)
    zero = np.flatnonzero(deg <= 0)
    if len(zero):
        raise InvalidInputError(f"node {int(zero[0])} has zero total weight")
    s = 1.0 / np.sqrt(deg)
    out = s[:, None] * w * s[None, :]
    out = np.triu(out, 1)
    return ConnectivityMatrix(out + out.T)


# CSV

def _read_rows(path) -> list[list[float]]:
    rows: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        width = None
        for lineno, raw in enumerate(reader, start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            vals = []
            bad = None
            for col, cell in enumerate(raw, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    bad = col
                    break
            if bad is not None:
                if not rows and width is None:
                    width = len(raw)  # header row
                    continue
                raise NonNumericCellError(f"non-numeric cell {raw[bad - 1]!r} in {path}", line=lineno, column=bad)
            if width is None:
                width = len(vals)
            if len(vals) != width:
                raise RaggedRowError(f"row has {len(vals)} cells, expected {width} in {path}", line=lineno)
            rows.append(vals)
    if not rows:
        raise ParseError(f"no numeric rows in {path}")
    return rows


def load_csv(path, kind: str, sample_rate: float = 250.0, bin_ms: float = 1.0, label: int | None = None):
    """Read a CSV into a validated typed object.

    ``kind`` is ``matrix`` (symmetric connectivity or dissimilarity),
    ``timeseries`` (rows are channels), ``spikes`` (rows are neurons) or
    ``points`` (rows are points).  A non-numeric first row is treated as a
    header.
    """
    a = np.array(_read_rows(path), dtype=np.float64)
    if kind == "matrix":
        if a.shape[0] != a.shape[1]:
            raise ParseError(f"matrix file {path} is {a.shape[0]}x{a.shape[1]}, not square")
        bad = np.argwhere(np.abs(a - a.T) > 1e-9)
        if len(bad):
            i, j = (int(v) for v in bad[0])
            raise AsymmetricMatrixError(f"entry ({i + 1},{j + 1}) differs from its transpose in {path}",
                                        line=i + 1, column=j + 1)
        return ConnectivityMatrix(a)
    if kind == "timeseries":
        return TimeSeriesMatrix(a, sample_rate)
    if kind == "spikes":
        return SpikeCounts(a, bin_ms)
    if kind == "points":
        return PointCloud(a, label)
    raise InvalidInputError(f"unknown CSV kind {kind!r}")


def save_csv(path, array, header: list[str] | None = None) -> None:
    """Write a 2-D array with 17 significant digits (lossless for float64)."""
    a = np.atleast_2d(np.asarray(array, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in a:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


@dataclass
class ManifestEntry:
    kind: str
    path: str
    label: int | None = None
    preprocessing: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def write_manifest(path, entries: list[ManifestEntry], extra: dict | None = None) -> None:
    doc = {"entries": [e.__dict__ for e in entries]}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def read_manifest(path) -> tuple[list[ManifestEntry], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        entries = [ManifestEntry(**e) for e in doc["entries"]]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed manifest {path}: {exc}") from exc
    return entries, {k: v for k, v in doc.items() if k != "entries"}
