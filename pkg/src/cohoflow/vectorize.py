"""Persistence images: diagrams -> fixed-length vectors, with exact gradients.

A pair ``(b, d)`` is moved to ``(b, d - b)`` and splats weight ``d - b``
times a unit-peak isotropic Gaussian onto the pixel centres, so each
pixel is bounded by the diagram's total persistence.  Pixels are
flattened row-major with persistence as the row axis:
``index = row * grid_w + col``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError
from .persistence import PersistenceDiagram

DEFAULT_GRID = 8
DEFAULT_MARGIN = 0.05
DEFAULT_BANDWIDTH_FRACTION = 0.05


@dataclass(frozen=True)
class ImageParams:
    grid_w: int = DEFAULT_GRID
    grid_h: int = DEFAULT_GRID
    birth_range: tuple[float, float] = (0.0, 1.0)
    pers_range: tuple[float, float] = (0.0, 1.0)
    bandwidth: float = 0.05

    def __post_init__(self):
        if self.grid_w < 1 or self.grid_h < 1:
            raise InvalidInputError("persistence image needs at least one pixel")
        if not self.bandwidth > 0:
            raise InvalidInputError("bandwidth must be positive")
        for name in ("birth_range", "pers_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise InvalidInputError(f"{name} must be a finite increasing interval")
            object.__setattr__(self, name, (float(lo), float(hi)))

    @property
    def k(self) -> int:
        return self.grid_w * self.grid_h

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel centres ``(birth, persistence)``, each of length ``k``."""
        b0, b1 = self.birth_range
        p0, p1 = self.pers_range
        bx = b0 + (np.arange(self.grid_w) + 0.5) * (b1 - b0) / self.grid_w
        py = p0 + (np.arange(self.grid_h) + 0.5) * (p1 - p0) / self.grid_h
        cy, cx = np.meshgrid(py, bx, indexing="ij")
        return cx.ravel(), cy.ravel()

    def to_json(self) -> dict:
        d = asdict(self)
        d["birth_range"] = list(self.birth_range)
        d["pers_range"] = list(self.pers_range)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> ImageParams:
        return cls(int(doc["grid_w"]), int(doc["grid_h"]), tuple(doc["birth_range"]),
                   tuple(doc["pers_range"]), float(doc["bandwidth"]))

    @classmethod
    def fit(cls, diagrams, grid_w: int = DEFAULT_GRID, grid_h: int = DEFAULT_GRID,
            margin: float = DEFAULT_MARGIN, bandwidth_fraction: float = DEFAULT_BANDWIDTH_FRACTION) -> ImageParams:
        """Bounds from the min/max over training diagrams, widened by ``margin``.

        Bandwidth defaults to ``bandwidth_fraction`` of the persistence range.
        Infinite deaths must be truncated beforehand.
        """
        pairs = [d.pairs for d in diagrams if len(d)]
        pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2))
        if not np.all(np.isfinite(pairs)):
            raise InvalidInputError("fit needs finite diagrams; truncate infinite deaths first")
        births = pairs[:, 0] if len(pairs) else np.zeros(1)
        pers = pairs[:, 1] - pairs[:, 0] if len(pairs) else np.zeros(1)

        def widen(lo, hi):
            span = hi - lo if hi > lo else max(abs(hi), 1.0)
            return lo - margin * span, hi + margin * span

        b_rng = widen(float(births.min()), float(births.max()))
        p_rng = widen(float(pers.min()), float(pers.max()))
        return cls(grid_w, grid_h, b_rng, p_rng, bandwidth_fraction * (p_rng[1] - p_rng[0]))


def _finite_pairs(diagram: PersistenceDiagram) -> np.ndarray:
    pairs = diagram.pairs
    if not np.all(np.isfinite(pairs)):
        raise InvalidInputError("vectorize needs a finite diagram; truncate infinite deaths first")
    return pairs


def _kernel(pairs: np.ndarray, params: ImageParams):
    cx, cy = params.centers()
    s2 = params.bandwidth ** 2
    b = pairs[:, 0:1]
    pers = pairs[:, 1:2] - b
    dx = cx[None, :] - b
    dy = cy[None, :] - pers
    g = np.exp(-(dx * dx + dy * dy) / (2.0 * s2))
    return pers, dx, dy, g, s2


def vectorize(diagram: PersistenceDiagram, params: ImageParams) -> np.ndarray:
    """Persistence image of ``diagram`` as a length-``k`` vector."""
    pairs = _finite_pairs(diagram)
    if len(pairs) == 0:
        return np.zeros(params.k)
    pers, _, _, g, _ = _kernel(pairs, params)
    return (pers * g).sum(axis=0)


def vectorize_gradient(diagram: PersistenceDiagram, params: ImageParams, upstream) -> np.ndarray:
    """Gradient of ``upstream · vectorize(diagram)`` w.r.t. each pair, shape ``(m, 2)``.

    Columns are ``d/d birth`` and ``d/d death``.
    """
    pairs = _finite_pairs(diagram)
    u = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if len(u) != params.k:
        raise InvalidInputError(f"upstream has length {len(u)}, expected {params.k}")
    if len(pairs) == 0:
        return np.zeros((0, 2))
    pers, dx, dy, g, s2 = _kernel(pairs, params)
    # f = v g(u, v) with u = b, v = d - b
    df_du = pers * g * dx / s2
    df_dv = g + pers * g * dy / s2
    gu = df_du @ u
    gv = df_dv @ u
    return np.column_stack([gu - gv, gv])


def vectorize_all(diagrams, params: ImageParams) -> np.ndarray:
    """Concatenated images of several diagrams, truncating infinite deaths first."""
    out = []
    for d in diagrams:
        out.append(vectorize(d.truncated() if d.n_essential() else d, params))
    return np.concatenate(out) if out else np.zeros(0)
