"""Cohomological flow layers on per-simplex cochain features.

One layer integrates ``dφ/dt = ReLU(φ W + α L φ)`` with explicit forward
Euler, where ``φ`` is an ``(n_p, c)`` cochain (one row per p-simplex),
``W`` mixes channels and ``L`` is a simplicial operator on p-cochains
(Hodge Laplacian by default).  Layers are stacked per dimension, pooled
and concatenated with the persistence images into one embedding.

A literal ``α δ^p φ`` term cannot appear here: ``δ^p φ`` lives on
(p+1)-simplices while ``dφ/dt`` lives on p-simplices.  The operator is
therefore one of the p-to-p Laplacians built from ``δ``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .complex import FilteredComplex, SparseFieldMatrix, down_laplacian, hodge_laplacian, up_laplacian
from .errors import InvalidDimensionError, InvalidInputError, InvalidStateError, NumericalOverflowError
from .persistence import ReductionTranscript

OPERATORS = {
    "hodge": hodge_laplacian,
    "up": up_laplacian,
    "down": down_laplacian,
}

DEFAULT_STEP = 0.1
DEFAULT_STEPS = 10
EMBED_DIMS = (0, 1, 2)


@dataclass(frozen=True, eq=False)
class CochainState:
    dim: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidInputError("cochain values must be an (n_simplices, channels) matrix")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class FlowLayerParams:
    W: np.ndarray
    alpha: float = 0.0
    step_h: float = DEFAULT_STEP
    steps_T: int = DEFAULT_STEPS

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise InvalidInputError("W must be a square channel-mixing matrix")
        if not np.all(np.isfinite(self.W)) or not np.isfinite(self.alpha):
            raise InvalidInputError("layer parameters must be finite")
        if not self.step_h > 0 or int(self.steps_T) < 1:
            raise InvalidInputError("need step_h > 0 and steps_T >= 1")
        self.steps_T = int(self.steps_T)

    @property
    def total_time(self) -> float:
        return self.step_h * self.steps_T


def flow_operator(cx: FilteredComplex, p: int, kind: str = "hodge") -> SparseFieldMatrix:
    """p-cochain operator driving the flow: ``hodge`` (default), ``up`` or ``down`` Laplacian."""
    try:
        build = OPERATORS[kind]
    except KeyError:
        raise InvalidInputError(f"unknown flow operator {kind!r}; choose from {sorted(OPERATORS)}") from None
    return build(cx, p)


def init_state(cx: FilteredComplex, transcript: ReductionTranscript, p: int, c: int,
               diagrams=None) -> CochainState:
    """Structural initial cochain for dimension ``p``.

    Channel 0 holds each simplex's filtration value, channel 1 the
    persistence of the pair it creates or destroys (0 if unpaired or
    essential); the remaining channels start at zero.  ``diagrams`` is
    accepted for call-site symmetry and unused: the diagrams enter the
    embedding through :func:`aggregate`.
    """
    if c < 2:
        raise InvalidInputError("need at least two channels")
    if not 0 <= p <= cx.max_dim:
        raise InvalidDimensionError(f"dimension {p} absent from complex (max_dim {cx.max_dim})")
    if transcript is None or transcript.fingerprint != cx.fingerprint:
        raise InvalidStateError("reduction transcript does not belong to this complex")
    phi = np.zeros((cx.count(p), c))
    phi[:, 0] = cx.values(p)
    phi[:, 1] = transcript.persistence_of(cx, p)
    return CochainState(p, phi)


def _check_operator(state: CochainState, op: SparseFieldMatrix, layer: FlowLayerParams) -> None:
    if op.shape != (state.n, state.n):
        raise InvalidInputError(f"operator shape {op.shape} does not match {state.n} simplices")
    if layer.W.shape[0] != state.channels:
        raise InvalidInputError(f"W is {layer.W.shape} but state has {state.channels} channels")


def _euler(phi: np.ndarray, layer: FlowLayerParams, op, record: bool):
    traj = [phi] if record else None
    for step in range(layer.steps_T):
        pre = phi @ layer.W + layer.alpha * (op @ phi)
        phi = phi + layer.step_h * np.maximum(pre, 0.0)
        if not np.all(np.isfinite(phi)):
            raise NumericalOverflowError(f"flow diverged at Euler step {step}", step=step)
        if record:
            traj.append(phi)
    return phi, traj


def flow_forward(state: CochainState, layer: FlowLayerParams, op: SparseFieldMatrix) -> CochainState:
    """Apply one layer: ``steps_T`` Euler steps of size ``step_h``."""
    _check_operator(state, op, layer)
    phi, _ = _euler(state.values, layer, op.matrix, record=False)
    return CochainState(state.dim, phi)


@dataclass
class FlowCache:
    """Per-dimension Euler trajectories retained for the backward pass."""

    layers: dict[int, list[FlowLayerParams]]
    operators: dict[int, SparseFieldMatrix]
    trajectories: dict[int, list[list[np.ndarray]]] = field(default_factory=dict)


def stack_forward(states: Mapping[int, CochainState], layers: Mapping[int, Sequence[FlowLayerParams]],
                  operators: Mapping[int, SparseFieldMatrix]) -> tuple[dict[int, CochainState], FlowCache]:
    """Compose the layers of each dimension, caching every intermediate state."""
    cache = FlowCache({p: list(layers[p]) for p in states}, {p: operators[p] for p in states})
    out = {}
    for p, st in states.items():
        phi = st.values
        trajs = []
        for layer in cache.layers[p]:
            _check_operator(CochainState(p, phi), operators[p], layer)
            phi, traj = _euler(phi, layer, operators[p].matrix, record=True)
            trajs.append(traj)
        cache.trajectories[p] = trajs
        out[p] = CochainState(p, phi)
    return out, cache


@dataclass
class FlowGradients:
    dW: dict[int, list[np.ndarray]]
    dalpha: dict[int, list[float]]
    dstate0: dict[int, np.ndarray]


def flow_backward(cache: FlowCache | None, upstream: Mapping[int, np.ndarray]) -> FlowGradients:
    """Reverse-mode gradients of the Euler-discretised stack.

    ``upstream[p]`` is ``dLoss/dφ_final`` for dimension ``p``.  Each step
    ``φ' = φ + h ReLU(φ W + α L φ)`` is differentiated exactly, using the
    transpose of the configured operator.
    """
    if cache is None or not cache.trajectories:
        raise InvalidStateError("flow_backward needs the cache from stack_forward")
    dW, dalpha, dstate = {}, {}, {}
    for p, trajs in cache.trajectories.items():
        if p not in upstream:
            raise InvalidInputError(f"missing upstream gradient for dimension {p}")
        op = cache.operators[p].matrix
        op_t = op.T
        g = np.array(upstream[p], dtype=np.float64)
        layers = cache.layers[p]
        dW[p] = [np.zeros_like(layer.W) for layer in layers]
        dalpha[p] = [0.0] * len(layers)
        for li in range(len(layers) - 1, -1, -1):
            layer, traj = layers[li], trajs[li]
            w_t = layer.W.T
            for step in range(layer.steps_T - 1, -1, -1):
                phi = traj[step]
                lphi = op @ phi
                pre = phi @ layer.W + layer.alpha * lphi
                m = layer.step_h * g * (pre > 0.0)
                dW[p][li] += phi.T @ m
                dalpha[p][li] += float(np.sum(m * lphi))
                g = g + m @ w_t + layer.alpha * (op_t @ m)
        dstate[p] = g
    return FlowGradients(dW, dalpha, dstate)


def aggregate(states: Mapping[int, CochainState], images: Mapping[int, np.ndarray], c: int, k: int,
              dims: Sequence[int] = EMBED_DIMS) -> np.ndarray:
    """Embedding ``z``: per dimension, mean-pooled state (length c) then image (length k).

    Missing or empty dimensions contribute zero blocks, so ``len(z)`` is
    always ``len(dims) * (c + k)``.
    """
    blocks = []
    for p in dims:
        pooled = np.zeros(c)
        st = states.get(p)
        if st is not None and st.n:
            if st.channels != c:
                raise InvalidInputError(f"dimension {p} state has {st.channels} channels, expected {c}")
            pooled = st.values.mean(axis=0)
        img = np.zeros(k) if images.get(p) is None else np.asarray(images[p], dtype=np.float64)
        if len(img) != k:
            raise InvalidInputError(f"dimension {p} image has length {len(img)}, expected {k}")
        blocks.append(pooled)
        blocks.append(img)
    return np.concatenate(blocks)


def aggregate_backward(dz: np.ndarray, states: Mapping[int, CochainState], c: int, k: int,
                       dims: Sequence[int] = EMBED_DIMS) -> dict[int, np.ndarray]:
    """Gradient of the pooled part of ``z`` w.r.t. each final state."""
    dz = np.asarray(dz, dtype=np.float64)
    if len(dz) != len(dims) * (c + k):
        raise InvalidInputError("embedding gradient has the wrong length")
    out = {}
    for slot, p in enumerate(dims):
        st = states.get(p)
        if st is None:
            continue
        block = dz[slot * (c + k): slot * (c + k) + c]
        out[p] = np.broadcast_to(block / max(st.n, 1), st.values.shape).copy() if st.n else np.zeros((0, c))
    return out
