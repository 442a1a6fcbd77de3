"""Composite-loss training of the flow model.

The loss for a mini-batch is

    task + lam * sum_p W_q(D_p(Rips(Z)), D_p(Rips(X))) + beta * sum ||W||_F^2

where ``Z`` holds the batch embeddings and ``X`` the batch's input
descriptors (the concatenated persistence images of every sample).  Both
batch diagrams are recomputed for each batch; essential classes are left
out of the topological term.  Gradients of the topological term reach
``Z`` through the critical edges of the matched diagram points.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .complex import MAX_DIM, FilteredComplex, build_rips
from .data import PointCloud, pairwise_distances
from .errors import InvalidInputError, InvalidStateError, NumericalOverflowError
from .flow import (DEFAULT_STEP, DEFAULT_STEPS, EMBED_DIMS, CochainState, FlowLayerParams, aggregate,
                   aggregate_backward, flow_backward, flow_operator, init_state, stack_forward)
from .metrics import MatchingResult, wasserstein_distance
from .persistence import PersistenceDiagram, ReductionTranscript, compute_persistence
from .vectorize import ImageParams, vectorize

log = logging.getLogger(__name__)

TASKS = ("classification", "regression")


@dataclass
class CompositeLossConfig:
    lam: float = 0.1
    beta: float = 1e-4
    q: float = 1.0
    task: str = "classification"
    topo_dims: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0 and np.isfinite(self.beta) and self.beta >= 0):
            raise InvalidInputError("lam and beta must be finite and non-negative")
        if not self.q >= 1:
            raise InvalidInputError("Wasserstein order must be >= 1")
        if self.task not in TASKS:
            raise InvalidInputError(f"task must be one of {TASKS}")
        self.topo_dims = tuple(int(p) for p in self.topo_dims)
        if max(self.topo_dims) + 1 > MAX_DIM:
            raise InvalidInputError("topological term limited to dimensions <= 2")


@dataclass
class OptimizerState:
    lr: float = 0.01
    batch_size: int = 16
    epoch: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or not np.isfinite(self.lr):
            raise InvalidInputError("learning rate must be finite and >= 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch size must be >= 1")


@dataclass
class TaskHead:
    """Linear readout ``out = W z + b``."""

    W: np.ndarray
    b: np.ndarray

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return z @ self.W.T + self.b


# sample preparation

@dataclass
class ComplexParams:
    max_dim: int = 2
    max_scale: float = math.inf
    operator: str = "hodge"


@dataclass
class PreparedSample:
    """Everything about one input that does not depend on trainable parameters."""

    complex: FilteredComplex
    transcript: ReductionTranscript
    diagrams: list[PersistenceDiagram]
    states: dict[int, CochainState]
    operators: dict
    target: float | int | None = None
    images: dict[int, np.ndarray] = field(default_factory=dict)
    input_vector: np.ndarray | None = None


def input_complex(x, params: ComplexParams) -> FilteredComplex:
    if isinstance(x, PointCloud):
        d = x.distances()
    else:
        d = np.asarray(x, dtype=np.float64)
        if d.ndim == 2 and d.shape[0] != d.shape[1]:
            d = pairwise_distances(d)
    return build_rips(d, params.max_dim, params.max_scale)


def prepare_samples(inputs: Sequence, targets: Sequence, params: ComplexParams, channels: int,
                    image_params: ImageParams | None = None, **fit_kw) -> tuple[list[PreparedSample], ImageParams]:
    """Build complexes, diagrams, initial cochains and images for a dataset.

    Image bounds are fitted on these samples unless ``image_params`` is
    given (pass the training set's params when preparing evaluation data).
    """
    if params.max_dim < 1:
        raise InvalidInputError("flow model needs complexes of dimension >= 1")
    samples = []
    for x, y in zip(inputs, targets):
        cx = input_complex(x, params)
        res = compute_persistence(cx, max_p=params.max_dim - 1, keep_transcript=True)
        diagrams = [d.truncated() if d.n_essential() else d for d in res.diagrams]
        dims = [p for p in EMBED_DIMS if p <= cx.max_dim]
        states = {p: init_state(cx, res.transcript, p, channels) for p in dims}
        ops = {p: flow_operator(cx, p, params.operator) for p in dims}
        samples.append(PreparedSample(cx, res.transcript, diagrams, states, ops, y))
    if image_params is None:
        image_params = ImageParams.fit([d for s in samples for d in s.diagrams], **fit_kw)
    for s in samples:
        s.images = {d.dim: vectorize(d, image_params) for d in s.diagrams}
        s.input_vector = np.concatenate([s.images.get(p, np.zeros(image_params.k)) for p in EMBED_DIMS])
    return samples, image_params


# model

@dataclass
class FlowModel:
    channels: int
    W: dict[int, list[np.ndarray]]
    alpha: np.ndarray
    head: TaskHead
    image_params: ImageParams
    step_h: float = DEFAULT_STEP
    steps_T: int = DEFAULT_STEPS
    operator: str = "hodge"
    seed: int = 0
    dims: tuple[int, ...] = EMBED_DIMS

    @classmethod
    def create(cls, channels: int, n_layers: int, image_params: ImageParams, n_out: int, seed: int,
               w_scale: float = 0.1, alpha: float = 0.0, shared_alpha: bool = True,
               step_h: float = DEFAULT_STEP, steps_T: int = DEFAULT_STEPS, operator: str = "hodge",
               head_scale: float | None = None) -> FlowModel:
        rng = np.random.default_rng(seed)
        W = {p: [w_scale * rng.standard_normal((channels, channels)) for _ in range(n_layers)]
             for p in EMBED_DIMS}
        m = len(EMBED_DIMS) * (channels + image_params.k)
        hs = 1.0 / math.sqrt(m) if head_scale is None else head_scale
        head = TaskHead(hs * rng.standard_normal((n_out, m)), np.zeros(n_out))
        a = np.full(1 if shared_alpha else len(EMBED_DIMS), float(alpha))
        return cls(channels, W, a, head, image_params, step_h, steps_T, operator, seed)

    @property
    def n_layers(self) -> int:
        return len(self.W[self.dims[0]])

    @property
    def embedding_size(self) -> int:
        return len(self.dims) * (self.channels + self.image_params.k)

    @property
    def shared_alpha(self) -> bool:
        return len(self.alpha) == 1

    def alpha_slot(self, p: int) -> int:
        return 0 if self.shared_alpha else self.dims.index(p)

    def layers_for(self, p: int) -> list[FlowLayerParams]:
        a = float(self.alpha[self.alpha_slot(p)])
        return [FlowLayerParams(w, a, self.step_h, self.steps_T) for w in self.W[p]]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Live parameter arrays in a fixed order (updated in place by SGD)."""
        out = [(f"W{p}.{l}", w) for p in self.dims for l, w in enumerate(self.W[p])]
        out += [("alpha", self.alpha), ("head.W", self.head.W), ("head.b", self.head.b)]
        return out

    def flow_weights(self) -> list[np.ndarray]:
        return [w for p in self.dims for w in self.W[p]]

    def forward(self, s: PreparedSample):
        """Embedding of one sample plus the flow cache for backprop."""
        layers = {p: self.layers_for(p) for p in s.states}
        final, cache = stack_forward(s.states, layers, s.operators)
        z = aggregate(final, s.images, self.channels, self.image_params.k, self.dims)
        return z, cache, final

    def embed(self, s: PreparedSample) -> np.ndarray:
        return self.forward(s)[0]

    def copy(self) -> FlowModel:
        return copy.deepcopy(self)

    def to_json(self) -> dict:
        return {
            "channels": self.channels,
            "layers": [{"dim": p, "index": l, "W": w.tolist()} for p in self.dims for l, w in enumerate(self.W[p])],
            "alpha": self.alpha.tolist(),
            "step_h": self.step_h,
            "steps_T": self.steps_T,
            "operator": self.operator,
            "readout_widths": {"pooled": self.channels, "image": self.image_params.k, "dims": list(self.dims)},
            "image_params": self.image_params.to_json(),
            "head": {"W": self.head.W.tolist(), "b": self.head.b.tolist()},
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> FlowModel:
        W: dict[int, list] = {}
        for entry in sorted(doc["layers"], key=lambda e: (e["dim"], e["index"])):
            W.setdefault(int(entry["dim"]), []).append(np.array(entry["W"], dtype=np.float64))
        head = TaskHead(np.array(doc["head"]["W"], dtype=np.float64), np.array(doc["head"]["b"], dtype=np.float64))
        return cls(int(doc["channels"]), W, np.array(doc["alpha"], dtype=np.float64), head,
                   ImageParams.from_json(doc["image_params"]), float(doc["step_h"]), int(doc["steps_T"]),
                   doc.get("operator", "hodge"), int(doc.get("seed", 0)),
                   tuple(doc["readout_widths"]["dims"]))


# loss terms

def task_loss(outputs: np.ndarray, targets, task: str) -> tuple[float, np.ndarray]:
    """Mean cross-entropy (integer class targets) or mean squared error, with gradient."""
    out = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    n = out.shape[0]
    if task == "classification":
        y = np.asarray(targets, dtype=np.int64).reshape(-1)
        if len(y) != n:
            raise InvalidInputError("targets and outputs differ in batch size")
        if np.any(y < 0) or np.any(y >= out.shape[1]):
            raise InvalidInputError("class target out of range")
        shifted = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logz
        loss = -float(logp[np.arange(n), y].mean())
        grad = np.exp(logp)
        grad[np.arange(n), y] -= 1.0
        return loss, grad / n
    if task == "regression":
        y = np.asarray(targets, dtype=np.float64).reshape(out.shape)
        r = out - y
        return float(np.mean(r ** 2)), 2.0 * r / r.size
    raise InvalidInputError(f"unknown task {task!r}")


def ridge_term(weights: Sequence[np.ndarray]) -> float:
    return float(sum(np.sum(w * w) for w in weights))


@dataclass
class LossBreakdown:
    total: float
    task: float
    topo: float
    ridge: float
    topo_per_dim: dict[int, float] = field(default_factory=dict)
    matchings: dict[int, MatchingResult] = field(default_factory=dict)


def composite_loss(pred_diagrams, gt_diagrams, task_output, task_target, weights,
                   config: CompositeLossConfig) -> LossBreakdown:
    """``task + lam * topo + beta * ridge`` with the term breakdown.

    ``pred_diagrams`` / ``gt_diagrams`` are indexed by homology dimension;
    ``weights`` are the flow's channel-mixing matrices.
    """
    task, _ = task_loss(task_output, task_target, config.task)
    topo, per_dim, matchings = 0.0, {}, {}
    if config.lam > 0:
        pred = {d.dim: d for d in pred_diagrams}
        gt = {d.dim: d for d in gt_diagrams}
        for p in config.topo_dims:
            if p not in pred or p not in gt:
                raise InvalidInputError(f"missing diagram for dimension {p}")
            dist, match = wasserstein_distance(pred[p], gt[p], config.q, matching=True, infinite="drop")
            per_dim[p] = dist
            matchings[p] = match
            topo += dist
    ridge = ridge_term(weights)
    total = task + config.lam * topo + config.beta * ridge
    return LossBreakdown(total, task, topo, ridge, per_dim, matchings)


def batch_diagrams(points: np.ndarray, dims: Sequence[int], transcript: bool = False):
    """Rips diagrams of a batch of vectors (rows), full scale."""
    cx = build_rips(pairwise_distances(points), max_dim=max(dims) + 1)
    res = compute_persistence(cx, max_p=max(dims), keep_transcript=transcript)
    return cx, res


def _critical_edge(cx: FilteredComplex, p: int, idx: int, dist: np.ndarray) -> tuple[int, int] | None:
    """Vertex pair realising the value of p-simplex ``idx`` (its longest edge)."""
    if p == 0:
        return None
    verts = cx.simplices(p)[idx]
    best, pair = -1.0, None
    for a in range(len(verts)):
        for b in range(a + 1, len(verts)):
            d = dist[verts[a], verts[b]]
            if d > best:
                best, pair = d, (int(verts[a]), int(verts[b]))
    return pair


def topo_loss_gradient(points: np.ndarray, cx: FilteredComplex, transcript: ReductionTranscript,
                       pred_diagrams, gt_diagrams, matchings: dict[int, MatchingResult],
                       q: float = 1.0) -> np.ndarray:
    """Subgradient of ``sum_p W_q(pred_p, gt_p)`` w.r.t. the embedded points.

    Each matched point's birth/death derivative is routed to its critical
    simplex from the transcript, then to the two points spanning that
    simplex's longest edge.  Ties are resolved by taking the first
    maximiser.
    """
    points = np.asarray(points, dtype=np.float64)
    if transcript is None or transcript.fingerprint != cx.fingerprint:
        raise InvalidStateError("reduction transcript is stale for this complex")
    if cx.n_vertices != len(points):
        raise InvalidStateError("complex and point batch differ in size")
    dist = pairwise_distances(points)
    if cx.count(1) and not np.allclose(dist[cx.simplices(1)[:, 0], cx.simplices(1)[:, 1]], cx.values(1),
                                       rtol=0, atol=1e-9):
        raise InvalidStateError("complex was not built from these points")
    pred = {d.dim: d for d in pred_diagrams}
    gt = {d.dim: d for d in gt_diagrams}
    grad = np.zeros_like(points)

    def push(p: int, simplex: int, coeff: float):
        edge = _critical_edge(cx, p, simplex, dist)
        if edge is None or coeff == 0.0:
            return
        u, v = edge
        length = dist[u, v]
        if length == 0:
            return
        g = coeff * (points[u] - points[v]) / length
        grad[u] += g
        grad[v] -= g

    for p, match in matchings.items():
        dp, dg = pred[p], gt[p]
        if dp.generators is None:
            raise InvalidStateError("predicted diagram carries no generators")
        if match.cost == 0:
            continue
        for i, j in match.assignment:
            if i is None:
                continue
            b, d = dp.pairs[i]
            if j is None:
                c = (d - b) / 2.0
                db, dd = -0.5, 0.5
            else:
                b2, d2 = dg.pairs[j]
                if abs(b - b2) > abs(d - d2):
                    c = abs(b - b2)
                    db, dd = math.copysign(1.0, b - b2), 0.0
                else:
                    c = abs(d - d2)
                    dd, db = (math.copysign(1.0, d - d2) if d != d2 else 0.0), 0.0
            scale = 1.0 if q == 1 else (c ** (q - 1)) * match.cost ** (1 - q)
            creator, destroyer = dp.generators[i]
            push(p, int(creator), scale * db)
            push(p + 1, int(destroyer), scale * dd)
    return grad


@dataclass
class BatchResult:
    loss: LossBreakdown
    outputs: np.ndarray
    embeddings: np.ndarray
    grads: dict[str, np.ndarray] | None = None


def batch_objective(model: FlowModel, samples: Sequence[PreparedSample], config: CompositeLossConfig,
                    grad: bool = True) -> BatchResult:
    """Forward the batch, evaluate the composite loss and (optionally) backprop it."""
    zs, caches, finals = [], [], []
    for s in samples:
        z, cache, final = model.forward(s)
        zs.append(z)
        caches.append(cache)
        finals.append(final)
    Z = np.vstack(zs)
    out = model.head(Z)
    targets = [s.target for s in samples]

    pred, gt, cx, res = [], [], None, None
    if config.lam > 0:
        X = np.vstack([s.input_vector for s in samples])
        _, gt_res = batch_diagrams(X, config.topo_dims)
        cx, res = batch_diagrams(Z, config.topo_dims, transcript=True)
        pred, gt = res.diagrams, gt_res.diagrams
    loss = composite_loss(pred, gt, out, targets, model.flow_weights(), config)
    if not grad:
        return BatchResult(loss, out, Z)

    _, dout = task_loss(out, targets, config.task)
    dZ = dout @ model.head.W
    grads = {"head.W": dout.T @ Z, "head.b": dout.sum(axis=0)}
    if config.lam > 0:
        dZ = dZ + config.lam * topo_loss_gradient(Z, cx, res.transcript, pred, gt, loss.matchings, config.q)
    dW = {p: [2.0 * config.beta * w for w in model.W[p]] for p in model.dims}
    dalpha = np.zeros_like(model.alpha)
    for i, s in enumerate(samples):
        up = aggregate_backward(dZ[i], finals[i], model.channels, model.image_params.k, model.dims)
        fg = flow_backward(caches[i], up)
        for p in fg.dW:
            for l, g in enumerate(fg.dW[p]):
                dW[p][l] += g
            dalpha[model.alpha_slot(p)] += sum(fg.dalpha[p])
    for p in model.dims:
        for l, g in enumerate(dW[p]):
            grads[f"W{p}.{l}"] = g
    grads["alpha"] = dalpha
    return BatchResult(loss, out, Z, grads)


def accuracy(outputs: np.ndarray, targets) -> float:
    return float(np.mean(np.argmax(outputs, axis=1) == np.asarray(targets)))


def f1_macro(pred, targets) -> float:
    pred, targets = np.asarray(pred), np.asarray(targets)
    scores = []
    for c in np.union1d(pred, targets):
        tp = np.sum((pred == c) & (targets == c))
        fp = np.sum((pred == c) & (targets != c))
        fn = np.sum((pred != c) & (targets == c))
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores)) if scores else 0.0


def sgd_step(model: FlowModel, grads: dict[str, np.ndarray], lr: float) -> None:
    """``theta <- theta - lr * grad`` for every parameter, in place."""
    for name, arr in model.parameters():
        arr -= lr * grads[name]


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def evaluate(model: FlowModel, samples: Sequence[PreparedSample], config: CompositeLossConfig,
             batch_size: int) -> dict:
    """Mean loss terms over fixed consecutive batches, plus the task metric."""
    rows, outs = [], []
    for idx in _batches(len(samples), batch_size, None):
        r = batch_objective(model, [samples[i] for i in idx], config, grad=False)
        rows.append(r.loss)
        outs.append(r.outputs)
    out = np.vstack(outs)
    targets = [s.target for s in samples]
    report = {
        "task_loss": float(np.mean([r.task for r in rows])),
        "topo_loss": float(np.mean([r.topo for r in rows])),
        "ridge": rows[0].ridge if rows else 0.0,
    }
    report["total"] = report["task_loss"] + config.lam * report["topo_loss"] + config.beta * report["ridge"]
    if config.task == "classification":
        report["accuracy"] = accuracy(out, targets)
    else:
        report["mse"] = float(np.mean((out.reshape(-1) - np.asarray(targets, dtype=np.float64)) ** 2))
    return report


LOG_FIELDS = ("epoch", "task_loss", "topo_loss", "ridge", "total", "accuracy")


def _check_finite(loss: LossBreakdown, epoch: int, batch: int) -> None:
    for term in ("task", "topo", "ridge", "total"):
        v = getattr(loss, term)
        if not math.isfinite(v):
            raise NumericalOverflowError(f"non-finite {term} loss at epoch {epoch}, batch {batch}", step=batch)


def train(samples: Sequence[PreparedSample], model: FlowModel, config: CompositeLossConfig,
          opt: OptimizerState, epochs: int, checkpoint_dir=None, history: list | None = None,
          best: float = math.inf) -> tuple[FlowModel, list[dict]]:
    """Mini-batch SGD from ``opt.epoch`` up to ``epochs``.

    Epoch ``e`` shuffles with ``default_rng([seed, e])`` so a run resumed
    from a checkpoint follows the same trajectory.  Row ``epoch=0`` of the
    log evaluates the initial model.  Per-batch topological distances are
    kept in each row under ``batch_topo``.
    """
    if not samples:
        raise InvalidInputError("empty dataset")
    history = [] if history is None else list(history)
    if opt.epoch == 0 and not history:
        row = {"epoch": 0, **evaluate(model, samples, config, opt.batch_size), "batch_topo": []}
        history.append(row)
        best = row["total"]
        _save(checkpoint_dir, "best.json", model, opt, config, history, best)
    for epoch in range(opt.epoch + 1, epochs + 1):
        rng = np.random.default_rng([opt.seed, epoch])
        batch_topo = []
        for b, idx in enumerate(_batches(len(samples), opt.batch_size, rng)):
            try:
                r = batch_objective(model, [samples[i] for i in idx], config)
            except NumericalOverflowError as exc:
                raise NumericalOverflowError(f"{exc} (epoch {epoch}, batch {b}, term flow)", step=b) from exc
            _check_finite(r.loss, epoch, b)
            for name, g in r.grads.items():
                if not np.all(np.isfinite(g)):
                    raise NumericalOverflowError(f"non-finite gradient {name} at epoch {epoch}, batch {b}", step=b)
            batch_topo.append(r.loss.topo_per_dim)
            sgd_step(model, r.grads, opt.lr)
        opt.epoch = epoch
        row = {"epoch": epoch, **evaluate(model, samples, config, opt.batch_size),
               "batch_topo": [{str(k): v for k, v in t.items()} for t in batch_topo]}
        history.append(row)
        log.info("epoch %d total %.6g acc %s", epoch, row["total"], row.get("accuracy"))
        if row["total"] < best:
            best = row["total"]
            _save(checkpoint_dir, "best.json", model, opt, config, history, best)
        _save(checkpoint_dir, "last.json", model, opt, config, history, best)
    return model, history


def _save(directory, name, model, opt, config, history, best) -> None:
    if directory is None:
        return
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(json.dumps(checkpoint_doc(model, opt, config, history, best), sort_keys=True))


def checkpoint_doc(model: FlowModel, opt: OptimizerState, config: CompositeLossConfig, history, best) -> dict:
    return {
        "model": model.to_json(),
        "optimizer": {"lr": opt.lr, "batch_size": opt.batch_size, "epoch": opt.epoch, "seed": opt.seed},
        "loss": {"lam": config.lam, "beta": config.beta, "q": config.q, "task": config.task,
                 "topo_dims": list(config.topo_dims)},
        "history": history,
        "best": best,
    }


def load_checkpoint(path) -> tuple[FlowModel, OptimizerState, CompositeLossConfig, list, float]:
    doc = json.loads(Path(path).read_text())
    return (FlowModel.from_json(doc["model"]), OptimizerState(**doc["optimizer"]),
            CompositeLossConfig(**doc["loss"]), doc["history"], doc["best"])


def write_log_csv(path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(LOG_FIELDS) + "\n")
        for row in history:
            fh.write(",".join(repr(row.get(k, "")) if k != "epoch" else str(row[k]) for k in LOG_FIELDS) + "\n")


# gradient verification

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    n_checked: int
    n_kinks: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def rel_error(analytic: np.ndarray, numeric: np.ndarray, scale: float = 0.0) -> float:
    """``max|a - f| / max(max|a|, max|f|, scale)``; 0 when all vanish."""
    a, f = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(f), initial=0.0), scale)
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(a - f)) / scale)


def central_difference(fun, x: np.ndarray, h: float = 1e-5, coords=None, kink_tol: float = 1e-3):
    """Central differences of scalar ``fun`` over entries of ``x`` (modified in place, restored).

    Returns ``(estimates, mask)``; ``mask`` is False where the one-sided
    slopes disagree (a kink or tie inside the stencil).
    """
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    f0 = fun()
    est, ok = {}, {}
    for c in coords:
        orig = flat[c]
        flat[c] = orig + h
        fp = fun()
        flat[c] = orig - h
        fm = fun()
        flat[c] = orig
        sp, sm = (fp - f0) / h, (f0 - fm) / h
        est[c] = (fp - fm) / (2 * h)
        ok[c] = abs(sp - sm) <= max(1e-6, kink_tol * (abs(sp) + abs(sm)))
    return est, ok


def gradient_check(model: FlowModel, samples: Sequence[PreparedSample], config: CompositeLossConfig,
                   tolerance: float = 1e-4, h: float = 1e-5, params: Sequence[str] | None = None,
                   max_coords: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare backprop against central differences of the composite loss.

    Coordinates whose stencil straddles a kink (ReLU switch, matching
    change, L-infinity tie) are excluded and counted in ``n_kinks``.
    Errors are relative to the largest analytic entry of the whole
    parameter, so subsampled near-zero coordinates do not measure only
    finite-difference round-off.
    """
    rng = np.random.default_rng(seed)
    analytic = batch_objective(model, samples, config).grads

    def fun():
        return batch_objective(model, samples, config, grad=False).loss.total

    per, n_checked, n_kinks = {}, 0, 0
    for name, arr in model.parameters():
        if params is not None and name not in params:
            continue
        coords = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            coords = np.sort(rng.choice(arr.size, max_coords, replace=False))
        est, ok = central_difference(fun, arr, h, coords.tolist())
        keep = [c for c in coords.tolist() if ok[c]]
        n_kinks += len(coords) - len(keep)
        n_checked += len(keep)
        a = analytic[name].reshape(-1)[keep]
        f = np.array([est[c] for c in keep])
        per[name] = rel_error(a, f, float(np.max(np.abs(analytic[name]), initial=0.0)))
    worst = max(per.values(), default=0.0)
    return GradCheckReport(worst, per, n_checked, n_kinks, tolerance)
