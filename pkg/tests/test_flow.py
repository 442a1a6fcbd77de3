import math

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, strategies as st

from cohoflow.complex import REALS, FilteredComplex, SparseFieldMatrix, build_rips, hodge_laplacian
from cohoflow.data import pairwise_distances
from cohoflow.errors import InvalidDimensionError, InvalidInputError, InvalidStateError, NumericalOverflowError
from cohoflow.flow import (CochainState, FlowLayerParams, aggregate, aggregate_backward, flow_backward,
                           flow_forward, flow_operator, init_state, stack_forward)
from cohoflow.persistence import compute_persistence
from oracles import central_diff, rel_err, random_dissimilarity


def hollow_triangle():
    return FilteredComplex.from_simplices([((0,), 0), ((1,), 0), ((2,), 0),
                                           ((0, 1), 1), ((0, 2), 2), ((1, 2), 3)])


def random_setup(seed, n=6, c=3):
    rng = np.random.default_rng(seed)
    cx = build_rips(random_dissimilarity(rng, n), 2)
    p = int(rng.integers(0, 3))
    op = hodge_laplacian(cx, p)
    phi = rng.standard_normal((cx.count(p), c))
    return rng, cx, p, op, phi


# initial state

def test_init_state_hollow_triangle():
    cx = hollow_triangle()
    tr = compute_persistence(cx, 1, keep_transcript=True).transcript
    st_ = init_state(cx, tr, 1, 2)
    assert st_.values.shape == (3, 2)
    assert st_.values[:, 0].tolist() == [1.0, 2.0, 3.0]
    # edge (1,2) closes the loop and destroys nothing: unpaired
    assert st_.values[2, 1] == 0.0


def test_init_state_unit_square_creator():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    cx = build_rips(pairwise_distances(sq), 2)
    res = compute_persistence(cx, 1, keep_transcript=True)
    creator, destroyer = res.diagrams[1].generators[0]
    s1 = init_state(cx, res.transcript, 1, 3)
    assert math.isclose(s1.values[creator, 1], math.sqrt(2) - 1)
    assert np.all(s1.values[:, 2] == 0)
    s2 = init_state(cx, res.transcript, 2, 3)
    assert math.isclose(s2.values[destroyer, 1], math.sqrt(2) - 1)


def test_init_state_errors():
    cx = hollow_triangle()
    tr = compute_persistence(cx, 1, keep_transcript=True).transcript
    with pytest.raises(InvalidDimensionError):
        init_state(cx, tr, 2, 2)
    with pytest.raises(InvalidInputError):
        init_state(cx, tr, 1, 1)
    other = build_rips(np.ones((3, 3)) - np.eye(3), 1)
    with pytest.raises(InvalidStateError):
        init_state(other, tr, 1, 2)


# forward

def test_zero_parameters_fixed_point():
    _, _, p, op, phi = random_setup(1)
    out = flow_forward(CochainState(p, phi), FlowLayerParams(np.zeros((3, 3)), 0.0, 0.1, 25), op)
    assert np.array_equal(out.values, phi)


def test_single_step_decoupled_rows():
    rng, _, p, op, phi = random_setup(2)
    w = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    out = flow_forward(CochainState(p, phi), FlowLayerParams(w, 0.0, 0.1, 1), op)
    assert np.allclose(out.values, phi + 0.1 * np.maximum(phi @ w, 0))


def test_harmonic_cochain_is_fixed():
    cx = hollow_triangle()
    lap = hodge_laplacian(cx, 1)
    phi = np.array([[1.0], [-1.0], [1.0]])  # (01) - (02) + (12)
    assert np.array_equal(lap @ phi, np.zeros((3, 1)))
    out = flow_forward(CochainState(1, phi), FlowLayerParams(np.zeros((1, 1)), 1.0, 0.1, 10), lap)
    assert np.array_equal(out.values, phi)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_forward_errors():
    _, _, p, op, phi = random_setup(3)
    with pytest.raises(InvalidInputError):
        flow_forward(CochainState(p, phi[:-1]), FlowLayerParams(np.zeros((3, 3))), op)
    with pytest.raises(InvalidInputError):
        flow_forward(CochainState(p, phi), FlowLayerParams(np.zeros((2, 2))), op)
    with pytest.raises(InvalidInputError):
        FlowLayerParams(np.zeros((2, 2)), step_h=0)
    big = FlowLayerParams(np.full((3, 3), 1e154), 0.0, 1.0, 5)
    with pytest.raises(NumericalOverflowError) as exc:
        flow_forward(CochainState(p, np.abs(phi) + 1), big, op)
    assert exc.value.step is not None


def test_operator_choices():
    cx = build_rips(random_dissimilarity(np.random.default_rng(4), 6), 2)
    for kind in ("hodge", "up", "down"):
        assert flow_operator(cx, 1, kind).shape == (cx.count(1), cx.count(1))
    with pytest.raises(InvalidInputError):
        flow_operator(cx, 1, "delta")


def test_stack_composition():
    rng, _, p, op, phi = random_setup(5)
    layers = [FlowLayerParams(0.3 * rng.standard_normal((3, 3)), float(rng.normal(0, 0.1)), 0.1, 4)
              for _ in range(3)]
    out, cache = stack_forward({p: CochainState(p, phi)}, {p: layers[:1]}, {p: op})
    assert np.array_equal(out[p].values, flow_forward(CochainState(p, phi), layers[0], op).values)
    out3, _ = stack_forward({p: CochainState(p, phi)}, {p: layers}, {p: op})
    manual = CochainState(p, phi)
    for layer in layers:
        manual = flow_forward(manual, layer, op)
    assert np.array_equal(out3[p].values, manual.values)


def test_discretisation_first_order():
    rng, _, p, op, phi = random_setup(6)
    w = 0.5 * rng.standard_normal((3, 3))

    def run(h, steps):
        return flow_forward(CochainState(p, phi), FlowLayerParams(w, -0.05, h, steps), op).values

    ref = run(0.1 / 64, 640)
    e1 = np.abs(run(0.1, 10) - ref).max()
    e2 = np.abs(run(0.05, 20) - ref).max()
    assert 1.6 < e1 / e2 < 2.4


# aggregate

def test_aggregate_zero_and_padding():
    z = aggregate({}, {}, 3, 4)
    assert np.array_equal(z, np.zeros(3 * 7))
    st1 = CochainState(1, np.array([[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]]))
    z = aggregate({1: st1}, {1: np.arange(4.0)}, 3, 4)
    assert np.array_equal(z[:7], np.zeros(7)) and np.array_equal(z[14:], np.zeros(7))
    assert np.array_equal(z[7:14], [2.0, 3.0, 4.0, 0.0, 1.0, 2.0, 3.0])


@given(st.integers(0, 10 ** 6))
def test_permuting_simplices_leaves_embedding(seed):
    rng, _, p, op, phi = random_setup(seed)
    layer = FlowLayerParams(0.3 * rng.standard_normal((3, 3)), 0.05, 0.1, 5)
    perm = rng.permutation(len(phi))
    pm = sps.csc_matrix((np.ones(len(perm)), (np.arange(len(perm)), perm)), shape=(len(perm),) * 2)
    op_perm = SparseFieldMatrix(pm @ op.matrix @ pm.T, REALS)
    a = flow_forward(CochainState(p, phi), layer, op)
    b = flow_forward(CochainState(p, phi[perm]), layer, op_perm)
    assert np.allclose(b.values, a.values[perm], atol=1e-12)
    img = {p: rng.random(4)}
    assert np.allclose(aggregate({p: a}, img, 3, 4), aggregate({p: b}, img, 3, 4), atol=1e-12)


def test_aggregate_backward_is_mean_adjoint():
    rng = np.random.default_rng(9)
    st1 = CochainState(1, rng.random((5, 3)))
    dz = rng.standard_normal(21)
    g = aggregate_backward(dz, {1: st1}, 3, 4)[1]

    def f(x):
        return float(dz @ aggregate({1: CochainState(1, x)}, {}, 3, 4))
    assert rel_err(g, central_diff(f, st1.values)) <= 1e-8


# backward

def _loss_and_grads(phi, layers, op, p, up):
    out, cache = stack_forward({p: CochainState(p, phi)}, {p: layers}, {p: op})
    return float(np.sum(up * out[p].values)), flow_backward(cache, {p: up})


def test_zero_upstream_zero_gradients():
    rng, _, p, op, phi = random_setup(10)
    layers = [FlowLayerParams(rng.standard_normal((3, 3)), 0.1)]
    _, g = _loss_and_grads(phi, layers, op, p, np.zeros_like(phi))
    assert not np.any(g.dW[p][0]) and g.dalpha[p][0] == 0 and not np.any(g.dstate0[p])


def test_harmonic_alpha_gradient_zero():
    cx = hollow_triangle()
    lap = hodge_laplacian(cx, 1)
    phi = np.array([[1.0], [-1.0], [1.0]])
    _, g = _loss_and_grads(phi, [FlowLayerParams(np.zeros((1, 1)), 0.7, 0.1, 3)], lap, 1, np.ones((3, 1)))
    assert g.dalpha[1][0] == 0.0


def test_backward_requires_cache():
    with pytest.raises(InvalidStateError):
        flow_backward(None, {})


def _random_layers(rng, count=2, steps=3):
    return [FlowLayerParams(0.5 * rng.standard_normal((3, 3)), float(rng.normal(0, 0.2)), 0.1, steps)
            for _ in range(count)]


@pytest.mark.parametrize("seed", range(20))
def test_backward_W_matches_fd(seed):
    rng, _, p, op, phi = random_setup(100 + seed)
    layers = _random_layers(rng)
    up = rng.standard_normal(phi.shape)
    _, g = _loss_and_grads(phi, layers, op, p, up)
    for li, layer in enumerate(layers):
        def f(w):
            trial = [FlowLayerParams(w if k == li else l.W, l.alpha, l.step_h, l.steps_T) for k, l in enumerate(layers)]
            return _loss_and_grads(phi, trial, op, p, up)[0]
        assert rel_err(g.dW[p][li], central_diff(f, layer.W)) <= 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_backward_alpha_matches_fd(seed):
    rng, _, p, op, phi = random_setup(200 + seed)
    layers = _random_layers(rng)
    up = rng.standard_normal(phi.shape)
    _, g = _loss_and_grads(phi, layers, op, p, up)
    for li, layer in enumerate(layers):
        def f(a):
            trial = [FlowLayerParams(l.W, float(a[0]) if k == li else l.alpha, l.step_h, l.steps_T)
                     for k, l in enumerate(layers)]
            return _loss_and_grads(phi, trial, op, p, up)[0]
        assert rel_err([g.dalpha[p][li]], central_diff(f, [layer.alpha])) <= 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_backward_state_matches_fd(seed):
    rng, _, p, op, phi = random_setup(300 + seed)
    layers = _random_layers(rng)
    up = rng.standard_normal(phi.shape)
    _, g = _loss_and_grads(phi, layers, op, p, up)
    numeric = central_diff(lambda x: _loss_and_grads(x, layers, op, p, up)[0], phi)
    assert rel_err(g.dstate0[p], numeric) <= 1e-4
