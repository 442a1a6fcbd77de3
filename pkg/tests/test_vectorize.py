import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cohoflow.errors import InvalidInputError
from cohoflow.metrics import wasserstein_distance
from cohoflow.persistence import PersistenceDiagram
from cohoflow.vectorize import ImageParams, vectorize, vectorize_all, vectorize_gradient
from oracles import central_diff, rel_err

PARAMS = ImageParams(4, 4, (0.0, 1.0), (0.0, 2.0), 0.1)


def diag(pairs):
    return PersistenceDiagram(1, np.array(pairs, dtype=float).reshape(-1, 2))


def random_pairs(rng, m, params):
    b = rng.uniform(*params.birth_range, m)
    v = rng.uniform(0.0, params.pers_range[1], m)
    return np.column_stack([b, b + v])


def test_empty_diagram_is_zero():
    assert np.array_equal(vectorize(diag([]), PARAMS), np.zeros(16))


def test_single_pair_closed_form():
    img = vectorize(diag([[0.5, 1.5]]), PARAMS)
    expected = np.zeros(16)
    for row in range(4):  # persistence axis
        for col in range(4):  # birth axis
            cb, cp = 0.125 + 0.25 * col, 0.25 + 0.5 * row
            expected[row * 4 + col] = 1.0 * math.exp(-((cb - 0.5) ** 2 + (cp - 1.0) ** 2) / (2 * 0.1 ** 2))
    assert np.allclose(img, expected, rtol=1e-14, atol=0)


@given(st.integers(0, 10 ** 6))
def test_linearity_over_union(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pairs(rng, 3, PARAMS), random_pairs(rng, 4, PARAMS)
    union = vectorize(diag(np.vstack([a, b])), PARAMS)
    assert np.allclose(union, vectorize(diag(a), PARAMS) + vectorize(diag(b), PARAMS), rtol=1e-12, atol=1e-14)


def test_non_finite_rejected_and_truncated_path():
    d = PersistenceDiagram(0, [[0, math.inf]], max_value=1.0)
    with pytest.raises(InvalidInputError):
        vectorize(d, PARAMS)
    assert np.allclose(vectorize_all([d], PARAMS), vectorize(diag([[0, 1]]), PARAMS))


def test_params_validation_and_json():
    with pytest.raises(InvalidInputError):
        ImageParams(0, 4)
    with pytest.raises(InvalidInputError):
        ImageParams(bandwidth=0.0)
    assert ImageParams.from_json(PARAMS.to_json()) == PARAMS


def test_fit_bounds_and_bandwidth():
    p = ImageParams.fit([diag([[0, 1], [1, 3]])], 8, 8)
    assert p.birth_range == (-0.05, 1.05)
    assert p.pers_range == pytest.approx((0.95, 2.05))
    assert p.bandwidth == pytest.approx(0.05 * 1.1)
    assert p.k == 64


def test_zero_upstream_zero_gradient():
    g = vectorize_gradient(diag([[0.2, 0.9], [0.4, 1.0]]), PARAMS, np.zeros(16))
    assert np.array_equal(g, np.zeros((2, 2)))


def _fd_check(pairs, upstream, params):
    def f(x):
        return float(upstream @ vectorize(diag(x), params))
    return rel_err(vectorize_gradient(diag(pairs), params, upstream), central_diff(f, pairs, 1e-5))


def test_single_pair_gradient_matches_fd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pair = random_pairs(rng, 1, PARAMS)
        assert _fd_check(pair, rng.standard_normal(16), PARAMS) <= 1e-6


@given(st.integers(0, 10 ** 6), st.integers(1, 10))
def test_random_diagram_gradient_matches_fd(seed, m):
    rng = np.random.default_rng(seed)
    pairs = random_pairs(rng, m, PARAMS)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]  # gradient rows follow diagram order
    assert _fd_check(pairs, rng.standard_normal(16), PARAMS) <= 1e-5


def test_gradient_additive_across_pairs():
    up = np.random.default_rng(1).standard_normal(16)
    a, b = [0.3, 0.9], [0.35, 1.1]  # overlapping kernels
    both = vectorize_gradient(diag([a, b]), PARAMS, up)
    assert np.allclose(both[0], vectorize_gradient(diag([a]), PARAMS, up)[0])
    assert np.allclose(both[1], vectorize_gradient(diag([b]), PARAMS, up)[0])


def _lipschitz_constant(params, n=60):
    """sup over a grid of ||J e_b||_2 + ||J e_d||_2 for the single-point image map."""
    best = 0.0
    lo_b, hi_b = params.birth_range
    for b in np.linspace(lo_b - 0.5, hi_b + 0.5, n):
        for v in np.linspace(0, params.pers_range[1] + 0.5, n):
            cols = []
            for k in range(params.k):
                e = np.zeros(params.k)
                e[k] = 1.0
                cols.append(vectorize_gradient(diag([[b, b + v]]), params, e)[0])
            jac = np.array(cols)  # (k, 2)
            best = max(best, np.linalg.norm(jac[:, 0]) + np.linalg.norm(jac[:, 1]))
    return best


def test_one_sided_stability_bound():
    params = ImageParams(4, 4, (0.0, 1.0), (0.0, 1.0), 0.2)
    const = 1.05 * _lipschitz_constant(params, n=30)  # grid sup plus 5% for off-grid maxima
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(500):
        a = random_pairs(rng, int(rng.integers(1, 6)), params)
        b = a + rng.uniform(-0.05, 0.05, a.shape)
        b[:, 1] = np.maximum(b[:, 1], b[:, 0])
        da, db = diag(a), diag(b)
        w1 = wasserstein_distance(da, db, 1)
        gap = np.linalg.norm(vectorize(da, params) - vectorize(db, params))
        if w1 > 0:
            worst = max(worst, gap / w1)
        assert gap <= const * w1 + 1e-12
    print(f"stability: empirical ratio {worst:.4f}, bound C = {const:.4f}")
