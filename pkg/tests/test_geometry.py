import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_chamfer, brute_nearest
from pcnovelty.geometry import (
    NnIndex, as_cloud, chamfer, chamfer_grad, nearest, nn_correspondence,
    normalize_unit_sphere, resample,
)

coord = st.floats(-10, 10, allow_nan=False, width=64)


def clouds(min_size=1, max_size=40):
    return st.integers(min_size, max_size).flatmap(lambda n: arrays(np.float64, (n, 3), elements=coord))


# small integer grids produce many exact ties
def tie_clouds(max_size=30):
    return st.integers(1, max_size).flatmap(
        lambda n: arrays(np.float64, (n, 3), elements=st.integers(-2, 2).map(float)))


def test_chamfer_examples():
    assert chamfer([[0, 0, 0]], [[0, 0, 0]]) == 0.0
    assert chamfer([[0, 0, 0]], [[3, 4, 0]]) == 10.0
    assert chamfer([[0, 0, 0]], [[3, 4, 0]], directed_max=True) == 5.0


def test_chamfer_grad_example():
    g = chamfer_grad([[0, 0, 0]], [[1, 0, 0]])
    np.testing.assert_array_equal(g, [[-2.0, 0.0, 0.0]])


def test_nearest_example_and_ties():
    idx = NnIndex(np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0, 5.0]]))
    assert nearest(idx, [0, 0, 0]) == (0, 1.0)
    assert nearest(idx, [0, 0, 4.0]) == (2, 1.0)


@settings(max_examples=150, deadline=None)
@given(tie_clouds(), tie_clouds())
def test_kdtree_matches_brute_force_with_ties(P, Q):
    index = NnIndex(P, leaf_size=2)
    idx, dist = index.query(Q)
    for k, q in enumerate(Q):
        assert (int(idx[k]), float(dist[k])) == brute_nearest(P, q)


@settings(max_examples=100, deadline=None)
@given(clouds(), clouds())
def test_nn_correspondence_matches_brute_force(P, Q):
    idx, dist = nn_correspondence(P, Q)
    for k, p in enumerate(P):
        assert (int(idx[k]), float(dist[k])) == brute_nearest(Q, p)


@settings(max_examples=100, deadline=None)
@given(clouds(), clouds())
def test_chamfer_symmetric_and_nonnegative(P, Q):
    a, b = chamfer(P, Q), chamfer(Q, P)
    assert a == b
    assert a >= 0.0
    assert chamfer(P, P) == 0.0


@settings(max_examples=100, deadline=None)
@given(clouds(max_size=20))
def test_chamfer_zero_on_equal_sets_in_any_order(P):
    rng = np.random.default_rng(0)
    Q = np.concatenate([P, P[:3]])[rng.permutation(len(P) + min(3, len(P)))]
    assert chamfer(P, Q) == 0.0


@settings(max_examples=60, deadline=None)
@given(clouds(2, 15), clouds(2, 15))
def test_chamfer_grad_finite_differences(P, Q):
    # skip configurations sitting on a correspondence switch or a coincidence
    _, dpq = nn_correspondence(P, Q)
    _, dqp = nn_correspondence(Q, P)
    if min(dpq.min(), dqp.min()) < 1e-3:
        return
    g = chamfer_grad(P, Q)
    h = 1e-6
    for i in range(len(P)):
        for c in range(3):
            Pp, Pm = P.copy(), P.copy()
            Pp[i, c] += h
            Pm[i, c] -= h
            if not (np.array_equal(nn_correspondence(Pp, Q)[0], nn_correspondence(P, Q)[0])
                    and np.array_equal(nn_correspondence(Q, Pp)[0], nn_correspondence(Q, P)[0])
                    and np.array_equal(nn_correspondence(Pm, Q)[0], nn_correspondence(P, Q)[0])
                    and np.array_equal(nn_correspondence(Q, Pm)[0], nn_correspondence(Q, P)[0])):
                continue
            fd = (chamfer(Pp, Q) - chamfer(Pm, Q)) / (2 * h)
            assert fd == pytest.approx(g[i, c], abs=1e-5, rel=1e-4)


def test_chamfer_matches_oracle_random():
    rng = np.random.default_rng(5)
    for _ in range(50):
        P = rng.normal(size=(rng.integers(1, 60), 3))
        Q = rng.normal(size=(rng.integers(1, 60), 3))
        assert chamfer(P, Q) == brute_chamfer(P, Q)
        assert chamfer(P, Q, directed_max=True) == brute_chamfer(P, Q, directed_max=True)


def test_as_cloud_validation():
    with pytest.raises(ValueError, match="empty"):
        as_cloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        as_cloud(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        as_cloud([[0, 0, math.nan]])


def test_resample_sizes_and_coverage():
    rng = np.random.default_rng(1)
    cloud = rng.normal(size=(10, 3))
    down = resample(cloud, 4, np.random.default_rng(0))
    assert down.shape == (4, 3)
    assert len({tuple(r) for r in down}) == 4
    up = resample(cloud, 25, np.random.default_rng(0))
    assert up.shape == (25, 3)
    # every original point survives upsampling
    assert {tuple(r) for r in up} == {tuple(r) for r in cloud}
    np.testing.assert_array_equal(resample(cloud, 25, np.random.default_rng(0)), up)


@settings(max_examples=100, deadline=None)
@given(clouds(2, 30))
def test_normalize_unit_sphere(P):
    N = normalize_unit_sphere(P)
    r = np.linalg.norm(N, axis=1)
    if np.ptp(P, axis=0).max() == 0:
        assert not N.any()
        return
    if r.max() == 0:
        return
    assert r.max() == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(N.mean(axis=0), 0.0, atol=1e-9)


def test_normalize_degenerate_cloud():
    np.testing.assert_array_equal(normalize_unit_sphere(np.ones((5, 3))), np.zeros((5, 3)))
