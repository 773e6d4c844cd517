import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcnovelty.fractal import (
    PROB_FLOOR, DivergentIFSError, FractalConfig, IfsSystem, chaos_game, class_system,
    generate_fractal_dataset, mix_fractal_noise, sample_ifs, variance_ok,
)

SMALL = FractalConfig(points_per_cloud=128, chaos_iterations=2000)


def test_sample_ifs_deterministic():
    a = sample_ifs(np.random.default_rng(42))
    b = sample_ifs(np.random.default_rng(42))
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.b, b.b)
    np.testing.assert_array_equal(a.probs, b.probs)


def test_sample_ifs_invariants_over_many_draws():
    rng = np.random.default_rng(0)
    ks = set()
    for _ in range(1000):
        ifs = sample_ifs(rng)
        ks.add(ifs.k)
        assert 2 <= ifs.k <= 8
        assert abs(ifs.probs.sum() - 1.0) < 1e-9
        assert np.abs(ifs.b).max() <= 1.0
        assert np.linalg.norm(ifs.A, 2, axis=(1, 2)).max() <= 0.8 + 1e-12
    assert ks == set(range(2, 9))


def test_raw_draw_entries_in_unit_box():
    ifs = sample_ifs(np.random.default_rng(3), max_spectral_norm=None)
    assert np.abs(ifs.A).max() <= 1.0


def test_probability_floor_for_singular_map():
    A = np.stack([np.zeros((3, 3)), 0.5 * np.eye(3)])
    ifs = IfsSystem.from_maps(A, np.zeros((2, 3)))
    w = np.array([PROB_FLOOR, 0.125])
    np.testing.assert_allclose(ifs.probs, w / w.sum(), rtol=1e-15)
    assert ifs.probs[0] > 0


def test_from_maps_rejects_bad_k():
    with pytest.raises(ValueError):
        IfsSystem.from_maps(np.zeros((1, 3, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        IfsSystem.from_maps(np.zeros((9, 3, 3)), np.zeros((9, 3)))


def test_chaos_game_fixed_point():
    ifs = IfsSystem.from_maps(np.stack([0.5 * np.eye(3)] * 2), np.zeros((2, 3)))
    pts = chaos_game(ifs, 50, np.random.default_rng(0))
    assert pts.shape == (50, 3)
    assert not pts.any()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_chaos_game_contraction_bound(seed):
    rng = np.random.default_rng(seed)
    ifs = sample_ifs(rng)
    s = np.linalg.norm(ifs.A, 2, axis=(1, 2)).max()
    bound = np.linalg.norm(ifs.b, axis=1).max() / (1.0 - s)
    pts = chaos_game(ifs, 500, rng)
    assert np.linalg.norm(pts, axis=1).max() <= bound * (1 + 1e-9)


def test_chaos_game_deterministic_and_divergence():
    ifs = sample_ifs(np.random.default_rng(1))
    np.testing.assert_array_equal(chaos_game(ifs, 100, np.random.default_rng(5)),
                                  chaos_game(ifs, 100, np.random.default_rng(5)))
    big = IfsSystem.from_maps(np.stack([10.0 * np.eye(3)] * 2), np.ones((2, 3)))
    with pytest.raises(DivergentIFSError, match="divergent IFS"):
        chaos_game(big, 1000, np.random.default_rng(0))
    with pytest.raises(ValueError):
        chaos_game(ifs, 0, np.random.default_rng(0))


def test_variance_ok_examples():
    assert not variance_ok(np.ones((10, 3)), 0.05)
    rng = np.random.default_rng(0)
    assert variance_ok(rng.normal(size=(20, 3)), 0.0)
    sphere = rng.normal(size=(10_000, 3))
    sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
    assert variance_ok(sphere, 0.05)
    # per-axis variance is 1/3 on the sphere
    np.testing.assert_allclose(sphere.var(axis=0), 1 / 3, atol=0.02)


def test_mix_fractal_noise():
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(2048, 3))
    np.testing.assert_array_equal(mix_fractal_noise(cloud, 0.0, np.random.default_rng(1)), cloud)
    mixed = mix_fractal_noise(cloud, 0.2, np.random.default_rng(1))
    assert mixed.shape == cloud.shape
    changed = np.flatnonzero((mixed != cloud).any(axis=1))
    assert len(changed) == 410
    again = mix_fractal_noise(cloud, 0.2, np.random.default_rng(1))
    np.testing.assert_array_equal(mixed, again)
    # noise points are unit-sphere normalized
    assert np.linalg.norm(mixed[changed], axis=1).max() <= 1.0 + 1e-12
    with pytest.raises(ValueError):
        mix_fractal_noise(cloud, 1.0, rng)


def test_dataset_shape_labels_and_invariants():
    data = generate_fractal_dataset(3, 4, SMALL, seed=11)
    assert len(data) == 12
    assert data.labels == [0] * 4 + [1] * 4 + [2] * 4
    for c in data.clouds:
        assert c.shape == (128, 3)
        assert np.isfinite(c).all()
        assert variance_ok(c, SMALL.variance_threshold)


def test_dataset_is_pure_function_of_inputs():
    a = generate_fractal_dataset(2, 2, SMALL, seed=3)
    b = generate_fractal_dataset(2, 2, SMALL, seed=3)
    for x, y in zip(a.clouds, b.clouds):
        np.testing.assert_array_equal(x, y)
    c = generate_fractal_dataset(2, 2, SMALL, seed=4)
    assert not np.array_equal(a.clouds[0], c.clouds[0])


def test_single_cloud_reproducible():
    a = generate_fractal_dataset(1, 1, SMALL, seed=0).clouds[0]
    b = generate_fractal_dataset(1, 1, SMALL, seed=0).clouds[0]
    np.testing.assert_array_equal(a, b)
    assert variance_ok(a, 0.05)


def test_class_order_independence():
    # class 2 of a 3-class dataset equals class 2 generated on its own
    full = generate_fractal_dataset(3, 1, SMALL, seed=9).systems[2]
    alone = class_system(2, SMALL, 9)
    np.testing.assert_array_equal(full.A, alone.A)


def test_no_system_collisions_over_100_classes():
    cfg = FractalConfig(points_per_cloud=64, chaos_iterations=500)
    keys = {class_system(c, cfg, 0).A.tobytes() for c in range(100)}
    assert len(keys) == 100


def test_rejection_exhaustion_error():
    cfg = FractalConfig(points_per_cloud=64, chaos_iterations=200, variance_threshold=0.9,
                        max_rejections=3)
    with pytest.raises(RuntimeError, match="cannot satisfy variance threshold"):
        generate_fractal_dataset(1, 1, cfg, seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        FractalConfig(points_per_cloud=0)
    with pytest.raises(ValueError):
        FractalConfig(noise_ratio=1.0)
