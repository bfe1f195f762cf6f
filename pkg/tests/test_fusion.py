import itertools

import numpy as np
import pytest

from polarseg import fusion, geometry, nncore

POLAR = fusion.PolarConfig(n_angle=48, n_radius=24)
S = 8


def random_map(rng, shape=(20, 20)):
    return fusion.PredictionMap(rng.random(shape), np.ones(shape, bool))


def smooth_image(size=64, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size] / size
    img = 0.5 + 0.2 * np.sin(2 * np.pi * (rng.random() + 1.3 * xx + 0.7 * yy))
    img += 0.2 * np.cos(2 * np.pi * (rng.random() + 0.4 * xx - 1.1 * yy))
    return np.clip(img, 0, 1)


def rotate_about(img, delta, center):
    """Content at polar angle phi moves to phi + delta."""
    h, w = img.shape
    yy, xx = np.mgrid[:h, :w].astype(float)
    r = np.hypot(xx - center[0], yy - center[1])
    phi = np.arctan2(yy - center[1], xx - center[0]) - delta
    return geometry.bilinear(img, center[0] + r * np.cos(phi), center[1] + r * np.sin(phi))


def test_zero_model_gives_zero_map():
    model = nncore.zero_bilstm(2 * S * 24, 4, S * 24)
    img = smooth_image()
    ctx = fusion.uniform_map(img.shape, 0.5, POLAR)
    m = fusion.predict_view(model, img, ctx, 0.0, S, POLAR)
    assert m.shape == img.shape and np.all(m.data == 0)
    assert m.valid.sum() > 0


def test_input_layout_image_then_context():
    img = smooth_image()
    ctx = np.full(img.shape, 0.25)
    X = fusion.input_sequence(img, ctx, 0.3, S, POLAR)
    band = S * 24
    assert X.shape == (48 // S, 2 * band)
    np.testing.assert_array_equal(X[:, :band], fusion.serialize_bands(img, 0.3, S, POLAR).bands)
    inside = fusion.serialize_bands(np.ones_like(img), 0.3, S, POLAR).bands
    np.testing.assert_allclose(X[:, band:], 0.25 * inside, atol=1e-15)


def test_model_dimension_mismatch_rejected():
    model = nncore.zero_bilstm(10, 4, 5)
    img = smooth_image()
    with pytest.raises(ValueError):
        fusion.predict_view(model, img, np.zeros_like(img), 0.0, S, POLAR)


def test_offsets_two_pi_apart_identical():
    model = nncore.init_bilstm(2 * S * 24, 5, S * 24, std=0.3, seed=1)
    img = smooth_image(seed=2)
    ctx = fusion.uniform_map(img.shape, 0.5, POLAR)
    a = fusion.predict_view(model, img, ctx, 0.4, S, POLAR)
    b = fusion.predict_view(model, img, ctx, 0.4 + 2 * np.pi, S, POLAR)
    np.testing.assert_allclose(a.data, b.data, atol=1e-12)


def test_rotation_equivariance():
    model = nncore.init_bilstm(2 * S * 24, 6, S * 24, std=0.3, seed=3)
    img = smooth_image(seed=4)
    c = geometry.default_center(img.shape)
    ctx = fusion.uniform_map(img.shape, 0.5, POLAR)
    delta = 0.9
    base = fusion.predict_view(model, img, ctx, 0.0, S, POLAR)
    moved = fusion.predict_view(model, rotate_about(img, delta, c), ctx, delta, S, POLAR)
    expected = rotate_about(base.data, delta, c)
    sel = base.valid & (np.hypot(*(np.mgrid[:64, :64][::-1] - np.array(c)[:, None, None])) < 0.9 * 32)
    assert np.abs(moved.data - expected)[sel].mean() < 0.05


def test_fuse_single_and_constants():
    rng = np.random.default_rng(0)
    m = random_map(rng)
    assert np.array_equal(fusion.fuse_views([m]).data, m.data)
    consts = [fusion.PredictionMap(np.full((4, 4), v), np.ones((4, 4), bool)) for v in (0.2, 0.4, 0.6)]
    np.testing.assert_allclose(fusion.fuse_views(consts).data, 0.4, atol=1e-15)


def test_fuse_properties_on_random_triples():
    rng = np.random.default_rng(1)
    for _ in range(50):
        maps = [random_map(rng) for _ in range(3)]
        fused = fusion.fuse_views(maps).data
        same = fusion.fuse_views([maps[0]] * 3).data
        assert np.max(np.abs(same - maps[0].data)) <= 1e-12
        for perm in itertools.permutations(maps):
            assert np.max(np.abs(fusion.fuse_views(perm).data - fused)) <= 1e-12
        stack = np.stack([m.data for m in maps])
        assert np.all(fused >= stack.min(axis=0) - 1e-12)
        assert np.all(fused <= stack.max(axis=0) + 1e-12)


def test_fuse_rejects_bad_input():
    with pytest.raises(ValueError):
        fusion.fuse_views([])
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        fusion.fuse_views([random_map(rng, (4, 4)), random_map(rng, (5, 4))])


def test_viewpoint_set_validation():
    assert len(fusion.ViewpointSet().offsets) == 3
    with pytest.raises(ValueError):
        fusion.ViewpointSet(())
    with pytest.raises(ValueError):
        fusion.ViewpointSet((0.0, 2 * np.pi))
