import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scatterkit.components import (FeatureBasis, amplitude_components, center_features,
                                   cluster_centers, cluster_groups, component_spectra,
                                   components_from_centers, kmeans, reconstruct_components,
                                   top_pixels, zscore)
from scatterkit.radar import CLASS_TEMPLATES, RadarConfig, ScatterCenter, evaluate_spectrum, render_complex

CFG = RadarConfig(n_freq=32, n_aspect=32)


def brute_inertia(points, k):
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(points)):
        labels = np.array(labels)
        if len(set(labels)) < k:
            continue
        tot = sum(((points[labels == j] - points[labels == j].mean(0)) ** 2).sum() for j in range(k))
        best = min(best, tot)
    return best


def test_basis_parse():
    assert FeatureBasis.parse("x, y, A") is FeatureBasis.XYA
    assert FeatureBasis.parse("full") is FeatureBasis.FULL
    assert FeatureBasis.parse("Amp,Loc") is FeatureBasis.AMP_LOC
    with pytest.raises(ValueError):
        FeatureBasis.parse("x,z")


def test_features_and_zscore():
    cs = [ScatterCenter(3, 4, 1, 2, 0.5, 1.0, 0.1), ScatterCenter(1, 0, -1, 2, 0.0)]
    f = center_features(cs, FeatureBasis.FULL)
    assert f.shape == (2, 6)
    assert f[0, 5] == pytest.approx(5.0)           # |A| replaces the complex amplitude
    z = zscore(f)
    np.testing.assert_allclose(z[:, 1], 0.0)       # zero-variance column only centered
    np.testing.assert_allclose(z[:, 0], [1, -1])
    with pytest.raises(ValueError):
        center_features(cs, FeatureBasis.AMP_LOC)


@given(st.integers(4, 8), st.integers(2, 3), st.integers(0, 2 ** 31))
def test_kmeans_matches_brute_force(n, k, seed):
    pts = np.random.default_rng(seed).normal(size=(n, 2))
    res = kmeans(pts, k, rng_seed=seed)
    assert res.inertia <= brute_inertia(pts, k) * (1 + 1e-9) + 1e-12
    assert len(np.unique(res.labels)) == k


def test_kmeans_bit_exact_and_seed_sensitive():
    pts = np.random.default_rng(0).normal(size=(60, 3))
    a, b = kmeans(pts, 4, 7), kmeans(pts, 4, 7)
    assert np.array_equal(a.labels, b.labels) and a.inertia == b.inertia
    assert a.restart == b.restart


def test_kmeans_validation_and_duplicates():
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), 3)
    with pytest.raises(ValueError):
        kmeans(np.zeros((2, 2)), 0)
    res = kmeans(np.zeros((5, 2)), 2)
    assert res.inertia == 0.0


def test_cluster_order_invariant():
    cs = list(CLASS_TEMPLATES[6])
    perm = np.random.default_rng(1).permutation(len(cs))
    a = cluster_groups(cs, "full", 4, 0)
    b = cluster_groups([cs[i] for i in perm], "full", 4, 0)
    sets_a = [sorted(id(cs[i]) for i, _ in g) for g in a[0]]
    sets_b = [sorted(id(cs[perm[i]]) for i, _ in g) for g in b[0]]
    assert sets_a == sets_b
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-12)


def test_canonical_order_by_energy():
    cs = list(CLASS_TEMPLATES[0])
    groups, keys = cluster_groups(cs, "x,y", 4, 0)
    energies = [k[0] for k in keys]
    assert energies == sorted(energies, reverse=True)
    assigned = cluster_centers(cs, "x,y", 4, 0)
    for comp, g in enumerate(groups):
        for i, _ in g:
            assert assigned[i] == comp


def test_fewer_centers_than_k_fills_every_component():
    cs = [ScatterCenter(1, 0, 0, 0), ScatterCenter(0.5, 0, 1, 1)]
    groups, _ = cluster_groups(cs, "x,y", 4, 0)
    assert all(groups) and len(groups) == 4
    total = {}
    for g in groups:
        for i, w in g:
            total[i] = total.get(i, 0.0) + w
    assert total == {0: 1.0, 1: 1.0}


@given(st.integers(1, 9), st.integers(1, 5), st.integers(0, 1000))
def test_partition_identity(n, k, seed):
    rng = np.random.default_rng(seed)
    cs = [ScatterCenter(rng.normal(), rng.normal(), rng.uniform(-3, 3), rng.uniform(-3, 3),
                        rng.choice([0.0, 1.0]), rng.choice([0.0, 1.0])) for _ in range(n)]
    groups, _ = cluster_groups(cs, "full", k, seed)
    parts = sum(s.data for s in component_spectra(cs, groups, CFG))
    whole = evaluate_spectrum(cs, CFG).data
    assert np.max(np.abs(parts - whole)) <= 1e-9 * max(1.0, np.max(np.abs(whole)))


def test_component_images_normalized():
    cs = list(CLASS_TEMPLATES[2])
    comps = components_from_centers(cs, CFG, "full", 4, 64, rng_seed=0)
    assert comps.images.shape == (4, 64, 64)
    assert comps.images.max() == pytest.approx(1.0)
    assert comps.images.min() >= 0
    raw = np.abs(np.stack([render_complex(s, 64) for s in component_spectra(cs, comps.members, CFG)]))
    np.testing.assert_allclose(comps.images * comps.scale, raw, rtol=1e-12, atol=1e-12)


def test_reconstruct_validates_assignments():
    cs = list(CLASS_TEMPLATES[3])
    with pytest.raises(ValueError):
        reconstruct_components(cs, [0] * (len(cs) - 1), CFG)
    with pytest.raises(ValueError):
        reconstruct_components(cs, [0] * (len(cs) - 1) + [2], CFG)
    ok = reconstruct_components(cs, [i % 2 for i in range(len(cs))], CFG, 64)
    assert ok.k == 2


def test_top_pixels_tie_break():
    img = np.array([[1.0, 3.0], [3.0, 0.0]])
    assert list(top_pixels(img, 0.25)) == [1]
    assert list(top_pixels(img, 0.5)) == [1, 2]
    assert len(top_pixels(np.zeros((10, 10)), 0.05)) == 5


def test_amplitude_components_paint_selected_pixels():
    img = np.zeros((32, 32))
    img[4, 4], img[4, 5], img[20, 20], img[21, 21], img[10, 28] = 5, 4, 3, 3, 2
    comps = amplitude_components(img, k=3, fraction=5 / 1024)
    assert comps.images.shape == (3, 32, 32)
    painted = comps.images.sum(axis=0) * comps.scale
    np.testing.assert_allclose(painted[img > 0], img[img > 0])
    assert comps.images[0].max() == 1.0
    with pytest.raises(ValueError):
        amplitude_components(img.astype(complex))
