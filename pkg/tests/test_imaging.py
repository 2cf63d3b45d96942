import numpy as np
import pytest

import oracles
from uwscene import imaging
from uwscene.errors import DimensionError, ValidationError
from uwscene.imaging import (Attenuation, PatchGrid, SceneSpec, degrade,
                             degrade_with_stats, estimate_backscatter,
                             patch_means, restore, restore_with_stats,
                             select_dark_patch, synthesize_pair)


def test_degrade_matches_pixel_loop_oracle():
    rng = np.random.default_rng(0)
    clean = rng.uniform(0.0, 1.0, size=(7, 5, 3))
    depth = rng.uniform(0.0, 4.0, size=(7, 5))
    betas, back = (0.2, 0.3, 0.4), (0.05, 0.08, 0.1)
    got = degrade(clean, depth, Attenuation.constant(betas), back, clip=False)
    want = np.array(oracles.pixel_degrade(clean, depth, betas, back))
    assert np.abs(got - want).max() < 1e-12


def test_restore_matches_pixel_loop_oracle():
    rng = np.random.default_rng(1)
    captured = rng.uniform(0.0, 1.0, size=(6, 9, 3))
    depth = rng.uniform(0.0, 30.0, size=(6, 9))  # deep enough to hit the floor
    betas, back = (0.4, 0.6, 0.9), (0.02, 0.03, 0.05)
    got = restore(captured, depth, Attenuation.constant(betas), back, clip=False)
    want = np.array(oracles.pixel_restore(captured, depth, betas, back))
    assert np.abs(got - want).max() < 1e-9


def test_round_trip_identity_on_unclamped_scene():
    clean, depth, degraded = synthesize_pair(3)
    spec = SceneSpec()
    recovered = restore(degraded, depth, spec.atten, spec.back, clip=False)
    assert np.abs(recovered - clean).max() < 1e-12


def test_degrade_clamps_and_counts():
    clean = np.full((4, 4, 3), 0.99)
    depth = np.zeros((4, 4))
    img, stats = degrade_with_stats(clean, depth, Attenuation.constant((0.1,) * 3),
                                    (0.5, 0.5, 0.5))
    assert img.max() <= 1.0
    assert stats.clamped_high == 4 * 4 * 3
    assert stats.clamped_low == 0


def test_restore_saturation_count():
    captured = np.full((2, 2, 3), 0.5)
    depth = np.full((2, 2), 100.0)  # exp(-0.5*100) << 1e-6
    _, stats = restore_with_stats(captured, depth, Attenuation.constant((0.5,) * 3),
                                  (0.0, 0.0, 0.0), clip=False)
    assert stats.saturated == 2 * 2 * 3


def test_piecewise_attenuation_interpolates_and_holds_ends():
    knots = [[(0.0, 0.1), (2.0, 0.5)]] * 3
    atten = Attenuation.piecewise_linear(knots)
    coef = atten.coefficients(np.array([[-1.0, 0.0], [1.0, 10.0]]))
    assert coef[0, 0, 0] == pytest.approx(0.1)   # held below range
    assert coef[0, 1, 0] == pytest.approx(0.1)
    assert coef[1, 0, 0] == pytest.approx(0.3)   # midpoint
    assert coef[1, 1, 2] == pytest.approx(0.5)   # held above range


def test_piecewise_attenuation_rejects_non_increasing_knots():
    with pytest.raises(ValidationError):
        Attenuation.piecewise_linear([[(0.0, 0.1), (0.0, 0.2)]] * 3)


def test_validate_image_rejects_bad_inputs():
    with pytest.raises(DimensionError):
        imaging.validate_image(np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        imaging.validate_image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValidationError):
        imaging.validate_image(np.full((2, 2, 3), np.nan))


def test_patch_means_hand_case():
    image = np.zeros((4, 4, 3))
    image[2:, 2:, :] = 0.6  # bottom-right patch only
    grid = PatchGrid.for_image(image.shape, 2)
    means = patch_means(image, grid)
    assert means.shape == (2, 2)
    assert means[1, 1] == pytest.approx(0.6)
    assert means[0, 0] == means[0, 1] == means[1, 0] == 0.0


def test_dark_patch_tie_breaks_to_lowest_index():
    image = np.full((4, 4, 3), 0.5)  # every patch mean identical
    grid = PatchGrid.for_image(image.shape, 2)
    assert select_dark_patch(image, grid) == 0


def test_dark_patch_ignores_trailing_partial_patches():
    image = np.full((5, 5, 3), 0.5)
    image[4, 4, :] = 0.0  # darkest pixel lives outside the 2x2 patch grid
    grid = PatchGrid.for_image(image.shape, 2)
    image[0, 3, :] = 0.2  # make patch (0, 1) the darkest full patch
    assert select_dark_patch(image, grid) == 1


def test_dark_patch_and_backscatter_match_scan_oracle():
    rng = np.random.default_rng(42)
    for _ in range(25):
        h = int(rng.integers(4, 21))
        w = int(rng.integers(4, 21))
        patch = int(rng.integers(2, 5))
        if h < patch or w < patch:
            continue
        image = rng.uniform(0.0, 1.0, size=(h, w, 3))
        grid = PatchGrid.for_image(image.shape, patch)
        want_idx, want_back = oracles.scan_dark_patch(image, patch)
        assert select_dark_patch(image, grid) == want_idx
        got = estimate_backscatter(image, grid)
        assert np.abs(got - np.array(want_back)).max() < 1e-12


def test_estimate_backscatter_hand_case():
    image = np.full((2, 4, 3), 0.8)
    image[:, :2, 0] = 0.1   # left patch: r=0.1, g/b=0.8 -> darkest
    grid = PatchGrid.for_image(image.shape, 2)
    est = estimate_backscatter(image, grid)
    assert est == pytest.approx([0.1, 0.8, 0.8])


def test_synthesize_pair_is_deterministic_and_consistent():
    c1, z1, g1 = synthesize_pair(9)
    c2, z2, g2 = synthesize_pair(9)
    assert np.array_equal(c1, c2) and np.array_equal(z1, z2) and np.array_equal(g1, g2)
    spec = SceneSpec()
    assert np.array_equal(g1, degrade(c1, z1, spec.atten, spec.back))


def test_grid_too_small_raises():
    with pytest.raises(DimensionError):
        PatchGrid.for_image((3, 3), 4)
