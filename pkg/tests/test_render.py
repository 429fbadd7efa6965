import numpy as np
import pytest

import oracles
from tumorseg.render import OverlaySpec, classify, render_overlay

SPEC = OverlaySpec()


def _color_count(img, rgb):
    return int(np.all(img == rgb, axis=-1).sum())


def _blend(bg, color):
    # darken then blend, with round-half-up on non-negative values
    return tuple(int(np.floor((1 - SPEC.region_alpha) * bg * SPEC.background_darken + SPEC.region_alpha * c + 0.5))
                 for c in color)


def test_empty_masks_give_darkened_background(rng):
    bg = rng.integers(0, 256, size=(10, 12)).astype(np.uint8)
    e = np.zeros((10, 12), bool)
    out = render_overlay(bg, e, e)
    expected = np.floor(bg.astype(float) * 0.5 + 0.5).astype(np.uint8)
    np.testing.assert_array_equal(out, np.repeat(expected[..., None], 3, axis=2))


def test_perfect_prediction_colors():
    bg = np.zeros((12, 12), np.uint8)
    m = np.zeros((12, 12), bool)
    m[3:9, 2:10] = True
    out = render_overlay(bg, m, m)
    border = np.array([[(r, c) in oracles.boundary_set(m.tolist()) for c in range(12)] for r in range(12)])
    assert _color_count(out, SPEC.boundary_color) == border.sum()
    assert _color_count(out, _blend(0, SPEC.tp_color)) == (m & ~border).sum()
    assert _color_count(out, _blend(0, SPEC.fp_color)) == 0
    assert _color_count(out, _blend(0, SPEC.fn_color)) == 0


def test_confusion_counts_8x8():
    gt = np.zeros((8, 8), bool)
    gt[1:6, 1:6] = True
    pred = np.zeros((8, 8), bool)
    pred[3:8, 3:8] = True
    out = render_overlay(np.zeros((8, 8)), gt, pred)
    border = np.zeros((8, 8), bool)
    for r, c in oracles.boundary_set(gt.tolist()):
        border[r, c] = True
    tp, fp, fn = gt & pred, ~gt & pred, gt & ~pred
    assert (tp.sum(), fp.sum(), fn.sum()) == (9, 16, 16)
    assert _color_count(out, _blend(0, SPEC.tp_color)) == (tp & ~border).sum()
    assert _color_count(out, _blend(0, SPEC.fp_color)) == fp.sum()
    assert _color_count(out, _blend(0, SPEC.fn_color)) == (fn & ~border).sum()


def test_red_exactly_gt_boundary(rng):
    for _ in range(20):
        gt = rng.random((16, 16)) < 0.4
        pred = rng.random((16, 16)) < 0.4
        out = render_overlay(np.zeros((16, 16, 3), np.uint8), gt, pred)
        red = np.all(out == SPEC.boundary_color, axis=-1)
        expected = {(int(r), int(c)) for r, c in np.argwhere(red)}
        assert expected == oracles.boundary_set(gt.tolist())


def test_classes_partition(rng):
    gt, pred = rng.random((9, 9)) < 0.5, rng.random((9, 9)) < 0.5
    c = classify(gt, pred)
    total = c["tp"].astype(int) + c["fp"] + c["fn"]
    assert total.max() <= 1
    np.testing.assert_array_equal(total == 0, ~gt & ~pred)


def test_dims_and_range(rng):
    bg = rng.uniform(-50, 400, size=(7, 5, 3))
    out = render_overlay(bg, rng.random((7, 5)) < 0.5, rng.random((7, 5)) < 0.5)
    assert out.shape == (7, 5, 3) and out.dtype == np.uint8


def test_errors():
    with pytest.raises(ValueError):
        render_overlay(np.zeros((4, 4)), np.zeros((4, 4), bool), np.zeros((4, 5), bool))
    with pytest.raises(ValueError):
        OverlaySpec(region_alpha=1.5)
    with pytest.raises(ValueError):
        OverlaySpec(fn_color=(300, 0, 0))
