import numpy as np
import pytest

from onn.imaging import Image, constant, resize
from onn.pyramid import (
    DEFAULT_FOCAL_POINTS,
    FocalPoint,
    PyramidConfig,
    PyramidError,
    build_pyramid,
    cache_resized_levels,
    calibrate_zoom,
    direct_level,
    extraction_origin,
    focal_view_stack,
    level_resolution,
    pyramid_from_levels,
    round_half_away,
    stats,
)


def random_image(size, seed=0, channels=1):
    return Image(np.random.default_rng(seed).random((size, size, channels), dtype=np.float32))


def test_published_size_lists():
    assert [level_resolution(224, 1.683, l) for l in range(1, 5)] == [224, 377, 634, 1068]
    assert [level_resolution(224, 1.25, l) for l in range(1, 9)] == [224, 280, 350, 438, 547, 684, 854, 1068]


def test_calibrated_zoom_matches_published_value():
    assert calibrate_zoom(1068, 224, 8) == pytest.approx(1.25, abs=1e-3)
    assert calibrate_zoom(1068, 224, 4) == pytest.approx(1.683, abs=1e-3)
    assert calibrate_zoom(64, 32, 2) == 2.0


def test_calibrate_zoom_preconditions():
    with pytest.raises(PyramidError):
        calibrate_zoom(32, 32, 4)
    with pytest.raises(PyramidError):
        calibrate_zoom(64, 32, 1)


def test_rounding_is_half_away_from_zero():
    assert [round_half_away(v) for v in (437.5, 2.5, -2.5, 0.49)] == [438, 3, -3, 0]


def test_desk_config_geometry():
    cfg = PyramidConfig()
    assert cfg.zoom == pytest.approx(1.68099, abs=1e-5)
    assert cfg.resolutions == [32, 54, 90, 152]


def test_config_rejects_uncalibrated_zoom():
    with pytest.raises(PyramidError, match="top level"):
        PyramidConfig(152, 32, 4, zoom=1.5)
    with pytest.raises(PyramidError):
        PyramidConfig(32, 32, 4)
    with pytest.raises(PyramidError):
        PyramidConfig(focal_set=())


def test_extraction_origin_fixtures():
    assert extraction_origin(FocalPoint(0.5, 0.5), 1068, 224) == (422, 422)
    assert extraction_origin(FocalPoint(0.9, 0.9), 280, 224) == (56, 56)
    assert extraction_origin(FocalPoint(0.0, 1.0), 224, 224) == (0, 0)
    with pytest.raises(PyramidError):
        extraction_origin(FocalPoint(0.5, 0.5), 100, 224)


def test_extraction_origin_axis_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(200):
        fx, fy = rng.random(2)
        r, c = int(rng.integers(32, 400)), 32
        x0, y0 = extraction_origin(FocalPoint(fx, fy), r, c)
        assert extraction_origin(FocalPoint(fy, fx), r, c) == (y0, x0)
        assert 0 <= x0 <= r - c and 0 <= y0 <= r - c


def test_focal_point_range():
    with pytest.raises(PyramidError):
        FocalPoint(1.2, 0.5)


def test_pyramid_views_shape_and_origins():
    cfg = PyramidConfig()
    pyr = build_pyramid(random_image(152), FocalPoint(0.75, 0.25), cfg)
    assert [v.level for v in pyr.views] == [1, 2, 3, 4]
    assert [v.resolution for v in pyr.views] == cfg.resolutions
    assert pyr.views[0].origin == (0, 0)
    for v in pyr.views:
        assert v.view.size == (32, 32)
        assert 0 <= min(v.origin) and max(v.origin) <= v.resolution - 32


def test_top_level_is_a_native_crop_of_the_base():
    cfg = PyramidConfig()
    base = random_image(152, 3)
    top = build_pyramid(base, FocalPoint(0.5, 0.5), cfg).views[-1]
    x0, y0 = top.origin
    assert np.array_equal(top.view.pixels, base.pixels[y0:y0 + 32, x0:x0 + 32])


FULL_L4 = PyramidConfig(1068, 224, 4, zoom=1.683)


def test_calibrated_zoom_rounds_level_three_differently():
    # the exact calibration 1.68309 gives 634.55 -> 635; the printed z = 1.683 gives 634
    assert PyramidConfig(1068, 224, 4).resolutions == [224, 377, 635, 1068]
    assert FULL_L4.resolutions == [224, 377, 634, 1068]


def test_sixteen_unique_views_at_full_scale():
    cfg = FULL_L4
    levels = cache_resized_levels(random_image(1068, 11, 3), cfg)
    views = [lv.view.pixels.tobytes() for f in DEFAULT_FOCAL_POINTS for lv in pyramid_from_levels(levels, f, cfg).views]
    assert len(views) == 20 and len(set(views)) == 16


def test_lowest_level_shared_and_deterministic():
    cfg = PyramidConfig()
    base = random_image(152, 5)
    a = [build_pyramid(base, f, cfg) for f in DEFAULT_FOCAL_POINTS]
    assert all(p.views[0].view == a[0].views[0].view for p in a)
    b = build_pyramid(base, DEFAULT_FOCAL_POINTS[2], cfg)
    assert all(x.view == y.view for x, y in zip(a[2].views, b.views))


def test_constant_base_gives_constant_views():
    cfg = PyramidConfig()
    for f in DEFAULT_FOCAL_POINTS:
        for v in build_pyramid(constant(152, 152, 0.37, 3), f, cfg).views:
            np.testing.assert_allclose(v.view.pixels, 0.37, atol=1e-6)


def test_cache_matches_build_pyramid_bit_exactly():
    cfg = FULL_L4
    base = random_image(1068, 2)
    levels = cache_resized_levels(base, cfg)
    assert [im.width for im in levels] == [224, 377, 634, 1068]
    for f in DEFAULT_FOCAL_POINTS[:2]:
        direct = build_pyramid(base, f, cfg)
        shared = pyramid_from_levels(levels, f, cfg)
        assert all(x.view == y.view for x, y in zip(direct.views, shared.views))


def cascade_gap(base, cfg):
    cascade = cache_resized_levels(base, cfg)[0]
    return np.mean(np.abs(cascade.pixels - direct_level(base, 1, cfg).pixels))


def test_cascade_close_to_direct_downsampling():
    # smooth random field (64x64 noise upscaled): measured 0.0040 over seeds 0-3
    rng = np.random.default_rng(4)
    field = resize(Image(rng.random((64, 64, 1), dtype=np.float32)), 1068, 1068)
    assert cascade_gap(field, FULL_L4) < 0.02


def test_cascade_gap_on_white_noise():
    # white noise is the worst case for box filters: measured 0.0207-0.0208 over seeds 0-3
    assert cascade_gap(random_image(1068, 4), FULL_L4) < 0.025


def test_wrong_base_size_is_an_error():
    with pytest.raises(PyramidError, match="152x152"):
        build_pyramid(random_image(150), FocalPoint(0.5, 0.5), PyramidConfig())


def test_focal_view_stack_matches_pyramids_and_counts_one_resample():
    cfg = PyramidConfig()
    base = random_image(152, 8)
    stats.reset()
    stack = focal_view_stack(base, cfg)
    assert stats.resamples == 1 and stats.builds == 5
    assert stack.shape == (5, 4, 1, 32, 32)
    pyr = build_pyramid(base, DEFAULT_FOCAL_POINTS[3], cfg)
    for l, lv in enumerate(pyr.views):
        assert np.array_equal(stack[3, l], lv.view.to_chw())
