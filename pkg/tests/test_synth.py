import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtmask.raster import MASKS
from mtmask.solar import solar_position, terrain_shadow
from mtmask.synth import SceneConfig, generate_scene, ssc_function


def test_same_seed_identical():
    a = generate_scene(SceneConfig(seed=11))
    b = generate_scene(SceneConfig(seed=11))
    assert a[0].bands.tobytes() == b[0].bands.tobytes()
    assert (a[1].stack() == b[1].stack()).all()
    assert a[2].elevation.tobytes() == b[2].elevation.tobytes()
    assert a[3] == b[3]


def test_different_seed_differs():
    a = generate_scene(SceneConfig(seed=1))[0]
    b = generate_scene(SceneConfig(seed=2))[0]
    assert not np.array_equal(a.bands, b.bands)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.4))
def test_realised_water_fraction(seed, frac):
    _, masks, _, _ = generate_scene(SceneConfig(seed=seed, water=frac, width=48, height=48))
    assert abs(masks.water.mean() - frac) <= 0.1


def test_classes_disjoint_except_terrain():
    _, masks, _, _ = generate_scene(SceneConfig(seed=4))
    exclusive = masks.stack()[:4].sum(axis=0)
    assert exclusive.max() <= 1


def test_terrain_plane_is_raycast():
    cfg = SceneConfig(seed=5)
    tile, masks, dem, _ = generate_scene(cfg)
    expect = terrain_shadow(dem, solar_position(cfg.meta))
    assert np.array_equal(masks.terrain_shadow, expect)
    assert 0.0 < masks.terrain_shadow.mean() < 0.6


def test_border_no_data():
    tile, masks, _, truth = generate_scene(SceneConfig(seed=6, border=0.25))
    assert not tile.valid[:, :16].any() and tile.valid[:, 16:].all()
    assert (tile.bands[:, :, :16] == 0).all()
    assert all(not m[:, :16].any() for m in masks.stack()[:4])
    assert all(p.col >= 16 for p in truth.points)


def test_ssc_points_on_good_water():
    tile, masks, _, truth = generate_scene(SceneConfig(seed=7, ssc_points=10))
    assert len(truth.points) == 10
    for p in truth.points:
        assert masks.water[p.row, p.col] == 1
        assert all(masks[m][p.row, p.col] == 0 for m in MASKS if m != "water")
        assert p.ssc > 0


def test_ssc_function_monotone():
    reds = np.linspace(0.03, 0.15, 20)
    vals = [ssc_function(r) for r in reds]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_infeasible_fractions():
    with pytest.raises(ValueError):
        SceneConfig(water=0.6, cloud=0.6)
    with pytest.raises(ValueError):
        SceneConfig(width=0)
