from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtmask.raster import (
    BANDS,
    MASKS,
    Dem,
    MaskSet,
    MtileError,
    ObservationMeta,
    TileStack,
    load_dem,
    load_masks,
    load_tile,
    read_planes,
    save_dem,
    save_masks,
    save_tile,
    write_planes,
)

META = ObservationMeta(datetime(2024, 6, 15, 7, tzinfo=timezone.utc), 40.0, -3.5)


def _tile(h=4, w=5, seed=0, meta=META):
    rng = np.random.default_rng(seed)
    return TileStack(rng.random((6, h, w), dtype=np.float32), rng.random((h, w)) > 0.2, 30.0, meta)


def test_tile_round_trip_bytes(tmp_path):
    tile = _tile()
    save_tile(tile, tmp_path / "a.mtile")
    back = load_tile(tmp_path / "a.mtile")
    assert back.bands.tobytes() == tile.bands.tobytes()
    assert (back.valid == tile.valid).all()
    assert back.meta == tile.meta
    assert back.pixel_size == 30.0
    save_tile(back, tmp_path / "b.mtile")
    assert (tmp_path / "a.mtile").read_bytes() == (tmp_path / "b.mtile").read_bytes()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.just(6), st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-1, 2, width=32)))
def test_tile_round_trip_any(tmp_path_factory, bands):
    path = tmp_path_factory.mktemp("rt") / "t.mtile"
    tile = TileStack(bands, np.ones(bands.shape[1:], bool))
    save_tile(tile, path)
    assert load_tile(path).bands.tobytes() == tile.bands.tobytes()


def test_one_pixel_tile(tmp_path):
    tile = TileStack(np.full((6, 1, 1), 0.5, np.float32), np.ones((1, 1), bool))
    save_tile(tile, tmp_path / "p.mtile")
    assert (load_tile(tmp_path / "p.mtile").bands == 0.5).all()


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.mtile"
    save_tile(_tile(), path)
    raw = path.read_bytes()
    # drop one full plane: header still declares seven
    path.write_bytes(raw[: len(raw) - 4 * 5 * 4])
    with pytest.raises(MtileError, match="truncated"):
        load_tile(path)


def test_overlong_and_malformed(tmp_path):
    path = tmp_path / "t.mtile"
    save_tile(_tile(), path)
    path.write_bytes(path.read_bytes() + b"\0\0\0\0")
    with pytest.raises(MtileError, match="longer"):
        read_planes(path)
    path.write_bytes(b"{not json\n")
    with pytest.raises(MtileError, match="malformed"):
        read_planes(path)
    path.write_bytes(b"no newline at all")
    with pytest.raises(MtileError):
        read_planes(path)
    path.write_bytes(b'{"w": 2, "h": 2, "pixel_size": 30, "planes": []}\n')
    with pytest.raises(MtileError):
        read_planes(path)


def test_missing_band_plane(tmp_path):
    path = tmp_path / "t.mtile"
    write_planes(path, {b: np.zeros((2, 2)) for b in BANDS[:5]})
    with pytest.raises(MtileError, match="missing"):
        load_tile(path)


def test_tile_validation():
    with pytest.raises(ValueError):
        TileStack(np.zeros((5, 2, 2)), np.ones((2, 2), bool))
    with pytest.raises(ValueError):
        TileStack(np.zeros((6, 2, 2)), np.ones((2, 3), bool))
    bad = np.zeros((6, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        TileStack(bad, np.ones((2, 2), bool))
    # NaN at an invalid pixel is fine
    valid = np.ones((2, 2), bool)
    valid[0, 0] = False
    TileStack(bad, valid)


def test_tile_is_immutable():
    tile = _tile()
    with pytest.raises(ValueError):
        tile.bands[0, 0, 0] = 1.0
    assert tile.band("red").shape == (4, 5)


def test_maskset(tmp_path):
    rng = np.random.default_rng(1)
    planes = (rng.random((5, 3, 4)) > 0.5).astype(np.uint8)
    ms = MaskSet.from_stack(planes)
    assert (ms.stack() == planes).all()
    assert ms["snow_ice"] is ms.snow_ice
    with pytest.raises(KeyError):
        ms["haze"]
    save_masks(ms, tmp_path / "m.mtile")
    assert (load_masks(tmp_path / "m.mtile").stack() == planes).all()
    planes[2, 0, 0] = 2
    with pytest.raises(ValueError):
        MaskSet.from_stack(planes)


def test_dem_round_trip(tmp_path):
    z = np.random.default_rng(2).random((7, 3)) * 1234.5
    dem = Dem(z, 10.0)
    save_dem(dem, tmp_path / "d.mtile")
    back = load_dem(tmp_path / "d.mtile")
    assert back.elevation.tobytes() == dem.elevation.tobytes()
    assert back.pixel_size == 10.0


def test_meta_validation():
    with pytest.raises(ValueError):
        ObservationMeta(datetime(2024, 1, 1), 91.0, 0.0)
    naive = ObservationMeta(datetime(2024, 1, 1, 12), 0.0, 0.0)
    assert naive.timestamp.tzinfo is not None
    assert ObservationMeta.from_json(META.to_json()) == META


def test_mask_names_order():
    assert MASKS == ("water", "cloud", "cloud_shadow", "snow_ice", "terrain_shadow")
