import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtmask.baselines import (
    THRESHOLD_GRID,
    DegenerateInputError,
    ScoreMap,
    f1_over_grid,
    mndwi,
    otsu_threshold,
    select_threshold,
    water_mask,
)
from mtmask.raster import TileStack
from mtmask.synth import SceneConfig, generate_scene

from .oracles import exhaustive_otsu, pooled_f1_at


def _tile_gs(green, swir1):
    green = np.atleast_2d(np.asarray(green, np.float32))
    swir1 = np.atleast_2d(np.asarray(swir1, np.float32))
    bands = np.zeros((6,) + green.shape, np.float32)
    bands[1], bands[4] = green, swir1
    return TileStack(bands, np.ones(green.shape, bool))


def _score(values, valid=None):
    values = np.atleast_2d(np.asarray(values, np.float64))
    return ScoreMap(values, np.ones(values.shape, bool) if valid is None else valid)


def test_mndwi_values():
    s = mndwi(_tile_gs([[0.2, 0.3, 0.1, 0.0]], [[0.1, 0.3, 0.0, 0.0]]))
    assert s.values[0, 0] == pytest.approx(1 / 3, abs=1e-7)
    assert s.values[0, 1] == 0.0
    assert s.values[0, 2] == 1.0
    assert list(s.valid[0]) == [True, True, True, False]


def test_mndwi_respects_tile_validity():
    bands = np.full((6, 1, 2), 0.2, np.float32)
    s = mndwi(TileStack(bands, np.array([[True, False]])))
    assert list(s.valid[0]) == [True, False]


def test_otsu_examples():
    assert otsu_threshold(_score([0.0] * 5 + [1.0] * 5), bins=2) == 0.5
    assert otsu_threshold(_score([0.0] * 9 + [1.0]), bins=2) == 0.5
    with pytest.raises(DegenerateInputError):
        otsu_threshold(_score([0.7] * 6))
    with pytest.raises(DegenerateInputError):
        otsu_threshold(_score([0.1, 0.9], valid=np.array([[True, False]])))


@pytest.mark.parametrize("seed", range(10))
def test_otsu_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    v = np.concatenate([rng.normal(-0.4, 0.15, 60), rng.normal(0.3, 0.2, 40)])
    bins = int(rng.integers(2, 40))
    _, t = exhaustive_otsu(v, bins)
    assert otsu_threshold(_score(v), bins=bins) == t


def test_otsu_ignores_invalid():
    v = np.array([[0.0, 0.0, 1.0, 1.0, 50.0]])
    valid = np.array([[True, True, True, True, False]])
    assert otsu_threshold(ScoreMap(v, valid), bins=2) == 0.5


def test_select_threshold_perfect_separation():
    lab = np.array([[0, 1], [1, 0]])
    # strict score > t: every t in [0, 1) separates perfectly, lowest grid point is 0.0
    assert select_threshold([_score(lab)], [lab]) == 0.0


def test_select_threshold_two_by_two():
    lab = np.array([[0, 0], [1, 1]])
    # 0.2 > 0.2 is false, so t = 0.20 already separates
    assert select_threshold([_score([[0.1, 0.2], [0.8, 0.9]])], [lab]) == 0.2


def test_select_threshold_inverted():
    lab = np.array([[0, 0], [1, 1]])
    scores = [_score(1 - lab)]
    f1 = f1_over_grid(scores, [lab])
    t = select_threshold(scores, [lab])
    assert f1[list(THRESHOLD_GRID).index(t)] == f1.max()
    # predicting everything positive is the best an inverted score can do
    assert t == -1.0
    assert f1.max() == pytest.approx(2 / 3)


def test_select_threshold_errors():
    with pytest.raises(ValueError):
        select_threshold([], [])
    with pytest.raises(ValueError, match="no positive"):
        select_threshold([_score([[0.3, 0.4]])], [np.zeros((1, 2))])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_f1_grid_matches_loop(seed):
    rng = np.random.default_rng(seed)
    scores, labels = [], []
    for _ in range(int(rng.integers(1, 3))):
        v = np.round(rng.uniform(-1, 1, (3, 4)), 2)
        scores.append(ScoreMap(v, rng.random((3, 4)) > 0.2))
        labels.append((rng.random((3, 4)) > 0.5).astype(np.uint8))
    if not any(l[s.valid].any() for s, l in zip(scores, labels)):
        return
    f1 = f1_over_grid(scores, labels)
    for i in rng.choice(len(THRESHOLD_GRID), 15, replace=False):
        assert f1[i] == pytest.approx(pooled_f1_at(scores, labels, THRESHOLD_GRID[i]), abs=1e-12)


def test_water_mask():
    s = ScoreMap(np.array([[0.5, 0.5, -0.2]]), np.array([[True, False, True]]))
    assert water_mask(s, 0.1).tolist() == [[1, 0, 0]]


def test_mndwi_separates_synthetic_water():
    tile, masks, _, _ = generate_scene(SceneConfig(seed=3))
    s = mndwi(tile)
    water = (masks.water == 1) & s.valid
    land = (masks.water == 0) & (masks.cloud == 0) & (masks.snow_ice == 0) & s.valid
    assert s.values[water].mean() > s.values[land].mean()
