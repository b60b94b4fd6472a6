"""Seeded synthetic scenes standing in for HLS tiles with DSWx-style labels.

All randomness comes from numpy's Philox4x64-10 counter-based bit generator
keyed by ``SceneConfig.seed``, so a scene is a pure function of its config.

Class layout: each label class gets a smooth value-noise field and claims the
highest-scoring still-unclaimed valid pixels, in priority order cloud >
snow/ice > cloud shadow > water, until it holds its target fraction. Terrain
shadow is cast geometrically from the generated DEM and may overlap anything.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .raster import BANDS, MASKS, Dem, MaskSet, ObservationMeta, TileStack
from .solar import solar_position, terrain_shadow

# Reflectance priors, BANDS order.
VEGETATION = np.array([0.04, 0.08, 0.05, 0.35, 0.18, 0.09])
SOIL = np.array([0.09, 0.13, 0.17, 0.26, 0.32, 0.26])
CLEAR_WATER = np.array([0.07, 0.08, 0.05, 0.03, 0.02, 0.01])
TURBID_WATER = np.array([0.09, 0.13, 0.14, 0.09, 0.03, 0.015])
SNOW = np.array([0.80, 0.78, 0.75, 0.62, 0.10, 0.06])
CLOUD = np.array([0.62, 0.60, 0.60, 0.62, 0.50, 0.40])
# multiplicative darkening; cloud shadows keep relatively more diffuse blue
CLOUD_SHADOW_GAIN = np.array([0.40, 0.30, 0.22, 0.15, 0.12, 0.12])
TERRAIN_SHADOW_GAIN = 0.45

SSC_WINDOW_PX = 10


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    width: int = 64
    height: int = 64
    pixel_size: float = 30.0
    water: float = 0.15
    cloud: float = 0.12
    cloud_shadow: float = 0.06
    snow_ice: float = 0.05
    noise: float = 0.005
    border: float = 0.0  # fraction of columns at the left edge marked no-data
    relief: float = 600.0  # DEM max - min, meters
    feature_scale: float = 16.0  # blob size, pixels
    haze: float = 0.0  # additive path radiance; shifts the spectral distribution
    timestamp: str = "2024-06-15T07:00:00+00:00"
    latitude: float = 40.0
    longitude: float = 0.0
    ssc_points: int = 6

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("scene dimensions must be positive")
        fracs = [self.water, self.cloud, self.cloud_shadow, self.snow_ice]
        if any(not 0.0 <= f <= 1.0 for f in fracs) or sum(fracs) > 1.0 + 1e-12:
            raise ValueError(f"infeasible class fractions {fracs}: each in [0,1], sum <= 1")
        if not 0.0 <= self.border < 1.0:
            raise ValueError("border fraction must be in [0, 1)")
        if self.noise < 0 or self.relief < 0 or self.feature_scale <= 0:
            raise ValueError("noise and relief must be >= 0, feature_scale > 0")

    @property
    def meta(self):
        return ObservationMeta(datetime.fromisoformat(self.timestamp), self.latitude, self.longitude)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class SscPoint:
    row: int
    col: int
    ssc: float  # mg/L


@dataclass(frozen=True)
class SscGroundTruth:
    points: tuple[SscPoint, ...]


def make_rng(seed, stream=0):
    """Philox4x64-10 generator for ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def value_noise(rng, h, w, cell, octaves=3, persistence=0.5):
    """Smooth fractal value noise on an (h, w) grid, rescaled to [0, 1]."""
    total = np.zeros((h, w))
    amp = 1.0
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    for _ in range(octaves):
        c = max(cell, 1.0)
        gh, gw = int(math.ceil(h / c)) + 2, int(math.ceil(w / c)) + 2
        lattice = rng.random((gh, gw))
        fy, fx = ys / c, xs / c
        y0, x0 = fy.astype(int), fx.astype(int)
        ty, tx = fy - y0, fx - x0
        ty = ty * ty * (3 - 2 * ty)
        tx = tx * tx * (3 - 2 * tx)
        a = lattice[np.ix_(y0, x0)]
        b = lattice[np.ix_(y0, x0 + 1)]
        cc = lattice[np.ix_(y0 + 1, x0)]
        d = lattice[np.ix_(y0 + 1, x0 + 1)]
        top = a + (b - a) * tx[None, :]
        bot = cc + (d - cc) * tx[None, :]
        total += amp * (top + (bot - top) * ty[:, None])
        amp *= persistence
        cell /= 2.0
    lo, hi = total.min(), total.max()
    return (total - lo) / (hi - lo) if hi > lo else np.zeros_like(total)


def _claim(score, free, k):
    """Boolean plane of the ``k`` highest-scoring pixels among ``free``."""
    out = np.zeros(score.shape, dtype=bool)
    if k <= 0:
        return out
    idx = np.flatnonzero(free)
    # stable tie-break on flat index keeps the choice deterministic
    order = np.lexsort((idx, -score.ravel()[idx]))
    out.ravel()[idx[order[:k]]] = True
    return out


def generate_dem(config, rng=None):
    rng = rng if rng is not None else make_rng(config.seed, 1)
    field = value_noise(rng, config.height, config.width, 2.0 * config.feature_scale, octaves=4)
    return Dem((500.0 + config.relief * field).astype(np.float32), config.pixel_size)


def generate_scene(config):
    """Build ``(TileStack, MaskSet, Dem, SscGroundTruth)`` from ``config``."""
    h, w = config.height, config.width
    rng = make_rng(config.seed)
    meta = config.meta

    dem = generate_dem(config, make_rng(config.seed, 1))
    sun = solar_position(meta)
    terrain = terrain_shadow(dem, sun)

    valid = np.ones((h, w), dtype=bool)
    valid[:, : int(round(config.border * w))] = False
    n_valid = int(valid.sum())

    s = config.feature_scale
    pad = int(math.ceil(s / 2))
    cloud_field = value_noise(rng, h + pad, w + pad, s)
    cloud_score = cloud_field[pad:, pad:]
    shadow_score = cloud_field[:h, :w]  # the cloud field displaced by (pad, pad) pixels
    z = (dem.elevation - dem.elevation.min()) / max(float(np.ptp(dem.elevation)), 1e-9)
    snow_score = 0.6 * z + 0.4 * value_noise(rng, h, w, s)
    water_score = value_noise(rng, h, w, s)
    land_mix = value_noise(rng, h, w, s * 1.5)
    turbidity = value_noise(rng, h, w, s)
    cloud_thickness = value_noise(rng, h, w, s / 2)

    free = valid.copy()
    labels = {}
    for name, score in (
        ("cloud", cloud_score),
        ("snow_ice", snow_score),
        ("cloud_shadow", shadow_score),
        ("water", water_score),
    ):
        labels[name] = _claim(score, free, int(round(getattr(config, name) * n_valid)))
        free &= ~labels[name]

    land = VEGETATION[:, None, None] + (SOIL - VEGETATION)[:, None, None] * land_mix[None]
    water = CLEAR_WATER[:, None, None] + (TURBID_WATER - CLEAR_WATER)[:, None, None] * turbidity[None]
    cloud = CLOUD[:, None, None] + 0.16 * (cloud_thickness[None] - 0.5)
    bands = np.where(labels["water"][None], water, land)
    bands = np.where(labels["cloud_shadow"][None], land * CLOUD_SHADOW_GAIN[:, None, None], bands)
    bands = np.where(labels["snow_ice"][None], SNOW[:, None, None], bands)
    bands = np.where(labels["cloud"][None], cloud, bands)
    bands = np.where(terrain.astype(bool)[None], bands * TERRAIN_SHADOW_GAIN, bands)
    bands = bands + config.haze
    bands = bands + config.noise * rng.standard_normal(bands.shape)
    bands = np.clip(bands, 0.0, 1.0).astype(np.float32)
    bands[:, ~valid] = 0.0

    planes = {m: labels[m].astype(np.uint8) for m in MASKS if m != "terrain_shadow"}
    planes["terrain_shadow"] = terrain
    masks = MaskSet(**planes)
    tile = TileStack(bands, valid, config.pixel_size, meta)
    truth = _sample_ssc(rng, tile, masks, config.ssc_points)
    return tile, masks, dem, truth


def ssc_function(mean_red):
    """Noise-free synthetic SSC (mg/L) from mean red reflectance of good water."""
    return float(np.exp(1.0 + 45.0 * (mean_red - 0.05)))


def _sample_ssc(rng, tile, masks, n):
    good = (
        tile.valid
        & (masks.water == 1)
        & (masks.cloud == 0)
        & (masks.cloud_shadow == 0)
        & (masks.snow_ice == 0)
        & (masks.terrain_shadow == 0)
    )
    candidates = np.flatnonzero(good)
    if n <= 0 or candidates.size == 0:
        return SscGroundTruth(())
    picks = np.sort(rng.choice(candidates, size=min(n, candidates.size), replace=False))
    red = tile.band("red")
    h, w = good.shape
    rr, cc = np.mgrid[0:h, 0:w]
    points = []
    for flat in picks:
        r, c = divmod(int(flat), w)
        disk = (rr - r) ** 2 + (cc - c) ** 2 <= SSC_WINDOW_PX**2
        mean_red = float(red[disk & good].mean())
        ssc = ssc_function(mean_red) * float(np.exp(0.1 * rng.standard_normal()))
        points.append(SscPoint(r, c, ssc))
    return SscGroundTruth(tuple(points))
