"""Good-quality water fusion, window features and the two-network SSC ensemble."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .net.checkpoint import CheckpointError, read_envelope, write_envelope
from .net.layers import Dense, ReLU
from .net.train import Optimizer, TrainConfig
from .raster import BANDS, MASKS

log = logging.getLogger(__name__)

WINDOW_M = 300.0
MAX_CLOUD_FRACTION = 0.30
LOW_RANGE_MAX = 20.0  # mg/L, upper bound of the low-range network's training data
HIGH_RANGE_MIN = 14.0  # mg/L, lower bound of the mid/high-range network's training data
STATS = ("mean", "median", "std", "min", "max")
FEATURE_NAMES = tuple(f"{b}_{s}" for b in BANDS for s in STATS)


class NoGoodPixelsError(ValueError):
    pass


def fuse_good_water(masks, valid):
    """valid & water & no cloud, cloud shadow, snow/ice or terrain shadow."""
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != masks.shape:
        raise ValueError(f"valid plane {valid.shape} does not match masks {masks.shape}")
    good = valid & (masks.water != 0)
    for m in ("cloud", "cloud_shadow", "snow_ice", "terrain_shadow"):
        good &= masks[m] == 0
    return good.astype(np.uint8)


def cloud_cover_filter(masks, valid=None):
    """True if the scene is usable for training: cloud cover <= 30% of valid pixels."""
    valid = np.ones(masks.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise ValueError("no valid pixels")
    cloudy = int(np.count_nonzero(masks.cloud[valid]))
    # integer comparison: cloudy / n <= 0.30 without rounding at the boundary
    return cloudy * 100 <= 30 * n


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # 30 floats, FEATURE_NAMES order
    count: int  # good pixels in the window


def window_offsets(pixel_size, radius_m=WINDOW_M):
    """(dr, dc) offsets of pixel centres within ``radius_m`` of the centre pixel."""
    r = radius_m / pixel_size
    ri = int(math.floor(r))
    dr, dc = np.mgrid[-ri : ri + 1, -ri : ri + 1]
    keep = dr * dr + dc * dc <= r * r + 1e-9
    return dr[keep], dc[keep]


def extract_features(tile, good, location, radius_m=WINDOW_M):
    """Per-band mean/median/std/min/max over good pixels near ``location`` (row, col)."""
    r0, c0 = int(location[0]), int(location[1])
    h, w = tile.height, tile.width
    if not (0 <= r0 < h and 0 <= c0 < w):
        raise ValueError(f"location {location} outside {h}x{w} tile")
    good = np.asarray(good)
    if good.shape != (h, w):
        raise ValueError(f"good-pixel plane {good.shape} does not match tile {(h, w)}")
    dr, dc = window_offsets(tile.pixel_size, radius_m)
    rr, cc = r0 + dr, c0 + dc
    inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
    rr, cc = rr[inside], cc[inside]
    sel = good[rr, cc] != 0
    if not sel.any():
        raise NoGoodPixelsError(f"no good-quality water pixels within {radius_m:g} m of {location}")
    px = tile.bands[:, rr[sel], cc[sel]].astype(np.float64)  # (6, k)
    stats = np.stack([px.mean(1), np.median(px, 1), px.std(1), px.min(1), px.max(1)], axis=1)
    return FeatureVector(stats.ravel(), int(sel.sum()))


# -- records ---------------------------------------------------------------


@dataclass(frozen=True)
class SscRecord:
    row: int
    col: int
    ssc: float
    scene_id: str = ""
    features: FeatureVector | None = None


def write_records_csv(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "y", "ssc_mg_per_l", "scene_id"])
        for r in records:
            w.writerow([r.col, r.row, repr(float(r.ssc)), r.scene_id])


def read_records_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    need = {"x", "y", "ssc_mg_per_l", "scene_id"}
    if rows and not need <= set(rows[0]):
        raise ValueError(f"{path}: expected columns {sorted(need)}")
    return [SscRecord(int(r["y"]), int(r["x"]), float(r["ssc_mg_per_l"]), r["scene_id"]) for r in rows]


def attach_features(records, tile, good):
    """Records with features filled in; points with no good pixels are dropped."""
    out = []
    for r in records:
        try:
            fv = extract_features(tile, good, (r.row, r.col))
        except NoGoodPixelsError:
            continue
        out.append(SscRecord(r.row, r.col, r.ssc, r.scene_id, fv))
    return out


# -- regressors ------------------------------------------------------------


class Mlp:
    """Fully connected regressor: 30 -> 32 -> 16 -> 1 with ReLU."""

    def __init__(self, sizes=(30, 32, 16, 1), seed=0):
        rng = np.random.Generator(np.random.Philox(key=[int(seed), 0x3319]))
        self.sizes = tuple(sizes)
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.layers.append(Dense(a, b, rng=rng, gain=math.sqrt(6.0) if i < len(sizes) - 2 else 1.0))
            if i < len(sizes) - 2:
                self.layers.append(ReLU())

    def dense(self):
        return [l for l in self.layers if l.params]

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x[:, 0]

    def backward(self, dy):
        d = dy[:, None]
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def named_parameters(self, prefix):
        return {f"{prefix}.{i}.{k}": l.params[k] for i, l in enumerate(self.dense()) for k in sorted(l.params)}

    def set_params(self, prefix, arrays):
        for i, l in enumerate(self.dense()):
            for k in l.params:
                l.params[k] = np.array(arrays[f"{prefix}.{i}.{k}"], dtype=np.float32)

    def fit(self, x, y, config):
        """Minimise mean squared error on (x, y) with the net optimizer."""
        params = [(l, k) for l in self.dense() for k in sorted(l.params)]
        opt = Optimizer(params, config)
        rng = np.random.Generator(np.random.Philox(key=[int(config.seed), 0xF17]))
        n = len(y)
        for _ in range(config.epochs):
            order = rng.permutation(n)
            for s in range(0, n, config.batch_size):
                idx = order[s : s + config.batch_size]
                for l in self.dense():
                    l.zero_grad()
                pred = self.forward(x[idx])
                self.backward((2.0 / len(idx)) * (pred - y[idx]))
                opt.step()
        return self


REGRESSOR_CONFIG = TrainConfig(epochs=300, batch_size=32, lr=3e-3, optimizer="adam", seed=0, clip_norm=5.0)


@dataclass
class SscEnsemble:
    model_low: Mlp
    model_high: Mlp
    t1: float
    t2: float
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(len(FEATURE_NAMES)))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(len(FEATURE_NAMES)))

    def _x(self, features):
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return ((f - self.feature_mean) / self.feature_std).astype(np.float32)

    def outputs(self, features):
        """(o1, o2) in mg/L for a (k, 30) feature array."""
        x = self._x(features)
        o1 = np.expm1(self.model_low.forward(x, train=False).astype(np.float64))
        o2 = np.expm1(self.model_high.forward(x, train=False).astype(np.float64))
        return o1, o2


def blend(o1, o2, t1, t2):
    """o1 below t1; else o2 above t2; else the mean of both. Floored at 0."""
    o1 = np.asarray(o1, dtype=np.float64)
    o2 = np.asarray(o2, dtype=np.float64)
    out = np.where(o1 < t1, o1, np.where(o2 > t2, o2, (o1 + o2) / 2.0))
    return np.maximum(out, 0.0)


def ssc_predict(ens, f):
    """SSC (mg/L) for one FeatureVector (or a (k, 30) array of feature rows)."""
    values = f.values if isinstance(f, FeatureVector) else f
    o1, o2 = ens.outputs(values)
    out = blend(o1, o2, ens.t1, ens.t2)
    return float(out[0]) if isinstance(f, FeatureVector) else out


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def threshold_candidates(val_ssc, n=50):
    lo, hi = float(np.min(val_ssc)), float(np.max(val_ssc))
    return np.concatenate([[-np.inf], np.linspace(lo, hi, n), [np.inf]])


def search_thresholds(o1, o2, y, candidates):
    """(t1, t2, rmse) minimising RMSE over pairs t1 <= t2; ties -> smallest pair."""
    best = None
    for t1 in candidates:
        for t2 in candidates:
            if t2 < t1:
                continue
            err = _rmse(blend(o1, o2, t1, t2), y)
            if best is None or err < best[2]:
                best = (float(t1), float(t2), err)
    return best


def _matrix(records):
    if any(r.features is None for r in records):
        raise ValueError("records need features; call attach_features first")
    return np.stack([r.features.values for r in records]), np.array([r.ssc for r in records], dtype=np.float64)


def fit_ensemble(train, val, config=REGRESSOR_CONFIG, grid=50):
    """Fit the low/high regressors on ``train`` and the blend thresholds on ``val``."""
    if not train or not val:
        raise ValueError("training and validation records must be non-empty")
    x, y = _matrix(train)
    xv, yv = _matrix(val)
    low = y <= LOW_RANGE_MAX
    high = y >= HIGH_RANGE_MIN
    if not low.any() or not high.any():
        raise ValueError(
            f"empty range split: {int(low.sum())} records <= {LOW_RANGE_MAX} mg/L, "
            f"{int(high.sum())} records >= {HIGH_RANGE_MIN} mg/L"
        )
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-6)
    ens = SscEnsemble(Mlp(seed=config.seed), Mlp(seed=config.seed + 1), np.inf, np.inf, mean, std)
    xn = ens._x(x)
    target = np.log1p(y).astype(np.float32)
    ens.model_low.fit(xn[low], target[low], config)
    ens.model_high.fit(xn[high], target[high], config)
    o1, o2 = ens.outputs(xv)
    ens.t1, ens.t2, err = search_thresholds(o1, o2, yv, threshold_candidates(yv, grid))
    log.info("ensemble thresholds t1=%s t2=%s val rmse=%.4f", ens.t1, ens.t2, err)
    return ens


def _enc(t):
    return t if math.isfinite(t) else ("inf" if t > 0 else "-inf")


def save_ensemble(ens, path, meta=None):
    descriptor = {
        "kind": "ssc_ensemble",
        "layers": list(ens.model_low.sizes),
        "blend": {"t1": _enc(ens.t1), "t2": _enc(ens.t2)},
        "feature_names": list(FEATURE_NAMES),
        "feature_mean": [float(v) for v in ens.feature_mean],
        "feature_std": [float(v) for v in ens.feature_std],
        "meta": dict(meta or {}),
    }
    arrays = {**ens.model_low.named_parameters("low"), **ens.model_high.named_parameters("high")}
    write_envelope(path, descriptor, arrays)


def load_ensemble(path):
    descriptor, arrays = read_envelope(path)
    if descriptor.get("kind") != "ssc_ensemble":
        raise CheckpointError(f"{path}: not an SSC ensemble")
    sizes = tuple(descriptor["layers"])
    low, high = Mlp(sizes), Mlp(sizes)
    try:
        low.set_params("low", arrays)
        high.set_params("high", arrays)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing parameter {exc}") from None
    b = descriptor["blend"]
    return SscEnsemble(
        low,
        high,
        float(b["t1"]),
        float(b["t2"]),
        np.array(descriptor["feature_mean"]),
        np.array(descriptor["feature_std"]),
    )
