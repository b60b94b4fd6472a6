"""Water-index baseline: MNDWI score maps and static threshold selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THRESHOLD_GRID = np.round(np.arange(-100, 101) * 0.01, 2)


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreMap:
    values: np.ndarray  # (H, W) float64, meaningful where valid
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if np.shape(self.values) != np.shape(self.valid):
            raise ValueError("values and valid planes differ in shape")


def mndwi(tile):
    """(green - swir1) / (green + swir1) per pixel.

    Pixels that are invalid in the tile, have a non-positive denominator or
    fall outside [-1, 1] (negative reflectance) are invalid in the result.
    """
    green = tile.band("green").astype(np.float64)
    swir1 = tile.band("swir1").astype(np.float64)
    den = green + swir1
    ok = tile.valid & (den != 0)
    values = np.zeros_like(den)
    np.divide(green - swir1, den, out=values, where=ok)
    ok &= np.abs(values) <= 1.0
    values[~ok] = 0.0
    return ScoreMap(values, ok)


def _histogram_bins(v, bins):
    lo, hi = float(v.min()), float(v.max())
    idx = np.floor((v - lo) * bins / (hi - lo)).astype(np.int64)
    return np.clip(idx, 0, bins - 1), lo, hi


def otsu_threshold(score, bins=256):
    """Bin boundary maximising between-class variance of the valid values.

    The histogram spans [min, max] of the valid values in ``bins`` equal bins;
    candidates are the ``bins - 1`` interior boundaries. Variances are compared
    in exact integer arithmetic and ties go to the lowest boundary.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    v = np.asarray(score.values, dtype=np.float64)[score.valid]
    if v.size == 0 or np.unique(v).size < 2:
        raise DegenerateInputError("need at least two distinct valid values")
    idx, lo, hi = _histogram_bins(v, bins)
    counts = np.bincount(idx, minlength=bins).astype(np.int64)
    n0 = np.cumsum(counts)[:-1]  # pixels in bins below boundary k = 1..bins-1
    s0 = np.cumsum(counts * np.arange(bins))[:-1]
    n, s = int(counts.sum()), int((counts * np.arange(bins)).sum())

    # sigma_b^2 is proportional to (n1*s0 - n0*s1)^2 / (n0*n1) in bin-index units
    best_k, best_num, best_den = None, 0, 1
    for k in range(1, bins):
        a0, t0 = int(n0[k - 1]), int(s0[k - 1])
        a1, t1 = n - a0, s - t0
        if a0 == 0 or a1 == 0:
            continue
        num = (a1 * t0 - a0 * t1) ** 2
        den = a0 * a1
        if best_k is None or num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return lo + best_k * (hi - lo) / bins


def _pooled_counts(scores, labels):
    """Sorted valid scores of positive and negative label pixels, pooled."""
    if len(scores) == 0 or len(scores) != len(labels):
        raise ValueError("need equally many score maps and label planes (at least one)")
    pos, neg = [], []
    for sm, lab in zip(scores, labels):
        lab = np.asarray(lab)
        if lab.shape != sm.values.shape:
            raise ValueError(f"label plane {lab.shape} does not match score map {sm.values.shape}")
        v = sm.values[sm.valid]
        y = lab[sm.valid] != 0
        pos.append(v[y])
        neg.append(v[~y])
    return np.sort(np.concatenate(pos)), np.sort(np.concatenate(neg))


def f1_over_grid(scores, labels, grid=THRESHOLD_GRID):
    """Pooled F1 of ``score > t`` for every ``t`` in ``grid``."""
    pos, neg = _pooled_counts(scores, labels)
    if pos.size == 0:
        raise ValueError("labels have no positive pixels; F1 undefined for every threshold")
    tp = pos.size - np.searchsorted(pos, grid, side="right")
    fp = neg.size - np.searchsorted(neg, grid, side="right")
    return 2.0 * tp / (tp + fp + pos.size)


def select_threshold(scores, labels, grid=THRESHOLD_GRID):
    """Grid threshold with the best pooled F1 on a validation set (lowest on ties)."""
    f1 = f1_over_grid(scores, labels, grid)
    return float(grid[int(np.argmax(f1))])


def water_mask(score, t):
    return ((score.values > t) & score.valid).astype(np.uint8)
