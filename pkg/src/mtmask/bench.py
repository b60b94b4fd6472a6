"""Instrumented runs of the two SSC feature pipelines.

``standard``: sun position, threshold stand-in masks (water, cloud, cloud
shadow, snow/ice), DEM ray-cast terrain shadow, a simulated cross-source
alignment of every mask, fusion, feature extraction.

``multitask``: one model forward pass producing all five masks, fusion,
feature extraction.

Stage timings use ``time.perf_counter`` with disjoint per-stage accounting;
``total`` is their sum. A warm-up scene is processed first and not counted.
Peak memory comes from a second pass under ``tracemalloc`` so that allocator
tracing does not perturb the timings.
"""

from __future__ import annotations

import csv
import io
import os
import platform
import resource
import sys
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import mndwi
from .net.model import binarize, multitask_forward
from .raster import MaskSet
from .solar import solar_position, terrain_shadow
from .ssc import NoGoodPixelsError, extract_features, fuse_good_water

STAGES = ("sun_position", "masks", "terrain_shadow", "combine_masks", "feature_extraction")
STAGE_LABELS = {
    "sun_position": "Pre-processing: Estimate position of sun",
    "masks": "Obtaining Masks: Water, Cloud, Cloud Shadow, Snow/ice",
    "terrain_shadow": "Obtaining Masks: Terrain Shadow",
    "combine_masks": "Combining Masks: Good Quality Water Pixels",
    "feature_extraction": "SSC feature extraction",
}
VARIANTS = ("standard", "multitask")

# Threshold stand-ins for the per-source product masks (not an Fmask port).
WATER_MNDWI = 0.3
CLOUD_BRIGHTNESS = 0.4
SHADOW_DARKNESS = 0.08
SNOW_NDSI = 0.4
SNOW_GREEN = 0.3
ALIGN_OFFSET_PX = 1.0


@dataclass(frozen=True)
class BenchScene:
    scene_id: str
    tile: object  # TileStack with meta
    dem: object = None  # Dem, required by the standard variant
    points: tuple = ()  # (row, col) feature locations


@dataclass
class BenchReport:
    variant: str
    stages: dict
    total: float
    peak_memory_bytes: int
    scene_count: int
    scene_ids: list
    machine: dict
    counters: dict = field(default_factory=dict)
    comparable: bool = True
    notes: list = field(default_factory=list)

    def to_json(self):
        d = asdict(self)
        d["stage_labels"] = {k: STAGE_LABELS[k] for k in STAGES}
        return d


def machine_descriptor():
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }


# -- standard pipeline stages ----------------------------------------------


def standard_masks(tile):
    """Four threshold masks standing in for the per-source product layers."""
    b = tile.bands.astype(np.float64)
    valid = tile.valid
    brightness = b.mean(axis=0)
    score = mndwi(tile)
    water = (score.values > WATER_MNDWI) & score.valid
    cloud = (brightness > CLOUD_BRIGHTNESS) & valid
    shadow = (brightness < SHADOW_DARKNESS) & valid & ~water
    green, swir1 = b[1], b[4]
    with np.errstate(invalid="ignore", divide="ignore"):
        ndsi = np.where(green + swir1 > 0, (green - swir1) / (green + swir1), 0.0)
    snow = (ndsi > SNOW_NDSI) & (green > SNOW_GREEN) & valid
    return {"water": water, "cloud": cloud, "cloud_shadow": shadow, "snow_ice": snow}


def _shift_bilinear(plane, dr, dc):
    """Resample ``plane`` at (r + dr, c + dc), edge-clamped, bilinear."""
    h, w = plane.shape
    r = np.clip(np.arange(h) + dr, 0, h - 1)
    c = np.clip(np.arange(w) + dc, 0, w - 1)
    r0 = np.floor(r).astype(int)
    c0 = np.floor(c).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    p = plane.astype(np.float32)
    top = p[np.ix_(r0, c0)] * (1 - fc) + p[np.ix_(r0, c1)] * fc
    bot = p[np.ix_(r1, c0)] * (1 - fc) + p[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def align_to_grid(plane, offset=ALIGN_OFFSET_PX):
    """Reproject a mask onto a grid offset by ``offset`` pixels and back again."""
    there = _shift_bilinear(plane, offset, offset)
    back = _shift_bilinear(there, -offset, -offset)
    return (back >= 0.5).astype(np.uint8)


def _features(tile, good, points):
    out = []
    for p in points:
        try:
            out.append(extract_features(tile, good, p))
        except NoGoodPixelsError:
            out.append(None)
    return out


class _Clock:
    def __init__(self):
        self.stages = dict.fromkeys(STAGES, 0.0)

    def run(self, stage, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        self.stages[stage] += time.perf_counter() - t0
        return out


def run_standard_scene(scene, clock, counters):
    tile = scene.tile
    if scene.dem is None or tile.meta is None:
        raise ValueError(f"scene {scene.scene_id}: standard variant needs a DEM and observation metadata")
    sun = clock.run("sun_position", solar_position, tile.meta)
    masks = clock.run("masks", standard_masks, tile)
    counters["mask_computations"] = counters.get("mask_computations", 0) + len(masks) + 1
    terrain = clock.run("terrain_shadow", terrain_shadow, scene.dem, sun)

    def combine():
        aligned = {m: align_to_grid(v) for m, v in masks.items()}
        aligned["terrain_shadow"] = align_to_grid(terrain)
        return fuse_good_water(MaskSet(**aligned), tile.valid)

    good = clock.run("combine_masks", combine)
    return clock.run("feature_extraction", _features, tile, good, scene.points)


def run_multitask_scene(scene, model, clock, counters):
    tile = scene.tile

    def infer():
        probs = multitask_forward(model, tile)
        model.release()
        return MaskSet(**{m: v * tile.valid for m, v in binarize(probs).items()})

    before = model.forward_calls
    masks = clock.run("masks", infer)
    counters["forward_passes"] = counters.get("forward_passes", 0) + model.forward_calls - before
    good = clock.run("combine_masks", fuse_good_water, masks, tile.valid)
    return clock.run("feature_extraction", _features, tile, good, scene.points)


def run_pipeline(variant, scenes, model=None, parallel=1, measure_memory=True, warmup=True):
    """Time ``variant`` over ``scenes``; returns a :class:`BenchReport`."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if not scenes:
        raise ValueError("no scenes")
    if variant == "multitask" and model is None:
        raise ValueError("multitask variant needs a model checkpoint")
    if variant == "standard":
        missing = [s.scene_id for s in scenes if s.dem is None or s.tile.meta is None]
        if missing:
            raise ValueError(f"standard variant needs DEM and metadata; missing for {missing}")

    def one(scene, clock, counters):
        if variant == "standard":
            return run_standard_scene(scene, clock, counters)
        return run_multitask_scene(scene, model, clock, counters)

    if warmup:
        one(scenes[0], _Clock(), {})

    clock, counters = _Clock(), {}
    if parallel > 1:
        # per-thread clocks; summed stage times overlap in wall-clock terms
        clocks = [_Clock() for _ in scenes]
        cnts = [{} for _ in scenes]
        with ThreadPoolExecutor(parallel) as pool:
            list(pool.map(one, scenes, clocks, cnts))
        for c, k in zip(clocks, cnts):
            for s in STAGES:
                clock.stages[s] += c.stages[s]
            for key, v in k.items():
                counters[key] = counters.get(key, 0) + v
    else:
        for scene in scenes:
            one(scene, clock, counters)

    peak = 0
    if measure_memory:
        for scene in scenes:
            tracemalloc.start()
            one(scene, _Clock(), {})
            peak = max(peak, tracemalloc.get_traced_memory()[1])
            tracemalloc.stop()
    notes = []
    if not measure_memory:
        peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
        notes.append("peak memory is process max RSS (fallback), not traced allocations")
    if variant == "standard":
        notes.append("combine_masks includes the simulated cross-source alignment (2 bilinear resamples per mask)")
    report = BenchReport(
        variant=variant,
        stages=dict(clock.stages),
        total=float(sum(clock.stages.values())),
        peak_memory_bytes=int(peak),
        scene_count=len(scenes),
        scene_ids=[s.scene_id for s in scenes],
        machine=machine_descriptor(),
        counters=counters,
        comparable=parallel <= 1,
        notes=notes,
    )
    if parallel > 1:
        report.notes.append(f"parallel={parallel}: stage times are summed thread time, not comparable")
    return report


def speedup(standard, multitask):
    """``{"ratio": standard/multitask, "improvement_pct": (1 - m/s) * 100}``.

    Accepts two BenchReports over the same scenes, or two total times.
    """
    if isinstance(standard, BenchReport):
        if standard.scene_ids != multitask.scene_ids:
            raise ValueError("reports cover different scene sets")
        s, m = standard.total, multitask.total
    else:
        s, m = float(standard), float(multitask)
    if s <= 0 or m <= 0:
        raise ValueError("totals must be positive")
    return {"ratio": s / m, "improvement_pct": (1.0 - m / s) * 100.0}


def reports_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "stage", "label", "seconds", "scene_count", "peak_memory_bytes"])
    for r in reports:
        for s in STAGES:
            w.writerow([r.variant, s, STAGE_LABELS[s], repr(r.stages[s]), r.scene_count, r.peak_memory_bytes])
        w.writerow([r.variant, "total", "Total", repr(r.total), r.scene_count, r.peak_memory_bytes])
    return buf.getvalue()
