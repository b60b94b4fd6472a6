"""Scene directories: ``<id>.tile.mtile``, ``<id>.masks.mtile``, ``<id>.dem.mtile``
plus a shared ``ssc.csv`` and a ``manifest.json`` of the generating configs."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import MASKS, MaskSet, load_dem, load_masks, load_tile, read_planes, save_dem, save_masks, save_tile
from .ssc import SscRecord, read_records_csv, write_records_csv
from .synth import SceneConfig, generate_scene


@dataclass
class Scene:
    scene_id: str
    tile: object
    masks: object = None
    dem: object = None
    records: tuple = ()


def scene_seed(base_seed, index):
    return int(base_seed) * 100_000 + int(index)


def generate_dir(out, base, n):
    """Generate ``n`` scenes from ``base`` (a SceneConfig) into directory ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records, manifest = [], []
    for i in range(n):
        cfg = base.replace(seed=scene_seed(base.seed, i))
        sid = f"scene_{i:04d}"
        tile, masks, dem, truth = generate_scene(cfg)
        save_tile(tile, out / f"{sid}.tile.mtile")
        save_masks(masks, out / f"{sid}.masks.mtile", tile.pixel_size)
        save_dem(dem, out / f"{sid}.dem.mtile")
        records += [SscRecord(p.row, p.col, p.ssc, sid) for p in truth.points]
        manifest.append({"scene_id": sid, "config": dataclasses.asdict(cfg)})
    write_records_csv(out / "ssc.csv", records)
    (out / "manifest.json").write_text(json.dumps({"scenes": manifest}, indent=2, sort_keys=True) + "\n")
    return [m["scene_id"] for m in manifest]


def scene_ids(directory):
    ids = sorted(p.name[: -len(".tile.mtile")] for p in Path(directory).glob("*.tile.mtile"))
    if not ids:
        raise FileNotFoundError(f"no *.tile.mtile scenes in {directory}")
    return ids


def load_mask_planes(path):
    """{name: uint8 plane} for whatever mask planes ``path`` holds."""
    _, planes = read_planes(path)
    return {k: (v != 0).astype("uint8") for k, v in planes.items()}


def load_dir(directory, masks_dir=None, with_dem=True):
    """Load every scene of ``directory``; labels come from ``masks_dir`` if given."""
    directory = Path(directory)
    masks_dir = Path(masks_dir) if masks_dir else directory
    by_scene = {}
    csv_path = directory / "ssc.csv"
    if csv_path.exists():
        for r in read_records_csv(csv_path):
            by_scene.setdefault(r.scene_id, []).append(r)
    scenes = []
    for sid in scene_ids(directory):
        tile = load_tile(directory / f"{sid}.tile.mtile")
        mpath = masks_dir / f"{sid}.masks.mtile"
        masks = load_masks(mpath) if mpath.exists() else None
        dpath = directory / f"{sid}.dem.mtile"
        dem = load_dem(dpath) if with_dem and dpath.exists() else None
        scenes.append(Scene(sid, tile, masks, dem, tuple(by_scene.get(sid, ()))))
    return scenes


def full_maskset(planes, shape):
    """MaskSet from a possibly partial plane dict; absent planes are zero."""
    zero = np.zeros(shape, dtype=np.uint8)
    return MaskSet(**{m: planes.get(m, zero) for m in MASKS})
