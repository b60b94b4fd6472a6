"""Scene data model and the ``.mtile`` raster envelope.

An ``.mtile`` file is one UTF-8 JSON header line followed by ``\\n`` and the
raw little-endian float32 planes, row-major, in the order listed under
``"planes"`` in the header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

BANDS = ("blue", "green", "red", "nir", "swir1", "swir2")
MASKS = ("water", "cloud", "cloud_shadow", "snow_ice", "terrain_shadow")

_F32 = np.dtype("<f4")


class MtileError(ValueError):
    """Malformed, truncated or inconsistent ``.mtile`` content."""


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.flags.writeable:
        a = a.copy()
        a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ObservationMeta:
    """Acquisition time (UTC) and scene-centre location in degrees."""

    timestamp: datetime
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")
        if self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))

    def to_json(self):
        return {
            "timestamp": self.timestamp.astimezone(timezone.utc).isoformat(),
            "latitude": self.latitude,
            "longitude": self.longitude,
        }

    @classmethod
    def from_json(cls, d):
        return cls(datetime.fromisoformat(d["timestamp"]), float(d["latitude"]), float(d["longitude"]))


@dataclass(frozen=True)
class TileStack:
    """Six reflectance bands (``BANDS`` order) plus a validity plane.

    ``bands`` has shape (6, H, W) float32, ``valid`` shape (H, W) bool.
    """

    bands: np.ndarray
    valid: np.ndarray
    pixel_size: float = 30.0
    meta: ObservationMeta | None = None

    def __post_init__(self):
        bands = _frozen(self.bands, np.float32)
        valid = _frozen(self.valid, bool)
        if bands.ndim != 3 or bands.shape[0] != len(BANDS):
            raise ValueError(f"bands must have shape (6, H, W), got {bands.shape}")
        if valid.shape != bands.shape[1:]:
            raise ValueError(f"valid plane {valid.shape} does not match bands {bands.shape[1:]}")
        if not np.isfinite(bands[:, valid]).all():
            raise ValueError("non-finite band value at a valid pixel")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self):
        return self.bands.shape[1]

    @property
    def width(self):
        return self.bands.shape[2]

    def band(self, name):
        return self.bands[BANDS.index(name)]


@dataclass(frozen=True)
class MaskSet:
    """The five binary mask planes of a scene, each (H, W) uint8 in {0, 1}."""

    water: np.ndarray
    cloud: np.ndarray
    cloud_shadow: np.ndarray
    snow_ice: np.ndarray
    terrain_shadow: np.ndarray

    def __post_init__(self):
        shape = None
        for name in MASKS:
            plane = np.asarray(getattr(self, name))
            if plane.ndim != 2:
                raise ValueError(f"{name} plane must be 2-D")
            if shape is None:
                shape = plane.shape
            elif plane.shape != shape:
                raise ValueError(f"{name} plane {plane.shape} does not match {shape}")
            if not np.isin(plane, (0, 1)).all():
                raise ValueError(f"{name} plane has values outside {{0, 1}}")
            object.__setattr__(self, name, _frozen(plane, np.uint8))

    @property
    def shape(self):
        return self.water.shape

    def stack(self):
        """Planes as an array of shape (5, H, W) in ``MASKS`` order."""
        return np.stack([getattr(self, m) for m in MASKS])

    @classmethod
    def from_stack(cls, planes):
        planes = np.asarray(planes)
        if planes.shape[0] != len(MASKS):
            raise ValueError(f"expected {len(MASKS)} planes, got {planes.shape[0]}")
        return cls(**{m: planes[i] for i, m in enumerate(MASKS)})

    def __getitem__(self, name):
        if name not in MASKS:
            raise KeyError(name)
        return getattr(self, name)


@dataclass(frozen=True)
class Dem:
    """Elevation grid in meters, stored as float32 so files round-trip exactly."""

    elevation: np.ndarray
    pixel_size: float = 30.0

    def __post_init__(self):
        z = _frozen(self.elevation, np.float32)
        if z.ndim != 2 or z.size == 0:
            raise ValueError("elevation must be a non-empty 2-D plane")
        if not np.isfinite(z).all():
            raise ValueError("elevation must be finite")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        object.__setattr__(self, "elevation", z)

    @property
    def shape(self):
        return self.elevation.shape


# -- .mtile envelope -------------------------------------------------------


def write_planes(path, planes, pixel_size=30.0, extra=None):
    """Write named 2-D planes to ``path`` as an ``.mtile`` file."""
    names = list(planes)
    arrays = [np.asarray(planes[n]) for n in names]
    h, w = arrays[0].shape
    for n, a in zip(names, arrays):
        if a.shape != (h, w):
            raise MtileError(f"plane {n!r} has shape {a.shape}, expected {(h, w)}")
    header = {"w": int(w), "h": int(h), "pixel_size": float(pixel_size), "planes": names}
    if extra:
        header.update(extra)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype=_F32).tobytes())


def read_planes(path):
    """Read an ``.mtile`` file. Returns ``(header, {name: float32 plane})``."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise MtileError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MtileError(f"{path}: malformed header: {exc}") from None
    if not isinstance(header, dict):
        raise MtileError(f"{path}: header is not an object")
    try:
        w, h, names = int(header["w"]), int(header["h"]), list(header["planes"])
        float(header["pixel_size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MtileError(f"{path}: malformed header: {exc!r}") from None
    if w <= 0 or h <= 0 or not names or len(set(names)) != len(names):
        raise MtileError(f"{path}: malformed header: bad dimensions or plane list")
    payload = memoryview(raw)[nl + 1 :]
    need = len(names) * w * h * _F32.itemsize
    if len(payload) < need:
        raise MtileError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    if len(payload) > need:
        raise MtileError(f"{path}: payload longer than header declares ({len(payload)} > {need} bytes)")
    data = np.frombuffer(payload, dtype=_F32).reshape(len(names), h, w)
    return header, {n: data[i].astype(np.float32) for i, n in enumerate(names)}


def save_tile(tile, path):
    planes = {b: tile.bands[i] for i, b in enumerate(BANDS)}
    planes["valid"] = tile.valid.astype(np.float32)
    extra = {"meta": tile.meta.to_json()} if tile.meta is not None else None
    write_planes(path, planes, tile.pixel_size, extra)


def load_tile(path):
    header, planes = read_planes(path)
    missing = [n for n in (*BANDS, "valid") if n not in planes]
    if missing:
        raise MtileError(f"{path}: dimension mismatch: missing planes {missing}")
    meta = ObservationMeta.from_json(header["meta"]) if header.get("meta") else None
    return TileStack(
        bands=np.stack([planes[b] for b in BANDS]),
        valid=planes["valid"] != 0,
        pixel_size=float(header["pixel_size"]),
        meta=meta,
    )


def save_masks(masks, path, pixel_size=30.0):
    write_planes(path, {m: masks[m] for m in MASKS}, pixel_size)


def load_masks(path):
    _, planes = read_planes(path)
    missing = [m for m in MASKS if m not in planes]
    if missing:
        raise MtileError(f"{path}: missing mask planes {missing}")
    try:
        return MaskSet(**{m: planes[m] for m in MASKS})
    except ValueError as exc:
        raise MtileError(f"{path}: {exc}") from None


def save_dem(dem, path):
    write_planes(path, {"elevation": dem.elevation}, dem.pixel_size)


def load_dem(path):
    header, planes = read_planes(path)
    if "elevation" not in planes:
        raise MtileError(f"{path}: missing elevation plane")
    return Dem(planes["elevation"], float(header["pixel_size"]))
