"""Sun position and DEM cast-shadow masking.

Sun position uses the low-precision solar coordinates of the Astronomical
Almanac (ecliptic longitude, right ascension, sidereal time), good to about
0.01 degree between 1950 and 2050, with no refraction correction. Terrain shadow is a per-pixel ray march toward the sun over a
bilinearly sampled DEM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

# Heights within this many meters of the line of sight count as blocking.
# Absorbs rounding in tan() and bilinear weights for grazing geometry.
SHADOW_TOLERANCE_M = 1e-6

J2000 = datetime(2000, 1, 1, 12, tzinfo=timezone.utc)


@dataclass(frozen=True)
class SolarPosition:
    elevation: float  # degrees above horizon
    azimuth: float  # degrees clockwise from north, [0, 360)

    def __post_init__(self):
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation out of range: {self.elevation}")
        if not 0.0 <= self.azimuth < 360.0:
            raise ValueError(f"azimuth out of range: {self.azimuth}")


def solar_position(meta):
    """Approximate sun elevation/azimuth for an :class:`ObservationMeta`."""
    lat, lon = meta.latitude, meta.longitude
    if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
        raise ValueError(f"location out of range: ({lat}, {lon})")
    t = meta.timestamp.astimezone(timezone.utc)
    n = (t - J2000).total_seconds() / 86400.0  # days from J2000.0 (UT, TT offset ignored)
    hours = t.hour + t.minute / 60.0 + (t.second + t.microsecond * 1e-6) / 3600.0

    mean_long = (280.460 + 0.9856474 * n) % 360.0
    g = math.radians((357.528 + 0.9856003 * n) % 360.0)
    ecl_long = math.radians(mean_long + 1.915 * math.sin(g) + 0.020 * math.sin(2 * g))
    obliq = math.radians(23.439 - 0.0000004 * n)
    ra = math.atan2(math.cos(obliq) * math.sin(ecl_long), math.cos(ecl_long))
    decl = math.asin(math.sin(obliq) * math.sin(ecl_long))

    gmst = (6.697375 + 0.0657098242 * n + hours) % 24.0
    ha = math.radians(((gmst * 15.0 + lon - math.degrees(ra)) + 180.0) % 360.0 - 180.0)
    phi = math.radians(lat)

    sin_el = math.sin(phi) * math.sin(decl) + math.cos(phi) * math.cos(decl) * math.cos(ha)
    elevation = math.degrees(math.asin(max(-1.0, min(1.0, sin_el))))
    az = math.atan2(
        -math.cos(decl) * math.sin(ha),
        math.sin(decl) * math.cos(phi) - math.cos(decl) * math.cos(ha) * math.sin(phi),
    )
    azimuth = math.degrees(az) % 360.0
    if azimuth >= 360.0:  # -tiny % 360 rounds up to 360.0
        azimuth = 0.0
    return SolarPosition(elevation=elevation, azimuth=azimuth)


def _bilinear(z, rows, cols):
    """Sample ``z`` at fractional (rows, cols); callers keep points in bounds."""
    h, w = z.shape
    r0 = np.clip(np.floor(rows).astype(np.intp), 0, h - 1)
    c0 = np.clip(np.floor(cols).astype(np.intp), 0, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rows - r0
    fc = cols - c0
    top = z[r0, c0] * (1.0 - fc) + z[r0, c1] * fc
    bot = z[r1, c0] * (1.0 - fc) + z[r1, c1] * fc
    return top * (1.0 - fr) + bot * fr


def terrain_shadow(dem, sun):
    """Binary (H, W) uint8 cast-shadow mask for ``dem`` lit from ``sun``.

    A pixel is shadowed when, stepping one pixel at a time toward the sun
    azimuth, some bilinear DEM sample reaches the line of sight
    ``z + d * tan(elevation)``. The march stops at the raster edge or once the
    line of sight clears the DEM's total relief.
    """
    z = dem.elevation.astype(np.float64)
    h, w = z.shape
    if sun.elevation <= 0.0:
        return np.ones((h, w), dtype=np.uint8)

    tan_e = math.tan(math.radians(sun.elevation))
    relief = float(z.max() - z.min())
    if relief <= 0.0:
        return np.zeros((h, w), dtype=np.uint8)
    n_steps = math.ceil(relief / (tan_e * dem.pixel_size))

    az = math.radians(sun.azimuth)
    # snap near-axis directions so axis-aligned rays sample exact grid points
    d_col = round(math.sin(az), 12)
    d_row = round(-math.cos(az), 12)
    rise = dem.pixel_size * tan_e

    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    shadow = np.zeros((h, w), dtype=bool)
    active = np.ones((h, w), dtype=bool)
    for k in range(1, n_steps + 1):
        r = rows + k * d_row
        c = cols + k * d_col
        active &= (r >= 0) & (r <= h - 1) & (c >= 0) & (c <= w - 1)
        if not active.any():
            break
        idx = np.nonzero(active & ~shadow)
        if idx[0].size == 0:
            break
        sample = _bilinear(z, r[idx], c[idx])
        hit = sample >= z[idx] + k * rise - SHADOW_TOLERANCE_M
        shadow[idx[0][hit], idx[1][hit]] = True
    return shadow.astype(np.uint8)
