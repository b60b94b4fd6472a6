"""Multi-task satellite masking and SSC estimation at desk scale."""

from .raster import BANDS, MASKS, Dem, MaskSet, ObservationMeta, TileStack

__version__ = "0.1.0"
