"""Height rasters: percentile statistics, masked extraction, tile cropping.

A :class:`Raster` stores a single band as f32 (row 0 = top row, matching the
on-disk ASCII-grid order); every statistic is computed in f64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllNodata, CenterOutOfBounds, EmptyInput, InvalidP, NoOverlap
from .geometry import PixelMask

DEFAULT_NODATA = -9999.0


@dataclass
class Raster:
    """Single-band georeferenced grid of heights in meters.

    ``origin`` is the (x, y) of the lower-left corner in meters; pixel
    (row, col) has its center at ``x = origin.x + (col + 0.5) * pixel_size``,
    ``y = origin.y + (height - row - 0.5) * pixel_size``.
    """

    width: int
    height: int
    pixel_size: float
    origin: tuple[float, float]
    values: np.ndarray  # (height, width) f32
    nodata: float = DEFAULT_NODATA

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.pixel_size <= 0:
            raise ValueError("raster dimensions and pixel size must be positive")
        self.values = np.asarray(self.values, dtype=np.float32).reshape(
            self.height, self.width
        )

    def meters_to_pixel(self, x: float, y: float) -> tuple[float, float]:
        """Fractional (row, col) of a point given in meters."""
        col = (x - self.origin[0]) / self.pixel_size - 0.5
        row = self.height - 0.5 - (y - self.origin[1]) / self.pixel_size
        return row, col

    def pixel_to_meters(self, row: float, col: float) -> tuple[float, float]:
        x = self.origin[0] + (col + 0.5) * self.pixel_size
        y = self.origin[1] + (self.height - row - 0.5) * self.pixel_size
        return x, y


@dataclass
class Tile:
    """Fixed-size crop, zero-filled where it extends past the parent raster."""

    size: int
    center: tuple[float, float]
    pixels: np.ndarray  # (channels, size, size) f32
    pad_flag: bool = False
    channels: int = field(init=False)

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[None]
        self.channels = self.pixels.shape[0]
        if self.pixels.shape[1:] != (self.size, self.size):
            raise ValueError("tile pixel grid must be size x size")


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile: rank (n-1) * p / 100 over sorted values.

    p = 100 returns the maximum exactly; a single value is returned unchanged.
    """
    if not 0.0 <= p <= 100.0:
        raise InvalidP(f"percentile rank {p} outside [0, 100]")
    xs = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = xs.size
    if n == 0:
        raise EmptyInput("percentile of an empty list")
    rank = (n - 1) * p / 100.0
    lo = int(math.floor(rank))
    hi = int(math.ceil(rank))
    if lo == hi:
        return float(xs[lo])
    frac = rank - lo
    return float(xs[lo] + frac * (xs[hi] - xs[lo]))


def masked_values(raster: Raster, mask: PixelMask) -> list[float]:
    """Raster values at true-mask pixels, nodata excluded, row-major order."""
    coords = mask.pixel_coords()
    if coords.size == 0:
        raise NoOverlap("mask is empty")
    in_bounds = (
        (coords[:, 0] >= 0)
        & (coords[:, 0] < raster.height)
        & (coords[:, 1] >= 0)
        & (coords[:, 1] < raster.width)
    )
    coords = coords[in_bounds]
    if coords.size == 0:
        raise NoOverlap("mask does not intersect the raster")
    vals = raster.values[coords[:, 0], coords[:, 1]].astype(np.float64)
    vals = vals[vals != raster.nodata]
    if vals.size == 0:
        raise AllNodata("all masked pixels are nodata")
    return [float(v) for v in vals]


def extract_tile(raster: Raster, center: tuple[float, float], size: int) -> Tile:
    """Crop a size x size window centered (after rounding) on ``center``.

    The window is [c - size // 2, c - size // 2 + size) per axis with
    c = round(center); out-of-bounds pixels are zero-filled and flagged.
    """
    if size <= 0:
        raise ValueError("tile size must be positive")
    crow, ccol = center
    if not (0 <= crow < raster.height and 0 <= ccol < raster.width):
        raise CenterOutOfBounds(f"tile center {center} outside raster")
    r0 = int(math.floor(crow + 0.5)) - size // 2
    c0 = int(math.floor(ccol + 0.5)) - size // 2

    out = np.zeros((size, size), dtype=np.float32)
    rs, re = max(r0, 0), min(r0 + size, raster.height)
    cs, ce = max(c0, 0), min(c0 + size, raster.width)
    pad = (rs, re, cs, ce) != (r0, r0 + size, c0, c0 + size)
    if re > rs and ce > cs:
        out[rs - r0 : re - r0, cs - c0 : ce - c0] = raster.values[rs:re, cs:ce]
    return Tile(size=size, center=(float(crow), float(ccol)), pixels=out, pad_flag=bool(pad))
