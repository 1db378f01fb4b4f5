"""Crown-to-record extraction pipeline.

For every annotated crown: rasterize the polygon, buffer the mask, read the
height label off the CHM (percentile or maximum, with optional linear
correction), crop the image tile at the crown centroid, and emit one
benchmark record. Per-crown failures are collected as skip reports, never
fatal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geometry, raster
from .errors import AllNodata, CanopyKitError, ConfigError, EmptyCrownList, NoOverlap
from .geometry import PixelMask
from .raster import Raster, Tile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CrownAnnotation:
    """One manually delineated crown: polygon ring (meters), label, split."""

    crown_id: str
    class_name: str
    polygon: tuple[tuple[float, float], ...]
    split: str = "train"

    def __post_init__(self) -> None:
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"split {self.split!r} not in train/val/test")


@dataclass(frozen=True)
class ExtractionConfig:
    buffer_scale: float = 0.1
    fallback_scale: float = 0.05
    percentile_p: float = 99.0
    use_max: bool = False
    linear_correction: tuple[float, float] | None = None  # (slope, intercept)
    tile_size: int = 512

    def __post_init__(self) -> None:
        if not 0 < self.fallback_scale < self.buffer_scale:
            raise ConfigError("need 0 < fallback_scale < buffer_scale")
        if not 0 < self.percentile_p <= 100:
            raise ConfigError("need 0 < percentile_p <= 100")
        if self.tile_size <= 0:
            raise ConfigError("tile_size must be positive")


@dataclass
class BenchmarkRecord:
    crown_id: str
    class_index: int
    class_name: str
    height: float | None  # meters; None = undefined (excluded from height eval)
    split: str
    tile_path: str
    pad_flag: bool
    buffer_fallback_used: bool


@dataclass
class SkipReport:
    crown_id: str
    reason: str


@dataclass
class BenchmarkResult:
    records: list[BenchmarkRecord]
    tiles: list[Tile | None]
    skips: list[SkipReport]
    class_names: list[str]  # index -> name, the persisted class map


def buffered_mask_for_height(
    mask: PixelMask, cfg: ExtractionConfig
) -> tuple[PixelMask, bool]:
    """Mask actually used for the height statistic plus the fallback flag.

    Buffer at ``buffer_scale``; an empty result retries at ``fallback_scale``;
    if still empty the unbuffered mask is used. Both degradations set the flag.
    """
    buf = geometry.buffer_mask(mask, cfg.buffer_scale)
    if buf.count > 0:
        return buf, False
    buf = geometry.buffer_mask(mask, cfg.fallback_scale)
    if buf.count > 0:
        return buf, True
    return mask, True


def extract_height(
    chm: Raster, mask: PixelMask, cfg: ExtractionConfig
) -> tuple[float | None, bool]:
    """Height label for one crown mask, or None when it comes out negative.

    Negative results (possible after the linear correction, or from raw CHM
    noise below ground level) are undefined rather than clamped, so they are
    excluded from height training and evaluation downstream.
    Returns (height, buffer_fallback_used).
    """
    used, fallback = buffered_mask_for_height(mask, cfg)
    values = raster.masked_values(chm, used)
    if cfg.use_max:
        h = max(values)
    else:
        h = raster.percentile(values, cfg.percentile_p)
    if cfg.linear_correction is not None:
        slope, intercept = cfg.linear_correction
        h = slope * h + intercept
    if h < 0:
        return None, fallback
    return float(h), fallback


def build_benchmark(
    chm: Raster,
    rgb: list[Raster] | None,
    crowns: list[CrownAnnotation],
    cfg: ExtractionConfig,
    collect_tiles: bool = True,
) -> BenchmarkResult:
    """Run the full pipeline over a crown list.

    Tiles come from the RGB bands when given, else from the CHM. Output order
    is input order; crowns whose rasterization or height extraction fails are
    skipped with a reason.
    """
    if not crowns:
        raise EmptyCrownList("no crowns to extract")
    class_names = sorted({c.class_name for c in crowns})
    class_index = {name: i for i, name in enumerate(class_names)}

    tile_sources = rgb if rgb else [chm]
    records: list[BenchmarkRecord] = []
    tiles: list[Tile | None] = []
    skips: list[SkipReport] = []
    for crown in crowns:
        try:
            mask = geometry.rasterize_polygon(crown.polygon, chm)
            try:
                height, fallback = extract_height(chm, mask, cfg)
            except (NoOverlap, AllNodata) as exc:
                # keep the sample for classification, no height label
                log.info("crown %s: no height (%s)", crown.crown_id, exc)
                height, fallback = None, False
            center = geometry.centroid(mask)
            tile: Tile | None = None
            pad_flag = False
            if collect_tiles:
                bands = [raster.extract_tile(b, center, cfg.tile_size) for b in tile_sources]
                tile = Tile(
                    size=cfg.tile_size,
                    center=center,
                    pixels=np.concatenate([b.pixels for b in bands], axis=0),
                    pad_flag=any(b.pad_flag for b in bands),
                )
                pad_flag = tile.pad_flag
            else:
                pad_flag = _would_pad(chm, center, cfg.tile_size)
        except CanopyKitError as exc:
            log.warning("crown %s skipped: %s", crown.crown_id, exc)
            skips.append(SkipReport(crown.crown_id, f"{type(exc).__name__}: {exc}"))
            continue
        records.append(
            BenchmarkRecord(
                crown_id=crown.crown_id,
                class_index=class_index[crown.class_name],
                class_name=crown.class_name,
                height=height,
                split=crown.split,
                tile_path=f"{crown.crown_id}.asc",
                pad_flag=pad_flag,
                buffer_fallback_used=fallback,
            )
        )
        tiles.append(tile)
    return BenchmarkResult(records=records, tiles=tiles, skips=skips, class_names=class_names)


def _would_pad(chm: Raster, center: tuple[float, float], size: int) -> bool:
    r0 = int(np.floor(center[0] + 0.5)) - size // 2
    c0 = int(np.floor(center[1] + 0.5)) - size // 2
    return r0 < 0 or c0 < 0 or r0 + size > chm.height or c0 + size > chm.width
