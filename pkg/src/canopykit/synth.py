"""Synthetic forest scenes with exact ground truth.

Renders cone or paraboloid tree profiles into a CHM raster, emits matching
32-gon crown polygons, and records the exact apex heights and radii so
pipeline and baseline outputs can be checked against known values. Tree
centers snap to pixel centers by default, making apex heights exactly
representable in the f32 raster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SpecInvalid
from .extraction import CrownAnnotation
from .raster import DEFAULT_NODATA, Raster

PROFILES = ("cone", "paraboloid")
CROWN_POLYGON_SIDES = 32
HEIGHT_QUANTUM = 1.0 / 256.0  # keeps apex heights exact in f32


@dataclass(frozen=True)
class TreeSpec:
    center: tuple[float, float]  # (x, y) meters
    height: float  # apex, meters
    radius: float  # crown radius, meters
    class_name: str
    profile: str = "cone"

    def __post_init__(self) -> None:
        if self.height <= 0 or self.radius <= 0:
            raise SpecInvalid("tree height and radius must be > 0")
        if self.profile not in PROFILES:
            raise SpecInvalid(f"unknown profile {self.profile!r}")


@dataclass(frozen=True)
class RandomTrees:
    """Generator block: jittered-grid placement of non-overlapping trees."""

    count: int
    classes: tuple[str, ...]
    radius_range: tuple[float, float]
    height_range: tuple[float, float] | None = None  # None -> allometry_truth
    profile: str = "cone"

    def __post_init__(self) -> None:
        if self.count < 1 or not self.classes:
            raise SpecInvalid("random_trees needs count >= 1 and classes")
        if not 0 < self.radius_range[0] <= self.radius_range[1]:
            raise SpecInvalid("radius_range must be positive and ordered")
        if self.profile not in PROFILES:
            raise SpecInvalid(f"unknown profile {self.profile!r}")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    pixel_size: float
    trees: tuple[TreeSpec, ...] = ()
    random_trees: RandomTrees | None = None
    allometry_truth: dict[str, tuple[float, float]] | None = None  # class -> (a, b)
    snap_to_pixel_centers: bool = True

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0 or self.pixel_size <= 0:
            raise SpecInvalid("scene dimensions and pixel size must be positive")
        if not self.trees and self.random_trees is None:
            raise SpecInvalid("scene has no trees")
        for t in self.trees:
            if not (
                0 <= t.center[0] <= self.width * self.pixel_size
                and 0 <= t.center[1] <= self.height * self.pixel_size
            ):
                raise SpecInvalid(f"tree center {t.center} outside the raster")


@dataclass(frozen=True)
class TruthRecord:
    crown_id: str
    class_name: str
    height: float
    radius: float
    center: tuple[float, float]  # (x, y) meters
    profile: str


def _quantize_height(h: float) -> float:
    return max(HEIGHT_QUANTUM, round(h / HEIGHT_QUANTUM) * HEIGHT_QUANTUM)


def _materialize_random_trees(spec: SceneSpec, rng: np.random.Generator) -> list[TreeSpec]:
    block = spec.random_trees
    assert block is not None
    r_lo, r_hi = block.radius_range
    extent_x = spec.width * spec.pixel_size
    extent_y = spec.height * spec.pixel_size
    # grid cells wide enough that neighbors can never overlap
    cell = 2.0 * r_hi + 2.0 * spec.pixel_size
    nx = int(extent_x // cell)
    ny = int(extent_y // cell)
    if nx * ny < block.count:
        raise SpecInvalid(
            f"raster fits {nx * ny} non-overlapping trees of radius <= {r_hi}, "
            f"requested {block.count}"
        )
    cells = [(i, j) for j in range(ny) for i in range(nx)]
    chosen = rng.choice(len(cells), size=block.count, replace=False)
    trees = []
    for k, idx in enumerate(chosen):
        i, j = cells[int(idx)]
        radius = float(rng.uniform(r_lo, r_hi))
        # jitter within the cell while keeping the crown inside it
        slack = cell / 2.0 - radius - spec.pixel_size
        cx = (i + 0.5) * cell + float(rng.uniform(-slack, slack))
        cy = (j + 0.5) * cell + float(rng.uniform(-slack, slack))
        class_name = str(block.classes[int(rng.integers(len(block.classes)))])
        if block.height_range is not None:
            # quantized so the f32 raster stores the apex exactly (use_max oracle)
            h = _quantize_height(float(rng.uniform(*block.height_range)))
        else:
            truth = (spec.allometry_truth or {}).get(class_name)
            if truth is None:
                raise SpecInvalid(
                    f"no height_range and no allometry_truth for {class_name!r}"
                )
            a, b = truth
            h = math.exp(b) * radius**a  # exact in f64 for fit round trips
        trees.append(
            TreeSpec(
                center=(cx, cy),
                height=h,
                radius=radius,
                class_name=class_name,
                profile=block.profile,
            )
        )
    return trees


def _snap(spec: SceneSpec, x: float, y: float) -> tuple[float, float]:
    """Move a point to the nearest pixel center."""
    psz = spec.pixel_size
    col = round(x / psz - 0.5)
    row = round(y / psz - 0.5)
    col = min(max(col, 0), spec.width - 1)
    row = min(max(row, 0), spec.height - 1)
    return (col + 0.5) * psz, (row + 0.5) * psz


def _crown_polygon(cx: float, cy: float, r: float) -> tuple[tuple[float, float], ...]:
    angles = np.linspace(0.0, 2.0 * math.pi, CROWN_POLYGON_SIDES, endpoint=False)
    return tuple((cx + r * math.cos(a), cy + r * math.sin(a)) for a in angles)


def generate_scene(
    spec: SceneSpec, seed: int = 0
) -> tuple[Raster, list[CrownAnnotation], list[TruthRecord]]:
    """Render the scene: CHM raster, crown polygons, exact truth table.

    The CHM at each pixel is the maximum over all tree profiles (cone:
    h * max(0, 1 - dist / r); paraboloid: h * max(0, 1 - (dist / r)^2)),
    zero background. The seed only drives the optional random-trees block;
    explicit tree lists render identically for any seed.
    """
    rng = np.random.default_rng(seed)
    trees = list(spec.trees)
    if spec.random_trees is not None:
        trees.extend(_materialize_random_trees(spec, rng))

    psz = spec.pixel_size
    chm = np.zeros((spec.height, spec.width), dtype=np.float64)
    crowns: list[CrownAnnotation] = []
    truth: list[TruthRecord] = []
    for i, tree in enumerate(trees):
        cx, cy = tree.center
        if spec.snap_to_pixel_centers:
            cx, cy = _snap(spec, cx, cy)
        r = tree.radius
        c0 = max(0, int(math.floor((cx - r) / psz - 0.5)))
        c1 = min(spec.width - 1, int(math.ceil((cx + r) / psz - 0.5)))
        r0 = max(0, int(math.floor(spec.height - 0.5 - (cy + r) / psz)))
        r1 = min(spec.height - 1, int(math.ceil(spec.height - 0.5 - (cy - r) / psz)))
        if c0 > c1 or r0 > r1:
            raise SpecInvalid(f"tree {i} footprint misses the raster")
        cols = np.arange(c0, c1 + 1)
        rows = np.arange(r0, r1 + 1)
        px = (cols + 0.5) * psz
        py = (spec.height - rows - 0.5) * psz
        dist = np.hypot(px[None, :] - cx, py[:, None] - cy)
        if tree.profile == "cone":
            z = tree.height * np.maximum(0.0, 1.0 - dist / r)
        else:
            z = tree.height * np.maximum(0.0, 1.0 - (dist / r) ** 2)
        window = chm[r0 : r1 + 1, c0 : c1 + 1]
        np.maximum(window, z, out=window)

        crown_id = f"tree_{i:04d}"
        crowns.append(
            CrownAnnotation(
                crown_id=crown_id,
                class_name=tree.class_name,
                polygon=_crown_polygon(cx, cy, r),
                split="train",
            )
        )
        truth.append(
            TruthRecord(crown_id, tree.class_name, tree.height, r, (cx, cy), tree.profile)
        )

    raster = Raster(
        width=spec.width,
        height=spec.height,
        pixel_size=psz,
        origin=(0.0, 0.0),
        values=chm.astype(np.float32),
        nodata=DEFAULT_NODATA,
    )
    return raster, crowns, truth
