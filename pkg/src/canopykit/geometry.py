"""Crown-mask geometry.

Rasterization of crown polygons onto a pixel grid, boundary buffering of the
resulting pixel sets, and the mask summaries (characteristic length, centroid,
minimum rotated bounding rectangle, crown radius) the rest of the pipeline is
built on.

Conventions: masks live in (row, col) pixel space of a parent raster; all
buffering distances are Euclidean between integer pixel coordinates, so the
buffering threshold ``scale * sqrt(|S|)`` is in pixels as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegeneratePolygon, EmptyMask, OutsideRaster


@dataclass
class PixelMask:
    """A boolean pixel set in a window of a parent raster.

    ``window_origin`` is the (row, col) offset of ``bitmap[0, 0]`` in the
    parent raster. The window is the tight bounding box of the true pixels
    plus any padding requested at construction; derived masks (buffering) may
    be empty.
    """

    window_origin: tuple[int, int]
    bitmap: np.ndarray  # 2D bool
    pixel_size: float

    @property
    def count(self) -> int:
        return int(self.bitmap.sum())

    def pixel_coords(self) -> np.ndarray:
        """(K, 2) array of true-pixel (row, col) in parent coordinates."""
        rows, cols = np.nonzero(self.bitmap)
        return np.stack(
            [rows + self.window_origin[0], cols + self.window_origin[1]], axis=1
        )


@dataclass(frozen=True)
class RotatedRect:
    """Minimum-area rotated rectangle, sides in meters, angle in [0, pi)."""

    length: float
    width: float
    angle: float
    center: tuple[float, float]  # (row, col), fractional pixels


def polygon_area(polygon: list[tuple[float, float]]) -> float:
    """Signed shoelace area of a polygon given as (x, y) vertices."""
    xs = np.asarray([p[0] for p in polygon], dtype=float)
    ys = np.asarray([p[1] for p in polygon], dtype=float)
    return 0.5 * float(np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys))


def _points_in_polygon(px: np.ndarray, py: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd (ray casting) membership test for arrays of points.

    A point is inside when a ray to +x crosses the boundary an odd number of
    times. Edges are treated as half-open in y so shared vertices are not
    double counted.
    """
    inside = np.zeros(px.shape, dtype=bool)
    x1 = polygon[:, 0]
    y1 = polygon[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    for i in range(len(polygon)):
        if y1[i] == y2[i]:
            continue  # horizontal edge never crosses a horizontal ray
        crosses = (y1[i] > py) != (y2[i] > py)
        if not crosses.any():
            continue
        xint = x1[i] + (py - y1[i]) * (x2[i] - x1[i]) / (y2[i] - y1[i])
        inside ^= crosses & (px < xint)
    return inside


def rasterize_polygon(polygon, grid, padding: int = 0) -> PixelMask:
    """Rasterize a polygon (meters) onto the pixel grid of ``grid``.

    A pixel belongs to the mask iff its center lies inside the polygon under
    the even-odd rule. ``grid`` is any object with ``width``, ``height``,
    ``pixel_size`` and ``origin`` (x, y of the lower-left raster corner).

    Raises DegeneratePolygon for < 3 vertices or zero area, OutsideRaster when
    no in-bounds pixel center falls inside the polygon.
    """
    pts = [(float(x), float(y)) for x, y in polygon]
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]  # drop explicit ring closure
    if len(pts) < 3:
        raise DegeneratePolygon(f"polygon needs >= 3 vertices, got {len(pts)}")
    if polygon_area(pts) == 0.0:
        raise DegeneratePolygon("polygon has zero area")

    poly = np.asarray(pts, dtype=float)
    psz = float(grid.pixel_size)
    x0, y0 = grid.origin

    # Candidate pixel range from the polygon bbox, clipped to the raster.
    # Pixel (row, col) center: x = x0 + (col + 0.5) psz, y = y0 + (H - row - 0.5) psz.
    cmin = max(0, int(math.floor((poly[:, 0].min() - x0) / psz - 0.5)))
    cmax = min(grid.width - 1, int(math.ceil((poly[:, 0].max() - x0) / psz - 0.5)))
    rmin = max(0, int(math.floor(grid.height - 0.5 - (poly[:, 1].max() - y0) / psz)))
    rmax = min(grid.height - 1, int(math.ceil(grid.height - 0.5 - (poly[:, 1].min() - y0) / psz)))
    if cmin > cmax or rmin > rmax:
        raise OutsideRaster("polygon bounding box misses the raster")

    rows = np.arange(rmin, rmax + 1)
    cols = np.arange(cmin, cmax + 1)
    cgrid, rgrid = np.meshgrid(cols, rows)
    px = x0 + (cgrid + 0.5) * psz
    py = y0 + (grid.height - rgrid - 0.5) * psz
    bitmap = _points_in_polygon(px, py, poly)
    if not bitmap.any():
        raise OutsideRaster("no pixel center inside the polygon")

    # Tighten to the bounding box of true pixels, then add padding.
    rr, cc = np.nonzero(bitmap)
    r0, r1 = rr.min(), rr.max()
    c0, c1 = cc.min(), cc.max()
    tight = bitmap[r0 : r1 + 1, c0 : c1 + 1]
    if padding > 0:
        tight = np.pad(tight, padding)
        r0 -= padding
        c0 -= padding
    return PixelMask(
        window_origin=(int(rmin + r0), int(cmin + c0)),
        bitmap=tight,
        pixel_size=psz,
    )


def characteristic_length(mask: PixelMask) -> float:
    """Square root of the mask area in pixels."""
    n = mask.count
    if n == 0:
        raise EmptyMask("characteristic length of an empty mask")
    return math.sqrt(n)


def buffer_mask(mask: PixelMask, scale: float = 0.1) -> PixelMask:
    """Erode the mask to pixels strictly farther than ``scale * L`` from its complement.

    The complement extends beyond the window: the bitmap is padded with
    outside pixels by ``ceil(scale * L) + 1`` so border pixels see their
    out-of-window neighbors. Distances are exact (integer squared Euclidean
    against the nearest outside pixel via the exact distance transform).
    The result keeps the input window and may be empty.
    """
    if mask.count == 0:
        raise EmptyMask("buffering an empty mask")
    length = characteristic_length(mask)
    threshold = scale * length
    pad = int(math.ceil(threshold)) + 1
    padded = np.pad(mask.bitmap, pad)
    _, (irow, icol) = ndimage.distance_transform_edt(padded, return_indices=True)
    prow, pcol = np.indices(padded.shape)
    d2 = (prow - irow) ** 2 + (pcol - icol) ** 2
    keep = padded & (d2 > threshold * threshold)
    return PixelMask(
        window_origin=mask.window_origin,
        bitmap=keep[pad:-pad, pad:-pad],
        pixel_size=mask.pixel_size,
    )


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull; collinear points dropped."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.asarray(lower[:-1] + upper[:-1], dtype=float)
    if len(hull) < 3:  # all points collinear
        ext = pts[[0, -1]] if len(pts) > 1 else pts
        return np.asarray(ext, dtype=float)
    return hull


def min_rotated_rect(mask: PixelMask) -> RotatedRect:
    """Minimum-area rectangle over the convex hull of true-pixel centers.

    Rotating calipers: the optimum is aligned with some hull edge. Sides are
    reported in meters (pixel extent times pixel size), ``length >= width``,
    angle of the long side in [0, pi).
    """
    if mask.count == 0:
        raise EmptyMask("rectangle of an empty mask")
    coords = mask.pixel_coords().astype(float)  # (row, col)
    pts = coords[:, ::-1].copy()  # work in (x=col, y=row)

    hull = _convex_hull(pts)
    if len(hull) == 1:
        r, c = coords[0]
        return RotatedRect(0.0, 0.0, 0.0, (float(r), float(c)))
    if len(hull) == 2:
        d = hull[1] - hull[0]
        span = float(np.hypot(d[0], d[1]))
        angle = math.atan2(d[1], d[0]) % math.pi
        mid = (hull[0] + hull[1]) / 2.0
        return RotatedRect(
            span * mask.pixel_size, 0.0, angle, (float(mid[1]), float(mid[0]))
        )

    best = None  # (area, angle, xmin, xmax, ymin, ymax)
    edges = np.roll(hull, -1, axis=0) - hull
    for ex, ey in edges:
        theta = math.atan2(ey, ex)
        ct, st = math.cos(theta), math.sin(theta)
        # rotate by -theta: edge becomes horizontal
        rx = hull[:, 0] * ct + hull[:, 1] * st
        ry = -hull[:, 0] * st + hull[:, 1] * ct
        xmin, xmax = rx.min(), rx.max()
        ymin, ymax = ry.min(), ry.max()
        area = (xmax - xmin) * (ymax - ymin)
        if best is None or area < best[0]:
            best = (area, theta, xmin, xmax, ymin, ymax)

    _, theta, xmin, xmax, ymin, ymax = best
    side_x = xmax - xmin  # along the edge direction (angle theta)
    side_y = ymax - ymin
    if side_x >= side_y:
        length_px, width_px = side_x, side_y
        long_angle = theta % math.pi
    else:
        length_px, width_px = side_y, side_x
        long_angle = (theta + math.pi / 2.0) % math.pi
    cx_r = (xmin + xmax) / 2.0
    cy_r = (ymin + ymax) / 2.0
    ct, st = math.cos(theta), math.sin(theta)
    cx = cx_r * ct - cy_r * st
    cy = cx_r * st + cy_r * ct
    return RotatedRect(
        length=length_px * mask.pixel_size,
        width=width_px * mask.pixel_size,
        angle=long_angle,
        center=(float(cy), float(cx)),
    )


def crown_radius(rect: RotatedRect) -> float:
    """Crown radius in meters from rectangle sides: (length + width) / 4."""
    return (rect.length + rect.width) / 4.0


def centroid(mask: PixelMask) -> tuple[float, float]:
    """Mean (row, col) of true pixels in parent-raster coordinates."""
    if mask.count == 0:
        raise EmptyMask("centroid of an empty mask")
    coords = mask.pixel_coords()
    mean = coords.mean(axis=0)
    return float(mean[0]), float(mean[1])
