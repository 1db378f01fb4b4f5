"""Per-class allometric height model: ln h = a * ln r + b.

Fitting is ordinary least squares in log-log space; prediction back-transforms
without a smearing correction. Classes with too few samples (or no radius
spread) optionally fall back to a pooled fit over all samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import (
    InsufficientSamples,
    NonPositiveRadius,
    NonPositiveValue,
    UnknownClass,
    ZeroVariance,
)
from .geometry import PixelMask


@dataclass(frozen=True)
class AllometrySample:
    class_name: str
    radius: float  # meters
    height: float  # meters

    def __post_init__(self) -> None:
        if self.radius <= 0 or self.height <= 0:
            raise NonPositiveValue(
                f"sample for {self.class_name}: radius and height must be > 0"
            )


@dataclass(frozen=True)
class ClassFit:
    slope: float
    intercept: float
    n_samples: int
    pooled: bool = False  # True when the class fell back to the global fit


@dataclass
class AllometryParams:
    per_class: dict[str, ClassFit] = field(default_factory=dict)
    pooled: ClassFit | None = None


def _ols_loglog(radii: np.ndarray, heights: np.ndarray) -> tuple[float, float]:
    lr = np.log(radii)
    lh = np.log(heights)
    var = float(np.mean(lr * lr) - np.mean(lr) ** 2)
    if var == 0.0:
        raise ZeroVariance("all radii equal")
    cov = float(np.mean(lr * lh) - np.mean(lr) * np.mean(lh))
    a = cov / var
    b = float(np.mean(lh) - a * np.mean(lr))
    return a, b


def fit_allometry(
    samples: list[AllometrySample],
    min_samples: int = 2,
    pool_small_classes: bool = True,
) -> AllometryParams:
    """Fit (slope, intercept) per class by OLS of ln(height) on ln(radius).

    Classes with fewer than ``min_samples`` samples, or whose radii are all
    equal, use the pooled fit over every sample and are flagged. With
    ``pool_small_classes=False`` those classes raise instead.
    """
    if not samples:
        raise InsufficientSamples("no samples")
    by_class: dict[str, list[AllometrySample]] = {}
    for s in samples:
        by_class.setdefault(s.class_name, []).append(s)

    pooled_fit: ClassFit | None = None
    if pool_small_classes:
        radii = np.asarray([s.radius for s in samples], dtype=float)
        heights = np.asarray([s.height for s in samples], dtype=float)
        if len(samples) >= min_samples:
            try:
                a, b = _ols_loglog(radii, heights)
                pooled_fit = ClassFit(a, b, len(samples), pooled=True)
            except ZeroVariance:
                pooled_fit = None

    params = AllometryParams(pooled=pooled_fit)
    for name in sorted(by_class):
        group = by_class[name]
        radii = np.asarray([s.radius for s in group], dtype=float)
        heights = np.asarray([s.height for s in group], dtype=float)
        try:
            if len(group) < min_samples:
                raise InsufficientSamples(
                    f"class {name!r} has {len(group)} sample(s), needs {min_samples}"
                )
            a, b = _ols_loglog(radii, heights)
            params.per_class[name] = ClassFit(a, b, len(group))
        except (InsufficientSamples, ZeroVariance) as exc:
            if pooled_fit is None:
                raise type(exc)(f"{exc} (no pooled fallback available)") from exc
            params.per_class[name] = ClassFit(
                pooled_fit.slope, pooled_fit.intercept, len(group), pooled=True
            )
    return params


def predict_height(params: AllometryParams, class_name: str, radius: float) -> float:
    """Back-transformed prediction exp(a * ln r + b) for one crown."""
    if radius <= 0:
        raise NonPositiveRadius(f"radius {radius} must be > 0")
    fit = params.per_class.get(class_name)
    if fit is None:
        raise UnknownClass(f"class {class_name!r} not fitted")
    return math.exp(fit.slope * math.log(radius) + fit.intercept)


def radius_from_mask(mask: PixelMask, mode: str = "rect") -> float:
    """Crown radius in meters from a pixel mask.

    ``rect`` uses the minimum rotated bounding rectangle, r = (l + w) / 4;
    ``area`` assumes a circular crown, r = sqrt(area / pi) (known to give
    worse height estimates, kept for comparison).
    """
    if mode == "rect":
        return geometry.crown_radius(geometry.min_rotated_rect(mask))
    if mode == "area":
        area_m2 = mask.count * mask.pixel_size**2
        return math.sqrt(area_m2 / math.pi)
    raise ValueError(f"unknown radius mode {mode!r}")


def allometric_baseline(
    masks: list[PixelMask],
    class_names: list[str],
    params: AllometryParams,
    radius_mode: str = "rect",
) -> list[float | None]:
    """Predicted height per crown from its ground-truth mask and class.

    Per-crown failures (unknown class, zero-size radius) yield None so the
    output stays aligned with the inputs for metric computation.
    """
    if len(masks) != len(class_names):
        raise ValueError("masks and class_names must align")
    preds: list[float | None] = []
    for mask, name in zip(masks, class_names):
        try:
            r = radius_from_mask(mask, radius_mode)
            preds.append(predict_height(params, name, r))
        except (UnknownClass, NonPositiveRadius):
            preds.append(None)
    return preds
