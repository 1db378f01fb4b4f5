import math

import numpy as np
import pytest

from canopykit import geometry
from canopykit.allometry import (
    AllometrySample,
    allometric_baseline,
    fit_allometry,
    predict_height,
    radius_from_mask,
)
from canopykit.errors import (
    InsufficientSamples,
    NonPositiveRadius,
    NonPositiveValue,
    UnknownClass,
    ZeroVariance,
)
from canopykit.metrics import regression_metrics
from canopykit.synth import RandomTrees, SceneSpec, generate_scene


def power_law_samples(class_name, slope, intercept, radii):
    return [
        AllometrySample(class_name, float(r), float(math.exp(intercept) * r**slope))
        for r in radii
    ]


def normal_equations_oracle(radii, heights):
    """Explicit 2x2 solve for the log-log regression, fsum accumulation."""
    lr = [math.log(r) for r in radii]
    lh = [math.log(h) for h in heights]
    n = len(lr)
    sx = math.fsum(lr)
    sy = math.fsum(lh)
    sxx = math.fsum(v * v for v in lr)
    sxy = math.fsum(x * y for x, y in zip(lr, lh))
    det = n * sxx - sx * sx
    a = (n * sxy - sx * sy) / det
    b = (sxx * sy - sx * sxy) / det
    return a, b


class TestFit:
    def test_noiseless_power_law(self, rng):
        radii = rng.uniform(0.5, 9.0, 60)
        params = fit_allometry(power_law_samples("oak", 0.8, 0.5, radii))
        fit = params.per_class["oak"]
        assert fit.slope == pytest.approx(0.8, abs=1e-9)
        assert fit.intercept == pytest.approx(0.5, abs=1e-9)
        assert fit.n_samples == 60 and not fit.pooled

    def test_two_point_line(self):
        params = fit_allometry(
            [AllometrySample("x", 1.0, 1.0), AllometrySample("x", math.e, math.e)]
        )
        assert params.per_class["x"].slope == pytest.approx(1.0, abs=1e-12)
        assert params.per_class["x"].intercept == pytest.approx(0.0, abs=1e-12)

    def test_noisy_matches_normal_equations(self, rng):
        radii = rng.uniform(0.3, 12.0, 200)
        heights = np.exp(0.6 * np.log(radii) + 0.9 + rng.normal(0, 0.25, 200))
        samples = [AllometrySample("s", float(r), float(h)) for r, h in zip(radii, heights)]
        fit = fit_allometry(samples).per_class["s"]
        a, b = normal_equations_oracle(radii, heights)
        assert fit.slope == pytest.approx(a, abs=1e-9)
        assert fit.intercept == pytest.approx(b, abs=1e-9)

    def test_order_invariance(self, rng):
        radii = rng.uniform(0.5, 5.0, 30)
        heights = rng.uniform(2.0, 20.0, 30)
        samples = [AllometrySample("s", float(r), float(h)) for r, h in zip(radii, heights)]
        shuffled = list(samples)
        rng.shuffle(shuffled)
        a = fit_allometry(samples).per_class["s"]
        b = fit_allometry(shuffled).per_class["s"]
        assert a.slope == pytest.approx(b.slope, abs=1e-12)
        assert a.intercept == pytest.approx(b.intercept, abs=1e-12)

    def test_radius_rescaling_consistency(self, rng):
        radii = rng.uniform(0.5, 5.0, 40)
        heights = np.exp(0.7 * np.log(radii) + 0.4 + rng.normal(0, 0.1, 40))
        samples = [AllometrySample("s", float(r), float(h)) for r, h in zip(radii, heights)]
        scale = 3.7
        scaled = [AllometrySample("s", s.radius * scale, s.height) for s in samples]
        f1 = fit_allometry(samples).per_class["s"]
        f2 = fit_allometry(scaled).per_class["s"]
        assert f2.slope == pytest.approx(f1.slope, abs=1e-9)
        assert f2.intercept == pytest.approx(f1.intercept - f1.slope * math.log(scale), abs=1e-9)
        # predictions at corresponding radii agree
        p1 = math.exp(f1.slope * math.log(2.0) + f1.intercept)
        p2 = math.exp(f2.slope * math.log(2.0 * scale) + f2.intercept)
        assert p1 == pytest.approx(p2, rel=1e-9)

    def test_small_class_pools_with_flag(self, rng):
        radii = rng.uniform(0.5, 6.0, 50)
        samples = power_law_samples("big", 0.8, 0.5, radii)
        samples.append(AllometrySample("rare", 2.0, 5.0))
        params = fit_allometry(samples)
        assert params.per_class["rare"].pooled
        assert not params.per_class["big"].pooled
        assert params.per_class["rare"].slope == params.pooled.slope

    def test_small_class_strict_mode_raises(self):
        samples = [
            AllometrySample("a", 1.0, 2.0),
            AllometrySample("a", 2.0, 3.0),
            AllometrySample("rare", 2.0, 5.0),
        ]
        with pytest.raises(InsufficientSamples):
            fit_allometry(samples, pool_small_classes=False)

    def test_zero_variance_strict_mode_raises(self):
        samples = [AllometrySample("a", 2.0, 1.0), AllometrySample("a", 2.0, 3.0)]
        with pytest.raises(ZeroVariance):
            fit_allometry(samples, pool_small_classes=False)

    def test_non_positive_sample_rejected(self):
        with pytest.raises(NonPositiveValue):
            AllometrySample("a", -1.0, 2.0)
        with pytest.raises(NonPositiveValue):
            AllometrySample("a", 1.0, 0.0)


class TestPredict:
    def test_identity_model(self):
        params = fit_allometry(
            [AllometrySample("x", 1.0, 1.0), AllometrySample("x", math.e, math.e)]
        )
        assert predict_height(params, "x", 7.0) == pytest.approx(7.0, rel=1e-12)

    def test_power_law_evaluation(self, rng):
        params = fit_allometry(power_law_samples("oak", 0.8, 0.5, rng.uniform(1, 5, 20)))
        # exp(0.8 ln 2 + 0.5), evaluated independently
        assert predict_height(params, "oak", 2.0) == pytest.approx(
            math.exp(0.8 * math.log(2.0) + 0.5), rel=1e-9
        )

    def test_constant_model(self):
        params = fit_allometry(
            [AllometrySample("c", 1.0, 10.0), AllometrySample("c", 5.0, 10.0)]
        )
        fit = params.per_class["c"]
        assert fit.slope == pytest.approx(0.0, abs=1e-12)
        for r in (0.5, 2.0, 9.0):
            assert predict_height(params, "c", r) == pytest.approx(10.0, rel=1e-12)

    def test_monotone_in_radius_for_positive_slope(self, rng):
        params = fit_allometry(power_law_samples("oak", 0.8, 0.5, rng.uniform(1, 5, 20)))
        rs = np.sort(rng.uniform(0.2, 20.0, 30))
        preds = [predict_height(params, "oak", float(r)) for r in rs]
        assert all(a < b for a, b in zip(preds, preds[1:]))

    def test_errors(self):
        params = fit_allometry(
            [AllometrySample("x", 1.0, 1.0), AllometrySample("x", 2.0, 2.0)]
        )
        with pytest.raises(UnknownClass):
            predict_height(params, "nope", 1.0)
        with pytest.raises(NonPositiveRadius):
            predict_height(params, "x", 0.0)


class TestBaseline:
    def scene(self, seed=7):
        truth_ab = {"oak": (0.8, 0.5), "pine": (1.0, 0.3)}
        spec = SceneSpec(
            width=1200,
            height=1200,
            pixel_size=0.2,
            random_trees=RandomTrees(
                count=60, classes=("oak", "pine"), radius_range=(1.5, 4.0)
            ),
            allometry_truth=truth_ab,
        )
        return generate_scene(spec, seed=seed)

    def test_square_crown_radius_is_exact(self):
        # square of side 2r: rect sides are both 2r minus one pixel of centers
        from canopykit.geometry import RotatedRect, crown_radius

        assert crown_radius(RotatedRect(4.0, 4.0, 0.0, (0, 0))) == 2.0

    def test_synthetic_scene_delta_close_to_one(self):
        chm, crowns, truth = self.scene()
        samples = [AllometrySample(t.class_name, t.radius, t.height) for t in truth]
        params = fit_allometry(samples)
        masks = [geometry.rasterize_polygon(c.polygon, chm) for c in crowns]
        preds = allometric_baseline(masks, [c.class_name for c in crowns], params)
        assert all(p is not None for p in preds)
        report = regression_metrics(preds, [t.height for t in truth])
        assert report.delta >= 0.95

    def test_unknown_class_isolated(self):
        chm, crowns, truth = self.scene()
        params = fit_allometry(
            [AllometrySample(t.class_name, t.radius, t.height) for t in truth if t.class_name == "oak"]
        )
        masks = [geometry.rasterize_polygon(c.polygon, chm) for c in crowns[:6]]
        names = [c.class_name for c in crowns[:6]]
        preds = allometric_baseline(masks, names, params)
        for pred, name in zip(preds, names):
            assert (pred is None) == (name != "oak")

    def test_area_radius_mode(self, rng):
        bitmap = np.ones((20, 20), bool)
        mask = geometry.PixelMask((0, 0), bitmap, 0.5)
        r = radius_from_mask(mask, "area")
        assert r == pytest.approx(math.sqrt(400 * 0.25 / math.pi), rel=1e-12)
