import json
import math

import numpy as np
import pytest

from canopykit import cli
from canopykit import io as kio
from canopykit.errors import ConfigError
from canopykit.extraction import BenchmarkRecord, CrownAnnotation
from canopykit.raster import Raster


def make_raster(rng, width=9, height=7, pixel_size=0.25):
    return Raster(
        width=width,
        height=height,
        pixel_size=pixel_size,
        origin=(12.5, -3.75),
        values=rng.normal(5, 2, (height, width)).astype(np.float32),
        nodata=-9999.0,
    )


def scene_files(tmp_path, seed=5, count=10, use_allometry=False):
    doc = {
        "width": 400,
        "height": 400,
        "pixel_size": 0.25,
        "random_trees": {
            "count": count,
            "classes": ["oak", "pine", "fir"],
            "radius_m": [1.5, 3.5],
            "height_m": None if use_allometry else [4.0, 18.0],
        },
        "allometry_truth": {"oak": [0.8, 0.5], "pine": [0.9, 0.4], "fir": [1.0, 0.3]}
        if use_allometry
        else None,
    }
    spec_path = tmp_path / "scene.json"
    spec_path.write_text(json.dumps(doc))
    out = tmp_path / "scene"
    assert cli.run(["synth", "--scene", str(spec_path), "--seed", str(seed), "--out", str(out)]) == 0
    return out


class TestAsciiGrid:
    def test_round_trip_exact(self, tmp_path, rng):
        raster = make_raster(rng)
        path = tmp_path / "grid.asc"
        kio.write_ascii_grid(path, raster)
        back = kio.read_ascii_grid(path)
        assert np.array_equal(back.values, raster.values)
        assert back.width == raster.width and back.height == raster.height
        assert back.pixel_size == raster.pixel_size
        assert back.origin == raster.origin

    def test_rewrite_is_byte_identical(self, tmp_path, rng):
        raster = make_raster(rng)
        a, b = tmp_path / "a.asc", tmp_path / "b.asc"
        kio.write_ascii_grid(a, raster)
        kio.write_ascii_grid(b, kio.read_ascii_grid(a))
        assert a.read_bytes() == b.read_bytes()

    def test_header_layout(self, tmp_path):
        raster = Raster(width=2, height=2, pixel_size=0.5, origin=(1.0, 2.0), values=np.zeros((2, 2)))
        path = tmp_path / "g.asc"
        kio.write_ascii_grid(path, raster)
        lines = path.read_text().splitlines()
        assert lines[0] == "ncols 2"
        assert lines[1] == "nrows 2"
        assert lines[2] == "xllcorner 1"
        assert lines[3] == "yllcorner 2"
        assert lines[4] == "cellsize 0.5"
        assert lines[5].startswith("NODATA_value")

    def test_multiband_round_trip(self, tmp_path, rng):
        bands = [make_raster(rng) for _ in range(3)]
        for b in bands[1:]:
            b.origin = bands[0].origin
        path = tmp_path / "rgb.asc"
        kio.write_ascii_bands(path, bands)
        back = kio.read_ascii_bands(path)
        assert len(back) == 3
        for orig, rt in zip(bands, back):
            assert np.array_equal(orig.values, rt.values)
        with pytest.raises(ConfigError):
            kio.read_ascii_grid(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.asc"
        path.write_text("ncols x\nnrows 2\n")
        with pytest.raises(ConfigError):
            kio.read_ascii_grid(path)

    def test_value_count_mismatch(self, tmp_path):
        path = tmp_path / "bad.asc"
        path.write_text(
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n"
        )
        with pytest.raises(ConfigError):
            kio.read_ascii_grid(path)


class TestCrownsGeojson:
    def test_round_trip(self, tmp_path):
        crowns = [
            CrownAnnotation("a", "oak", ((0.0, 0.0), (3.5, 0.25), (1.0, 2.0)), "test"),
            CrownAnnotation("b", "fir", ((5.0, 5.0), (8.0, 5.0), (8.0, 9.0), (5.0, 9.0)), "val"),
        ]
        path = tmp_path / "crowns.geojson"
        kio.write_crowns(path, crowns)
        assert kio.read_crowns(path) == crowns

    def test_missing_property(self, tmp_path):
        doc = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [0, 1]]]},
                    "properties": {"id": "x"},
                }
            ],
        }
        path = tmp_path / "c.geojson"
        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigError):
            kio.read_crowns(path)

    def test_split_defaults_to_train(self, tmp_path):
        doc = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [0, 1]]]},
                    "properties": {"id": "x", "class": "oak"},
                }
            ],
        }
        path = tmp_path / "c.geojson"
        path.write_text(json.dumps(doc))
        assert kio.read_crowns(path)[0].split == "train"


class TestRecordsCsv:
    def records(self):
        return [
            BenchmarkRecord("a", 1, "oak", 12.372195812, "train", "a.asc", False, False),
            BenchmarkRecord("b", 0, "fir", None, "test", "b.asc", True, True),
        ]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "records.csv"
        kio.write_records(path, self.records(), ["fir", "oak"])
        back, classes = kio.read_records(path)
        assert back == self.records()
        assert classes == ["fir", "oak"]

    def test_undefined_height_is_empty_field(self, tmp_path):
        path = tmp_path / "records.csv"
        kio.write_records(path, self.records(), ["fir", "oak"])
        row = path.read_text().splitlines()[3]
        assert row.split(",")[3] == ""

    def test_rewrite_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        kio.write_records(a, self.records(), ["fir", "oak"])
        records, classes = kio.read_records(a)
        kio.write_records(b, records, classes)
        assert a.read_bytes() == b.read_bytes()


class TestPredictionsCsv:
    def test_round_trip(self, tmp_path):
        rows = [("a", 3.25, 2), ("b", None, 0), ("c", 8.125, None)]
        path = tmp_path / "preds.csv"
        kio.write_predictions(path, rows)
        assert kio.read_predictions(path) == rows


class TestSceneSpecJson:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps({"width": 10, "height": 10, "pixel_size": 1.0, "oops": 1}))
        with pytest.raises(ConfigError):
            kio.read_scene_spec(path)

    def test_explicit_trees_parse(self, tmp_path):
        doc = {
            "width": 50,
            "height": 40,
            "pixel_size": 0.5,
            "trees": [
                {"center": [5.25, 5.25], "height": 7.5, "radius": 2.0, "class": "oak"},
                {
                    "center": [15.25, 8.25],
                    "height": 3.0,
                    "radius": 1.0,
                    "class": "fir",
                    "profile": "paraboloid",
                },
            ],
        }
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(doc))
        spec = kio.read_scene_spec(path)
        assert len(spec.trees) == 2
        assert spec.trees[1].profile == "paraboloid"


class TestCli:
    def test_synth_extract_eval_pipeline(self, tmp_path):
        scene = scene_files(tmp_path)
        run = tmp_path / "run"
        code = cli.run(
            [
                "extract",
                "--chm",
                str(scene / "chm.asc"),
                "--crowns",
                str(scene / "crowns.geojson"),
                "--use-max",
                "--tile-size",
                "32",
                "--out",
                str(run),
            ]
        )
        assert code == 0
        records, classes = kio.read_records(run / "records.csv")
        truth = {t.crown_id: t for t in kio.read_truth(scene / "truth.csv")}
        assert len(records) == 10
        for r in records:
            assert r.height == truth[r.crown_id].height

        # perfect predictions -> perfect report
        preds = tmp_path / "preds.csv"
        kio.write_predictions(preds, [(r.crown_id, r.height, r.class_index) for r in records])
        report_path = tmp_path / "report.json"
        assert (
            cli.run(
                ["eval", "--preds", str(preds), "--records", str(run / "records.csv"), "--out", str(report_path)]
            )
            == 0
        )
        report = json.loads(report_path.read_text())
        assert report["regression"]["delta"] == 1.0
        assert report["classification"]["macro_f1"] == 1.0
        assert report["checkpoint_score"] == 1.0

    def test_extract_idempotent(self, tmp_path):
        scene = scene_files(tmp_path)
        args = [
            "extract",
            "--chm",
            str(scene / "chm.asc"),
            "--crowns",
            str(scene / "crowns.geojson"),
            "--tile-size",
            "16",
        ]
        assert cli.run(args + ["--out", str(tmp_path / "r1")]) == 0
        assert cli.run(args + ["--out", str(tmp_path / "r2")]) == 0
        files1 = sorted(p.relative_to(tmp_path / "r1") for p in (tmp_path / "r1").rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(tmp_path / "r2") for p in (tmp_path / "r2").rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes()

    def test_fit_and_baseline(self, tmp_path):
        scene = scene_files(tmp_path, seed=9, count=30, use_allometry=True)
        truth = kio.read_truth(scene / "truth.csv")
        samples = tmp_path / "samples.csv"
        kio.write_csv(
            samples,
            ["class", "radius_m", "height_m"],
            [[t.class_name, repr(t.radius), repr(t.height)] for t in truth],
        )
        params_path = tmp_path / "params.json"
        assert cli.run(["fit-allometry", "--samples", str(samples), "--out", str(params_path)]) == 0
        params = kio.read_allometry_params(params_path)
        assert params.per_class["oak"].slope == pytest.approx(0.8, abs=1e-9)

        run = tmp_path / "run"
        assert (
            cli.run(
                [
                    "extract",
                    "--chm",
                    str(scene / "chm.asc"),
                    "--crowns",
                    str(scene / "crowns.geojson"),
                    "--use-max",
                    "--no-tiles",
                    "--out",
                    str(run),
                ]
            )
            == 0
        )
        report_path = tmp_path / "baseline.json"
        code = cli.run(
            [
                "allometry-baseline",
                "--crowns",
                str(scene / "crowns.geojson"),
                "--chm",
                str(scene / "chm.asc"),
                "--params",
                str(params_path),
                "--records",
                str(run / "records.csv"),
                "--out",
                str(report_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["regression"]["delta"] >= 0.95

    def test_stats_histograms(self, tmp_path):
        records_path = tmp_path / "records.csv"
        records = [
            BenchmarkRecord("a", 0, "oak", 1.2, "train", "a.asc", False, False),
            BenchmarkRecord("b", 0, "oak", 1.9, "train", "b.asc", False, False),
            BenchmarkRecord("c", 1, "fir", 0.3, "train", "c.asc", False, False),
            BenchmarkRecord("d", 1, "fir", None, "train", "d.asc", False, False),
            BenchmarkRecord("e", 1, "fir", 4.0, "train", "e.asc", False, False),
        ]
        kio.write_records(records_path, records, ["oak", "fir"])
        out = tmp_path / "stats"
        assert cli.run(["stats", "--records", str(records_path), "--out", str(out)]) == 0
        class_rows = (out / "class_histogram.csv").read_text().splitlines()
        assert class_rows[1] == "fir,3"  # descending count
        assert class_rows[2] == "oak,2"
        height_rows = (out / "height_histogram.csv").read_text().splitlines()
        assert height_rows[1] == "0,1,1"
        assert height_rows[2] == "1,2,2"
        assert height_rows[-1] == "4,5,1"  # 1 m bins from 0; undefined excluded

    def test_stats_with_no_defined_heights(self, tmp_path):
        records_path = tmp_path / "records.csv"
        kio.write_records(
            records_path,
            [BenchmarkRecord("a", 0, "oak", None, "train", "a.asc", False, False)],
            ["oak"],
        )
        out = tmp_path / "stats"
        assert cli.run(["stats", "--records", str(records_path), "--out", str(out)]) == 0
        assert (out / "height_histogram.csv").read_text() == "bin_start_m,bin_end_m,count\n"

    def test_dwa_schedule(self, tmp_path):
        losses_path = tmp_path / "losses.csv"
        kio.write_csv(
            losses_path,
            ["epoch", "loss_h", "loss_s"],
            [[1, 4.0, 8.0], [2, 2.0, 2.0], [3, 1.0, 1.0], [4, 0.9, 0.8]],
        )
        out = tmp_path / "schedule.csv"
        assert cli.run(["dwa", "--losses", str(losses_path), "--out", str(out)]) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "epoch,lambda_h,lambda_s"
        assert rows[1].split(",")[1:] == ["1.0", "1.0"]
        assert rows[2].split(",")[1:] == ["1.0", "1.0"]
        e3 = [float(v) for v in rows[3].split(",")[1:]]
        # ratios at epoch 3: 0.5 vs 0.25
        e = math.exp(0.5 / 2.0), math.exp(0.25 / 2.0)
        assert e3[0] == pytest.approx(2 * e[0] / (e[0] + e[1]), abs=1e-12)
        assert e3[0] + e3[1] == pytest.approx(2.0, abs=1e-12)

    def test_invalid_json_reports_position(self, tmp_path, capsys):
        bad = tmp_path / "bad.geojson"
        bad.write_text('{"type": "FeatureCollection", "features": [oops]}')
        chm = tmp_path / "chm.asc"
        kio.write_ascii_grid(
            chm, Raster(width=2, height=2, pixel_size=1.0, origin=(0, 0), values=np.ones((2, 2)))
        )
        code = cli.run(["extract", "--chm", str(chm), "--crowns", str(bad), "--out", str(tmp_path / "o")])
        assert code == 1
        err = capsys.readouterr().err
        assert "line 1" in err and "column" in err

    def test_usage_error_is_validation_exit(self, capsys):
        assert cli.run(["extract"]) == 1  # missing required flags
        assert "required" in capsys.readouterr().err

    def test_missing_file_is_io_error(self, tmp_path):
        assert (
            cli.run(
                [
                    "extract",
                    "--chm",
                    str(tmp_path / "nope.asc"),
                    "--crowns",
                    str(tmp_path / "nope.geojson"),
                    "--out",
                    str(tmp_path / "o"),
                ]
            )
            == 2
        )

    def test_strict_config_rejects_unknown_keys(self, tmp_path):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"extraction": {"buffer_scale": 0.2, "oops": 1}}))
        losses_path = tmp_path / "losses.csv"
        kio.write_csv(losses_path, ["epoch", "loss_h", "loss_s"], [[1, 1.0, 1.0]])
        code = cli.run(
            ["dwa", "--losses", str(losses_path), "--config", str(cfg), "--out", str(tmp_path / "s.csv")]
        )
        assert code == 1

    def test_config_flag_override(self, tmp_path):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"weighting": {"temperature": 5.0}}))
        losses_path = tmp_path / "losses.csv"
        kio.write_csv(
            losses_path, ["epoch", "loss_h", "loss_s"], [[1, 4.0, 1.0], [2, 2.0, 1.0], [3, 1.0, 1.0]]
        )
        out1, out2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
        assert cli.run(["dwa", "--losses", str(losses_path), "--config", str(cfg), "--out", str(out1)]) == 0
        assert (
            cli.run(
                [
                    "dwa",
                    "--losses",
                    str(losses_path),
                    "--config",
                    str(cfg),
                    "--temperature",
                    "2.0",
                    "--out",
                    str(out2),
                ]
            )
            == 0
        )
        assert out1.read_text() != out2.read_text()  # flag overrode the config file

    def test_rgb_tiles_multiband(self, tmp_path, rng):
        scene = scene_files(tmp_path, count=4)
        bands = []
        for i, name in enumerate(("r", "g", "b")):
            band = kio.read_ascii_grid(scene / "chm.asc")
            band.values = np.full_like(band.values, 0.1 * (i + 1))
            band_path = tmp_path / f"{name}.asc"
            kio.write_ascii_grid(band_path, band)
            bands.append(band_path)
        out = tmp_path / "rgbrun"
        code = cli.run(
            [
                "extract",
                "--chm",
                str(scene / "chm.asc"),
                "--rgb",
                *[str(b) for b in bands],
                "--crowns",
                str(scene / "crowns.geojson"),
                "--tile-size",
                "8",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        records, _ = kio.read_records(out / "records.csv")
        tile_bands = kio.read_ascii_bands(out / "tiles" / records[0].tile_path)
        assert len(tile_bands) == 3
        assert np.allclose(tile_bands[2].values, np.float32(0.3))

    def test_gradcheck_wiring(self, tmp_path, monkeypatch):
        from canopykit.heads import HeadsConfig

        single = [("default", HeadsConfig(embed_dim=8, n_heads=4, n_classes=2))]
        monkeypatch.setattr(cli, "ablation_configurations", lambda: single)
        monkeypatch.setattr(cli, "sharing_configurations", lambda: [])
        out = tmp_path / "gradcheck.json"
        assert cli.run(["gradcheck", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["default"]["passed"]

    def test_eval_idempotent(self, tmp_path):
        records_path = tmp_path / "records.csv"
        kio.write_records(
            records_path,
            [BenchmarkRecord("a", 0, "oak", 5.0, "test", "a.asc", False, False)],
            ["oak"],
        )
        preds = tmp_path / "preds.csv"
        kio.write_predictions(preds, [("a", 5.5, 0)])
        r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
        assert cli.run(["eval", "--preds", str(preds), "--records", str(records_path), "--out", str(r1)]) == 0
        assert cli.run(["eval", "--preds", str(preds), "--records", str(records_path), "--out", str(r2)]) == 0
        assert r1.read_bytes() == r2.read_bytes()
