"""Command-line entry point.

Subcommands: ``extract`` (crowns + CHM -> records CSV and tile files),
``fit-allometry`` (samples CSV -> params JSON), ``allometry-baseline``
(crowns + params + reference heights -> report JSON), ``eval`` (predictions
vs records -> report JSON), ``stats`` (records -> class/height histogram
CSVs), ``synth`` (scene spec JSON -> scene files), ``gradcheck`` (head
gradient verification), ``dwa`` (loss history CSV -> weight schedule CSV).

Exit codes: 0 success, 1 validation error, 2 I/O error. Outputs are
deterministic; rerunning any subcommand on identical inputs reproduces
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import io as kio
from . import allometry, geometry, losses, metrics
from .errors import CanopyKitError, ConfigError
from .extraction import ExtractionConfig, build_benchmark
from .heads import ablation_configurations, check_gradients, sharing_configurations
from .losses import LossHistory, WeightingConfig
from .raster import Raster
from .synth import generate_scene


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canopykit",
        description="Tree-crown height extraction, allometric baselines, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=0, help="deterministic seed")
        p.add_argument("--config", type=Path, help="run-config JSON (flags win)")
        p.add_argument("--out", type=Path, required=True, help="output file or directory")

    p = sub.add_parser("extract", help="run the crown height-label pipeline")
    p.add_argument("--chm", type=Path, required=True, help="CHM raster (.asc)")
    p.add_argument("--rgb", type=Path, nargs=3, metavar="BAND", help="three RGB band rasters (.asc)")
    p.add_argument("--crowns", type=Path, required=True, help="crown polygons (GeoJSON)")
    p.add_argument("--buffer-scale", type=float)
    p.add_argument("--fallback-scale", type=float)
    p.add_argument("--percentile", type=float, dest="percentile_p")
    p.add_argument("--use-max", action="store_true", default=None)
    p.add_argument("--tile-size", type=int)
    p.add_argument("--no-tiles", action="store_true", help="records only, skip tile files")
    common(p)

    p = sub.add_parser("fit-allometry", help="fit per-class log-log height parameters")
    p.add_argument("--samples", type=Path, required=True, help="CSV: class,radius_m,height_m")
    p.add_argument("--min-samples", type=int, default=2)
    p.add_argument("--no-pooling", action="store_true", help="error on small classes instead of pooling")
    common(p)

    p = sub.add_parser("allometry-baseline", help="predict heights from crown rectangles")
    p.add_argument("--crowns", type=Path, required=True, help="crown polygons (GeoJSON)")
    p.add_argument("--chm", type=Path, required=True, help="reference grid for rasterization (.asc)")
    p.add_argument("--params", type=Path, required=True, help="fitted params JSON")
    p.add_argument("--records", type=Path, required=True, help="records CSV with truth heights")
    p.add_argument("--radius-mode", choices=["rect", "area"], default="rect")
    common(p)

    p = sub.add_parser("eval", help="score predictions against records")
    p.add_argument("--preds", type=Path, required=True, help="CSV: crown_id,pred_height_m,pred_class_index")
    p.add_argument("--records", type=Path, required=True, help="records CSV with labels")
    p.add_argument("--threshold", type=float, default=1.25)
    common(p)

    p = sub.add_parser("stats", help="class and height histograms of a records file")
    p.add_argument("--records", type=Path, required=True)
    common(p)

    p = sub.add_parser("synth", help="render a synthetic scene")
    p.add_argument("--scene", type=Path, required=True, help="scene spec JSON")
    common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the head gradients")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    common(p)

    p = sub.add_parser("dwa", help="dynamic-weight-average schedule from a loss history")
    p.add_argument("--losses", type=Path, required=True, help="CSV: epoch,loss_h,loss_s")
    p.add_argument("--temperature", type=float)
    common(p)
    return parser


# run-config handling

_CONFIG_KEYS = {"extraction", "weighting", "classes"}
_EXTRACTION_KEYS = {
    "buffer_scale",
    "fallback_scale",
    "percentile_p",
    "use_max",
    "linear_correction",
    "tile_size",
}
_WEIGHTING_KEYS = {"strategy", "temperature", "pcgrad", "focal_gamma", "cb_beta"}


def load_run_config(path: Path | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    for section, allowed in (("extraction", _EXTRACTION_KEYS), ("weighting", _WEIGHTING_KEYS)):
        sec = doc.get(section)
        if sec is not None:
            unknown = set(sec) - allowed
            if unknown:
                raise ConfigError(f"{path}: unknown {section} keys {sorted(unknown)}")
    return doc


def extraction_config(args, config: dict) -> ExtractionConfig:
    sec = dict(config.get("extraction") or {})
    if sec.get("linear_correction") is not None:
        slope, intercept = sec["linear_correction"]
        sec["linear_correction"] = (float(slope), float(intercept))
    cfg = ExtractionConfig(**sec)
    overrides = {}
    for name in ("buffer_scale", "fallback_scale", "percentile_p", "use_max", "tile_size"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return replace(cfg, **overrides) if overrides else cfg


def weighting_config(args, config: dict) -> WeightingConfig:
    cfg = WeightingConfig(**(config.get("weighting") or {}))
    temperature = getattr(args, "temperature", None)
    return replace(cfg, temperature=temperature) if temperature is not None else cfg


# subcommands


def _cmd_extract(args) -> int:
    config = load_run_config(args.config)
    cfg = extraction_config(args, config)
    chm = kio.read_ascii_grid(args.chm)
    rgb = [kio.read_ascii_grid(p) for p in args.rgb] if args.rgb else None
    crowns = kio.read_crowns(args.crowns)
    if config.get("classes"):
        known = set(config["classes"])
        bad = sorted({c.class_name for c in crowns} - known)
        if bad:
            raise ConfigError(f"crown classes {bad} not in the configured class list")
    result = build_benchmark(chm, rgb, crowns, cfg, collect_tiles=not args.no_tiles)
    if config.get("classes"):
        # explicit class list wins over the sorted-lexicographic default
        index = {name: i for i, name in enumerate(config["classes"])}
        for r in result.records:
            r.class_index = index[r.class_name]
        result.class_names = list(config["classes"])

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    kio.write_records(out / "records.csv", result.records, result.class_names)
    if result.skips:
        kio.write_csv(
            out / "skips.csv",
            ["crown_id", "reason"],
            [[s.crown_id, s.reason] for s in result.skips],
        )
    if not args.no_tiles:
        tile_dir = out / "tiles"
        tile_dir.mkdir(exist_ok=True)
        for record, tile in zip(result.records, result.tiles):
            bands = [
                Raster(
                    width=tile.size,
                    height=tile.size,
                    pixel_size=chm.pixel_size,
                    origin=(0.0, 0.0),
                    values=tile.pixels[c],
                    nodata=chm.nodata,
                )
                for c in range(tile.channels)
            ]
            if len(bands) == 1:
                kio.write_ascii_grid(tile_dir / record.tile_path, bands[0])
            else:
                kio.write_ascii_bands(tile_dir / record.tile_path, bands)
    print(f"extract: {len(result.records)} records, {len(result.skips)} skipped")
    return 0


def _cmd_fit_allometry(args) -> int:
    samples = kio.read_allometry_samples(args.samples)
    params = allometry.fit_allometry(
        samples, min_samples=args.min_samples, pool_small_classes=not args.no_pooling
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    kio.write_allometry_params(args.out, params)
    pooled = sum(1 for f in params.per_class.values() if f.pooled)
    print(f"fit-allometry: {len(params.per_class)} classes ({pooled} pooled)")
    return 0


def _cmd_allometry_baseline(args) -> int:
    chm = kio.read_ascii_grid(args.chm)
    crowns = kio.read_crowns(args.crowns)
    params = kio.read_allometry_params(args.params)
    records, _ = kio.read_records(args.records)
    truth_by_id = {r.crown_id: r.height for r in records}

    masks, names, ids = [], [], []
    for crown in crowns:
        masks.append(geometry.rasterize_polygon(crown.polygon, chm))
        names.append(crown.class_name)
        ids.append(crown.crown_id)
    preds = allometry.allometric_baseline(masks, names, params, args.radius_mode)

    pred_pairs = [
        (p, truth_by_id[i])
        for i, p in zip(ids, preds)
        if p is not None and truth_by_id.get(i) is not None
    ]
    if not pred_pairs:
        raise ConfigError("no crowns with both a prediction and a truth height")
    report = metrics.regression_metrics(
        [p for p, _ in pred_pairs], [t for _, t in pred_pairs]
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"regression": report.as_dict(), "n_crowns": len(crowns), "n_scored": len(pred_pairs)}
    args.out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"allometry-baseline: delta={report.delta:.4f} mae={report.mae:.3f} m")
    return 0


def _cmd_eval(args) -> int:
    preds = kio.read_predictions(args.preds)
    records, class_names = kio.read_records(args.records)
    by_id = {r.crown_id: r for r in records}
    n_classes = (
        len(class_names)
        if class_names
        else max(r.class_index for r in records) + 1
    )

    height_pairs = []
    class_pairs = []
    for crown_id, pred_height, pred_class in preds:
        record = by_id.get(crown_id)
        if record is None:
            raise ConfigError(f"prediction for unknown crown {crown_id!r}")
        if pred_height is not None and record.height is not None:
            height_pairs.append((pred_height, record.height))
        if pred_class is not None:
            class_pairs.append((pred_class, record.class_index))

    doc: dict = {"n_predictions": len(preds)}
    delta = macro_f1 = None
    if height_pairs:
        reg = metrics.regression_metrics(
            [p for p, _ in height_pairs], [t for _, t in height_pairs], args.threshold
        )
        doc["regression"] = reg.as_dict()
        delta = reg.delta
    if class_pairs:
        cls = metrics.classification_metrics(
            [p for p, _ in class_pairs], [t for _, t in class_pairs], n_classes
        )
        doc["classification"] = cls.as_dict()
        macro_f1 = cls.macro_f1
    if delta is not None and macro_f1 is not None:
        doc["checkpoint_score"] = metrics.checkpoint_score(macro_f1, delta)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    summary = ", ".join(
        f"{k}={v:.4f}"
        for k, v in (("delta", delta), ("macro_f1", macro_f1))
        if v is not None
    )
    print(f"eval: {summary or 'nothing to score'}")
    return 0


def _cmd_stats(args) -> int:
    records, _ = kio.read_records(args.records)
    counts: dict[str, int] = {}
    for r in records:
        counts[r.class_name] = counts.get(r.class_name, 0) + 1
    class_rows = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))

    heights = [r.height for r in records if r.height is not None]
    hist_rows = []
    if heights:
        n_bins = int(math.floor(max(heights))) + 1
        bins = [0] * n_bins
        for h in heights:
            bins[min(int(math.floor(h)), n_bins - 1)] += 1
        hist_rows = [[b, b + 1, c] for b, c in enumerate(bins)]

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    kio.write_csv(out / "class_histogram.csv", ["class_name", "count"], [list(r) for r in class_rows])
    kio.write_csv(out / "height_histogram.csv", ["bin_start_m", "bin_end_m", "count"], hist_rows)
    print(f"stats: {len(records)} records, {len(class_rows)} classes, {len(heights)} heights")
    return 0


def _cmd_synth(args) -> int:
    spec = kio.read_scene_spec(args.scene)
    chm, crowns, truth = generate_scene(spec, seed=args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    kio.write_ascii_grid(out / "chm.asc", chm)
    kio.write_crowns(out / "crowns.geojson", crowns)
    kio.write_truth(out / "truth.csv", truth)
    print(f"synth: {len(truth)} trees on a {spec.width}x{spec.height} px raster")
    return 0


def _cmd_gradcheck(args) -> int:
    configs = ablation_configurations() + sharing_configurations()
    reports = []
    for name, config in configs:
        report = check_gradients(
            config, seed=args.seed, step=args.step, tolerance=args.tolerance, config_name=name
        )
        reports.append(report)
        print(f"[{name}]")
        for tensor, err in sorted(report.per_tensor.items()):
            print(f"  {tensor:28s} max_rel_err={err:.3e}")
        status = "ok" if report.passed else "FAIL"
        print(f"  -> {status} (worst {report.max_rel_err:.3e}, tolerance {report.tolerance:g})")
    doc = {
        r.config_name: {
            "max_rel_err": r.max_rel_err,
            "passed": r.passed,
            "per_tensor": r.per_tensor,
        }
        for r in reports
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    failed = [r.config_name for r in reports if not r.passed]
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"gradcheck: all {len(reports)} configurations passed")
    return 0


def _cmd_dwa(args) -> int:
    config = load_run_config(args.config)
    weighting = weighting_config(args, config)
    rows = kio.read_loss_history(args.losses)
    history = LossHistory()
    for _, loss_h, loss_s in rows:
        history.append(loss_h, loss_s)
    schedule = []
    for epoch in range(1, len(rows) + 1):
        weight_h, weight_s = losses.dwa_weights(history, weighting.temperature, epoch)
        schedule.append([epoch, repr(weight_h), repr(weight_s)])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    kio.write_csv(args.out, ["epoch", "lambda_h", "lambda_s"], schedule)
    print(f"dwa: schedule for {len(schedule)} epochs (T={weighting.temperature})")
    return 0


_COMMANDS = {
    "extract": _cmd_extract,
    "fit-allometry": _cmd_fit_allometry,
    "allometry-baseline": _cmd_allometry_baseline,
    "eval": _cmd_eval,
    "stats": _cmd_stats,
    "synth": _cmd_synth,
    "gradcheck": _cmd_gradcheck,
    "dwa": _cmd_dwa,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors; that slot is I/O here
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except json.JSONDecodeError as exc:
        print(
            f"error: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
            file=sys.stderr,
        )
        return 1
    except (CanopyKitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    entrypoint()
