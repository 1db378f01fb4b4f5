"""File formats binding the pipeline together.

Rasters are ESRI ASCII grids (.asc); crowns are GeoJSON FeatureCollections;
records, predictions, allometry samples, and histograms are plain CSV;
reports, fitted parameters, and scene specs are JSON. All writers are
deterministic (sorted keys, no timestamps) and numeric formatting preserves
f32 raster values exactly (9 significant digits) and f64 table values exactly
(repr round trip).
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .allometry import AllometrySample, AllometryParams, ClassFit
from .errors import ConfigError
from .extraction import BenchmarkRecord, CrownAnnotation
from .raster import Raster
from .synth import RandomTrees, SceneSpec, TreeSpec, TruthRecord


def _fmt32(v: float) -> str:
    return format(float(v), ".9g")


# ESRI ASCII grid


def write_ascii_grid(path: str | Path, raster: Raster) -> None:
    bands = [raster]
    _write_ascii_bands(path, bands, raster)


def write_ascii_bands(path: str | Path, bands: list[Raster]) -> None:
    """Multi-band .asc variant: an extra ``nbands`` header line, bands
    concatenated top-to-bottom in order."""
    if not bands:
        raise ConfigError("no bands to write")
    _write_ascii_bands(path, bands, bands[0])


def _write_ascii_bands(path: str | Path, bands: list[Raster], ref: Raster) -> None:
    for b in bands:
        if (b.width, b.height, b.pixel_size, b.origin) != (
            ref.width,
            ref.height,
            ref.pixel_size,
            ref.origin,
        ):
            raise ConfigError("bands must share the same grid")
    lines = [
        f"ncols {ref.width}",
        f"nrows {ref.height}",
        f"xllcorner {_fmt32(ref.origin[0])}",
        f"yllcorner {_fmt32(ref.origin[1])}",
        f"cellsize {_fmt32(ref.pixel_size)}",
        f"NODATA_value {_fmt32(ref.nodata)}",
    ]
    if len(bands) > 1:
        lines.insert(2, f"nbands {len(bands)}")
    chunks = [("\n".join(lines)), "\n"]
    for b in bands:
        for row in b.values:
            chunks.append(" ".join(_fmt32(v) for v in row))
            chunks.append("\n")
    Path(path).write_text("".join(chunks))


def read_ascii_bands(path: str | Path) -> list[Raster]:
    text = Path(path).read_text()
    tokens = text.split()
    header: dict[str, float] = {}
    i = 0
    keys = {"ncols", "nrows", "nbands", "xllcorner", "yllcorner", "cellsize", "nodata_value"}
    try:
        while i + 1 < len(tokens) and tokens[i].lower() in keys:
            header[tokens[i].lower()] = float(tokens[i + 1])
            i += 2
    except ValueError as exc:
        raise ConfigError(f"{path}: bad .asc header value near {tokens[i]!r}") from exc
    for required in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
        if required not in header:
            raise ConfigError(f"{path}: missing .asc header field {required}")
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    nbands = int(header.get("nbands", 1))
    nodata = header.get("nodata_value", -9999.0)
    try:
        values = np.asarray(tokens[i:], dtype=np.float32)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric raster value") from exc
    if values.size != ncols * nrows * nbands:
        raise ConfigError(
            f"{path}: expected {ncols * nrows * nbands} values, found {values.size}"
        )
    bands = []
    for b in range(nbands):
        bands.append(
            Raster(
                width=ncols,
                height=nrows,
                pixel_size=float(header["cellsize"]),
                origin=(float(header["xllcorner"]), float(header["yllcorner"])),
                values=values[b * ncols * nrows : (b + 1) * ncols * nrows].reshape(
                    nrows, ncols
                ),
                nodata=float(nodata),
            )
        )
    return bands


def read_ascii_grid(path: str | Path) -> Raster:
    bands = read_ascii_bands(path)
    if len(bands) != 1:
        raise ConfigError(f"{path}: expected a single band, found {len(bands)}")
    return bands[0]


# GeoJSON crowns


def read_crowns(path: str | Path) -> list[CrownAnnotation]:
    with open(path) as fh:
        doc = json.load(fh)  # json.JSONDecodeError carries line/column
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ConfigError(f"{path}: not a GeoJSON FeatureCollection")
    crowns = []
    for i, feature in enumerate(doc.get("features", [])):
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise ConfigError(f"{path}: feature {i} geometry is not a Polygon")
        rings = geom.get("coordinates") or []
        if not rings:
            raise ConfigError(f"{path}: feature {i} has no polygon ring")
        props = feature.get("properties") or {}
        if "id" not in props or "class" not in props:
            raise ConfigError(f"{path}: feature {i} missing 'id' or 'class' property")
        crowns.append(
            CrownAnnotation(
                crown_id=str(props["id"]),
                class_name=str(props["class"]),
                polygon=tuple((float(x), float(y)) for x, y in rings[0]),
                split=str(props.get("split", "train")),
            )
        )
    return crowns


def write_crowns(path: str | Path, crowns: list[CrownAnnotation]) -> None:
    doc = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[x, y] for x, y in c.polygon]],
                },
                "properties": {"id": c.crown_id, "class": c.class_name, "split": c.split},
            }
            for c in crowns
        ],
    }
    _write_json(path, doc)


def _write_json(path: str | Path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# records CSV

RECORD_FIELDS = [
    "crown_id",
    "class_index",
    "class_name",
    "height_m",
    "split",
    "tile_path",
    "pad_flag",
    "buffer_fallback",
]


def write_records(
    path: str | Path, records: list[BenchmarkRecord], class_names: list[str]
) -> None:
    buf = _io.StringIO()
    buf.write("# classes: " + ",".join(class_names) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_FIELDS)
    for r in records:
        writer.writerow(
            [
                r.crown_id,
                r.class_index,
                r.class_name,
                "" if r.height is None else repr(float(r.height)),
                r.split,
                r.tile_path,
                str(r.pad_flag).lower(),
                str(r.buffer_fallback_used).lower(),
            ]
        )
    Path(path).write_text(buf.getvalue())


def read_records(path: str | Path) -> tuple[list[BenchmarkRecord], list[str]]:
    lines = Path(path).read_text().splitlines()
    class_names: list[str] = []
    body = []
    for line in lines:
        if line.startswith("# classes:"):
            names = line.split(":", 1)[1].strip()
            class_names = names.split(",") if names else []
        elif line:
            body.append(line)
    reader = csv.DictReader(body)
    missing = set(RECORD_FIELDS) - set(reader.fieldnames or [])
    if missing:
        raise ConfigError(f"{path}: records CSV missing columns {sorted(missing)}")
    records = []
    for row in reader:
        records.append(
            BenchmarkRecord(
                crown_id=row["crown_id"],
                class_index=int(row["class_index"]),
                class_name=row["class_name"],
                height=float(row["height_m"]) if row["height_m"] else None,
                split=row["split"],
                tile_path=row["tile_path"],
                pad_flag=row["pad_flag"] == "true",
                buffer_fallback_used=row["buffer_fallback"] == "true",
            )
        )
    return records, class_names


# predictions CSV

PRED_FIELDS = ["crown_id", "pred_height_m", "pred_class_index"]


def write_predictions(path: str | Path, rows: list[tuple[str, float | None, int | None]]) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PRED_FIELDS)
    for crown_id, height, class_index in rows:
        writer.writerow(
            [
                crown_id,
                "" if height is None else repr(float(height)),
                "" if class_index is None else class_index,
            ]
        )
    Path(path).write_text(buf.getvalue())


def read_predictions(path: str | Path) -> list[tuple[str, float | None, int | None]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PRED_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path}: predictions CSV missing columns {sorted(missing)}")
        return [
            (
                row["crown_id"],
                float(row["pred_height_m"]) if row["pred_height_m"] else None,
                int(row["pred_class_index"]) if row["pred_class_index"] else None,
            )
            for row in reader
        ]


# allometry samples CSV and params JSON


def read_allometry_samples(path: str | Path) -> list[AllometrySample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"class", "radius_m", "height_m"} - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path}: samples CSV missing columns {sorted(missing)}")
        return [
            AllometrySample(row["class"], float(row["radius_m"]), float(row["height_m"]))
            for row in reader
        ]


def write_allometry_params(path: str | Path, params: AllometryParams) -> None:
    doc = {
        "per_class": {
            name: {
                "slope": fit.slope,
                "intercept": fit.intercept,
                "n_samples": fit.n_samples,
                "pooled": fit.pooled,
            }
            for name, fit in params.per_class.items()
        },
        "pooled": None
        if params.pooled is None
        else {
            "slope": params.pooled.slope,
            "intercept": params.pooled.intercept,
            "n_samples": params.pooled.n_samples,
        },
    }
    _write_json(path, doc)


def read_allometry_params(path: str | Path) -> AllometryParams:
    with open(path) as fh:
        doc = json.load(fh)
    per_class = {
        name: ClassFit(d["slope"], d["intercept"], d["n_samples"], d.get("pooled", False))
        for name, d in doc.get("per_class", {}).items()
    }
    pooled = doc.get("pooled")
    return AllometryParams(
        per_class=per_class,
        pooled=None
        if pooled is None
        else ClassFit(pooled["slope"], pooled["intercept"], pooled["n_samples"], True),
    )


# scene spec JSON and truth CSV

_SCENE_KEYS = {
    "width",
    "height",
    "pixel_size",
    "trees",
    "random_trees",
    "allometry_truth",
    "snap_to_pixel_centers",
}
_TREE_KEYS = {"center", "height", "radius", "class", "profile"}
_RANDOM_KEYS = {"count", "classes", "radius_m", "height_m", "profile"}


def _check_keys(doc: dict, allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def read_scene_spec(path: str | Path) -> SceneSpec:
    with open(path) as fh:
        doc = json.load(fh)
    _check_keys(doc, _SCENE_KEYS, str(path))
    trees = []
    for i, t in enumerate(doc.get("trees", [])):
        _check_keys(t, _TREE_KEYS, f"{path}: trees[{i}]")
        trees.append(
            TreeSpec(
                center=(float(t["center"][0]), float(t["center"][1])),
                height=float(t["height"]),
                radius=float(t["radius"]),
                class_name=str(t["class"]),
                profile=t.get("profile", "cone"),
            )
        )
    random_trees = None
    if doc.get("random_trees") is not None:
        r = doc["random_trees"]
        _check_keys(r, _RANDOM_KEYS, f"{path}: random_trees")
        random_trees = RandomTrees(
            count=int(r["count"]),
            classes=tuple(str(c) for c in r["classes"]),
            radius_range=(float(r["radius_m"][0]), float(r["radius_m"][1])),
            height_range=None
            if r.get("height_m") is None
            else (float(r["height_m"][0]), float(r["height_m"][1])),
            profile=r.get("profile", "cone"),
        )
    allometry_truth = None
    if doc.get("allometry_truth") is not None:
        allometry_truth = {
            name: (float(ab[0]), float(ab[1]))
            for name, ab in doc["allometry_truth"].items()
        }
    return SceneSpec(
        width=int(doc["width"]),
        height=int(doc["height"]),
        pixel_size=float(doc["pixel_size"]),
        trees=tuple(trees),
        random_trees=random_trees,
        allometry_truth=allometry_truth,
        snap_to_pixel_centers=bool(doc.get("snap_to_pixel_centers", True)),
    )


TRUTH_FIELDS = ["crown_id", "class_name", "height_m", "radius_m", "center_x_m", "center_y_m", "profile"]


def write_truth(path: str | Path, truth: list[TruthRecord]) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRUTH_FIELDS)
    for t in truth:
        writer.writerow(
            [
                t.crown_id,
                t.class_name,
                repr(float(t.height)),
                repr(float(t.radius)),
                repr(float(t.center[0])),
                repr(float(t.center[1])),
                t.profile,
            ]
        )
    Path(path).write_text(buf.getvalue())


def read_truth(path: str | Path) -> list[TruthRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRUTH_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path}: truth CSV missing columns {sorted(missing)}")
        return [
            TruthRecord(
                crown_id=row["crown_id"],
                class_name=row["class_name"],
                height=float(row["height_m"]),
                radius=float(row["radius_m"]),
                center=(float(row["center_x_m"]), float(row["center_y_m"])),
                profile=row["profile"],
            )
            for row in reader
        ]


# loss history CSV (for the weight-schedule subcommand)


def read_loss_history(path: str | Path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"epoch", "loss_h", "loss_s"} - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path}: losses CSV missing columns {sorted(missing)}")
        rows = [
            (int(row["epoch"]), float(row["loss_h"]), float(row["loss_s"]))
            for row in reader
        ]
    if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
        raise ConfigError(f"{path}: epochs must be 1..N in order")
    return rows


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())
