"""Dataset schema, ingestion and validation.

A dataset is described by a JSON manifest::

    {
      "images": [{"id": "img0", "width": 640, "height": 480, "path": "images/img0.png"}],
      "masks": [{"object_id": "img0_o0", "image_id": "img0", "path": "masks/img0_o0.png",
                 "tight_rect": [x0, y0, x1, y1]}],
      "events": {"eye_tracking": "fixations.csv", "point_click": "clicks.csv",
                 "rect_draw": "rects.csv"},
      "viewing_geometry": {"d_v": 75, "r_v": 1050, "h_m": 29.5, "alpha": 1.0, "eta": 0.4, "theta": 0.0}
    }

Relative paths resolve against the manifest's directory. ``tight_rect`` is
optional; when present it must match the mask. An ``events`` entry may be a
list of CSV files.

Event CSVs carry one event per row. A row whose coordinate fields are all
empty registers the subject as a viewer of the image without any event, so
that subjects who clicked or drew nothing still count in the denominator.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .io import atomic_write_bytes, atomic_write_json


EYE_TRACKING = "eye_tracking"
POINT_CLICK = "point_click"
RECT_DRAW = "rect_draw"
MODALITY_NAMES = {"et": EYE_TRACKING, "pc": POINT_CLICK, "rd": RECT_DRAW}
MODALITY_TAGS = {v: k for k, v in MODALITY_NAMES.items()}

CSV_COLUMNS = {
    EYE_TRACKING: ("subject_id", "image_id", "x", "y", "count"),
    POINT_CLICK: ("subject_id", "image_id", "x", "y"),
    RECT_DRAW: ("subject_id", "image_id", "x0", "y0", "x1", "y1"),
}
CSV_FILENAMES = {EYE_TRACKING: "fixations.csv", POINT_CLICK: "clicks.csv", RECT_DRAW: "rects.csv"}


class DatasetError(Exception):
    """Structural problem in a dataset; ``locus`` names the file and line."""

    def __init__(self, message, locus=None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)


def modality_name(modality: str) -> str:
    """Accept either a short tag (``et``) or the long name (``eye_tracking``)."""
    if modality in MODALITY_TAGS:
        return modality
    try:
        return MODALITY_NAMES[modality]
    except KeyError:
        raise ValueError(f"unknown modality {modality!r}") from None


class Rect(NamedTuple):
    """Axis-aligned pixel rectangle, half-open on ``x1`` and ``y1``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return max(self.x1 - self.x0, 0) * max(self.y1 - self.y0, 0)


class FixationPoint(NamedTuple):
    x: int
    y: int
    count: int = 1


class ClickPoint(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class ViewingGeometry:
    """Eye-tracking session geometry.

    Distances in cm, resolution in pixels, angles in degrees.
    """

    d_v: float = 75.0
    r_v: float = 1050.0
    h_m: float = 29.5
    alpha: float = 1.0
    eta: float = 0.4
    theta: float = 0.0

    def __post_init__(self):
        for name in ("d_v", "r_v", "h_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha < 0 or self.eta < 0 or self.theta < 0:
            raise ValueError("angles must be non-negative")
        if self.alpha + self.eta + self.theta >= 90:
            raise ValueError("alpha + eta + theta must be below 90 degrees")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("d_v", "r_v", "h_m", "alpha", "eta", "theta")}


@dataclass(frozen=True, eq=False)
class ImageRecord:
    image_id: str
    width: int
    height: int
    path: Path

    @property
    def shape(self):
        return (self.height, self.width)

    def load_rgb(self) -> np.ndarray:
        with Image.open(self.path) as im:
            return np.asarray(im.convert("RGB"))


@dataclass(frozen=True, eq=False)
class ObjectMask:
    object_id: str
    image_id: str
    mask: np.ndarray
    tight_rect: Rect
    path: Path | None = None

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """All events of one subject on one image in one modality.

    ``events`` is an integer array: columns ``x, y, count`` for eye
    tracking, ``x, y`` for clicks and ``x0, y0, x1, y1`` for rectangles.
    It may have zero rows (the subject viewed the image and did nothing).
    """

    subject_id: str
    image_id: str
    modality: str
    events: np.ndarray

    def __post_init__(self):
        ncol = len(CSV_COLUMNS[self.modality]) - 2
        ev = np.asarray(self.events, dtype=np.int64).reshape(-1, ncol)
        object.__setattr__(self, "events", ev)

    def iter_events(self):
        cls = {EYE_TRACKING: FixationPoint, POINT_CLICK: ClickPoint, RECT_DRAW: Rect}[self.modality]
        for row in self.events:
            yield cls(*(int(v) for v in row))


@dataclass(eq=False)
class Dataset:
    images: list[ImageRecord]
    masks: list[ObjectMask]
    subject_records: list[SubjectRecord]
    viewing_geometry: ViewingGeometry = field(default_factory=ViewingGeometry)
    warnings: list[str] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        self._images = {im.image_id: im for im in self.images}
        self._masks = defaultdict(list)
        for m in self.masks:
            self._masks[m.image_id].append(m)
        self._records = defaultdict(list)
        for rec in self.subject_records:
            self._records[(rec.image_id, rec.modality)].append(rec)
        for recs in self._records.values():
            recs.sort(key=lambda r: r.subject_id)

    def image(self, image_id) -> ImageRecord:
        return self._images[image_id]

    def masks_for(self, image_id) -> list[ObjectMask]:
        return self._masks.get(image_id, [])

    def records_for(self, image_id, modality) -> list[SubjectRecord]:
        """Records for one image and modality, ordered by subject id."""
        return self._records.get((image_id, modality_name(modality)), [])

    def subject_count(self, image_id, modality) -> int:
        return len({r.subject_id for r in self.records_for(image_id, modality)})


def tight_bounding_rect(mask) -> Rect:
    """Smallest rectangle containing every nonzero pixel of ``mask``."""
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise ValueError("mask has no foreground pixels")
    cols = np.flatnonzero(mask.any(axis=0))
    return Rect(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def make_object_mask(object_id, image_id, mask, path=None) -> ObjectMask:
    mask = np.asarray(mask) != 0
    return ObjectMask(object_id, image_id, mask, tight_bounding_rect(mask), path)


# ---------------------------------------------------------------------------
# validation


class Violation(NamedTuple):
    kind: str
    subject: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, kind, subject, message):
        self.violations.append(Violation(kind, subject, message))

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)


def validate_dataset(ds: Dataset) -> ValidationReport:
    """Check every dataset invariant; never raises."""
    report = ValidationReport()
    seen = set()
    for im in ds.images:
        if im.image_id in seen:
            report.add("duplicate_image", im.image_id, "image_id is not unique")
        seen.add(im.image_id)
        if im.width < 1 or im.height < 1:
            report.add("image_size", im.image_id, f"invalid size {im.width}x{im.height}")

    images = {im.image_id: im for im in ds.images}
    object_ids = set()
    for m in ds.masks:
        if m.object_id in object_ids:
            report.add("duplicate_object", m.object_id, "object_id is not unique")
        object_ids.add(m.object_id)
        im = images.get(m.image_id)
        if im is None:
            report.add("unknown_image", m.object_id, f"mask references unknown image {m.image_id!r}")
            continue
        if tuple(m.mask.shape) != im.shape:
            report.add("mask_shape", m.object_id,
                       f"mask is {m.mask.shape[1]}x{m.mask.shape[0]}, image is {im.width}x{im.height}")
            continue
        if not np.any(m.mask):
            report.add("empty_mask", m.object_id, "mask has no foreground pixels")
            continue
        if tight_bounding_rect(m.mask) != tuple(m.tight_rect):
            report.add("tight_rect", m.object_id, f"stored rect {tuple(m.tight_rect)} does not match mask")

    keys = set()
    for rec in ds.subject_records:
        key = (rec.subject_id, rec.image_id, rec.modality)
        label = "/".join(key)
        if key in keys:
            report.add("duplicate_record", label, "more than one record for subject, image and modality")
        keys.add(key)
        im = images.get(rec.image_id)
        if im is None:
            report.add("unknown_image", label, f"record references unknown image {rec.image_id!r}")
            continue
        ev = rec.events
        if ev.size == 0:
            continue
        if rec.modality == RECT_DRAW:
            xs, ys = ev[:, [0, 2]], ev[:, [1, 3]]
            bad = (xs.min() < 0 or xs.max() > im.width or ys.min() < 0 or ys.max() > im.height
                   or np.any(ev[:, 2] <= ev[:, 0]) or np.any(ev[:, 3] <= ev[:, 1]))
        else:
            bad = (ev[:, 0].min() < 0 or ev[:, 0].max() >= im.width
                   or ev[:, 1].min() < 0 or ev[:, 1].max() >= im.height)
            if rec.modality == EYE_TRACKING and np.any(ev[:, 2] < 1):
                report.add("fixation_count", label, "fixation count below 1")
        if bad:
            report.add("event_bounds", label, "event outside image bounds")
    return report


# ---------------------------------------------------------------------------
# loading


def _resolve(root: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else root / p


def _read_mask(path: Path, locus) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except FileNotFoundError:
        raise DatasetError(f"mask file not found: {path}", locus) from None
    except OSError as exc:
        raise DatasetError(f"cannot read mask {path}: {exc}", locus) from None
    if arr.ndim == 3:
        arr = arr.any(axis=2)
    return arr != 0


def _parse_int(value, locus, column):
    try:
        return int(round(float(value)))
    except (TypeError, ValueError):
        raise DatasetError(f"column {column!r}: not a number: {value!r}", locus) from None


def _read_events(path: Path, modality, images, warnings):
    """Parse one event CSV into {(subject_id, image_id): [rows]}."""
    columns = CSV_COLUMNS[modality]
    coord_cols = columns[2:]
    out = defaultdict(list)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DatasetError(f"event file not found: {path}", str(path)) from None
    with fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header is None or tuple(h.strip() for h in header) != columns:
            raise DatasetError(f"expected header {','.join(columns)}", f"{path}:1")
        for lineno, row in enumerate(rows, start=2):
            locus = f"{path}:{lineno}"
            if not row:
                continue
            if len(row) != len(columns):
                raise DatasetError(f"expected {len(columns)} fields, got {len(row)}", locus)
            subject_id, image_id = row[0].strip(), row[1].strip()
            if not subject_id:
                raise DatasetError("empty subject_id", locus)
            im = images.get(image_id)
            if im is None:
                raise DatasetError(f"unknown image_id {image_id!r}", locus)
            raw = [v.strip() for v in row[2:]]
            key = (subject_id, image_id)
            if all(v == "" for v in raw):
                out[key]  # registers the viewer
                continue
            vals = [_parse_int(v, locus, c) for v, c in zip(raw, coord_cols)]
            if modality == RECT_DRAW:
                x0, y0, x1, y1 = vals
                if x1 < x0 or y1 < y0:
                    x0, x1 = min(x0, x1), max(x0, x1)
                    y0, y1 = min(y0, y1), max(y0, y1)
                    warnings.append(f"{locus}: rectangle corners reordered")
                if x1 == x0 or y1 == y0:
                    raise DatasetError("zero-area rectangle", locus)
                cx0, cx1 = min(max(x0, 0), im.width), min(max(x1, 0), im.width)
                cy0, cy1 = min(max(y0, 0), im.height), min(max(y1, 0), im.height)
                if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
                    warnings.append(f"{locus}: rectangle clamped to image bounds")
                if cx1 <= cx0 or cy1 <= cy0:
                    warnings.append(f"{locus}: rectangle lies outside the image and was dropped")
                    continue
                vals = [cx0, cy0, cx1, cy1]
            else:
                x, y = vals[0], vals[1]
                cx, cy = min(max(x, 0), im.width - 1), min(max(y, 0), im.height - 1)
                if (cx, cy) != (x, y):
                    warnings.append(f"{locus}: point ({x},{y}) clamped to ({cx},{cy})")
                vals[0], vals[1] = cx, cy
                if modality == EYE_TRACKING and vals[2] < 1:
                    raise DatasetError("fixation count must be >= 1", locus)
            if vals in out[key]:
                warnings.append(f"{locus}: duplicate event for subject {subject_id!r}")
            out[key].append(vals)
    return out


def load_dataset(manifest_path) -> Dataset:
    """Load and cross-link a dataset from its JSON manifest.

    Raises DatasetError on structural problems. Clampable problems (points
    just outside the image, duplicated events) become entries in
    ``Dataset.warnings``.
    """
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON: {exc.msg}", f"{manifest_path}:{exc.lineno}") from None
    root = manifest_path.resolve().parent
    warnings = []

    images = []
    by_id = {}
    for i, entry in enumerate(manifest.get("images", [])):
        locus = f"{manifest_path}:images[{i}]"
        try:
            rec = ImageRecord(str(entry["id"]), int(entry["width"]), int(entry["height"]),
                              _resolve(root, entry["path"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed image entry ({exc})", locus) from None
        if rec.width < 1 or rec.height < 1:
            raise DatasetError(f"invalid image size {rec.width}x{rec.height}", locus)
        if rec.image_id in by_id:
            raise DatasetError(f"duplicate image id {rec.image_id!r}", locus)
        if rec.path.exists():
            with Image.open(rec.path) as im:
                if im.size != (rec.width, rec.height):
                    raise DatasetError(f"image file is {im.size[0]}x{im.size[1]}, "
                                       f"manifest says {rec.width}x{rec.height}", locus)
        else:
            warnings.append(f"{locus}: image file {rec.path} not found")
        by_id[rec.image_id] = rec
        images.append(rec)

    masks = []
    seen_objects = set()
    for i, entry in enumerate(manifest.get("masks", [])):
        locus = f"{manifest_path}:masks[{i}]"
        try:
            object_id, image_id = str(entry["object_id"]), str(entry["image_id"])
            path = _resolve(root, entry["path"])
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"malformed mask entry ({exc})", locus) from None
        if image_id not in by_id:
            raise DatasetError(f"unknown image_id {image_id!r}", locus)
        if object_id in seen_objects:
            raise DatasetError(f"duplicate object id {object_id!r}", locus)
        seen_objects.add(object_id)
        arr = _read_mask(path, locus)
        im = by_id[image_id]
        if arr.shape != im.shape:
            raise DatasetError(f"mask is {arr.shape[1]}x{arr.shape[0]}, "
                               f"image is {im.width}x{im.height}", locus)
        if not arr.any():
            raise DatasetError("mask has no foreground pixels", locus)
        rect = tight_bounding_rect(arr)
        stored = entry.get("tight_rect")
        if stored is not None and tuple(int(v) for v in stored) != rect:
            raise DatasetError(f"tight_rect {stored} does not match mask {tuple(rect)}", locus)
        masks.append(ObjectMask(object_id, image_id, arr, rect, path))

    records = []
    events = manifest.get("events", {}) or {}
    for key, paths in events.items():
        try:
            modality = modality_name(key)
        except ValueError:
            raise DatasetError(f"unknown event modality {key!r}", str(manifest_path)) from None
        if isinstance(paths, (str, os.PathLike)):
            paths = [paths]
        seen = {}
        for p in paths:
            path = _resolve(root, p)
            for (subject_id, image_id), rows in _read_events(path, modality, by_id, warnings).items():
                if (subject_id, image_id) in seen:
                    raise DatasetError(f"duplicate record for subject {subject_id!r} on image "
                                       f"{image_id!r} (also in {seen[subject_id, image_id]})", str(path))
                seen[subject_id, image_id] = path
                records.append(SubjectRecord(subject_id, image_id, modality, np.array(rows, dtype=np.int64)))

    geom = manifest.get("viewing_geometry") or {}
    try:
        geometry = ViewingGeometry(**{k: float(v) for k, v in geom.items()})
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"invalid viewing_geometry: {exc}", str(manifest_path)) from None

    records.sort(key=lambda r: (r.modality, r.image_id, r.subject_id))
    ds = Dataset(images, masks, records, geometry, warnings, root)
    present = {r.modality for r in records}
    if not present:
        warnings.append("no modality has subject records")
    for im in images:
        if not ds.masks_for(im.image_id):
            warnings.append(f"image {im.image_id!r} has no object masks")
        for modality in sorted(present):
            if ds.subject_count(im.image_id, modality) == 0:
                warnings.append(f"image {im.image_id!r} has no {modality} subjects")
    return ds


# ---------------------------------------------------------------------------
# writing


def write_mask(path, mask):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, compress_level=1)


def write_dataset(ds: Dataset, out_dir, manifest_name="manifest.json", extra=None) -> Path:
    """Write masks, event CSVs and a manifest under ``out_dir``.

    Image files are referenced, not copied: paths inside ``out_dir`` are
    stored relative to it, other paths absolute. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    root = out_dir.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return p.relative_to(root).as_posix()
        except ValueError:
            return str(p)

    mask_entries = []
    for m in ds.masks:
        path = out_dir / "masks" / f"{m.object_id}.png"
        write_mask(path, m.mask)
        mask_entries.append({"object_id": m.object_id, "image_id": m.image_id,
                             "path": rel(path), "tight_rect": list(m.tight_rect)})

    events = {}
    for modality, columns in CSV_COLUMNS.items():
        recs = [r for r in ds.subject_records if r.modality == modality]
        if not recs:
            continue
        path = out_dir / CSV_FILENAMES[modality]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in sorted(recs, key=lambda r: (r.image_id, r.subject_id)):
            if len(r.events) == 0:
                w.writerow([r.subject_id, r.image_id] + [""] * (len(columns) - 2))
            w.writerows([r.subject_id, r.image_id, *row] for row in r.events.tolist())
        atomic_write_bytes(path, buf.getvalue().encode("utf-8"))
        events[modality] = rel(path)

    manifest = {
        "images": [{"id": im.image_id, "width": im.width, "height": im.height, "path": rel(im.path)}
                   for im in ds.images],
        "masks": mask_entries,
        "events": events,
        "viewing_geometry": ds.viewing_geometry.to_dict(),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / manifest_name
    atomic_write_json(path, manifest)
    return path

