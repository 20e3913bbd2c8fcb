"""Per-object saliency from subjective records and multi-level ground truth maps."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import MODALITIES, _kernels
from .io import atomic_save_png
from .data import (
    EYE_TRACKING,
    POINT_CLICK,
    RECT_DRAW,
    Dataset,
    ObjectMask,
    SubjectRecord,
    ViewingGeometry,
    modality_name,
)

IOU_THRESHOLD = 0.3


def foveal_sigma(g: ViewingGeometry) -> float:
    """Radius in pixels of the foveal circle on screen."""
    a = math.radians(g.alpha + g.eta + g.theta)
    t = math.radians(g.theta)
    sigma = g.d_v * (g.r_v / g.h_m) * (math.tan(a) - math.tan(t))
    if not math.isfinite(sigma):
        raise ValueError("foveal sigma is not finite for this geometry")
    return sigma


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Unnormalised 1-D Gaussian truncated at radius ceil(3 sigma)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    return np.exp(-0.5 * (x / sigma) ** 2)


@dataclass(eq=False)
class DensityMap:
    image_id: str
    subject_id: str
    values: np.ndarray


def fixation_density_map(rec: SubjectRecord, dims, sigma: float, normalization="max") -> DensityMap:
    """Gaussian-smoothed fixation counts of one subject, scaled to [0, 1].

    ``dims`` is (height, width). Zero padding at the border. ``normalization``
    is ``"max"`` (divide by the peak) or ``"minmax"``.
    """
    if rec.modality != EYE_TRACKING:
        raise ValueError(f"expected an eye_tracking record, got {rec.modality}")
    h, w = dims
    ev = rec.events
    values = _kernels.splat_gaussian(h, w, ev[:, 0], ev[:, 1], ev[:, 2], gaussian_kernel(sigma))
    return DensityMap(rec.image_id, rec.subject_id, _normalize(values, normalization))


def _normalize(values, normalization):
    hi = values.max() if values.size else 0.0
    if normalization == "max":
        if hi > 0:
            values /= hi
    elif normalization == "minmax":
        lo = values.min()
        if hi > lo:
            values -= lo
            values /= hi - lo
        else:
            values[:] = 0.0
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return values


def eye_tracking_saliency(maps, mask) -> float:
    """Mean over subjects of each density map's maximum inside the object."""
    if not maps:
        raise ValueError("no density maps")
    m = _mask_array(mask)
    peaks = [float(dm.values[m].max()) for dm in sorted(maps, key=lambda dm: dm.subject_id)]
    return math.fsum(peaks) / len(peaks)


def _stack_events(recs, ncol):
    """All events of ``recs`` in one array plus the owning record index per row."""
    sizes = np.fromiter((len(r.events) for r in recs), dtype=np.int64, count=len(recs))
    if not sizes.sum():
        return np.zeros((0, ncol), dtype=np.int64), np.zeros(0, dtype=np.int64)
    events = np.concatenate([r.events.reshape(-1, ncol)[:, :ncol] for r in recs if len(r.events)])
    return events.astype(np.int64, copy=False), np.repeat(np.arange(len(recs)), sizes)


def _subjects_hit(owner, row_hits, n):
    hit = np.zeros(n, dtype=bool)
    hit[owner[row_hits]] = True
    return int(hit.sum())


def point_click_saliency(recs, mask) -> float:
    """Fraction of subjects with at least one click inside the object."""
    if not recs:
        raise ValueError("no point-click subjects")
    m = _mask_array(mask)
    ev, owner = _stack_events(recs, 2)
    return _subjects_hit(owner, m[ev[:, 1], ev[:, 0]], len(recs)) / len(recs)


def rect_iou(a, b) -> float:
    """Intersection over union of two half-open pixel rectangles."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def rect_iou_many(rects: np.ndarray, ref) -> np.ndarray:
    """IoU of each row (x0, y0, x1, y1) of ``rects`` against ``ref``."""
    rects = np.asarray(rects, dtype=np.int64).reshape(-1, 4)
    iw = np.clip(np.minimum(rects[:, 2], ref[2]) - np.maximum(rects[:, 0], ref[0]), 0, None)
    ih = np.clip(np.minimum(rects[:, 3], ref[3]) - np.maximum(rects[:, 1], ref[1]), 0, None)
    inter = iw * ih
    area = (rects[:, 2] - rects[:, 0]) * (rects[:, 3] - rects[:, 1])
    union = area + (ref[2] - ref[0]) * (ref[3] - ref[1]) - inter
    return inter / union


def rect_draw_saliency(recs, tight_rect, iou_threshold=IOU_THRESHOLD) -> float:
    """Fraction of subjects who drew a rectangle with IoU >= threshold."""
    if not recs:
        raise ValueError("no rectangle-drawing subjects")
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    ev, owner = _stack_events(recs, 4)
    return _subjects_hit(owner, rect_iou_many(ev, tight_rect) >= iou_threshold, len(recs)) / len(recs)


def _mask_array(mask):
    return mask.mask if isinstance(mask, ObjectMask) else np.asarray(mask, dtype=bool)


# ---------------------------------------------------------------------------
# ground-truth maps


@dataclass(eq=False)
class MultiLevelGroundTruth:
    image_id: str
    gamma: str
    map: np.ndarray
    levels: list[float]


def assemble_gt_map(saliencies, masks, gamma) -> MultiLevelGroundTruth:
    """Paint each object's saliency on its mask; overlaps take the maximum.

    ``saliencies`` maps object_id to a value or to an object with an
    ``s_<gamma>`` attribute (ObjectSaliency).
    """
    if not masks:
        raise ValueError("no masks")
    gamma = _tag(gamma)
    image_ids = {m.image_id for m in masks}
    if len(image_ids) != 1:
        raise ValueError("masks belong to more than one image")
    out = np.zeros(masks[0].mask.shape, dtype=np.float64)
    values = []
    for m in masks:
        s = saliencies.get(m.object_id)
        if isinstance(s, ObjectSaliency):
            s = s.get(gamma)
        if s is None:
            raise ValueError(f"object {m.object_id!r} has no {gamma} saliency")
        s = float(s)
        out[m.mask] = np.maximum(out[m.mask], s)
        values.append(s)
    levels = sorted({v for v in values if v > 0})
    return MultiLevelGroundTruth(image_ids.pop(), gamma, out, levels)


def binarize_equal_salience(masks) -> np.ndarray:
    """Union of all object masks: every object in one salient class."""
    if not masks:
        raise ValueError("no masks")
    out = np.zeros(_mask_array(masks[0]).shape, dtype=bool)
    for m in masks:
        out |= _mask_array(m)
    return out


def _tag(gamma):
    name = modality_name(gamma)
    return {EYE_TRACKING: "et", POINT_CLICK: "pc", RECT_DRAW: "rd"}[name]


# ---------------------------------------------------------------------------
# dataset level


@dataclass
class ObjectSaliency:
    object_id: str
    s_et: float | None = None
    s_pc: float | None = None
    s_rd: float | None = None

    def get(self, gamma):
        return getattr(self, "s_" + _tag(gamma))


@dataclass(eq=False)
class ImageGroundTruth:
    """Per-object saliencies of one image plus how they were obtained."""

    image_id: str
    objects: list[ObjectSaliency]
    subjects: dict = field(default_factory=dict)

    def values(self, gamma) -> dict:
        return {o.object_id: o.get(gamma) for o in self.objects}

    def has(self, gamma) -> bool:
        return bool(self.objects) and all(o.get(gamma) is not None for o in self.objects)

    def gt_map(self, masks, gamma) -> MultiLevelGroundTruth:
        return assemble_gt_map(self.values(gamma), masks, gamma)


def _et_values(ds, image_id, masks, sigma, normalization):
    recs = ds.records_for(image_id, EYE_TRACKING)
    if not recs:
        return None
    im = ds.image(image_id)
    kernel = gaussian_kernel(sigma)
    # crop to each object's rect so the per-subject max is cheap
    crops = [(m.tight_rect, m.mask[m.tight_rect.y0:m.tight_rect.y1, m.tight_rect.x0:m.tight_rect.x1])
             for m in masks]
    peaks = np.zeros((len(recs), len(masks)))
    for i, rec in enumerate(recs):
        ev = rec.events
        if len(ev) == 0:
            continue
        values = _kernels.splat_gaussian(im.height, im.width, ev[:, 0], ev[:, 1], ev[:, 2], kernel)
        values = _normalize(values, normalization)
        for j, (r, crop) in enumerate(crops):
            peaks[i, j] = values[r.y0:r.y1, r.x0:r.x1][crop].max()
    return [math.fsum(peaks[:, j]) / len(recs) for j in range(len(masks))]


def image_ground_truth(ds: Dataset, image_id, modalities=MODALITIES, sigma=None,
                       iou_threshold=IOU_THRESHOLD, normalization="max") -> ImageGroundTruth:
    """Per-object saliencies of one image for the requested modalities.

    A modality without subjects on this image yields ``None`` values.
    """
    masks = ds.masks_for(image_id)
    objects = [ObjectSaliency(m.object_id) for m in masks]
    subjects = {}
    tags = [_tag(g) for g in modalities]
    if "et" in tags:
        if sigma is None:
            sigma = foveal_sigma(ds.viewing_geometry)
        vals = _et_values(ds, image_id, masks, sigma, normalization)
        subjects["et"] = len(ds.records_for(image_id, EYE_TRACKING))
        if vals is not None:
            for o, v in zip(objects, vals):
                o.s_et = v
    if "pc" in tags:
        recs = ds.records_for(image_id, POINT_CLICK)
        subjects["pc"] = len(recs)
        if recs:
            for o, m in zip(objects, masks):
                o.s_pc = point_click_saliency(recs, m)
    if "rd" in tags:
        recs = ds.records_for(image_id, RECT_DRAW)
        subjects["rd"] = len(recs)
        if recs:
            for o, m in zip(objects, masks):
                o.s_rd = rect_draw_saliency(recs, m.tight_rect, iou_threshold)
    return ImageGroundTruth(image_id, objects, subjects)


def build_ground_truth(ds: Dataset, modalities=MODALITIES, sigma=None, iou_threshold=IOU_THRESHOLD,
                       normalization="max", workers=1) -> dict:
    """Ground truth for every image, keyed by image_id in dataset order."""
    if sigma is None and "et" in [_tag(g) for g in modalities]:
        sigma = foveal_sigma(ds.viewing_geometry)

    def one(im):
        return image_ground_truth(ds, im.image_id, modalities, sigma, iou_threshold, normalization)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, ds.images))
    else:
        results = [one(im) for im in ds.images]
    return {gt.image_id: gt for gt in results}


# ---------------------------------------------------------------------------
# files


def write_gt_png(path, values, text=None):
    """16-bit grayscale PNG holding round(65535 * values), written atomically."""
    q = np.round(np.clip(values, 0.0, 1.0) * 65535).astype(np.uint16)
    atomic_save_png(path, q, text)


def sidecar_dict(gt: ImageGroundTruth, sigma=None, provenance=None) -> dict:
    d = {"image_id": gt.image_id}
    if provenance:
        d.update(provenance)
    d["sigma"] = sigma
    d["subjects"] = dict(gt.subjects)
    d["objects"] = [{"object_id": o.object_id, "s_et": o.s_et, "s_pc": o.s_pc, "s_rd": o.s_rd}
                    for o in gt.objects]
    return d


def read_ground_truth(gt_dir) -> dict:
    """Read the per-image JSON sidecars written by ``gt-build``."""
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt_dir}")
    out = {}
    for path in sorted(gt_dir.glob("*.json")):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        if "objects" not in d or "image_id" not in d:
            continue
        objects = [ObjectSaliency(o["object_id"], o.get("s_et"), o.get("s_pc"), o.get("s_rd"))
                   for o in d["objects"]]
        out[d["image_id"]] = ImageGroundTruth(d["image_id"], objects, d.get("subjects", {}))
    return out
