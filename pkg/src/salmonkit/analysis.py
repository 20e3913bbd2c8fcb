"""Dataset characterisation: object colour, geometry, contrast, and
gamma fits between modality saliencies."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage, optimize
from skimage.color import rgb2lab

from .data import Dataset, ObjectMask, tight_bounding_rect

log = logging.getLogger(__name__)

L_RANGE = (0.0, 100.0)
AB_RANGE = (-128.0, 128.0)
CHI2_EPS = 1e-12


def to_lab(rgb) -> np.ndarray:
    """sRGB (uint8 or float in [0, 1]) to CIE L*a*b* under D65."""
    rgb = np.asarray(rgb)
    if rgb.dtype == np.uint8:
        rgb = rgb / 255.0
    return rgb2lab(rgb, illuminant="D65")


@dataclass(eq=False)
class LabHistogram:
    bins: np.ndarray
    total: int

    @property
    def probabilities(self):
        return self.bins / self.total


def lab_bin_index(lab_pixels, bins=8) -> np.ndarray:
    """Flat bin index on the fixed bins^3 grid for each Lab pixel (shape kept minus the channel axis).

    Values outside the fixed ranges land in the edge bins.
    """
    lab = np.asarray(lab_pixels, dtype=np.float64)
    idx = np.zeros(lab.shape[:-1], dtype=np.int64)
    for c, (lo, hi) in enumerate((L_RANGE, AB_RANGE, AB_RANGE)):
        q = np.clip(np.floor((lab[..., c] - lo) / (hi - lo) * bins), 0, bins - 1).astype(np.int64)
        idx = idx * bins + q
    return idx


def histogram_from_index(flat_index, bins=8) -> LabHistogram:
    flat = np.asarray(flat_index, dtype=np.int64).ravel()
    counts = np.bincount(flat, minlength=bins ** 3).reshape(bins, bins, bins)
    return LabHistogram(counts, int(flat.size))


def lab_histogram(lab_pixels, bins=8) -> LabHistogram:
    """Count Lab pixels (N x 3) on a fixed bins^3 grid."""
    lab = np.asarray(lab_pixels, dtype=np.float64).reshape(-1, 3)
    return histogram_from_index(lab_bin_index(lab, bins), bins)


def _mask(mask):
    m = mask.mask if isinstance(mask, ObjectMask) else np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("empty mask")
    return m


def color_entropy(lab_image, mask, bins=8) -> float:
    """Shannon entropy in bits of the object's Lab histogram."""
    return histogram_entropy(lab_histogram(lab_image[_mask(mask)], bins))


def histogram_entropy(hist: LabHistogram) -> float:
    p = hist.probabilities[hist.bins > 0]
    return float(-np.sum(p * np.log2(p)))


def mean_color(lab_image, mask) -> tuple:
    pix = lab_image[_mask(mask)]
    return tuple(float(v) for v in pix.mean(axis=0))


@dataclass
class ObjectGeometry:
    norm_center_dist: float
    width_norm: float
    height_norm: float
    area_norm: float
    aspect_ratio: float
    width: int = 0
    height: int = 0
    area: int = 0


def raw_geometry(mask):
    """(width, height, area) in pixels."""
    m = _mask(mask)
    r = tight_bounding_rect(m)
    return r.width, r.height, int(np.count_nonzero(m))


def geometry_stats(mask, dims, maxima) -> ObjectGeometry:
    """Position and size of an object.

    ``dims`` is (height, width) of the image; ``maxima`` is the dataset-wide
    (max width, max height, max area) in pixels.
    """
    m = _mask(mask)
    h, w = dims
    ys, xs = np.nonzero(m)
    # pixel centres sit at +0.5
    cx, cy = xs.mean() + 0.5, ys.mean() + 0.5
    dist = math.hypot(cx - w / 2, cy - h / 2) / math.hypot(w, h)
    width, height, area = raw_geometry(m)
    mw, mh, ma = maxima
    return ObjectGeometry(dist, width / mw, height / mh, area / ma, width / height, width, height, area)


@dataclass(eq=False)
class NeighborhoodMasks:
    local: np.ndarray
    global_: np.ndarray


def auto_ring_radius(area) -> int:
    return max(5, int(round(0.1 * math.sqrt(area))))


def neighborhood_masks(mask, others=(), ring_radius=None, exclude_others_globally=True) -> NeighborhoodMasks:
    """Local ring and global background around an object.

    The ring is every pixel within Euclidean distance ``ring_radius`` of the
    object, minus the object and the other objects. The background is the
    rest of the image minus the object (and, by default, the other objects).
    """
    m = _mask(mask)
    other = np.zeros_like(m)
    for o in others:
        other |= _mask(o)
    other &= ~m
    if ring_radius is None:
        ring_radius = auto_ring_radius(np.count_nonzero(m))
    r = tight_bounding_rect(m)
    pad = int(math.ceil(ring_radius)) + 1
    y0, y1 = max(r.y0 - pad, 0), min(r.y1 + pad, m.shape[0])
    x0, x1 = max(r.x0 - pad, 0), min(r.x1 + pad, m.shape[1])
    crop = m[y0:y1, x0:x1]
    dist = ndimage.distance_transform_edt(~crop)
    local = np.zeros_like(m)
    local[y0:y1, x0:x1] = dist <= ring_radius
    local &= ~m & ~other
    glob = ~m
    if exclude_others_globally:
        glob &= ~other
    return NeighborhoodMasks(local, glob)


def chi2_contrast(h1: LabHistogram, h2: LabHistogram) -> float:
    """Chi-square distance of the normalised histograms, in [0, 1]."""
    if h1.total <= 0 or h2.total <= 0:
        raise ValueError("empty histogram")
    p = h1.probabilities.ravel()
    q = h2.probabilities.ravel()
    return float(0.5 * np.sum((p - q) ** 2 / (p + q + CHI2_EPS)))


def gamma_fit(xs, ys, upper=16.0, tol=1e-6):
    """Least-squares g in y = x**g on (0, upper] and its R^2.

    R^2 is NaN when ys has zero variance.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        raise ValueError("need at least three (x, y) pairs")
    if np.all(x == x[0]):
        raise ValueError("all x values are equal")

    def sse(g):
        return float(np.sum((y - x ** g) ** 2))

    res = optimize.minimize_scalar(sse, bounds=(tol, upper), method="bounded",
                                   options={"xatol": tol * 1e-2})
    g = float(res.x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse(g) / ss_tot if np.ptp(y) > 0 else math.nan
    return g, r2


# ---------------------------------------------------------------------------
# dataset level


@dataclass
class ObjectRecord:
    image_id: str
    object_id: str
    entropy: float
    mean_lab: tuple
    geometry: ObjectGeometry
    local_contrast: float | None
    global_contrast: float | None
    s_et: float | None = None
    s_pc: float | None = None
    s_rd: float | None = None


@dataclass(eq=False)
class CharacterizationReport:
    config: dict
    objects: list = field(default_factory=list)
    objects_per_image: dict = field(default_factory=dict)
    gamma_fits: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        from .metrics import _json_clean
        return _json_clean({
            "config": self.config,
            "n_objects": len(self.objects),
            "objects_per_image": self.objects_per_image,
            "gamma_fits": self.gamma_fits,
            "objects": [asdict(o) for o in self.objects],
            "notes": self.notes,
        })


FIT_PAIRS = (("et", "pc"), ("et", "rd"), ("pc", "rd"))


def characterize(ds: Dataset, gts=None, bins=8, ring="auto", exclude_others_globally=True, workers=1):
    """Per-object colour, geometry and contrast records plus modality fits."""
    maxima = [1, 1, 1]
    for m in ds.masks:
        for i, v in enumerate(raw_geometry(m)):
            maxima[i] = max(maxima[i], v)
    report = CharacterizationReport(config={"bins": bins, "ring": ring,
                                            "exclude_others_globally": exclude_others_globally})
    radius = None if ring == "auto" else float(ring)

    def one(im):
        records, notes = [], []
        masks = ds.masks_for(im.image_id)
        if not masks:
            return records, notes
        try:
            lab = to_lab(im.load_rgb())
        except OSError as exc:
            return records, [f"image {im.image_id}: unreadable ({exc}); objects skipped"]
        bin_idx = lab_bin_index(lab, bins)
        sal = {}
        if gts is not None and im.image_id in gts:
            sal = {o.object_id: o for o in gts[im.image_id].objects}
        for m in masks:
            others = [o for o in masks if o is not m]
            nb = neighborhood_masks(m, others, radius, exclude_others_globally)
            h_obj = histogram_from_index(bin_idx[m.mask], bins)
            local = glob = None
            if nb.local.any():
                local = chi2_contrast(h_obj, histogram_from_index(bin_idx[nb.local], bins))
            else:
                notes.append(f"object {m.object_id}: empty local neighbourhood")
            if nb.global_.any():
                glob = chi2_contrast(h_obj, histogram_from_index(bin_idx[nb.global_], bins))
            else:
                notes.append(f"object {m.object_id}: empty global background")
            o = sal.get(m.object_id)
            records.append(ObjectRecord(
                im.image_id, m.object_id,
                histogram_entropy(h_obj), mean_color(lab, m),
                geometry_stats(m, im.shape, maxima), local, glob,
                o.s_et if o else None, o.s_pc if o else None, o.s_rd if o else None))
        return records, notes

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, ds.images))
    else:
        results = [one(im) for im in ds.images]
    for im, (records, notes) in zip(ds.images, results):
        report.objects_per_image[im.image_id] = len(ds.masks_for(im.image_id))
        report.objects.extend(records)
        report.notes.extend(notes)
    for a, b in FIT_PAIRS:
        pts = [(getattr(o, "s_" + a), getattr(o, "s_" + b)) for o in report.objects]
        pts = [(x, y) for x, y in pts if x is not None and y is not None]
        key = f"{a}_{b}"
        if len(pts) < 3 or len({x for x, _ in pts}) < 2:
            report.gamma_fits[key] = {"g": None, "r_squared": None, "n": len(pts)}
            continue
        g, r2 = gamma_fit(*zip(*pts))
        report.gamma_fits[key] = {"g": g, "r_squared": r2, "n": len(pts)}
    return report
