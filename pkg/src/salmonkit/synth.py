"""Synthetic multi-object scenes, simulated subjects and brute-force oracles.

All randomness comes from numpy's PCG64 generator. A scene with seed ``s``
draws its layout from ``SeedSequence([s, 0])``, its rendering from
``SeedSequence([s, 1])``, its subjects from ``SeedSequence([s, 2])``, its
simulated detector noise from ``SeedSequence([s, 3])`` and its image size
and object count from ``SeedSequence([s, 4])``. A dataset seed draws its
scene seeds from ``SeedSequence([seed, 0])``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .data import (
    EYE_TRACKING,
    POINT_CLICK,
    RECT_DRAW,
    Dataset,
    ImageRecord,
    SubjectRecord,
    ViewingGeometry,
    make_object_mask,
    write_dataset,
)
from .io import atomic_write_json

SHAPES = ("rectangle", "ellipse", "blob")


def rng_for(seed, stream) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass
class ObjectSpec:
    shape: str
    x: int
    y: int
    w: int
    h: int
    color: tuple
    true_saliency: float


@dataclass
class SceneSpec:
    """Everything needed to regenerate one scene and its subjects.

    ``click_scatter`` and ``fixation_scatter`` are standard deviations as a
    fraction of object size; ``rect_jitter`` is the largest edge offset as
    a fraction of object size. ``fixation_count`` is ``"equal"`` (every
    fixated object gets ``fixation_base`` samples) or ``"poisson"``
    (1 + Poisson(fixation_base * saliency)).
    """

    seed: int
    width: int
    height: int
    objects: list
    subjects: dict = field(default_factory=lambda: {"et": 20, "pc": 30, "rd": 30})
    click_scatter: float = 0.15
    fixation_scatter: float = 0.15
    rect_jitter: float = 0.1
    fixation_count: str = "equal"
    fixation_base: int = 3
    allow_overlap: bool = False

    def __post_init__(self):
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        for o in self.objects:
            if o.shape not in SHAPES:
                raise ValueError(f"unknown shape {o.shape!r}")
            if not 0.0 <= o.true_saliency <= 1.0:
                raise ValueError("true_saliency must lie in [0, 1]")
        if self.fixation_count not in ("equal", "poisson"):
            raise ValueError(f"unknown fixation-count law {self.fixation_count!r}")


@dataclass(eq=False)
class Scene:
    image: np.ndarray
    masks: list
    saliencies: list


def _boxes_clear(a, b, gap):
    return (a[0] + a[2] + gap <= b[0] or b[0] + b[2] + gap <= a[0]
            or a[1] + a[3] + gap <= b[1] or b[1] + b[3] + gap <= a[1])


def random_scene_spec(seed, width, height, n_objects, *, min_gap=8, size_range=(0.08, 0.3),
                      saliency_range=(0.1, 1.0), min_separation=0.05, max_tries=2000, **kw) -> SceneSpec:
    """Random non-overlapping layout with well-separated true saliencies.

    Object boxes keep ``min_gap`` pixels between each other; saliencies are
    at least ``min_separation`` apart. Extra keywords go to SceneSpec.
    """
    rng = rng_for(seed, 0)
    short = min(width, height)
    boxes = []
    for _ in range(n_objects):
        for _ in range(max_tries):
            w = max(2, int(rng.uniform(*size_range) * short))
            h = max(2, int(w * rng.uniform(0.6, 1.6)))
            if w > width or h > height:
                continue
            x = int(rng.integers(0, width - w + 1))
            y = int(rng.integers(0, height - h + 1))
            if all(_boxes_clear((x, y, w, h), b, min_gap) for b in boxes):
                boxes.append((x, y, w, h))
                break
        else:
            raise ValueError(f"could not place {n_objects} objects in a {width}x{height} image")
    lo, hi = saliency_range
    sal = []
    for _ in range(n_objects):
        for _ in range(max_tries):
            s = float(rng.uniform(lo, hi))
            if all(abs(s - t) >= min_separation for t in sal):
                sal.append(s)
                break
        else:
            raise ValueError("could not draw separated saliencies")
    objects = [ObjectSpec(str(rng.choice(SHAPES)), x, y, w, h,
                          tuple(int(c) for c in rng.integers(0, 256, 3)), s)
               for (x, y, w, h), s in zip(boxes, sal)]
    return SceneSpec(seed, width, height, objects, **kw)


def _shape_mask(o: ObjectSpec, width, height, rng):
    if o.x < 0 or o.y < 0 or o.x + o.w > width or o.y + o.h > height or o.w < 1 or o.h < 1:
        raise ValueError(f"object at ({o.x},{o.y}) size {o.w}x{o.h} does not fit the image")
    m = np.zeros((height, width), dtype=bool)
    yy, xx = np.mgrid[0:o.h, 0:o.w] + 0.5
    if o.shape == "rectangle":
        m[o.y:o.y + o.h, o.x:o.x + o.w] = True
        return m
    if o.shape == "ellipse":
        local = ((xx - o.w / 2) / (o.w / 2)) ** 2 + ((yy - o.h / 2) / (o.h / 2)) ** 2 <= 1.0
    else:
        local = np.zeros((o.h, o.w), dtype=bool)
        # main lobe keeps the blob centred; satellites add irregularity
        lobes = [(o.w / 2, o.h / 2, o.w / 3, o.h / 3)]
        for _ in range(int(rng.integers(2, 5))):
            rx, ry = rng.uniform(0.15, 0.35) * o.w, rng.uniform(0.15, 0.35) * o.h
            lobes.append((rng.uniform(rx, o.w - rx), rng.uniform(ry, o.h - ry), rx, ry))
        for cx, cy, rx, ry in lobes:
            local |= ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    if not local.any():
        local[o.h // 2, o.w // 2] = True
    m[o.y:o.y + o.h, o.x:o.x + o.w] = local
    return m


def generate_scene(spec: SceneSpec) -> Scene:
    """Render the image and object masks of a scene spec."""
    rng = rng_for(spec.seed, 1)
    h, w = spec.height, spec.width
    c0, c1 = rng.integers(40, 216, 3), rng.integers(40, 216, 3)
    ramp = np.linspace(0.0, 1.0, w)[None, :, None]
    image = c0 + (c1 - c0) * ramp + np.zeros((h, 1, 1))
    image += rng.normal(0.0, 6.0, (h, w, 3))
    masks = []
    occupied = np.zeros((h, w), dtype=bool)
    shade = np.linspace(-25.0, 25.0, h)
    for o in spec.objects:
        m = _shape_mask(o, w, h, rng)
        box = (slice(o.y, o.y + o.h), slice(o.x, o.x + o.w))
        local = m[box]
        if not spec.allow_overlap and (occupied[box] & local).any():
            raise ValueError(f"object at ({o.x},{o.y}) overlaps another object")
        occupied[box] |= local
        tex = (np.asarray(o.color, dtype=np.float64) + shade[box[0], None, None]
               + rng.normal(0.0, 10.0, (o.h, o.w, 3)))
        image[box][local] = tex[local]
        masks.append(m)
    image = np.clip(np.round(image), 0, 255).astype(np.uint8)
    return Scene(image, masks, [o.true_saliency for o in spec.objects])


def _snap_into(points, coords, inside, rng):
    """Replace points falling outside the mask by uniform mask pixels."""
    h, w = inside.shape
    xs = np.clip(np.round(points[:, 0]).astype(np.int64), 0, w - 1)
    ys = np.clip(np.round(points[:, 1]).astype(np.int64), 0, h - 1)
    bad = ~inside[ys, xs]
    if bad.any():
        pick = rng.integers(0, len(coords[0]), int(bad.sum()))
        ys[bad], xs[bad] = coords[0][pick], coords[1][pick]
    return xs, ys


def simulate_subjects(spec: SceneSpec, masks, image_id="scene") -> list:
    """Subject records for all three modalities.

    Each simulated subject responds to object ``o`` with probability equal
    to its true saliency: one click inside it, one rectangle around it, or
    one fixation point on it. Subjects that respond to nothing are still
    recorded, with no events.
    """
    rng = rng_for(spec.seed, 2)
    sal = np.array([o.true_saliency for o in spec.objects])
    n_obj = len(masks)
    coords = [np.nonzero(m) for m in masks]
    centroids = np.array([(c[1].mean(), c[0].mean()) for c in coords]).reshape(n_obj, 2)
    sizes = np.array([(c[1].max() - c[1].min() + 1, c[0].max() - c[0].min() + 1) for c in coords]).reshape(n_obj, 2)
    records = []

    def points_for(hit, scatter):
        pts = {}
        for j in range(n_obj):
            k = int(hit[:, j].sum())
            raw = centroids[j] + rng.normal(0.0, 1.0, (k, 2)) * scatter * sizes[j]
            pts[j] = _snap_into(raw, coords[j], masks[j], rng)
        return pts

    # eye tracking
    n = int(spec.subjects.get("et", 0))
    hit = rng.random((n, n_obj)) < sal
    pts = points_for(hit, spec.fixation_scatter)
    if spec.fixation_count == "poisson":
        counts = 1 + rng.poisson(spec.fixation_base * np.broadcast_to(sal, hit.shape))
    else:
        counts = np.full(hit.shape, spec.fixation_base)
    records += _assemble(n, hit, image_id, EYE_TRACKING, lambda j, k: (pts[j][0][k], pts[j][1][k]),
                         counts)

    n = int(spec.subjects.get("pc", 0))
    hit = rng.random((n, n_obj)) < sal
    pts = points_for(hit, spec.click_scatter)
    records += _assemble(n, hit, image_id, POINT_CLICK, lambda j, k: (pts[j][0][k], pts[j][1][k]))

    n = int(spec.subjects.get("rd", 0))
    hit = rng.random((n, n_obj)) < sal
    rects = {}
    for j in range(n_obj):
        k = int(hit[:, j].sum())
        x0, y0 = coords[j][1].min(), coords[j][0].min()
        x1, y1 = coords[j][1].max() + 1, coords[j][0].max() + 1
        jw, jh = spec.rect_jitter * (x1 - x0), spec.rect_jitter * (y1 - y0)
        off = rng.uniform(-1.0, 1.0, (k, 4)) * np.array([jw, jh, jw, jh])
        r = np.round(np.array([x0, y0, x1, y1]) + off).astype(np.int64)
        r[:, [0, 2]] = np.clip(r[:, [0, 2]], 0, spec.width)
        r[:, [1, 3]] = np.clip(r[:, [1, 3]], 0, spec.height)
        r[:, 2] = np.maximum(r[:, 2], r[:, 0] + 1)
        r[:, 3] = np.maximum(r[:, 3], r[:, 1] + 1)
        r[:, 0] = np.minimum(r[:, 0], spec.width - 1)
        r[:, 1] = np.minimum(r[:, 1], spec.height - 1)
        r[:, 2] = np.minimum(r[:, 2], spec.width)
        r[:, 3] = np.minimum(r[:, 3], spec.height)
        rects[j] = r
    records += _assemble(n, hit, image_id, RECT_DRAW, lambda j, k: tuple(rects[j][k]))
    return records


def _assemble(n, hit, image_id, modality, event, counts=None):
    prefix = {EYE_TRACKING: "et", POINT_CLICK: "pc", RECT_DRAW: "rd"}[modality]
    width = len(str(max(n - 1, 0)))
    cursor = np.zeros(hit.shape[1], dtype=np.int64)
    out = []
    for s in range(n):
        rows = []
        for j in np.flatnonzero(hit[s]):
            ev = tuple(int(v) for v in event(j, cursor[j]))
            cursor[j] += 1
            if counts is not None:
                ev = ev + (int(counts[s, j]),)
            rows.append(ev)
        out.append(SubjectRecord(f"{prefix}{s:0{width}d}", image_id, modality,
                                 np.array(rows, dtype=np.int64)))
    return out


# ---------------------------------------------------------------------------
# simulated detectors


def detector_map(name, scene: Scene, seed=0) -> np.ndarray:
    """Saliency map of a simulated detector, values in [0, 1].

    ``truth`` paints true saliencies; ``noisy`` blurs them and adds noise;
    ``center`` is a centred Gaussian that ignores the objects.
    """
    h, w = scene.image.shape[:2]
    truth = np.zeros((h, w))
    for m, s in zip(scene.masks, scene.saliencies):
        np.maximum(truth, np.where(m, s, 0.0), out=truth)
    if name == "truth":
        return truth
    if name == "noisy":
        rng = rng_for(seed, 3)
        # two box passes approximate a Gaussian blur at a fraction of the cost
        size = max(3, int(round(0.04 * max(h, w))) | 1)
        blurred = ndimage.uniform_filter(ndimage.uniform_filter(truth, size, mode="constant"), size, mode="constant")
        # low-frequency noise: one draw per 8x8 cell
        cells = rng.uniform(0.0, 0.15, ((h + 7) // 8, (w + 7) // 8))
        noise = np.repeat(np.repeat(cells, 8, axis=0), 8, axis=1)[:h, :w]
        return np.clip(blurred + noise, 0.0, 1.0)
    if name == "center":
        yy, xx = np.mgrid[0:h, 0:w]
        d2 = ((xx - w / 2) / (0.3 * w)) ** 2 + ((yy - h / 2) / (0.3 * h)) ** 2
        return np.exp(-0.5 * d2)
    raise ValueError(f"unknown detector {name!r}")


DETECTORS = ("truth", "noisy", "center")


# ---------------------------------------------------------------------------
# datasets


def _write_png(path, array, compress_level=1):
    Image.fromarray(array).save(path, compress_level=compress_level)


def synth_dataset(seed, scenes, objects=(2, 5), subjects=None, size=1024, geometry=None,
                  out_dir=None, detectors=DETECTORS, workers=1, **spec_kw):
    """Build (and optionally write) a synthetic dataset.

    Returns (Dataset, {image_id: Scene}, {image_id: SceneSpec}). With
    ``out_dir`` the images, masks, events, manifest and detector maps are
    written and ImageRecord paths point at the written images. Scenes are
    independent, so ``workers`` threads build them concurrently.
    """
    subjects = dict(subjects or {"et": 20, "pc": 30, "rd": 30})
    geometry = geometry or ViewingGeometry()
    top = rng_for(seed, 0)
    scene_seeds = [int(top.integers(0, 2 ** 31 - 1)) for _ in range(scenes)]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "images").mkdir(parents=True, exist_ok=True)
        for name in detectors:
            (out / "detectors" / name).mkdir(parents=True, exist_ok=True)

    def build(i):
        scene_seed = scene_seeds[i]
        layout = rng_for(scene_seed, 4)
        short_side = max(1, int(round(size * layout.uniform(0.6, 1.0))))
        width, height = (size, short_side) if layout.random() < 0.5 else (short_side, size)
        n_obj = int(layout.integers(objects[0], objects[1] + 1))
        spec = random_scene_spec(scene_seed, width, height, n_obj, subjects=subjects, **spec_kw)
        scene = generate_scene(spec)
        image_id = f"scene{i:04d}"
        path = (out / "images" / f"{image_id}.png") if out is not None else Path(f"{image_id}.png")
        if out is not None:
            # noisy RGB barely compresses; storing it is several times faster
            _write_png(path, scene.image, compress_level=0)
            for name in detectors:
                q = np.round(detector_map(name, scene, scene_seed) * 65535).astype(np.uint16)
                _write_png(out / "detectors" / name / f"{image_id}.png", q)
        return image_id, spec, scene, ImageRecord(image_id, width, height, path), \
            simulate_subjects(spec, scene.masks, image_id)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            built = list(pool.map(build, range(scenes)))
    else:
        built = [build(i) for i in range(scenes)]

    images, masks, records, scene_by_id, spec_by_id = [], [], [], {}, {}
    truth = {}
    for image_id, spec, scene, record, recs in built:
        images.append(record)
        for j, (m, sal) in enumerate(zip(scene.masks, scene.saliencies)):
            masks.append(make_object_mask(f"{image_id}_o{j}", image_id, m))
            truth[masks[-1].object_id] = sal
        records += recs
        scene_by_id[image_id] = scene
        spec_by_id[image_id] = spec
    ds = Dataset(images, masks, records, geometry)
    if out is not None:
        write_dataset(ds, out, extra={"synthetic": {"seed": seed, "true_saliency": truth}})
        atomic_write_json(out / "scenes.json", {iid: asdict(sp) for iid, sp in spec_by_id.items()})
    return ds, scene_by_id, spec_by_id


# ---------------------------------------------------------------------------
# oracles


@dataclass
class OracleResult:
    metric: str
    value: float
    method: str


def _delta(a, op, b, eps):
    if op == "<":
        return int(a < b - eps)
    if op == ">":
        return int(a > b + eps)
    if op == "=":
        return int(abs(a - b) <= eps)
    if op == "<=":
        return int(a < b - eps or abs(a - b) <= eps)
    if op == ">=":
        return int(a > b + eps or abs(a - b) <= eps)
    if op == "!=":
        return int(not abs(a - b) <= eps)
    raise ValueError(op)


def oracle_tau_bruteforce(R, rho_list, mode="combined", tie_eps=1e-9) -> OracleResult:
    """Kendall tau by a direct double loop over object pairs.

    ``standard`` uses the textbook n0/n1/n2 form on ``rho_list[0]`` (or a
    flat list); ``combined`` evaluates the max/min indicator sums literally.
    """
    R = [float(v) for v in R]
    if mode == "standard":
        rho = rho_list[0] if np.ndim(rho_list) == 2 else rho_list
        rho = [float(v) for v in rho]
        n = len(R)
        n0 = n * (n - 1) // 2
        nc = nd = n1 = n2 = 0
        for x, y in combinations(range(n), 2):
            tr = _delta(R[x], "=", R[y], tie_eps)
            tq = _delta(rho[x], "=", rho[y], tie_eps)
            n1 += tr
            n2 += tq
            if tr or tq:
                continue
            same = _delta(R[x], ">", R[y], tie_eps) == _delta(rho[x], ">", rho[y], tie_eps)
            nc += same
            nd += not same
        den = (n0 - n1) * (n0 - n2)
        value = (nc - nd) / math.sqrt(den) if den else math.nan
        return OracleResult("kendall_tau_b", value, "pairwise double loop, n0/n1/n2 tie correction")
    if mode != "combined":
        raise ValueError(f"unknown mode {mode!r}")
    rhos = [[float(v) for v in r] for r in rho_list]
    C = D = T_rho = T_R = 0
    for x, y in combinations(range(len(R)), 2):
        def gs(op):
            return max(_delta(r[x], op, r[y], tie_eps) for r in rhos)

        def gi(op):
            return min(_delta(r[x], op, r[y], tie_eps) for r in rhos)

        def e(op):
            return _delta(R[x], op, R[y], tie_eps)

        C += gs(">") * e(">") + gs("<") * e("<")
        D += gs("<") * gi("<=") * e(">") + gs(">") * gi(">=") * e("<")
        T_rho += gi("=") * (e(">") + e("<"))
        T_R += gs("!=") * e("=")
    den = (C + D + T_R) * (C + D + T_rho)
    value = (C - D) / math.sqrt(den) if den else math.nan
    return OracleResult("kendall_tau_combined", value, "pairwise double loop over indicator products")


def oracle_auprc_exact(S, gt_binary) -> OracleResult:
    """AuPRC with every distinct value of S as a threshold, counted pixel by pixel."""
    S = np.asarray(S, dtype=np.float64)
    gt = np.asarray(gt_binary, dtype=bool)
    if S.size > 64 * 64:
        raise ValueError("oracle limited to 64x64 maps")
    npos = int(gt.sum())
    if npos == 0:
        raise ValueError("ground truth has no positive pixels")
    thresholds = sorted(set(S.ravel().tolist())) + [math.nextafter(float(S.max()), math.inf)]
    points = []
    for t in thresholds:
        pred = S >= t
        tp = int(np.sum(pred & gt))
        fp = int(np.sum(pred & ~gt))
        points.append((tp, fp))
    curve = []
    for tp, fp in points:
        precision = tp / (tp + fp) if tp + fp else 1.0
        curve.append((tp / npos, precision))
    nonempty = [(tp + fp, i) for i, (tp, fp) in enumerate(points) if tp + fp]
    _, i_min = min(nonempty)
    curve.append((0.0, curve[i_min][1]))
    curve.sort(key=lambda rp: (rp[0], -rp[1]))
    area = math.fsum((curve[i + 1][0] - curve[i][0]) * (curve[i][1] + curve[i + 1][1]) * 0.5
                     for i in range(len(curve) - 1))
    return OracleResult("auprc", area, "per-threshold pixel counting over all distinct map values")
