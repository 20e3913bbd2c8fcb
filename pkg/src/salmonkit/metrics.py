"""Scoring detector saliency maps against multi-level ground truth.

Three families of measures are computed per object and aggregated per image
or over the whole dataset: object-wise mean absolute error, area under the
precision-recall curve at every ground-truth saliency level, and Kendall's
tau-b between estimated and ground-truth object saliencies (standard per
modality, and an any-modality variant that pools all three references).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import MODALITIES, _kernels
from .data import ObjectMask
from .gtgen import ImageGroundTruth, MultiLevelGroundTruth, binarize_equal_salience

log = logging.getLogger(__name__)

TIE_EPS = 1e-9
UNIFORM_LEVELS = 256


@dataclass(eq=False)
class SaliencyMap:
    image_id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"saliency map for {self.image_id!r} must be 2-D")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError(f"saliency map for {self.image_id!r} has values outside [0, 1]")
        self.values = v


# ---------------------------------------------------------------------------
# regression


def object_mean_saliency(S, mask) -> float:
    """Mean estimated saliency over the object's pixels."""
    m = mask.mask if isinstance(mask, ObjectMask) else np.asarray(mask, dtype=bool)
    S = S.values if isinstance(S, SaliencyMap) else np.asarray(S)
    if S.shape != m.shape:
        raise ValueError(f"map shape {S.shape} does not match mask shape {m.shape}")
    n = np.count_nonzero(m)
    if n == 0:
        raise ValueError("empty mask")
    return float(S[m].sum(dtype=np.float64) / n)


def mae_per_object(s_est, s_gt) -> float:
    return abs(float(s_est) - float(s_gt))


def mae_aggregate(errors) -> float:
    errors = list(errors)
    if not errors:
        raise ValueError("no objects in scope")
    return math.fsum(errors) / len(errors)


def mae_combined_per_object(errors, allow_partial=False) -> float:
    """Smallest error over the three modalities.

    ``errors`` maps modality tag to error (None for missing). Missing
    modalities raise unless ``allow_partial``.
    """
    present = {g: e for g, e in errors.items() if e is not None}
    missing = [g for g in MODALITIES if present.get(g) is None]
    if missing and not allow_partial:
        raise ValueError(f"missing modalities: {', '.join(missing)}")
    if not present:
        raise ValueError("no modality present")
    return min(present.values())


# ---------------------------------------------------------------------------
# classification


def gt_level_binarize(gt: MultiLevelGroundTruth):
    """One binary map per distinct nonzero saliency level, ascending."""
    if not gt.levels:
        log.warning("image %s has no salient object for %s", gt.image_id, gt.gamma)
        return []
    return [(level, gt.map >= level) for level in gt.levels]


@dataclass(eq=False)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def threshold_ladder(S, thresholds="uniform256") -> np.ndarray:
    if isinstance(thresholds, str):
        if thresholds == "uniform256":
            return np.arange(UNIFORM_LEVELS, dtype=np.float64) / (UNIFORM_LEVELS - 1)
        if thresholds == "exact":
            return np.unique(np.asarray(S, dtype=np.float64))
        raise ValueError(f"unknown threshold mode {thresholds!r}")
    ladder = np.unique(np.asarray(thresholds, dtype=np.float64))
    if ladder.size == 0:
        raise ValueError("empty threshold ladder")
    return ladder


def _uniform_bins(ladder, S):
    """searchsorted(ladder, S, "right") - 1 for the evenly spaced ladder, without the binary search."""
    top = len(ladder) - 1
    k = np.clip(np.floor(S * top).astype(np.int64), 0, top)
    # floor can be off by one where i/255 rounds differently from S*255
    k -= S < ladder[k]
    k += (k < top) & (S >= ladder[np.minimum(k + 1, top)])
    return k


class _BinnedMap:
    """Threshold-bin index of every pixel, reused across ground truths."""

    def __init__(self, S, thresholds="uniform256"):
        S = np.asarray(S, dtype=np.float64).ravel()
        if isinstance(thresholds, str) and thresholds == "exact":
            self.ladder, self.bins = np.unique(S, return_inverse=True)
            self.bins = self.bins.ravel()
        elif isinstance(thresholds, str) and thresholds == "uniform256":
            self.ladder = threshold_ladder(S, thresholds)
            self.bins = _uniform_bins(self.ladder, S)
        else:
            self.ladder = threshold_ladder(S, thresholds)
            self.bins = np.searchsorted(self.ladder, S, side="right") - 1
        self.top = np.nextafter(S.max(), np.inf) if S.size else 1.0

    def curve(self, gt_binary) -> PRCurve:
        gt = np.asarray(gt_binary, dtype=bool).ravel()
        if gt.shape != self.bins.shape:
            raise ValueError("ground truth and map sizes differ")
        counts = _kernels.label_histograms(self.bins, gt, len(self.ladder), 2)
        return self._curve(counts[1], counts[0])

    def level_curves(self, gt: MultiLevelGroundTruth) -> list:
        """Curves against ``F >= l`` for every level of ``gt`` (ascending), from one counting pass."""
        F = np.asarray(gt.map, dtype=np.float64).ravel()
        if F.shape != self.bins.shape:
            raise ValueError("ground truth and map sizes differ")
        levels = np.asarray(gt.levels, dtype=np.float64)
        labels = np.zeros(F.shape, dtype=np.int64)
        salient = F > 0
        labels[salient] = np.searchsorted(levels, F[salient]) + 1
        counts = _kernels.label_histograms(self.bins, labels, len(self.ladder), len(levels) + 1)
        total = counts.sum(axis=0)
        # row i: pixels whose ground truth is at level i or above
        at_or_above = np.cumsum(counts[::-1], axis=0)[::-1]
        return [self._curve(at_or_above[i + 1], total - at_or_above[i + 1]) for i in range(len(levels))]

    def _curve(self, pos, neg) -> PRCurve:
        npos = int(pos.sum())
        if npos == 0:
            raise ValueError("ground truth has no positive pixels")
        tp = np.append(np.cumsum(pos[::-1])[::-1], 0)
        fp = np.append(np.cumsum(neg[::-1])[::-1], 0)
        return _curve_from_counts(tp, fp, npos, np.append(self.ladder, self.top))


def _curve_from_counts(tp, fp, npos, thresholds) -> PRCurve:
    tp = np.asarray(tp, dtype=np.int64)
    fp = np.asarray(fp, dtype=np.int64)
    predicted = tp + fp
    precision = np.ones(len(tp))
    nz = predicted > 0
    precision[nz] = tp[nz] / predicted[nz]
    recall = tp / npos
    # anchor at recall 0 with the precision of the smallest nonempty prediction
    emptiest = np.flatnonzero(nz)[np.argmin(predicted[nz])]
    recall = np.append(recall, 0.0)
    precision = np.append(precision, precision[emptiest])
    thresholds = np.append(thresholds, thresholds[emptiest])
    order = np.lexsort((-precision, recall))
    return PRCurve(recall[order], precision[order], thresholds[order])


def precision_recall_curve(S, gt_binary, thresholds="uniform256") -> PRCurve:
    """Precision-recall pairs of ``S >= t`` over the threshold ladder.

    ``thresholds`` is ``"uniform256"`` (0, 1/255, ..., 1), ``"exact"``
    (every distinct value of S) or an explicit sequence. A threshold just
    above max(S) adds the empty prediction, whose precision is taken as 1.
    """
    S = S.values if isinstance(S, SaliencyMap) else np.asarray(S, dtype=np.float64)
    gt = np.asarray(gt_binary, dtype=bool)
    if S.shape != gt.shape:
        raise ValueError(f"map shape {S.shape} does not match ground truth shape {gt.shape}")
    return _BinnedMap(S, thresholds).curve(gt)


def auprc(curve) -> float:
    """Trapezoidal area under precision over recall."""
    if isinstance(curve, PRCurve):
        r, p = curve.recall.tolist(), curve.precision.tolist()
    else:
        r, p = zip(*curve) if curve else ((), ())
    if len(r) < 2:
        raise ValueError("a PR curve needs at least two points")
    return math.fsum((r[i + 1] - r[i]) * (p[i] + p[i + 1]) * 0.5 for i in range(len(r) - 1))


def auprc_aggregate_gamma(values) -> float:
    """Mean AuPRC over (image, level) pairs."""
    values = list(values)
    if not values:
        raise ValueError("no (image, level) pairs in scope")
    return math.fsum(values) / len(values)


def auprc_combined(rows, allow_partial=False) -> float:
    """Mean over pairs of the best AuPRC among modalities.

    ``rows`` is a sequence of per-pair tuples (one value per modality,
    None when absent).
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no (image, level) pairs in scope")
    best = []
    for row in rows:
        present = [v for v in row if v is not None]
        if len(present) != len(row) and not allow_partial:
            raise ValueError("modality missing for an (image, level) pair")
        if not present:
            raise ValueError("no modality present for an (image, level) pair")
        best.append(max(present))
    return math.fsum(best) / len(best)


def align_levels_by_rank(per_gamma):
    """Pair up per-modality level values by descending rank.

    ``per_gamma`` maps modality to values ordered by ascending level. The
    top level of each modality is paired with the top level of the others,
    and so on; longer lists are truncated. Returns (rows, dropped).
    """
    lists = [list(reversed(v)) for v in per_gamma.values()]
    if not lists:
        return [], 0
    n = min(len(v) for v in lists)
    dropped = sum(len(v) - n for v in lists)
    return [tuple(v[i] for v in lists) for i in range(n)], dropped


# ---------------------------------------------------------------------------
# ranking


def _tau_from_counts(c, d, t_r, t_rho):
    den = (c + d + t_r) * (c + d + t_rho)
    if den == 0:
        return math.nan
    return (c - d) / math.sqrt(den)


def kendall_tau_b(R, rho, tie_eps=TIE_EPS) -> float:
    """Tie-aware Kendall tau-b; NaN when every pair is tied on one side.

    Values closer than ``tie_eps`` count as tied.
    """
    R = np.asarray(R, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if R.shape != rho.shape or R.ndim != 1:
        raise ValueError("R and rho must be 1-D and of equal length")
    if len(R) < 2:
        raise ValueError("need at least two objects")
    c, d, tr, trho = _kernels.tau_counts(R, rho, tie_eps)
    return _tau_from_counts(c, d, tr, trho)


def tau_combined_counts(R, rhos, tie_eps=TIE_EPS):
    """(C, D, T_R, T_rho) of the any-modality tau."""
    R = np.asarray(R, dtype=np.float64)
    rhos = np.atleast_2d(np.asarray(rhos, dtype=np.float64))
    if rhos.shape[1] != len(R):
        raise ValueError("all lists must have equal length")
    return _kernels.tau_combined_counts(R, rhos, tie_eps)


def kendall_tau_combined(R, rho_et, rho_pc, rho_rd, tie_eps=TIE_EPS) -> float:
    """Kendall tau-b against three references at once.

    A pair of objects is concordant when the estimated order agrees with at
    least one reference, discordant when it is contradicted by some
    reference and agreed by none.
    """
    if not (len(R) == len(rho_et) == len(rho_pc) == len(rho_rd)):
        raise ValueError("all lists must have equal length")
    if len(R) < 2:
        raise ValueError("need at least two objects")
    c, d, t_r, t_rho = tau_combined_counts(R, [rho_et, rho_pc, rho_rd], tie_eps)
    return _tau_from_counts(c, d, t_r, t_rho)


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class EvalConfig:
    modalities: tuple = MODALITIES
    scope: str = "dataset"
    thresholds: str = "uniform256"
    tie_eps: float = TIE_EPS
    allow_partial: bool = False
    workers: int = 1

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        if self.scope not in ("dataset", "image"):
            raise ValueError(f"unknown scope {self.scope!r}")
        threshold_ladder(np.zeros(1), self.thresholds)

    def to_dict(self):
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        d.pop("workers")
        return d


@dataclass(eq=False)
class MetricReport:
    detector: str
    config: dict
    per_object: list = field(default_factory=list)
    per_level: list = field(default_factory=list)
    per_image: list = field(default_factory=list)
    dataset: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return _json_clean({
            "detector": self.detector,
            "config": self.config,
            "summary": self.summary,
            "dataset": self.dataset,
            "per_image": self.per_image,
            "per_object": self.per_object,
            "per_level": self.per_level,
            "coverage": self.coverage,
            "notes": self.notes,
        })


def _json_clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_clean(obj.item())
    return obj


def _mean_or_nan(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    return math.fsum(values) / len(values) if values else math.nan


def _evaluate_image(masks, gt: ImageGroundTruth, S, cfg: EvalConfig):
    binned = _BinnedMap(S, cfg.thresholds)
    s_est = {m.object_id: object_mean_saliency(S, m) for m in masks}
    levels = {}
    for g in cfg.modalities:
        if not gt.has(g):
            continue
        ml = gt.gt_map(masks, g)
        if not ml.levels:
            log.warning("image %s has no salient object for %s", ml.image_id, g)
        levels[g] = [(level, auprc(c)) for level, c in zip(ml.levels, binned.level_curves(ml))]
    binary = auprc(binned.curve(binarize_equal_salience(masks))) if masks else math.nan
    return s_est, levels, binary


def _tau_block(R, refs, cfg, combined):
    out = {}
    n = len(R)
    for g in cfg.modalities:
        rho = refs.get(g)
        out[g] = kendall_tau_b(R, rho, cfg.tie_eps) if rho is not None and n >= 2 else math.nan
    if combined:
        if n >= 2 and all(refs.get(g) is not None for g in MODALITIES):
            out["combined"] = kendall_tau_combined(R, refs["et"], refs["pc"], refs["rd"], cfg.tie_eps)
        else:
            out["combined"] = math.nan
    return out


def evaluate(ds, gts, maps, config: EvalConfig | None = None, detector="detector") -> MetricReport:
    """Score one detector's maps on every image that has both map and ground truth.

    ``gts`` maps image_id to ImageGroundTruth; ``maps`` maps image_id to a
    SaliencyMap or a 2-D array in [0, 1].
    """
    cfg = config or EvalConfig()
    combined = set(MODALITIES) <= set(cfg.modalities)
    report = MetricReport(detector=detector, config=cfg.to_dict())
    missing_maps, missing_gt, evaluated = [], [], []
    jobs = []
    for im in ds.images:
        iid = im.image_id
        masks = ds.masks_for(iid)
        if not masks:
            continue
        gt = gts.get(iid)
        if gt is None or not any(gt.has(g) for g in cfg.modalities):
            missing_gt.append(iid)
            continue
        lacking = [g for g in cfg.modalities if not gt.has(g)]
        if lacking:
            report.notes.append(f"image {iid}: no ground truth for {', '.join(lacking)}")
        if iid not in maps:
            missing_maps.append(iid)
            continue
        jobs.append((iid, im.shape, masks, gt))
        evaluated.append(iid)

    def run(job):
        iid, shape, masks, gt = job
        # maps may be a lazy mapping; load inside the job to bound memory
        S = maps[iid]
        if not isinstance(S, SaliencyMap):
            S = SaliencyMap(iid, S)
        if S.values.shape != shape:
            raise ValueError(f"saliency map for {iid!r} is {S.values.shape}, image is {shape}")
        return _evaluate_image(masks, gt, S.values, cfg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    all_R, all_refs = [], {g: [] for g in MODALITIES}
    mae_rows = {g: [] for g in list(cfg.modalities) + ["combined"]}
    level_rows = {g: [] for g in cfg.modalities}
    combined_rows = []
    dropped_total = 0
    binaries = []
    for (iid, _, masks, gt), (s_est, levels, binary) in zip(jobs, results):
        sal = {o.object_id: o for o in gt.objects}
        img_mae = {g: [] for g in mae_rows}
        img_R, img_refs = [], {g: [] for g in MODALITIES}
        for m in masks:
            o = sal.get(m.object_id)
            if o is None:
                raise ValueError(f"ground truth for {iid!r} lacks object {m.object_id!r}")
            row = {"image_id": iid, "object_id": m.object_id, "estimate": s_est[m.object_id]}
            errs = {}
            for g in MODALITIES:
                s = o.get(g)
                row["s_" + g] = s
                if g in cfg.modalities:
                    errs[g] = None if s is None else mae_per_object(s_est[m.object_id], s)
                    row["mae_" + g] = errs[g]
                    if errs[g] is not None:
                        img_mae[g].append(errs[g])
                img_refs[g].append(s)
            if combined:
                have = [errs[g] for g in MODALITIES if errs.get(g) is not None]
                if len(have) == 3 or (have and cfg.allow_partial):
                    row["mae"] = mae_combined_per_object(errs, cfg.allow_partial)
                    img_mae["combined"].append(row["mae"])
                else:
                    row["mae"] = None
            img_R.append(s_est[m.object_id])
            report.per_object.append(row)

        img_levels = {}
        for g, rows in levels.items():
            n = len(rows)
            for rank, (level, a) in enumerate(rows):
                report.per_level.append({"image_id": iid, "gamma": g, "rank": n - 1 - rank,
                                         "level": level, "auprc": a})
            img_levels[g] = [a for _, a in rows]
            level_rows[g].extend(img_levels[g])
        img_combined = []
        present = [g for g in MODALITIES if img_levels.get(g)]
        if combined and (len(present) == 3 or (present and cfg.allow_partial)):
            img_combined, dropped = align_levels_by_rank({g: img_levels[g] for g in present})
            if dropped:
                dropped_total += dropped
                report.notes.append(f"image {iid}: level counts differ across modalities "
                                    f"({', '.join(f'{g}={len(img_levels[g])}' for g in present)}); "
                                    f"{dropped} lower levels dropped from the combined AuPRC")
            combined_rows.extend(img_combined)

        refs = {g: (img_refs[g] if all(v is not None for v in img_refs[g]) else None) for g in MODALITIES}
        img_tau = _tau_block(img_R, refs, cfg, combined)
        img = {
            "image_id": iid,
            "n_objects": len(masks),
            "mae": {g: _mean_or_nan(v) for g, v in img_mae.items() if g != "combined" or combined},
            "auprc": {g: _mean_or_nan(img_levels.get(g, [])) for g in cfg.modalities},
            "tau": img_tau,
            "binary_auprc": binary,
        }
        if combined:
            img["auprc"]["combined"] = (auprc_combined(img_combined, cfg.allow_partial)
                                        if img_combined else math.nan)
        report.per_image.append(img)
        binaries.append(binary)
        for g, v in img_mae.items():
            mae_rows[g].extend(v)
        all_R.extend(img_R)
        for g in MODALITIES:
            all_refs[g].extend(img_refs[g])

    pooled_refs = {g: (v if v and all(x is not None for x in v) else None) for g, v in all_refs.items()}
    dataset = {
        "n_images": len(evaluated),
        "n_objects": len(all_R),
        "n_levels": {g: len(v) for g, v in level_rows.items()},
        "mae": {g: (mae_aggregate(v) if v else math.nan) for g, v in mae_rows.items()
                if g != "combined" or combined},
        "auprc": {g: (auprc_aggregate_gamma(v) if v else math.nan) for g, v in level_rows.items()},
        "tau": _tau_block(all_R, pooled_refs, cfg, combined),
        "binary_auprc": _mean_or_nan(binaries),
    }
    if combined:
        dataset["auprc"]["combined"] = (auprc_combined(combined_rows, cfg.allow_partial)
                                        if combined_rows else math.nan)
        dataset["n_levels"]["combined"] = len(combined_rows)
        dataset["combined_levels_dropped"] = dropped_total
    report.dataset = dataset

    if cfg.scope == "dataset":
        report.summary = {k: dataset[k] for k in ("mae", "auprc", "tau", "binary_auprc")}
    else:
        summary = {}
        for key in ("mae", "auprc", "tau"):
            keys = report.per_image[0][key].keys() if report.per_image else dataset[key].keys()
            summary[key] = {g: _mean_or_nan([p[key][g] for p in report.per_image]) for g in keys}
        summary["binary_auprc"] = dataset["binary_auprc"]
        summary["images_with_undefined_tau"] = {
            g: sum(1 for p in report.per_image if math.isnan(p["tau"][g])) for g in summary["tau"]}
        report.summary = summary

    report.coverage = {"evaluated": len(evaluated), "missing_maps": missing_maps, "missing_gt": missing_gt}
    if missing_maps or missing_gt:
        report.notes.append(f"coverage: {len(evaluated)} images evaluated, {len(missing_maps)} without "
                            f"a saliency map, {len(missing_gt)} without ground truth")
    return report
