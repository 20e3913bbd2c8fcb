"""``salmon-kit`` command line: synth, gt-build, evaluate, characterize, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Mapping
from pathlib import Path

from . import MODALITIES, __version__
from .data import DatasetError, ViewingGeometry, load_dataset
from .io import (
    atomic_write_csv,
    atomic_write_json,
    detector_dirs,
    find_maps,
    load_saliency_map,
    provenance,
)

log = logging.getLogger("salmonkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _range(text):
    try:
        a, b = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from None
    if a < 1 or b < a:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}")
    return a, b


def _subjects(text):
    out = {}
    for part in text.split(","):
        try:
            k, v = part.split("=")
            out[k.strip()] = int(v)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected et=N,pc=N,rd=N, got {text!r}") from None
        if k.strip() not in MODALITIES or out[k.strip()] < 0:
            raise argparse.ArgumentTypeError(f"invalid subject count {part!r}")
    return out


def _sigma(text):
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("sigma must be 'auto' or a positive number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("sigma must be positive")
    return v


def _ring(text):
    if text == "auto":
        return "auto"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("ring must be 'auto' or a radius in pixels") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("ring radius must be positive")
    return v


def _modalities(choice):
    return MODALITIES if choice == "all" else (choice,)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, metavar="N",
                        help="worker threads over images (default 1)")
    noise = common.add_mutually_exclusive_group()
    noise.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    noise.add_argument("--quiet", "-q", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="salmon-kit", parents=[common],
                description="Multi-level salient object ground truth and evaluation.")
    p.add_argument("--version", action="version", version=f"salmon-kit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--objects-per-scene", type=_range, default=(2, 5), metavar="A..B")
    s.add_argument("--subjects", type=_subjects, default={"et": 20, "pc": 30, "rd": 30},
                   metavar="et=N,pc=N,rd=N")
    s.add_argument("--size", type=int, default=1024, help="longest image side in pixels")
    s.add_argument("--detectors", default="truth,noisy,center")
    s.add_argument("--fixation-count", choices=("equal", "poisson"), default="equal")
    s.add_argument("--out", type=Path, required=True)

    g = sub.add_parser("gt-build", parents=[common], help="build multi-level ground truth")
    g.add_argument("--manifest", type=Path, required=True)
    g.add_argument("--modality", choices=("et", "pc", "rd", "all"), default="all")
    g.add_argument("--sigma", type=_sigma, default=None, metavar="PX|auto")
    g.add_argument("--iou-threshold", type=float, default=0.3)
    g.add_argument("--normalization", choices=("max", "minmax"), default="max")
    g.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("evaluate", parents=[common], help="score saliency maps")
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--gt-dir", type=Path, required=True)
    e.add_argument("--maps-dir", type=Path, required=True)
    e.add_argument("--modality", choices=("et", "pc", "rd", "all"), default="all")
    e.add_argument("--scope", choices=("dataset", "image"), default="dataset")
    e.add_argument("--thresholds", choices=("uniform256", "exact"), default="uniform256")
    e.add_argument("--exact-thresholds", dest="thresholds", action="store_const", const="exact")
    e.add_argument("--tie-eps", type=float, default=1e-9)
    e.add_argument("--allow-partial", action="store_true",
                   help="combine over present modalities when one is missing")
    e.add_argument("--out", type=Path, required=True)
    e.add_argument("--csv", type=Path)

    c = sub.add_parser("characterize", parents=[common], help="dataset statistics")
    c.add_argument("--manifest", type=Path, required=True)
    c.add_argument("--gt-dir", type=Path, help="reuse gt-build output for the modality fits")
    c.add_argument("--bins", type=int, default=8)
    c.add_argument("--ring", type=_ring, default="auto", metavar="auto|PX")
    c.add_argument("--include-others-globally", action="store_true")
    c.add_argument("--sigma", type=_sigma, default=None, metavar="PX|auto")
    c.add_argument("--out", type=Path, required=True)
    c.add_argument("--csv", type=Path, metavar="DIR")

    r = sub.add_parser("report", parents=[common], help="plot data from reports")
    r.add_argument("--inputs", type=Path, nargs="+", required=True)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--bins", type=int, default=20)
    r.add_argument("--svg", action="store_true")
    return p


def _config(args):
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in ("verbose", "quiet"):
            continue
        cfg[k] = str(v) if isinstance(v, Path) else v
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    from .synth import DETECTORS, synth_dataset

    dets = [d for d in args.detectors.split(",") if d]
    unknown = [d for d in dets if d not in DETECTORS]
    if unknown:
        raise UsageError(f"unknown detector(s): {', '.join(unknown)}")
    if args.scenes < 1 or args.size < 16:
        raise UsageError("--scenes must be >= 1 and --size >= 16")
    ds, _, _ = synth_dataset(args.seed, args.scenes, args.objects_per_scene, args.subjects, args.size,
                             ViewingGeometry(), out_dir=args.out, detectors=dets,
                             fixation_count=args.fixation_count, workers=args.workers)
    # re-stamp the manifest with provenance
    path = args.out / "manifest.json"
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    manifest.update(provenance(cfg))
    manifest["config"] = cfg
    atomic_write_json(path, manifest)
    log.info("wrote %d scenes to %s", len(ds.images), args.out)
    return 0


def cmd_gt_build(args, cfg):
    from .gtgen import build_ground_truth, foveal_sigma, sidecar_dict, write_gt_png

    ds = load_dataset(args.manifest)
    for w in ds.warnings:
        log.warning(w)
    modalities = _modalities(args.modality)
    sigma = args.sigma
    if sigma is None and "et" in modalities:
        sigma = foveal_sigma(ds.viewing_geometry)
    gts = build_ground_truth(ds, modalities, sigma, args.iou_threshold, args.normalization, args.workers)
    stamp = provenance(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    notes = []
    for im in ds.images:
        gt = gts[im.image_id]
        masks = ds.masks_for(im.image_id)
        for g in modalities:
            if not masks:
                continue
            if not gt.has(g):
                notes.append(f"image {im.image_id}: no {g} subjects, ground truth not written")
                continue
            write_gt_png(args.out / g / f"{im.image_id}.png", gt.gt_map(masks, g).map,
                         {**stamp, "modality": g})
        atomic_write_json(args.out / f"{im.image_id}.json", sidecar_dict(gt, sigma, stamp))
    for n in notes:
        log.warning(n)
    atomic_write_json(args.out / "gt_build.json", {**stamp, "config": cfg, "sigma": sigma,
                                                    "n_images": len(ds.images),
                                                    "warnings": ds.warnings, "notes": notes})
    return 0


class _LazyMaps(Mapping):
    def __init__(self, paths):
        self._paths = paths

    def __getitem__(self, key):
        return load_saliency_map(self._paths[key])

    def __contains__(self, key):
        return key in self._paths

    def __iter__(self):
        return iter(self._paths)

    def __len__(self):
        return len(self._paths)


def cmd_evaluate(args, cfg):
    from .gtgen import read_ground_truth
    from .metrics import EvalConfig, evaluate

    ds = load_dataset(args.manifest)
    gts = read_ground_truth(args.gt_dir)
    dirs = detector_dirs(args.maps_dir)
    ecfg = EvalConfig(_modalities(args.modality), args.scope, args.thresholds, args.tie_eps,
                      args.allow_partial, args.workers)
    reports = []
    for name, d in dirs.items():
        rep = evaluate(ds, gts, _LazyMaps(find_maps(d)), ecfg, detector=name)
        reports.append(rep.to_dict())
        log.info("%s: %s", name, json.dumps(rep.to_dict()["summary"]))
    stamp = provenance(cfg)
    atomic_write_json(args.out, {**stamp, "config": cfg, "detectors": reports})
    if args.csv:
        cols = ["detector", "image_id", "object_id", "estimate", "s_et", "s_pc", "s_rd",
                "mae_et", "mae_pc", "mae_rd", "mae"]
        rows = [[rep["detector"]] + [row.get(c) for c in cols[1:]] for rep in reports for row in rep["per_object"]]
        atomic_write_csv(args.csv, cols, rows, stamp)
    return 0


def cmd_characterize(args, cfg):
    from .analysis import characterize
    from .gtgen import build_ground_truth, read_ground_truth
    from .plots import emit_plot_data

    ds = load_dataset(args.manifest)
    if args.gt_dir is not None:
        gts = read_ground_truth(args.gt_dir)
    else:
        gts = build_ground_truth(ds, MODALITIES, args.sigma, workers=args.workers)
    rep = characterize(ds, gts, args.bins, args.ring, not args.include_others_globally, args.workers)
    stamp = provenance(cfg)
    out = {**stamp, "config": cfg, **rep.to_dict()}
    atomic_write_json(args.out, out)
    if args.csv:
        emit_plot_data(out, args.csv, stamp)
    return 0


def cmd_report(args, cfg):
    from .plots import emit_plot_data

    stamp = provenance(cfg)
    for path in args.inputs:
        with open(path, encoding="utf-8") as fh:
            rep = json.load(fh)
        if "detectors" not in rep and "objects" not in rep:
            raise DatasetError(f"{path} is neither an evaluate nor a characterize report")
        sub = args.out / path.stem if len(args.inputs) > 1 else args.out
        emit_plot_data(rep, sub, stamp, bins=args.bins, svg=args.svg)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "gt-build": cmd_gt_build,
    "evaluate": cmd_evaluate,
    "characterize": cmd_characterize,
    "report": cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.workers = getattr(args, "workers", 1)
    verbose, quiet = getattr(args, "verbose", False), getattr(args, "quiet", False)
    logging.basicConfig(level=logging.DEBUG if verbose else logging.ERROR if quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.workers < 1:
        print("salmon-kit: error: --workers must be >= 1", file=sys.stderr)
        return 1
    cfg = _config(args)
    try:
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"salmon-kit: error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, FileNotFoundError, NotADirectoryError, json.JSONDecodeError) as exc:
        print(f"salmon-kit: data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"salmon-kit: data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"salmon-kit: internal error: {exc!r}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
