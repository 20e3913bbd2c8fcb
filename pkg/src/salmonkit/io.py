"""File helpers: atomic writes, provenance stamps and saliency map loading."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__

MAP_SUFFIXES = (".png", ".npy", ".tif", ".tiff", ".bmp", ".jpg", ".jpeg")


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def provenance(config) -> dict:
    return {"toolkit": "salmonkit", "version": __version__, "config_hash": config_hash(config)}


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=1, allow_nan=False) + "\n").encode("utf-8"))


def atomic_write_csv(path, header, rows, stamp: dict):
    """CSV with a leading ``#`` provenance line, then header and rows."""
    buf = io.StringIO()
    buf.write(f"# {stamp['toolkit']} {stamp['version']} config_hash={stamp['config_hash']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv_rows(path):
    """Rows of a CSV written by atomic_write_csv (comment line skipped)."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def atomic_save_png(path, array, text=None):
    from PIL import PngImagePlugin

    info = None
    if text:
        info = PngImagePlugin.PngInfo()
        for k, v in text.items():
            info.add_text(k, str(v))
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG", pnginfo=info, compress_level=1)
    atomic_write_bytes(path, buf.getvalue())


def load_saliency_map(path) -> np.ndarray:
    """Gray map scaled to [0, 1]: integer images by their dtype range, ``.npy`` as is."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.clip(np.load(path).astype(np.float64), 0.0, 1.0)
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P", "LA"):
            im = im.convert("L")
        arr = np.asarray(im)
    if arr.dtype == np.uint8:
        return arr / 255.0
    if arr.dtype == np.uint16:
        return arr / 65535.0
    if arr.dtype == bool:
        return arr.astype(np.float64)
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def find_maps(directory) -> dict:
    """{image_id: path} for map files in ``directory`` (stem = image_id)."""
    out = {}
    for p in sorted(Path(directory).iterdir()):
        if p.is_file() and p.suffix.lower() in MAP_SUFFIXES:
            out.setdefault(p.stem, p)
    return out


def detector_dirs(maps_dir) -> dict:
    """{detector: directory}. Subdirectories holding maps are detectors;
    otherwise ``maps_dir`` itself is a single detector."""
    maps_dir = Path(maps_dir)
    if not maps_dir.is_dir():
        raise FileNotFoundError(f"maps directory not found: {maps_dir}")
    subs = {p.name: p for p in sorted(maps_dir.iterdir()) if p.is_dir() and find_maps(p)}
    if find_maps(maps_dir) or not subs:
        return {maps_dir.name: maps_dir}
    return subs
