import json
import shutil
import subprocess
import sys

import pytest

from salmonkit import __version__
from salmonkit.cli import run
from salmonkit.io import read_csv_rows


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> gt-build -> evaluate -> characterize -> report on 5 small scenes."""
    root = tmp_path_factory.mktemp("cli")
    data, gt = root / "data", root / "gt"
    assert run(["synth", "--seed", "3", "--scenes", "5", "--size", "128", "--out", str(data), "-q"]) == 0
    assert run(["gt-build", "--manifest", str(data / "manifest.json"), "--sigma", "3", "--out", str(gt), "-q"]) == 0
    assert run(["evaluate", "--manifest", str(data / "manifest.json"), "--gt-dir", str(gt),
                "--maps-dir", str(data / "detectors"), "--out", str(root / "metrics.json"),
                "--csv", str(root / "objects.csv"), "-q"]) == 0
    assert run(["characterize", "--manifest", str(data / "manifest.json"), "--gt-dir", str(gt),
                "--out", str(root / "char.json"), "-q"]) == 0
    assert run(["report", "--inputs", str(root / "metrics.json"), str(root / "char.json"),
                "--out", str(root / "figs"), "--svg", "-q"]) == 0
    return root


def test_synth_layout(pipeline):
    data = pipeline / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["toolkit"] == "salmonkit" and manifest["version"] == __version__
    assert len(manifest["images"]) == 5
    for det in ("truth", "noisy", "center"):
        assert len(list((data / "detectors" / det).glob("*.png"))) == 5


def test_gt_build_outputs(pipeline):
    gt = pipeline / "gt"
    for g in ("et", "pc", "rd"):
        assert len(list((gt / g).glob("*.png"))) == 5
    side = json.loads((gt / "scene0000.json").read_text())
    assert "config_hash" in side
    assert json.loads((gt / "gt_build.json").read_text())["sigma"] == 3.0


def test_evaluate_report(pipeline):
    rep = json.loads((pipeline / "metrics.json").read_text())
    names = [d["detector"] for d in rep["detectors"]]
    assert names == ["center", "noisy", "truth"]
    by = {d["detector"]: d for d in rep["detectors"]}
    for d in by.values():
        for metric in ("mae", "auprc", "tau"):
            assert set(d["summary"][metric]) == {"et", "pc", "rd", "combined"}
    assert by["truth"]["summary"]["mae"]["combined"] < by["center"]["summary"]["mae"]["combined"]
    rows = read_csv_rows(pipeline / "objects.csv")
    assert rows[0][:3] == ["detector", "image_id", "object_id"]
    assert len(rows) - 1 == 3 * sum(1 for _ in by["truth"]["per_object"])


def test_characterize_report(pipeline):
    rep = json.loads((pipeline / "char.json").read_text())
    assert rep["n_objects"] == len(rep["objects"]) > 0
    assert set(rep["gamma_fits"]) == {"et_pc", "et_rd", "pc_rd"}


def test_report_files(pipeline):
    figs = pipeline / "figs"
    rows = read_csv_rows(figs / "metrics" / "auprc.csv")
    assert rows[0] == ["detector", "et", "pc", "rd", "combined", "binary"]
    assert len(rows) == 4
    assert (figs / "metrics" / "tau.svg").read_text().startswith("<svg")
    assert (figs / "char" / "hist_area.csv").exists()
    first = (figs / "char" / "gamma_fits.csv").read_text().splitlines()[0]
    assert first.startswith("# salmonkit ") and "config_hash=" in first


def test_rerun_is_bit_identical(pipeline, tmp_path):
    data = pipeline / "data"
    gt2 = tmp_path / "gt"
    shutil.copytree(pipeline / "gt", gt2)
    assert run(["gt-build", "--manifest", str(data / "manifest.json"), "--sigma", "3",
                "--out", str(pipeline / "gt"), "-q"]) == 0
    for p in gt2.rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (pipeline / "gt" / p.relative_to(gt2)).read_bytes(), p
    before = (pipeline / "metrics.json").read_bytes()
    assert run(["evaluate", "--manifest", str(data / "manifest.json"), "--gt-dir", str(pipeline / "gt"),
                "--maps-dir", str(data / "detectors"), "--out", str(pipeline / "metrics.json"),
                "--csv", str(pipeline / "objects.csv"), "-q"]) == 0
    assert (pipeline / "metrics.json").read_bytes() == before


def test_empty_characterization_writes_header_only(tmp_path):
    rep = tmp_path / "empty.json"
    rep.write_text(json.dumps({"objects": [], "objects_per_image": {}, "gamma_fits": {}}))
    assert run(["report", "--inputs", str(rep), "--out", str(tmp_path / "o"), "-q"]) == 0
    rows = read_csv_rows(tmp_path / "o" / "hist_area.csv")
    assert rows == [["bin_lo", "bin_hi", "count"]]


def test_unknown_flag_is_usage_error(capsys):
    assert run(["evaluate", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_command_is_usage_error():
    assert run([]) == 1


def test_bad_detector_name(tmp_path):
    assert run(["synth", "--scenes", "1", "--detectors", "oracle", "--out", str(tmp_path), "-q"]) == 1


def test_zero_workers_rejected(tmp_path):
    assert run(["synth", "--scenes", "1", "--workers", "0", "--out", str(tmp_path)]) == 1


def test_missing_gt_dir_names_path(pipeline, tmp_path, capsys):
    missing = tmp_path / "no_such_gt"
    code = run(["evaluate", "--manifest", str(pipeline / "data" / "manifest.json"), "--gt-dir", str(missing),
                "--maps-dir", str(pipeline / "data" / "detectors"), "--out", str(tmp_path / "m.json")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_manifest_is_data_error(tmp_path):
    assert run(["gt-build", "--manifest", str(tmp_path / "x.json"), "--out", str(tmp_path / "g")]) == 2


def test_report_rejects_foreign_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    assert run(["report", "--inputs", str(p), "--out", str(tmp_path / "o")]) == 2


def test_console_script_version():
    exe = shutil.which("salmon-kit")
    cmd = [exe] if exe else [sys.executable, "-m", "salmonkit.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
