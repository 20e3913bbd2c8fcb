import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from salmonkit.analysis import (
    LabHistogram,
    auto_ring_radius,
    characterize,
    chi2_contrast,
    color_entropy,
    gamma_fit,
    geometry_stats,
    lab_histogram,
    mean_color,
    neighborhood_masks,
    to_lab,
)
from salmonkit.gtgen import build_ground_truth
from salmonkit.synth import synth_dataset

from .conftest import box_mask


def bin_centre_lab(bins=8):
    """One Lab pixel at the centre of every grid cell."""
    idx = np.arange(bins) + 0.5
    L = idx * 100 / bins
    ab = -128 + idx * 256 / bins
    grid = np.stack(np.meshgrid(L, ab, ab, indexing="ij"), axis=-1)
    return grid.reshape(-1, 3)


class TestEntropy:
    def test_single_colour_is_zero(self):
        lab = np.tile([50.0, 10.0, -10.0], (6, 6, 1))
        assert color_entropy(lab, np.ones((6, 6), bool)) == 0.0

    def test_every_bin_once_is_nine_bits(self):
        lab = bin_centre_lab().reshape(16, 32, 3)
        assert color_entropy(lab, np.ones((16, 32), bool)) == pytest.approx(9.0, abs=1e-12)

    def test_two_equal_colours_is_one_bit(self):
        lab = np.zeros((2, 4, 3))
        lab[0] = [20, 0, 0]
        lab[1] = [80, 0, 0]
        assert color_entropy(lab, np.ones((2, 4), bool)) == pytest.approx(1.0)

    def test_matches_python_rehistogram(self, rng):
        lab = np.stack([rng.uniform(0, 100, (20, 20)), rng.uniform(-128, 128, (20, 20)),
                        rng.uniform(-128, 128, (20, 20))], axis=-1)
        mask = rng.random((20, 20)) < 0.6
        counts = {}
        for L, a, b in lab[mask]:
            key = (min(int(L / 12.5), 7), min(int((a + 128) / 32), 7), min(int((b + 128) / 32), 7))
            counts[key] = counts.get(key, 0) + 1
        n = mask.sum()
        want = -sum(c / n * math.log2(c / n) for c in counts.values())
        assert color_entropy(lab, mask) == pytest.approx(want, abs=1e-12)

    def test_out_of_range_goes_to_edge_bins(self):
        h = lab_histogram(np.array([[120.0, 200.0, -300.0]]))
        assert h.bins[7, 7, 0] == 1

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            color_entropy(np.zeros((3, 3, 3)), np.zeros((3, 3), bool))


def test_to_lab_reference_colours():
    lab = to_lab(np.array([[[255, 255, 255], [0, 0, 0]]], np.uint8))
    assert lab[0, 0] == pytest.approx([100, 0, 0], abs=1e-2)
    assert lab[0, 1] == pytest.approx([0, 0, 0], abs=1e-6)


def test_mean_colour():
    lab = np.zeros((4, 4, 3))
    lab[:2] = [10, 20, 30]
    lab[2:] = [30, 40, 50]
    assert mean_color(lab, np.ones((4, 4), bool)) == pytest.approx((20, 30, 40))
    assert mean_color(lab, box_mask((4, 4), 0, 0, 4, 2)) == pytest.approx((10, 20, 30))


class TestGeometry:
    def test_centred_object_has_zero_distance(self):
        g = geometry_stats(box_mask((10, 10), 3, 3, 7, 7), (10, 10), (4, 4, 16))
        assert g.norm_center_dist == 0
        assert (g.width_norm, g.height_norm, g.area_norm, g.aspect_ratio) == (1, 1, 1, 1)

    def test_corner_pixel(self):
        g = geometry_stats(box_mask((10, 20), 0, 0, 1, 1), (10, 20), (5, 5, 25))
        assert g.norm_center_dist == pytest.approx(math.hypot(9.5, 4.5) / math.hypot(20, 10))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_matches_scan(self, seed):
        r = np.random.default_rng(seed)
        h, w = int(r.integers(3, 15)), int(r.integers(3, 15))
        m = r.random((h, w)) < 0.3
        if not m.any():
            return
        xs, ys, n = 0.0, 0.0, 0
        x_lo, x_hi, y_lo, y_hi = w, -1, h, -1
        for y in range(h):
            for x in range(w):
                if m[y, x]:
                    xs += x + 0.5
                    ys += y + 0.5
                    n += 1
                    x_lo, x_hi, y_lo, y_hi = min(x_lo, x), max(x_hi, x), min(y_lo, y), max(y_hi, y)
        bw, bh = x_hi - x_lo + 1, y_hi - y_lo + 1
        g = geometry_stats(m, (h, w), (w, h, h * w))
        assert g.norm_center_dist == pytest.approx(math.hypot(xs / n - w / 2, ys / n - h / 2) / math.hypot(w, h))
        assert (g.width, g.height, g.area) == (bw, bh, n)
        assert g.aspect_ratio == pytest.approx(bw / bh)
        assert g.area_norm == pytest.approx(n / (h * w))


class TestNeighbourhood:
    def test_ring_width(self):
        m = box_mask((40, 40), 15, 15, 25, 25)
        nb = neighborhood_masks(m, ring_radius=5)
        ys, xs = np.nonzero(nb.local)
        assert xs.min() == 10 and xs.max() == 29 and ys.min() == 10 and ys.max() == 29
        assert not np.any(nb.local & m)
        assert np.array_equal(nb.global_, ~m)

    def test_ring_matches_distance_oracle(self, rng):
        m = rng.random((20, 20)) < 0.05
        m[10, 10] = True
        other = box_mask((20, 20), 0, 0, 4, 4) & ~m
        nb = neighborhood_masks(m, [other], ring_radius=3.0)
        pts = np.argwhere(m)
        for y in range(20):
            for x in range(20):
                near = np.min(np.hypot(pts[:, 0] - y, pts[:, 1] - x)) <= 3.0
                assert nb.local[y, x] == (near and not m[y, x] and not other[y, x])

    def test_other_objects_in_global(self):
        m = box_mask((20, 20), 0, 0, 5, 5)
        o = box_mask((20, 20), 10, 10, 15, 15)
        assert not np.any(neighborhood_masks(m, [o]).global_ & o)
        assert np.all(neighborhood_masks(m, [o], exclude_others_globally=False).global_[o])

    def test_full_frame_object_has_empty_neighbourhood(self):
        nb = neighborhood_masks(np.ones((8, 8), bool))
        assert not nb.local.any() and not nb.global_.any()

    def test_auto_radius(self):
        assert auto_ring_radius(100) == 5
        assert auto_ring_radius(250000) == 50


def hist_of(values, bins=8):
    counts = np.zeros((bins,) * 3, np.int64)
    for k, v in enumerate(values):
        counts.flat[k] = v
    return LabHistogram(counts, int(sum(values)))


class TestChi2:
    def test_identical_is_zero(self):
        h = hist_of([3, 1, 4])
        assert chi2_contrast(h, h) == 0

    def test_disjoint_is_one(self):
        assert chi2_contrast(hist_of([5, 0]), hist_of([0, 7])) == pytest.approx(1.0)

    @given(st.lists(st.integers(0, 20), min_size=4, max_size=4), st.lists(st.integers(0, 20), min_size=4, max_size=4))
    def test_symmetric_bounded_and_matches_formula(self, a, b):
        if not sum(a) or not sum(b):
            return
        h1, h2 = hist_of(a), hist_of(b)
        d = chi2_contrast(h1, h2)
        p = [x / sum(a) for x in a]
        q = [x / sum(b) for x in b]
        want = 0.5 * sum((x - y) ** 2 / (x + y) for x, y in zip(p, q) if x + y > 0)
        assert d == pytest.approx(want, abs=1e-9)
        assert d == chi2_contrast(h2, h1)
        assert 0 <= d <= 1 + 1e-12


class TestGammaFit:
    def test_identity(self):
        x = np.linspace(0.1, 1, 10)
        g, r2 = gamma_fit(x, x)
        assert g == pytest.approx(1.0, abs=1e-4) and r2 == pytest.approx(1.0)

    def test_square(self):
        x = np.linspace(0.1, 1, 10)
        g, _ = gamma_fit(x, x ** 2)
        assert g == pytest.approx(2.0, abs=1e-4)

    def test_matches_stationary_point(self, rng):
        x = rng.uniform(0.05, 1, 30)
        y = np.clip(x ** 1.7 + rng.normal(0, 0.05, 30), 0, 1)
        g, r2 = gamma_fit(x, y)

        def dsse(gg):
            return float(np.sum(-2 * (y - x ** gg) * x ** gg * np.log(x)))

        want = brentq(dsse, 0.1, 10)
        assert g == pytest.approx(want, abs=1e-4)
        assert r2 == pytest.approx(1 - np.sum((y - x ** want) ** 2) / np.sum((y - y.mean()) ** 2), abs=1e-6)

    def test_constant_y_has_undefined_r2(self):
        _, r2 = gamma_fit([0.2, 0.5, 0.9], [0.4, 0.4, 0.4])
        assert math.isnan(r2)

    def test_errors(self):
        with pytest.raises(ValueError):
            gamma_fit([0.1, 0.2], [0.1, 0.2])
        with pytest.raises(ValueError):
            gamma_fit([0.5] * 4, [0.1, 0.2, 0.3, 0.4])


@pytest.fixture(scope="module")
def written(tmp_path_factory):
    out = tmp_path_factory.mktemp("char")
    ds, _, _ = synth_dataset(5, 12, size=160, out_dir=out, detectors=())
    return ds, build_ground_truth(ds, sigma=4.0)


class TestCharacterize:
    def test_one_record_per_object(self, written):
        ds, gts = written
        rep = characterize(ds, gts)
        assert len(rep.objects) == len(ds.masks)
        assert sum(rep.objects_per_image.values()) == len(ds.masks)
        for rec in rep.objects:
            assert rec.entropy >= 0
            assert 0 <= rec.global_contrast <= 1
            assert rec.s_et is not None

    def test_threaded_matches_sequential(self, written):
        ds, gts = written
        assert characterize(ds, gts).to_dict() == characterize(ds, gts, workers=3).to_dict()

    def test_click_and_rect_agree_more_than_gaze(self, written):
        ds, gts = written
        fits = characterize(ds, gts).gamma_fits
        assert fits["pc_rd"]["r_squared"] > fits["et_rd"]["r_squared"]

    def test_no_ground_truth_gives_null_fits(self, written):
        ds, _ = written
        fits = characterize(ds).gamma_fits
        assert all(v["g"] is None and v["n"] == 0 for v in fits.values())

    def test_unreadable_image_is_noted(self, written, tmp_path):
        from salmonkit.data import Dataset, ImageRecord
        ds, _ = written
        im = ds.images[0]
        bad = ImageRecord(im.image_id, im.width, im.height, tmp_path / "missing.png")
        rep = characterize(Dataset([bad], ds.masks_for(im.image_id), []))
        assert rep.objects == [] and "unreadable" in rep.notes[0]
