import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from salmonkit import _kernels
from salmonkit.gtgen import gaussian_kernel

needs_numba = pytest.mark.skipif("numba" not in _kernels.IMPLEMENTATIONS, reason="numba unavailable")


def both(name, *args):
    return (_kernels.IMPLEMENTATIONS["numpy"][name](*args),
            _kernels.IMPLEMENTATIONS["numba"][name](*args))


@needs_numba
class TestBackendsAgree:
    @given(st.integers(0, 2 ** 32 - 1))
    def test_splat(self, seed):
        r = np.random.default_rng(seed)
        h, w, n = int(r.integers(1, 40)), int(r.integers(1, 40)), int(r.integers(0, 20))
        k = gaussian_kernel(float(r.uniform(0.5, 4)))
        args = (h, w, r.integers(0, w, n), r.integers(0, h, n), r.integers(1, 4, n).astype(float), k)
        a, b = both("splat_gaussian", *args)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_tau_counts(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 30))
        x = np.round(r.random(n), 1)
        y = np.round(r.random(n), 1)
        a, b = both("tau_counts", x, y, 1e-9)
        assert tuple(map(int, a)) == tuple(map(int, b))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_tau_combined(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 30))
        x = np.round(r.random(n), 1)
        ys = np.round(r.random((3, n)), 1)
        a, b = both("tau_combined_counts", x, ys, 1e-9)
        assert tuple(map(int, a)) == tuple(map(int, b))

    @given(st.integers(0, 2 ** 32 - 1))
    def test_label_histograms(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(0, 500))
        bins = r.integers(-2, 20, n)
        labels = r.integers(-1, 5, n)
        a, b = both("label_histograms", bins, labels, 18, 4)
        assert np.array_equal(a, b)
        keep = (bins >= 0) & (bins < 18) & (labels >= 0) & (labels < 4)
        assert a.sum() == keep.sum()


def test_label_histogram_counts_match_loop():
    bins = np.array([0, 1, 1, 2, 2, 2])
    labels = np.array([0, 0, 1, 1, 1, 0])
    h = _kernels.label_histograms(bins, labels, 3, 2)
    assert h.tolist() == [[1, 1, 1], [0, 1, 2]]


def test_label_histogram_size_mismatch():
    with pytest.raises(ValueError):
        _kernels.label_histograms([1, 2], [1], 3, 2)


@pytest.mark.parametrize("flag,expected", [("0", "numpy"), ("off", "numpy"), ("1", None)])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, SALMONKIT_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from salmonkit import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    if expected is None:
        expected = "numba" if "numba" in _kernels.IMPLEMENTATIONS else "numpy"
    assert out == expected
