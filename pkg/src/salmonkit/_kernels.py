"""Hot inner loops.

Every kernel exists twice: a vectorised numpy version and a loop version
compiled with numba. The numba path is used when numba imports and the
``SALMONKIT_NUMBA`` environment variable is not set to a false value
(``0``, ``false``, ``no``, ``off``). Both paths return identical integer
counts; float kernels agree to rounding.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_allows_numba():
    flag = os.environ.get("SALMONKIT_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = numba is not None and _env_allows_numba()
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations


def splat_gaussian_numpy(height, width, xs, ys, weights, kernel):
    """Sum of separable kernels centred at (xs, ys), weighted, zero outside."""
    out = np.zeros((height, width), dtype=np.float64)
    r = (len(kernel) - 1) // 2
    for x, y, w in zip(xs, ys, weights):
        x0, x1 = max(x - r, 0), min(x + r + 1, width)
        y0, y1 = max(y - r, 0), min(y + r + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        ky = kernel[y0 - y + r:y1 - y + r]
        kx = kernel[x0 - x + r:x1 - x + r]
        out[y0:y1, x0:x1] += w * np.outer(ky, kx)
    return out


def tau_counts_numpy(r, rho, eps):
    """(concordant, discordant, tied in r only, tied in rho only) over i < j."""
    n = len(r)
    c = d = tr = trho = 0
    for i in range(n - 1):
        dr = r[i + 1:] - r[i]
        dq = rho[i + 1:] - rho[i]
        sr = np.where(dr > eps, 1, np.where(dr < -eps, -1, 0))
        sq = np.where(dq > eps, 1, np.where(dq < -eps, -1, 0))
        prod = sr * sq
        c += int(np.count_nonzero(prod > 0))
        d += int(np.count_nonzero(prod < 0))
        tr += int(np.count_nonzero((sr == 0) & (sq != 0)))
        trho += int(np.count_nonzero((sq == 0) & (sr != 0)))
    return c, d, tr, trho


def tau_combined_counts_numpy(r, rhos, eps):
    """Pair counts (C, D, T_R, T_rho) of the any-modality tau over i < j.

    ``rhos`` has shape (m, n): one row of reference saliencies per modality.
    """
    n = len(r)
    c = d = t_r = t_rho = 0
    for i in range(n - 1):
        dr = r[i + 1:] - r[i]
        e_gt = dr < -eps  # S^i > S^j
        e_lt = dr > eps
        e_eq = ~(e_gt | e_lt)
        dq = rhos[:, i + 1:] - rhos[:, i:i + 1]
        any_gt = np.any(dq < -eps, axis=0)
        any_lt = np.any(dq > eps, axis=0)
        c += int(np.count_nonzero((any_gt & e_gt) | (any_lt & e_lt)))
        d += int(np.count_nonzero((any_lt & ~any_gt & e_gt) | (any_gt & ~any_lt & e_lt)))
        t_rho += int(np.count_nonzero(~any_gt & ~any_lt & ~e_eq))
        t_r += int(np.count_nonzero((any_gt | any_lt) & e_eq))
    return c, d, t_r, t_rho


def label_histograms_numpy(bins, labels, nbins, nlabels):
    """Counts[label, bin] over pixels; out-of-range bins or labels are skipped."""
    keep = (bins >= 0) & (bins < nbins) & (labels >= 0) & (labels < nlabels)
    flat = labels[keep] * nbins + bins[keep]
    return np.bincount(flat, minlength=nlabels * nbins).reshape(nlabels, nbins).astype(np.int64)


# ---------------------------------------------------------------------------
# numba implementations


def _splat_gaussian_loops(height, width, xs, ys, weights, kernel):
    out = np.zeros((height, width), dtype=np.float64)
    r = (kernel.shape[0] - 1) // 2
    for p in range(xs.shape[0]):
        x = xs[p]
        y = ys[p]
        w = weights[p]
        x0 = max(x - r, 0)
        x1 = min(x + r + 1, width)
        y0 = max(y - r, 0)
        y1 = min(y + r + 1, height)
        for yy in range(y0, y1):
            wy = w * kernel[yy - y + r]
            for xx in range(x0, x1):
                out[yy, xx] += wy * kernel[xx - x + r]
    return out


def _tau_counts_loops(r, rho, eps):
    n = r.shape[0]
    c = 0
    d = 0
    tr = 0
    trho = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            dr = r[j] - r[i]
            dq = rho[j] - rho[i]
            sr = 1 if dr > eps else (-1 if dr < -eps else 0)
            sq = 1 if dq > eps else (-1 if dq < -eps else 0)
            if sr == 0:
                if sq != 0:
                    tr += 1
            elif sq == 0:
                trho += 1
            elif sr == sq:
                c += 1
            else:
                d += 1
    return c, d, tr, trho


def _tau_combined_counts_loops(r, rhos, eps):
    m = rhos.shape[0]
    n = r.shape[0]
    c = 0
    d = 0
    t_r = 0
    t_rho = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            any_gt = False
            any_lt = False
            for g in range(m):
                dq = rhos[g, j] - rhos[g, i]
                if dq < -eps:
                    any_gt = True
                elif dq > eps:
                    any_lt = True
            dr = r[j] - r[i]
            if dr < -eps:
                if any_gt:
                    c += 1
                elif any_lt:
                    d += 1
                else:
                    t_rho += 1
            elif dr > eps:
                if any_lt:
                    c += 1
                elif any_gt:
                    d += 1
                else:
                    t_rho += 1
            elif any_gt or any_lt:
                t_r += 1
    return c, d, t_r, t_rho


def _label_histograms_loops(bins, labels, nbins, nlabels):
    out = np.zeros((nlabels, nbins), dtype=np.int64)
    for k in range(bins.shape[0]):
        b = bins[k]
        lab = labels[k]
        if b < 0 or b >= nbins or lab < 0 or lab >= nlabels:
            continue
        out[lab, b] += 1
    return out


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    splat_gaussian_numba = _jit(_splat_gaussian_loops)
    tau_counts_numba = _jit(_tau_counts_loops)
    tau_combined_counts_numba = _jit(_tau_combined_counts_loops)
    label_histograms_numba = _jit(_label_histograms_loops)
else:  # pragma: no cover
    splat_gaussian_numba = tau_counts_numba = None
    tau_combined_counts_numba = label_histograms_numba = None


IMPLEMENTATIONS = {
    "numpy": {
        "splat_gaussian": splat_gaussian_numpy,
        "tau_counts": tau_counts_numpy,
        "tau_combined_counts": tau_combined_counts_numpy,
        "label_histograms": label_histograms_numpy,
    },
}
if numba is not None:
    IMPLEMENTATIONS["numba"] = {
        "splat_gaussian": splat_gaussian_numba,
        "tau_counts": tau_counts_numba,
        "tau_combined_counts": tau_combined_counts_numba,
        "label_histograms": label_histograms_numba,
    }


def splat_gaussian(height, width, xs, ys, weights, kernel):
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    ys = np.ascontiguousarray(ys, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    fn = IMPLEMENTATIONS[BACKEND]["splat_gaussian"]
    return fn(int(height), int(width), xs, ys, weights, kernel)


def tau_counts(r, rho, eps):
    r = np.ascontiguousarray(r, dtype=np.float64)
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    c, d, tr, trho = IMPLEMENTATIONS[BACKEND]["tau_counts"](r, rho, float(eps))
    return int(c), int(d), int(tr), int(trho)


def tau_combined_counts(r, rhos, eps):
    r = np.ascontiguousarray(r, dtype=np.float64)
    rhos = np.ascontiguousarray(np.atleast_2d(rhos), dtype=np.float64)
    c, d, t_r, t_rho = IMPLEMENTATIONS[BACKEND]["tau_combined_counts"](r, rhos, float(eps))
    return int(c), int(d), int(t_r), int(t_rho)


def label_histograms(bins, labels, nbins, nlabels):
    bins = np.ascontiguousarray(bins, dtype=np.int64).ravel()
    labels = np.ascontiguousarray(labels, dtype=np.int64).ravel()
    if bins.shape != labels.shape:
        raise ValueError("bins and labels differ in size")
    return IMPLEMENTATIONS[BACKEND]["label_histograms"](bins, labels, int(nbins), int(nlabels))
