"""Vectorized Siddon traversal in numpy.

Same contract as the compiled ``_siddon.trace_rays``. Instead of stepping
voxel by voxel, every plane crossing of a batch of rays is computed at once,
sorted, and the segment between consecutive crossings is attributed to the
voxel containing its midpoint.
"""

from __future__ import annotations

import numpy as np

BATCH = 2048


def trace_rays(labels, nlabels, starts, dirs, tmax, out):
    labels = np.asarray(labels)
    nz, ny, nx = labels.shape
    dims = np.array([nx, ny, nz], dtype=np.float64)
    flat = labels.ravel()
    strides = np.array([1, nx, nx * ny], dtype=np.int64)
    for lo in range(0, starts.shape[0], BATCH):
        hi = min(lo + BATCH, starts.shape[0])
        out[lo:hi] += _trace_batch(flat, nlabels, dims, strides, starts[lo:hi], dirs[lo:hi], tmax[lo:hi])


def _trace_batch(flat, nlabels, dims, strides, p, d, tmax):
    n = p.shape[0]
    t0 = np.zeros(n)
    t1 = np.asarray(tmax, dtype=np.float64).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = -p / d
        tb = (dims - p) / d
    parallel = d == 0.0
    outside = parallel & ((p < 0.0) | (p > dims))
    near = np.where(parallel, -np.inf, np.minimum(ta, tb))
    far = np.where(parallel, np.inf, np.maximum(ta, tb))
    t0 = np.maximum(t0, near.max(axis=1))
    t1 = np.minimum(t1, far.min(axis=1))
    hit = (t1 > t0) & ~outside.any(axis=1)
    result = np.zeros((n, nlabels))
    if not hit.any():
        return result

    p, d, t0, t1 = p[hit], d[hit], t0[hit], t1[hit]
    crossings = [t0[:, None], t1[:, None]]
    with np.errstate(divide="ignore", invalid="ignore"):
        for a in range(3):
            planes = np.arange(int(dims[a]) + 1, dtype=np.float64)
            ts = (planes[None, :] - p[:, a : a + 1]) / d[:, a : a + 1]
            ts[~np.isfinite(ts)] = np.inf
            crossings.append(ts)
    ts = np.concatenate(crossings, axis=1)
    ts = np.clip(ts, t0[:, None], t1[:, None])
    ts.sort(axis=1)
    seg = np.diff(ts, axis=1)
    mid = 0.5 * (ts[:, 1:] + ts[:, :-1])

    idx = np.floor(p[:, None, :] + mid[:, :, None] * d[:, None, :]).astype(np.int64)
    np.clip(idx, 0, (dims - 1).astype(np.int64), out=idx)
    lab = flat[idx @ strides].astype(np.int64)

    keep = (seg > 0.0) & (lab < nlabels)
    rows = np.broadcast_to(np.arange(p.shape[0])[:, None], seg.shape)
    sums = np.bincount(
        (rows[keep] * nlabels + lab[keep]), weights=seg[keep], minlength=p.shape[0] * nlabels
    ).reshape(p.shape[0], nlabels)
    result[hit] = sums
    return result
