# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Incremental Siddon traversal: exact per-label path lengths for a batch of rays."""

from libc.math cimport floor, INFINITY

import numpy as np


cdef inline void _trace_one(
    const unsigned char[:, :, ::1] labels,
    int nlabels,
    double px, double py, double pz,
    double dx, double dy, double dz,
    double tmax,
    double[:, ::1] out,
    Py_ssize_t row,
) noexcept nogil:
    # coordinates are in voxel-index units; voxel i spans [i, i+1)
    cdef int n[3]
    cdef double p[3]
    cdef double d[3]
    cdef int idx[3]
    cdef int step[3]
    cdef double tnext[3]
    cdef double t0 = 0.0
    cdef double t1 = tmax
    cdef double ta, tb, q, tn, seg, t
    cdef int a, k
    cdef unsigned char lab

    n[0] = labels.shape[2]
    n[1] = labels.shape[1]
    n[2] = labels.shape[0]
    p[0] = px
    p[1] = py
    p[2] = pz
    d[0] = dx
    d[1] = dy
    d[2] = dz

    for a in range(3):
        if d[a] == 0.0:
            if p[a] < 0.0 or p[a] > n[a]:
                return
        else:
            ta = (0.0 - p[a]) / d[a]
            tb = (n[a] - p[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if t1 <= t0:
        return

    for a in range(3):
        q = p[a] + t0 * d[a]
        k = <int>floor(q)
        if k < 0:
            k = 0
        elif k > n[a] - 1:
            k = n[a] - 1
        idx[a] = k
        if d[a] > 0.0:
            step[a] = 1
            tnext[a] = (k + 1 - p[a]) / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            tnext[a] = (k - p[a]) / d[a]
        else:
            step[a] = 0
            tnext[a] = INFINITY

    t = t0
    while True:
        a = 0
        if tnext[1] < tnext[a]:
            a = 1
        if tnext[2] < tnext[a]:
            a = 2
        tn = tnext[a]
        if tn > t1:
            tn = t1
        seg = tn - t
        if seg > 0.0:
            lab = labels[idx[2], idx[1], idx[0]]
            if lab < nlabels:
                out[row, lab] += seg
            t = tn
        if t >= t1:
            break
        idx[a] += step[a]
        if idx[a] < 0 or idx[a] >= n[a]:
            break
        if step[a] > 0:
            tnext[a] = (idx[a] + 1 - p[a]) / d[a]
        else:
            tnext[a] = (idx[a] - p[a]) / d[a]


def trace_rays(
    const unsigned char[:, :, ::1] labels,
    int nlabels,
    const double[:, ::1] starts,
    const double[:, ::1] dirs,
    const double[::1] tmax,
    double[:, ::1] out,
):
    """Accumulate path length per label into ``out`` (rays x nlabels).

    ``starts`` and ``dirs`` are expressed in voxel-index coordinates, with the
    ray parameter measured in world millimetres (dirs already divided by the
    voxel spacing). Rays are segments ``t in [0, tmax]``.
    """
    cdef Py_ssize_t r, nr = starts.shape[0]
    with nogil:
        for r in range(nr):
            _trace_one(labels, nlabels,
                       starts[r, 0], starts[r, 1], starts[r, 2],
                       dirs[r, 0], dirs[r, 1], dirs[r, 2],
                       tmax[r], out, r)
