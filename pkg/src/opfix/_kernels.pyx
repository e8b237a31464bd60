# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernel for the stochastic Banach-Picard update.

Mirrors ``_kernels_py.run_batch`` operation for operation so both backends
produce bit-identical trajectories.
"""

from libc.math cimport sqrt

import numpy as np
cimport numpy as cnp

cnp.import_array()


def run_batch(
    const double[:, ::1] M,
    const double[:, :, ::1] c_seq,
    const double[:, :, ::1] clip_lo,
    const double[:, :, ::1] clip_hi,
    bint has_clip,
    double mix,
    const double[:, :, ::1] fix_lo,
    const double[:, :, ::1] fix_hi,
    const double[::1] dom_lo,
    const double[::1] dom_hi,
    bint has_dom,
    const int[::1] block_id,
    int n,
    const unsigned char[:, :, ::1] masks,
    const double[:, :, ::1] noise,
    const double[::1] x0,
    int stride,
    double[:, :, ::1] dist,
    double[:, :, ::1] res_sq,
    long long[::1] clamps,
    double[:, :, ::1] iterates,
):
    cdef Py_ssize_t m = masks.shape[0]
    cdef Py_ssize_t L = masks.shape[1]
    cdef Py_ssize_t d = x0.shape[0]
    cdef Py_ssize_t Lc = c_seq.shape[1]
    cdef Py_ssize_t Lf = fix_lo.shape[1]
    cdef Py_ssize_t Lk = clip_lo.shape[1]
    cdef bint per_trial_c = c_seq.shape[0] > 1
    cdef bint per_trial_f = fix_lo.shape[0] > 1
    cdef bint per_trial_k = clip_lo.shape[0] > 1
    cdef Py_ssize_t t, tc, tf, tk, ell, j, r, ci, fi, ki, b
    cdef double acc, v, z
    cdef bint clamped
    cdef double[::1] x = np.empty(d)
    cdef double[::1] y = np.empty(d)
    cdef double[::1] blk = np.empty(n)

    with nogil:
        for t in range(m):
            tc = t if per_trial_c else 0
            tf = t if per_trial_f else 0
            tk = t if per_trial_k else 0
            for j in range(d):
                x[j] = x0[j]
            clamps[t] = 0
            # distance at l = 0
            for b in range(n):
                blk[b] = 0.0
            for j in range(d):
                z = x[j]
                if z < fix_lo[tf, 0, j]:
                    z = fix_lo[tf, 0, j]
                elif z > fix_hi[tf, 0, j]:
                    z = fix_hi[tf, 0, j]
                v = x[j] - z
                blk[block_id[j]] += v * v
            for b in range(n):
                dist[t, 0, b] = sqrt(blk[b])
            for j in range(d):
                iterates[t, 0, j] = x[j]

            for ell in range(L):
                ci = ell if Lc > 1 else 0
                for r in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc = acc + M[r, j] * x[j]
                    y[r] = acc + c_seq[tc, ci, r]
                if has_clip:
                    ki = ell if Lk > 1 else 0
                    for r in range(d):
                        if y[r] < clip_lo[tk, ki, r]:
                            y[r] = clip_lo[tk, ki, r]
                        elif y[r] > clip_hi[tk, ki, r]:
                            y[r] = clip_hi[tk, ki, r]
                if mix != 1.0:
                    for r in range(d):
                        y[r] = (1.0 - mix) * x[r] + mix * y[r]
                for b in range(n):
                    blk[b] = 0.0
                for j in range(d):
                    v = x[j] - y[j]
                    blk[block_id[j]] += v * v
                for b in range(n):
                    res_sq[t, ell, b] = blk[b]

                clamped = False
                for j in range(d):
                    if masks[t, ell, block_id[j]]:
                        z = y[j] + noise[t, ell, j]
                        if has_dom:
                            if z < dom_lo[j]:
                                z = dom_lo[j]
                                clamped = True
                            elif z > dom_hi[j]:
                                z = dom_hi[j]
                                clamped = True
                        x[j] = z
                if clamped:
                    clamps[t] += 1

                fi = ell + 1 if Lf > 1 else 0
                for b in range(n):
                    blk[b] = 0.0
                for j in range(d):
                    z = x[j]
                    if z < fix_lo[tf, fi, j]:
                        z = fix_lo[tf, fi, j]
                    elif z > fix_hi[tf, fi, j]:
                        z = fix_hi[tf, fi, j]
                    v = x[j] - z
                    blk[block_id[j]] += v * v
                for b in range(n):
                    dist[t, ell + 1, b] = sqrt(blk[b])
                if (ell + 1) % stride == 0:
                    for j in range(d):
                        iterates[t, (ell + 1) // stride, j] = x[j]
