"""Pure numpy fallback for the batch update kernel.

Vectorised over trials; the arithmetic follows the compiled kernel in the
same order (sequential dot products, per-block sums in coordinate order) so
the two backends agree bit for bit.
"""

import numpy as np


def _block_sq(v, block_id, n):
    out = np.zeros((v.shape[0], n))
    for j, b in enumerate(block_id):
        out[:, b] += v[:, j] * v[:, j]
    return out


def run_batch(
    M,
    c_seq,
    clip_lo,
    clip_hi,
    has_clip,
    mix,
    fix_lo,
    fix_hi,
    dom_lo,
    dom_hi,
    has_dom,
    block_id,
    n,
    masks,
    noise,
    x0,
    stride,
    dist,
    res_sq,
    clamps,
    iterates,
):
    m, L, _ = masks.shape
    d = x0.shape[0]
    Lc = c_seq.shape[1]
    Lf = fix_lo.shape[1]
    Lk = clip_lo.shape[1]
    block_id = np.asarray(block_id)
    x = np.repeat(x0[None, :], m, axis=0)
    clamps[:] = 0

    v = x - np.clip(x, fix_lo[:, 0], fix_hi[:, 0])
    dist[:, 0, :] = np.sqrt(_block_sq(v, block_id, n))
    iterates[:, 0, :] = x

    cols = [M[:, j][None, :] for j in range(d)]
    for ell in range(L):
        ci = ell if Lc > 1 else 0
        acc = np.zeros((m, d))
        for j in range(d):
            acc = acc + cols[j] * x[:, j : j + 1]
        y = acc + c_seq[:, ci]
        if has_clip:
            ki = ell if Lk > 1 else 0
            y = np.clip(y, clip_lo[:, ki], clip_hi[:, ki])
        if mix != 1.0:
            y = (1.0 - mix) * x + mix * y
        res_sq[:, ell, :] = _block_sq(x - y, block_id, n)

        upd = masks[:, ell, :][:, block_id].astype(bool)
        z = y + noise[:, ell, :]
        if has_dom:
            zc = np.clip(z, dom_lo, dom_hi)
            hit = np.any((zc != z) & upd, axis=1)
            clamps += hit
            z = zc
        x = np.where(upd, z, x)

        fi = ell + 1 if Lf > 1 else 0
        v = x - np.clip(x, fix_lo[:, fi], fix_hi[:, fi])
        dist[:, ell + 1, :] = np.sqrt(_block_sq(v, block_id, n))
        if (ell + 1) % stride == 0:
            iterates[:, (ell + 1) // stride, :] = x
