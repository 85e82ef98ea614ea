"""Numpy implementation of the kernels in ``_kernels.pyx``."""

import numpy as np


def bilinear_jacobian(rows, kidx, jidx, vals, B, C, nrows):
    """Residual ``A vec(B C^T)`` and Jacobian triplets w.r.t. ``vec(B)``, ``vec(C^T)``.

    ``A`` is given by its nonzeros ``vals`` at ``(rows, k + m * j)``.
    """
    m, p = B.shape
    Bk = B[kidx]
    Cj = C[jidx]
    dot = np.zeros(vals.size)
    for l in range(p):
        dot += Bk[:, l] * Cj[:, l]
    r = np.bincount(rows, weights=vals * dot, minlength=nrows).astype(float)
    lcol = np.arange(p)
    out_rows = np.repeat(rows, p)
    cb = (kidx[:, None] + m * lcol).ravel()
    vb = (vals[:, None] * Cj).ravel()
    cc = (lcol + p * jidx[:, None]).ravel()
    vc = (vals[:, None] * Bk).ravel()
    return r, out_rows, cb, vb, cc, vc
