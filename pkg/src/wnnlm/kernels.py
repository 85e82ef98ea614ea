"""Kernel backend selection.

The compiled extension is used when importable; set ``WNNLM_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

import numpy as np
import scipy.sparse as sp

from . import _kernels_py

try:
    if os.environ.get("WNNLM_PURE_PYTHON"):
        raise ImportError("pure python requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

backend = "compiled" if _compiled is not None else "python"


class OperatorPattern:
    """Nonzeros of a sparse operator acting on ``vec`` of an ``m x n`` matrix."""

    def __init__(self, A, m: int, n: int):
        coo = sp.coo_matrix(A)
        if coo.shape[1] != m * n:
            raise ValueError(f"operator has {coo.shape[1]} columns, expected {m * n}")
        order = np.lexsort((coo.col, coo.row))
        self.rows = np.ascontiguousarray(coo.row[order], dtype=np.int64)
        col = coo.col[order].astype(np.int64)
        self.kidx = np.ascontiguousarray(col % m)
        self.jidx = np.ascontiguousarray(col // m)
        self.vals = np.ascontiguousarray(coo.data[order], dtype=float)
        self.nrows = coo.shape[0]
        self.m, self.n = m, n


def bilinear_jacobian(pattern: OperatorPattern, B, C, which: str | None = None):
    """Residual ``A vec(B C^T)`` and sparse blocks ``A (C kron I)``, ``A (I kron B)``."""
    mod = BACKENDS[which or backend]
    B = np.ascontiguousarray(B, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    p = B.shape[1]
    r, jr, cb, vb, cc, vc = mod.bilinear_jacobian(
        pattern.rows, pattern.kidx, pattern.jidx, pattern.vals, B, C, pattern.nrows)
    JB = sp.csr_matrix((vb, (jr, cb)), shape=(pattern.nrows, pattern.m * p))
    JC = sp.csr_matrix((vc, (jr, cc)), shape=(pattern.nrows, pattern.n * p))
    return r, JB, JC
