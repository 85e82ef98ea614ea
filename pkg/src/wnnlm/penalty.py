"""Singular-value penalties and their bilinear surrogate.

The weighted nuclear norm ``sum_i a_i sigma_i(X)`` with non-decreasing
weights ``a`` equals the minimum of ``sum_i a_i (|B_i|^2 + |C_i|^2) / 2``
over all factorizations ``X = B C^T``. The minimum is attained at the
balanced factorization ``B = U sqrt(S)``, ``C = V sqrt(S)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

#: relative threshold used everywhere a numerical rank is needed
RANK_RTOL = 1e-6

# default weight scales for low-rank recovery
MU_NN_RIGID = 1.5e-3
MU_NN_NONRIGID = 7.5e-4
MU_TNN = 1.0
MU_WNN = 2.25e-3


class DimensionError(ValueError):
    pass


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class WeightVector:
    """Non-negative, non-decreasing singular value weights."""

    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).ravel()
        if not np.all(np.isfinite(a)):
            raise ValueError("weights must be finite")
        if np.any(a < 0):
            raise ValueError("weights must be non-negative")
        if np.any(np.diff(a) < 0):
            raise ValueError("weights must be non-decreasing")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    def __len__(self):
        return self.a.size

    def __array__(self, dtype=None, copy=None):
        return self.a if dtype is None else self.a.astype(dtype)

    def extended(self, n: int) -> np.ndarray:
        """Weights of length ``n``; missing trailing weights repeat the last one."""
        a = self.a
        if n <= a.size:
            return a[:n].copy()
        fill = a[-1] if a.size else 0.0
        return np.concatenate([a, np.full(n - a.size, fill)])

    # named schedules

    @classmethod
    def nuclear(cls, n: int, mu: float = MU_NN_RIGID) -> "WeightVector":
        return cls(np.full(n, float(mu)))

    @classmethod
    def truncated(cls, n: int, mu: float = MU_TNN, free: int = 4) -> "WeightVector":
        """Zero weight on the first ``free`` values, ``mu`` on the rest."""
        a = np.full(n, float(mu))
        a[: min(free, n)] = 0.0
        return cls(a)

    @classmethod
    def linear_ramp(cls, n: int, mu: float = MU_WNN, free: int = 4) -> "WeightVector":
        """``a_i = 0`` for ``i <= free`` and ``(i - free) * mu`` after."""
        i = np.arange(1, n + 1, dtype=float)
        return cls(np.maximum(i - free, 0.0) * mu)

    @classmethod
    def zeros(cls, n: int) -> "WeightVector":
        return cls(np.zeros(n))


def as_weights(a) -> WeightVector:
    return a if isinstance(a, WeightVector) else WeightVector(a)


@dataclass(frozen=True)
class Factorization:
    """Factor pair representing ``X = B @ C.T``."""

    B: np.ndarray
    C: np.ndarray
    truncated: bool = field(default=False, compare=False)

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if B.ndim != 2 or C.ndim != 2 or B.shape[1] != C.shape[1]:
            raise DimensionError(
                f"factor column counts differ: B {B.shape}, C {C.shape}")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def X(self) -> np.ndarray:
        return self.B @ self.C.T

    def rank(self, rtol: float = RANK_RTOL) -> int:
        return numerical_rank(product_singular_values(self.B, self.C), rtol)


@dataclass(frozen=True)
class CofactorTransform:
    """Pair ``(V, H)`` of ``r x p`` matrices with ``V @ H.T = I``."""

    V: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if V.shape != H.shape or V.shape[0] > V.shape[1]:
            raise DimensionError(f"need r x p transforms with r <= p, got {V.shape}, {H.shape}")
        err = np.abs(V @ H.T - np.eye(V.shape[0])).max()
        scale = max(1.0, np.linalg.norm(V, 2) * np.linalg.norm(H, 2))
        if err > 1e-10 * scale:
            raise ValueError(f"V H^T deviates from identity by {err:.3g}")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "H", H)

    @property
    def r(self) -> int:
        return self.V.shape[0]

    @property
    def p(self) -> int:
        return self.V.shape[1]


def _check_finite(X):
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix has non-finite entries")
    return X


def gamma(fact: Factorization) -> np.ndarray:
    """Per-column surrogate ``(|B_i|^2 + |C_i|^2) / 2``."""
    return 0.5 * (np.einsum("ij,ij->j", fact.B, fact.B) + np.einsum("ij,ij->j", fact.C, fact.C))


def singular_values(X) -> np.ndarray:
    """Singular values of ``X`` in non-increasing order."""
    X = _check_finite(X)
    if X.size == 0:
        return np.zeros(0)
    return np.linalg.svd(np.atleast_2d(X), compute_uv=False)


def product_singular_values(B, C) -> np.ndarray:
    """Singular values of ``B @ C.T`` from the thin QR of each factor."""
    _, rb = np.linalg.qr(B)
    _, rc = np.linalg.qr(C)
    s = np.linalg.svd(rb @ rc.T, compute_uv=False)
    n = min(B.shape[0], C.shape[0])
    out = np.zeros(n)
    k = min(n, s.size)
    out[:k] = s[:k]
    return out


def numerical_rank(sigma, rtol: float = RANK_RTOL) -> int:
    sigma = np.asarray(sigma)
    if sigma.size == 0 or sigma[0] <= 0:
        return 0
    return int(np.count_nonzero(sigma > rtol * sigma[0]))


def weighted_nuclear_norm(X, a) -> float:
    """``sum_i a_i sigma_i(X)``.

    Short weight vectors repeat their last entry; long ones see zero
    singular values past ``min(X.shape)``.
    """
    sigma = singular_values(X)
    return _weighted_sum(sigma, as_weights(a))


def _weighted_sum(sigma, w: WeightVector) -> float:
    n = max(sigma.size, len(w))
    s = np.zeros(n)
    s[: sigma.size] = sigma
    return float(w.extended(n) @ s)


def bilinear_penalty(fact: Factorization, a) -> float:
    w = as_weights(a)
    if len(w) != fact.p:
        raise DimensionError(f"{len(w)} weights for {fact.p} factor columns")
    return float(w.a @ gamma(fact))


def balanced_factor_from_svd(X, p: int) -> Factorization:
    """Balanced factorization ``B = U sqrt(S)``, ``C = V sqrt(S)`` with ``p`` columns.

    Columns past ``min(X.shape)`` are zero. If ``p`` is below the numerical
    rank the top-``p`` truncation is returned with ``truncated=True``.
    """
    X = _check_finite(X)
    m, n = X.shape
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    k = min(p, s.size)
    root = np.sqrt(s[:k])
    B = np.zeros((m, p))
    C = np.zeros((n, p))
    B[:, :k] = U[:, :k] * root
    C[:, :k] = Vt[:k].T * root
    return Factorization(B, C, truncated=numerical_rank(s) > p)


def wnn_prox(X0, a) -> np.ndarray:
    """``argmin_X a^T sigma(X) + |X - X0|_F^2`` for non-decreasing ``a``.

    Shrinks each singular value of ``X0`` by ``a_i / 2``.
    """
    X0 = _check_finite(X0)
    w = as_weights(a)
    U, s, Vt = np.linalg.svd(X0, full_matrices=False)
    s = np.maximum(s - 0.5 * w.extended(s.size), 0.0)
    return (U * s) @ Vt


def gamma_mixing_matrix(t: CofactorTransform) -> np.ndarray:
    """``M = (V^T * V^T + H^T * H^T) / 2`` so that ``gamma = M @ sigma``.

    Shape is ``p x r``: the r singular values are mixed into p columns.
    """
    return 0.5 * (t.V.T ** 2 + t.H.T ** 2)


def _orth_complement_rows(V) -> np.ndarray:
    """Orthonormal rows spanning the complement of the row space of ``V``."""
    O = scipy.linalg.null_space(V).T
    # fix the sign ambiguity: largest-magnitude entry of each row positive
    idx = np.argmax(np.abs(O), axis=1)
    signs = np.sign(O[np.arange(O.shape[0]), idx])
    return O * signs[:, None]


def extend_to_square(t: CofactorTransform) -> CofactorTransform:
    """Complete a rectangular ``r x p`` transform to a square one.

    Appends ``p - r`` rows: ``H~ = O`` and ``V~ = O - K1 V`` where ``O`` spans
    the orthogonal complement of the row space of ``V`` and
    ``H^T = pinv(V) + O^T K1``.
    """
    V, H = t.V, t.H
    r, p = V.shape
    if np.linalg.matrix_rank(V) < r:
        raise RankError("V is rank deficient, X != B V H^T C^T")
    if r == p:
        return t
    O = _orth_complement_rows(V)
    K1 = O @ (H.T - np.linalg.pinv(V))
    V_tail = O - K1 @ V
    return CofactorTransform(np.vstack([V, V_tail]), np.vstack([H, O]))
