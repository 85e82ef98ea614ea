"""Observations and the pOSE data term as a sparse affine map.

The unknown is a ``3F x P`` matrix ``X``; rows ``3i, 3i+1, 3i+2`` hold the
projected x, y and depth coordinates of frame ``i``. Vectorization is
column-major throughout, so ``X[k, j]`` sits at index ``k + 3F * j``.

For each observed ``m = (u, v)`` of point ``j`` in frame ``i`` the operator
carries two affine rows ``sqrt(eta) * (x - u, y - v)`` and two object space
rows ``sqrt(1 - eta) * (x - z u, y - z v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp


class ObservationFormatError(ValueError):
    pass


class ObservationValidationError(ValueError):
    pass


def format_real(x: float) -> str:
    return "%.17g" % x


@dataclass(frozen=True)
class ObservationSet:
    F: int
    P: int
    frame: np.ndarray  # (n,) int
    point: np.ndarray  # (n,) int
    uv: np.ndarray  # (n, 2) float

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=np.int64).ravel()
        point = np.asarray(self.point, dtype=np.int64).ravel()
        uv = np.asarray(self.uv, dtype=float).reshape(-1, 2)
        if not (frame.size == point.size == uv.shape[0]):
            raise ObservationValidationError("entry arrays have different lengths")
        if self.F < 0 or self.P < 0:
            raise ObservationValidationError("negative frame or point count")
        if frame.size:
            if frame.min() < 0 or frame.max() >= self.F:
                raise ObservationValidationError("frame index out of range")
            if point.min() < 0 or point.max() >= self.P:
                raise ObservationValidationError("point index out of range")
            if not np.all(np.isfinite(uv)):
                raise ObservationValidationError("non-finite image coordinates")
            key = frame * self.P + point
            if np.unique(key).size != key.size:
                raise ObservationValidationError("duplicate (frame, point) observation")
        for name, arr in (("frame", frame), ("point", point), ("uv", uv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.frame.size

    @classmethod
    def from_dense(cls, M, mask=None) -> "ObservationSet":
        """From a ``2F x P`` measurement matrix and optional ``F x P`` visibility mask."""
        M = np.asarray(M, dtype=float)
        F, P = M.shape[0] // 2, M.shape[1]
        if mask is None:
            mask = np.ones((F, P), dtype=bool)
        fi, pj = np.nonzero(mask)
        uv = np.stack([M[2 * fi, pj], M[2 * fi + 1, pj]], axis=1)
        return cls(F, P, fi, pj, uv)

    def sorted(self) -> "ObservationSet":
        order = np.lexsort((self.point, self.frame))
        return replace(self, frame=self.frame[order], point=self.point[order], uv=self.uv[order])

    def dense(self) -> np.ndarray:
        """``2F x P`` measurement matrix, zeros where unobserved."""
        M = np.zeros((2 * self.F, self.P))
        M[2 * self.frame, self.point] = self.uv[:, 0]
        M[2 * self.frame + 1, self.point] = self.uv[:, 1]
        return M

    def mask(self) -> np.ndarray:
        W = np.zeros((self.F, self.P), dtype=bool)
        W[self.frame, self.point] = True
        return W

    def without(self, index: int) -> "ObservationSet":
        keep = np.arange(len(self)) != index
        return replace(self, frame=self.frame[keep], point=self.point[keep], uv=self.uv[keep])


def load_observations(path) -> ObservationSet:
    """Read ``F P`` then ``i j u v`` lines; ``#`` starts a comment line."""
    header = None
    frames, points, uvs = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if header is None:
                    if len(parts) != 2:
                        raise ValueError("expected 'F P'")
                    header = (int(parts[0]), int(parts[1]))
                    continue
                if len(parts) != 4:
                    raise ValueError("expected 'i j u v'")
                frames.append(int(parts[0]))
                points.append(int(parts[1]))
                uvs.append((float(parts[2]), float(parts[3])))
            except ValueError as exc:
                raise ObservationFormatError(f"{path}:{lineno}: {exc}") from None
    if header is None:
        raise ObservationFormatError(f"{path}: missing 'F P' header")
    return ObservationSet(header[0], header[1], frames, points,
                          np.array(uvs, dtype=float).reshape(-1, 2))


def save_observations(obs: ObservationSet, path) -> None:
    lines = [f"{obs.F} {obs.P}"]
    for i, j, (u, v) in zip(obs.frame, obs.point, obs.uv):
        lines.append(f"{i} {j} {format_real(u)} {format_real(v)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def normalize_measurements(obs: ObservationSet) -> tuple[ObservationSet, float]:
    """Divide all image coordinates by the Frobenius norm of the observed entries."""
    if len(obs) == 0:
        raise ObservationValidationError("no observations to normalize")
    scale = float(np.linalg.norm(obs.uv))
    if scale == 0.0:
        raise ObservationValidationError("all measurements are zero")
    return replace(obs, uv=obs.uv / scale), scale


@dataclass(frozen=True)
class LinearMap:
    """Data term ``|A vec(X) - b|^2`` over an ``m x n`` matrix ``X``."""

    A: sp.csr_matrix
    b: np.ndarray
    shape: tuple

    def residual(self, X) -> np.ndarray:
        return self.A @ np.asarray(X).ravel(order="F") - self.b

    def loss(self, X) -> float:
        r = self.residual(X)
        return float(r @ r)


@dataclass(frozen=True)
class PoseOperator(LinearMap):
    eta: float = 1.0
    scale: float = 1.0
    obs: ObservationSet | None = None

    @property
    def n_obs(self) -> int:
        return self.b.size // 4


@dataclass
class PoseLoss:
    total: float
    affine: float
    ose: float


def _pose_pattern(obs: ObservationSet, eta: float):
    """COO triplets and right-hand side of the pOSE operator."""
    n = len(obs)
    F3 = 3 * obs.F
    i, j = obs.frame, obs.point
    u, v = obs.uv[:, 0], obs.uv[:, 1]
    col_x = 3 * i + F3 * j
    col_y = col_x + 1
    col_z = col_x + 2
    se, so = math.sqrt(eta), math.sqrt(1.0 - eta)
    obs_idx = np.arange(n)
    # affine block: rows 2o, 2o+1; object space block: 2n + 2o, 2n + 2o + 1
    rows = np.concatenate([2 * obs_idx, 2 * obs_idx + 1,
                           2 * n + 2 * obs_idx, 2 * n + 2 * obs_idx,
                           2 * n + 2 * obs_idx + 1, 2 * n + 2 * obs_idx + 1])
    cols = np.concatenate([col_x, col_y, col_x, col_z, col_y, col_z])
    vals = np.concatenate([np.full(n, se), np.full(n, se),
                           np.full(n, so), -so * u, np.full(n, so), -so * v])
    b = np.zeros(4 * n)
    b[0:2 * n:2] = se * u
    b[1:2 * n:2] = se * v
    return rows, cols, vals, b


def build_pose_operator(obs: ObservationSet, eta: float, scale: float = 1.0) -> PoseOperator:
    """Sparse ``A``, ``b`` with ``|A vec(X) - b|^2 = eta l_affine + (1 - eta) l_ose``.

    Rows are ordered by (frame, point): all affine rows first, then all
    object space rows, two per observation in each block.
    """
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    obs = obs.sorted()
    rows, cols, vals, b = _pose_pattern(obs, eta)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(b.size, 3 * obs.F * obs.P))
    A.sort_indices()
    return PoseOperator(A=A, b=b, shape=(3 * obs.F, obs.P), eta=float(eta),
                        scale=float(scale), obs=obs)


def pose_loss(op: PoseOperator, X) -> PoseLoss:
    """Total weighted loss plus the unweighted affine and object space errors."""
    X = np.asarray(X, dtype=float)
    if X.shape != op.shape:
        raise ValueError(f"X has shape {X.shape}, operator expects {op.shape}")
    obs = op.obs
    i, j = obs.frame, obs.point
    xy = np.stack([X[3 * i, j], X[3 * i + 1, j]], axis=1)
    z = X[3 * i + 2, j]
    affine = float(np.sum((xy - obs.uv) ** 2))
    ose = float(np.sum((xy - z[:, None] * obs.uv) ** 2))
    return PoseLoss(total=op.loss(X), affine=affine, ose=ose)


def regularization_free_init(op: LinearMap, rcond: float = 1e-10) -> np.ndarray:
    """Minimum-norm least-squares solution of ``A vec(X) = b`` as a matrix.

    Pose operators decouple into one ``4 x 3`` block per observation, which
    is solved in batch with a global singular value cutoff.
    """
    m, n = op.shape
    if isinstance(op, PoseOperator):
        obs = op.obs
        k = len(obs)
        X = np.zeros((m, n))
        if k == 0:
            return X
        se, so = math.sqrt(op.eta), math.sqrt(1.0 - op.eta)
        u, v = obs.uv[:, 0], obs.uv[:, 1]
        blocks = np.zeros((k, 4, 3))
        blocks[:, 0, 0] = blocks[:, 1, 1] = se
        blocks[:, 2, 0] = blocks[:, 3, 1] = so
        blocks[:, 2, 2] = -so * u
        blocks[:, 3, 2] = -so * v
        rhs = np.zeros((k, 4))
        rhs[:, 0], rhs[:, 1] = se * u, se * v
        U, s, Vt = np.linalg.svd(blocks, full_matrices=False)
        cutoff = rcond * s.max()
        keep = s > cutoff
        inv = np.divide(1.0, s, out=np.zeros_like(s), where=keep)
        sol = np.einsum("kdc,kc->kd", np.swapaxes(Vt, 1, 2),
                        np.einsum("kqc,kq->kc", U, rhs) * inv)
        X[3 * obs.frame[:, None] + np.arange(3), obs.point[:, None]] = sol
        return X
    A = op.A.toarray() if sp.issparse(op.A) else np.asarray(op.A)
    x, *_ = np.linalg.lstsq(A, op.b, rcond=rcond)
    return x.reshape((m, n), order="F")


def identity_map(B0) -> LinearMap:
    """``A = I``, ``b = vec(B0)``: the data term is ``|X - B0|_F^2``."""
    B0 = np.asarray(B0, dtype=float)
    return LinearMap(A=sp.identity(B0.size, format="csr"), b=B0.ravel(order="F"), shape=B0.shape)

