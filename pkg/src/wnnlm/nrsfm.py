"""Non-rigid structure recovery with known camera rotations.

The camera-frame points are ``R g(X#) + t 1^T`` where ``X#`` is the
``F x 3P`` shape matrix whose row ``i`` holds the x, y and z coordinates
of all points in frame ``i``. ``rank(X#) <= K`` for a K-mode shape basis,
so ``X# = B C^T`` with ``K`` columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import OperatorPattern, bilinear_jacobian
from .penalty import (Factorization, WeightVector, as_weights, balanced_factor_from_svd,
                      numerical_rank, product_singular_values, singular_values)
from .pose import ObservationSet, build_pose_operator, format_real, normalize_measurements
from .pose import regularization_free_init
from .solvers import (AdmmConfig, AdmmState, LmConfig, _reg_blocks, levenberg_marquardt)
from .trace import Clock

# non-rigid defaults
XI_DEFAULT = 5e-3
K_DEFAULT = 2
ETA_DEFAULT = 0.05
MU_NN_NRSFM = 1e-3
EPS_DEFAULT = 1e-8
# the rule above yields weights near xi / sigma, so rho = 1 would shrink by
# only ~1e-3 per iteration; a smaller penalty keeps ADMM useful here
NRSFM_ADMM = AdmmConfig(rho=1e-2)


class AlignmentError(ValueError):
    pass


# ---------------------------------------------------------------- reshaping

def reshape_to_sharp(X) -> np.ndarray:
    """``3F x P`` structure to the ``F x 3P`` shape matrix."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] % 3:
        raise ValueError(f"expected 3F x P, got {X.shape}")
    F, P = X.shape[0] // 3, X.shape[1]
    return X.reshape(F, 3 * P)


def reshape_from_sharp(Xs) -> np.ndarray:
    """``F x 3P`` shape matrix back to ``3F x P`` (the map g)."""
    Xs = np.asarray(Xs)
    if Xs.ndim != 2 or Xs.shape[1] % 3:
        raise ValueError(f"expected F x 3P, got {Xs.shape}")
    F, P = Xs.shape[0], Xs.shape[1] // 3
    return Xs.reshape(3 * F, P)


def reshape_permutation(F: int, P: int) -> sp.csr_matrix:
    """Permutation ``G`` with ``vec(g(X#)) = G vec(X#)`` (column-major vec)."""
    i, c, j = np.meshgrid(np.arange(F), np.arange(3), np.arange(P), indexing="ij")
    src = (i + F * (c * P + j)).ravel()
    dst = (3 * i + c + 3 * F * j).ravel()
    n = 3 * F * P
    return sp.csr_matrix((np.ones(n), (dst, src)), shape=(n, n))


# ---------------------------------------------------------------- problem

def _check_rotations(R):
    R = np.asarray(R, dtype=float)
    if R.ndim != 3 or R.shape[1:] != (3, 3):
        raise ValueError(f"rotations must be F x 3 x 3, got {R.shape}")
    orth = np.abs(np.swapaxes(R, 1, 2) @ R - np.eye(3)).max(initial=0.0)
    if orth > 1e-8:
        raise ValueError(f"rotation not orthonormal (deviation {orth:.2e})")
    dets = np.linalg.det(R)
    if dets.size and np.abs(dets - 1).max() > 1e-6:
        raise ValueError("rotation determinant differs from 1")
    return R


class NrsfmProblem:
    """Observations, known rotations, basis size and pOSE weight.

    Measurements are normalized to unit Frobenius norm only when
    ``normalize=True``; ``scale`` records the factor.
    """

    def __init__(self, obs: ObservationSet, R, K: int = K_DEFAULT, eta: float = ETA_DEFAULT,
                 normalize: bool = False):
        self.R = _check_rotations(R)
        if self.R.shape[0] != obs.F:
            raise ValueError(f"{self.R.shape[0]} rotations for {obs.F} frames")
        if K < 1:
            raise ValueError("K must be >= 1")
        self.K = int(K)
        self.eta = float(eta)
        self.scale = 1.0
        if normalize:
            obs, self.scale = normalize_measurements(obs)
        self.obs = obs
        self.F, self.P = obs.F, obs.P
        self.op = build_pose_operator(obs, eta, self.scale)
        F, P = self.F, self.P
        self.Rblk = sp.block_diag(list(self.R), format="csr")
        lift = sp.kron(sp.identity(P), self.Rblk, format="csr")
        # data operator acting on vec(X#) and on t
        self.L = (self.op.A @ lift @ reshape_permutation(F, P)).tocsr()
        self.At = (self.op.A @ sp.kron(np.ones((P, 1)), sp.identity(3 * F))).tocsr()
        self._At_pinv = np.linalg.pinv(self.At.toarray(), rcond=1e-10)

    @property
    def b(self):
        return self.op.b

    def camera_points(self, Xs, t) -> np.ndarray:
        """``R g(X#) + t 1^T`` as a ``3F x P`` matrix."""
        return self.Rblk @ reshape_from_sharp(Xs) + np.asarray(t)[:, None]

    def data_residual(self, Xs, t) -> np.ndarray:
        return self.L @ np.asarray(Xs).ravel(order="F") + self.At @ t - self.op.b

    def data_term(self, Xs, t) -> float:
        r = self.data_residual(Xs, t)
        return float(r @ r)

    def best_translation(self, Xs) -> np.ndarray:
        return self._At_pinv @ (self.op.b - self.L @ np.asarray(Xs).ravel(order="F"))

    def closed_form_structure(self) -> np.ndarray:
        """Minimum-norm ``X`` (``3F x P``) of the pOSE loss of ``R X`` alone."""
        return self.Rblk.T @ regularization_free_init(self.op)


@dataclass(frozen=True)
class NrsfmSolution:
    fact: Factorization
    t: np.ndarray

    @property
    def Xsharp(self) -> np.ndarray:
        return self.fact.X

    def structure(self, frame: int | None = None) -> np.ndarray:
        """World structure ``g(B C^T)``; one frame as ``3 x P`` when given."""
        X = reshape_from_sharp(self.fact.X)
        if frame is None:
            return X
        return X[3 * frame: 3 * frame + 3]


def weights_from_init(X0, K: int, xi: float = XI_DEFAULT, eps: float = EPS_DEFAULT) -> WeightVector:
    """``a_i = xi / (sigma_i(X0#) + eps)`` for ``i = 1..K``."""
    if xi <= 0 or eps <= 0:
        raise ValueError("xi and eps must be positive")
    sigma = singular_values(reshape_to_sharp(X0))
    s = np.zeros(K)
    s[: min(K, sigma.size)] = sigma[:K]
    return WeightVector(xi / (s + eps))


def nrsfm_objective(problem: NrsfmProblem, a, sol: NrsfmSolution) -> float:
    w = as_weights(a)
    B, C = sol.fact.B, sol.fact.C
    reg = float(w.a @ (0.5 * (np.sum(B * B, axis=0) + np.sum(C * C, axis=0))))
    return reg + problem.data_term(sol.fact.X, sol.t)


# ---------------------------------------------------------------- ADMM

class _NrsfmAdmm(AdmmState):
    def __init__(self, problem: NrsfmProblem, weights, cfg):
        super().__init__(weights, (problem.F, 3 * problem.P), cfg)
        self.pb = problem
        L = problem.L
        self.LtL2 = (2.0 * (L.T @ L)).tocsc()
        self.eye = sp.identity(self.LtL2.shape[0], format="csc")
        self.t = np.zeros(3 * problem.F)

    def set_rho(self, rho):
        super().set_rho(rho)
        self.solve = spla.factorized((self.LtL2 + rho * self.eye).tocsc())

    def x_update(self, Z, U):
        pb = self.pb
        rhs = 2.0 * (pb.L.T @ (pb.op.b - pb.At @ self.t)) + self.rho * (Z - U).ravel(order="F")
        X = self.solve(rhs).reshape(self.shape, order="F")
        self.t = pb.best_translation(X)
        return X

    def evaluate(self, Z):
        t = self.pb.best_translation(Z)
        sigma = singular_values(Z)
        reg = float(self.w.extended(sigma.size) @ sigma)
        data = self.pb.data_term(Z, t)
        return data + reg, data, reg, t


# ---------------------------------------------------------------- LM

class _NrsfmSystem:
    def __init__(self, problem: NrsfmProblem, weights: WeightVector):
        self.pb = problem
        self.F, self.n = problem.F, 3 * problem.P
        self.K = len(weights)
        self.w = weights
        self.pattern = OperatorPattern(problem.L, self.F, self.n)
        self.dB, self.dC = _reg_blocks(np.sqrt(weights.a / 2.0), self.F, self.n)
        self.nB, self.nC = self.F * self.K, self.n * self.K

    def split(self, z):
        B = z[: self.nB].reshape((self.F, self.K), order="F")
        C = z[self.nB: self.nB + self.nC].reshape((self.n, self.K))
        return B, C, z[self.nB + self.nC:]

    def join(self, B, C, t):
        return np.concatenate([B.ravel(order="F"), C.ravel(), t])

    def _reg(self, z):
        return self.dB * z[: self.nB], self.dC * z[self.nB: self.nB + self.nC]

    def residual(self, z):
        B, C, t = self.split(z)
        return np.concatenate([self.pb.data_residual(B @ C.T, t), *self._reg(z)])

    def system(self, z):
        B, C, t = self.split(z)
        ax, JB, JC = bilinear_jacobian(self.pattern, B, C)
        r = np.concatenate([ax + self.pb.At @ t - self.pb.op.b, *self._reg(z)])
        nt = t.size
        J = sp.vstack([
            sp.hstack([JB, JC, self.pb.At]),
            sp.hstack([sp.diags(self.dB), sp.csr_matrix((self.nB, self.nC + nt))]),
            sp.hstack([sp.csr_matrix((self.nC, self.nB)), sp.diags(self.dC),
                       sp.csr_matrix((self.nC, nt))]),
        ], format="csr")
        return J, r

    def record(self, z):
        B, C, t = self.split(z)
        data = self.pb.data_term(B @ C.T, t)
        reg = float(self.w.a @ (0.5 * (np.sum(B * B, axis=0) + np.sum(C * C, axis=0))))
        return data, reg, numerical_rank(product_singular_values(B, C))


def assemble_jacobian_nrsfm(problem: NrsfmProblem, a, sol: NrsfmSolution):
    """Jacobian and residual in ``z = [vec(B); vec(C^T); t]``; ``|r|^2`` is the objective."""
    w = as_weights(a)
    B, C = sol.fact.B, sol.fact.C
    if B.shape != (problem.F, len(w)) or C.shape != (3 * problem.P, len(w)):
        raise ValueError(f"factors {B.shape}, {C.shape} do not match F={problem.F}, "
                         f"P={problem.P}, K={len(w)}")
    if np.shape(sol.t) != (3 * problem.F,):
        raise ValueError("translation must have length 3F")
    sys_ = _NrsfmSystem(problem, w)
    return sys_.system(sys_.join(B, C, np.asarray(sol.t, dtype=float)))


def nrsfm_admm(problem: NrsfmProblem, a, cfg: AdmmConfig | None = None,
               clock: Clock | None = None):
    """ADMM on ``X#`` with the translation re-solved in closed form each iteration."""
    w = as_weights(a)
    cfg = cfg or NRSFM_ADMM
    clock = clock or Clock()
    X0 = reshape_to_sharp(problem.closed_form_structure())
    state = _NrsfmAdmm(problem, w, cfg)
    state.t = problem.best_translation(X0)
    Z, t, trace = state.run(X0, clock)
    return Z, t, trace


def nrsfm_lm(problem: NrsfmProblem, a, sol0: NrsfmSolution, cfg: LmConfig | None = None,
             clock: Clock | None = None):
    cfg = cfg or LmConfig()
    clock = clock or Clock()
    sys_ = _NrsfmSystem(problem, as_weights(a))
    z0 = sys_.join(sol0.fact.B, sol0.fact.C, np.asarray(sol0.t, dtype=float))
    z, trace = levenberg_marquardt(sys_.residual, sys_.system, z0, cfg, sys_.record, clock)
    B, C, t = sys_.split(z)
    return NrsfmSolution(Factorization(B.copy(), C.copy()), t.copy()), trace


def nrsfm_solve(problem: NrsfmProblem, a, lm_cfg: LmConfig | None = None,
                admm_cfg: AdmmConfig | None = None, clock: Clock | None = None):
    """ADMM on the shape matrix, then LM on ``(B, C, t)`` from its rank-K factorization."""
    w = as_weights(a)
    if len(w) != problem.K:
        raise ValueError(f"{len(w)} weights for K = {problem.K}")
    clock = clock or Clock()
    Z, t, trace = nrsfm_admm(problem, w, admm_cfg, clock)
    fact0 = balanced_factor_from_svd(Z, problem.K)
    sol, lm_trace = nrsfm_lm(problem, w, NrsfmSolution(fact0, t), lm_cfg, clock)
    trace.extend(lm_trace)
    trace.status["handoff_truncated"] = fact0.truncated
    return sol, trace


# ---------------------------------------------------------------- evaluation

def similarity_align(est, gt):
    """Least-squares ``s R est + t`` matching ``gt`` (both ``3 x P``)."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    mu_e = est.mean(axis=1, keepdims=True)
    mu_g = gt.mean(axis=1, keepdims=True)
    E, G = est - mu_e, gt - mu_g
    U, D, Vt = np.linalg.svd(G @ E.T)
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    Rot = U @ S @ Vt
    var_e = np.sum(E * E)
    scale = float(np.trace(np.diag(D) @ S) / var_e) if var_e > 0 else 1.0
    return scale, Rot, mu_g - scale * Rot @ mu_e


def reconstruction_error(est, gt, align: bool = True) -> float:
    """Mean per-point distance, after the best similarity transform when ``align``."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape or est.shape[0] != 3:
        raise ValueError(f"expected matching 3 x P arrays, got {est.shape}, {gt.shape}")
    if align:
        if est.shape[1] < 3:
            raise AlignmentError("similarity alignment needs at least 3 points")
        s, Rot, t = similarity_align(est, gt)
        est = s * Rot @ est + t
    return float(np.mean(np.linalg.norm(est - gt, axis=0)))


# ---------------------------------------------------------------- file formats

def _numeric_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line.split()


def load_rotations(path) -> np.ndarray:
    lines = list(_numeric_lines(path))
    try:
        F = int(lines[0][1][0])
        body = lines[1:]
        if len(body) != 3 * F or any(len(parts) != 3 for _, parts in body):
            raise ValueError(f"expected {3 * F} lines of 3 reals")
        R = np.array([[float(x) for x in parts] for _, parts in body]).reshape(F, 3, 3)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed rotation file: {exc}") from None
    return _check_rotations(R)


def save_rotations(R, path) -> None:
    R = np.asarray(R)
    lines = [str(R.shape[0])]
    for Ri in R:
        lines.extend(" ".join(format_real(x) for x in row) for row in Ri)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_structure(path) -> np.ndarray:
    lines = list(_numeric_lines(path))
    try:
        P = int(lines[0][1][0])
        body = lines[1:]
        if len(body) != 3 or any(len(parts) != P for _, parts in body):
            raise ValueError(f"expected 3 lines of {P} reals")
        S = np.array([[float(x) for x in parts] for _, parts in body])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed structure file: {exc}") from None
    return S


def save_structure(S, path) -> None:
    S = np.asarray(S)
    lines = [str(S.shape[1])] + [" ".join(format_real(x) for x in row) for row in S]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
