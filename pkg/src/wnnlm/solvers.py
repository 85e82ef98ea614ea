"""ADMM and Levenberg-Marquardt solvers for weighted nuclear norm recovery.

Both minimize ``a^T sigma(X) + |A vec(X) - b|^2``. ADMM works on ``X``
directly with the singular value shrinkage prox; LM works on the smooth
bilinear objective ``sum_i a_i (|B_i|^2 + |C_i|^2) / 2 + |A vec(B C^T) - b|^2``
which has the same minimum when ``a`` is non-decreasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernels import OperatorPattern, bilinear_jacobian
from .penalty import (Factorization, WeightVector, as_weights, balanced_factor_from_svd,
                      numerical_rank, product_singular_values, singular_values, wnn_prox)
from .pose import LinearMap, regularization_free_init
from .trace import Clock, SolveTrace

LAMBDA_CAP = 1e12


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    rho_growth: float = 1.0
    rho_max: float = 1e3
    max_iters: int = 2000
    primal_tol: float = 1e-8
    dual_tol: float = 1e-8
    stall_window: int = 10
    stall_tol: float = 1e-6

    def __post_init__(self):
        if self.rho <= 0 or self.rho_growth < 1 or self.rho_max < self.rho:
            raise ValueError("need rho > 0, rho_growth >= 1, rho_max >= rho")
        if min(self.primal_tol, self.dual_tol, self.stall_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.stall_window < 1:
            raise ValueError("iteration counts must be positive")


@dataclass(frozen=True)
class LmConfig:
    lambda0: float = 1e-4
    alpha: float = 2.0
    max_iters: int = 500
    rel_tol: float = 1e-9
    max_rejects: int = 30

    def __post_init__(self):
        if self.lambda0 <= 0 or self.alpha <= 1:
            raise ValueError("need lambda0 > 0 and alpha > 1")
        if self.rel_tol <= 0 or self.max_iters < 1 or self.max_rejects < 1:
            raise ValueError("invalid LM stopping parameters")


# ---------------------------------------------------------------- ADMM

class AdmmState:
    """Scaled-form ADMM for ``min aT sigma(Z) + data(X)`` subject to ``X = Z``.

    Subclasses provide the X-update and the objective evaluation; the
    prox step, dual update, penalty schedule and stopping rules live here.
    """

    phase = "admm"

    def __init__(self, weights: WeightVector, shape, cfg: AdmmConfig):
        self.w = weights
        self.shape = shape
        self.cfg = cfg
        self.rho = cfg.rho

    def set_rho(self, rho):
        self.rho = rho

    def x_update(self, Z, U):
        raise NotImplementedError

    def evaluate(self, Z):
        """Return ``(objective, data_term, reg_term, extra)`` at estimate ``Z``."""
        raise NotImplementedError

    def run(self, X0, clock: Clock):
        cfg = self.cfg
        trace = SolveTrace()
        Z = np.array(X0, dtype=float)
        U = np.zeros_like(Z)
        self.set_rho(cfg.rho)
        obj, data, reg, extra = self.evaluate(Z)
        trace.append(self.phase, 0, clock.tick(), obj, data, reg, numerical_rank(singular_values(Z)))
        best = (obj, Z, extra)
        history = [obj]
        status = "max_iters"
        for it in range(1, cfg.max_iters + 1):
            X = self.x_update(Z, U)
            Z_old = Z
            Z = wnn_prox(X + U, WeightVector(self.w.a * (2.0 / self.rho)))
            U = U + X - Z
            primal = np.linalg.norm(X - Z)
            dual = self.rho * np.linalg.norm(Z - Z_old)
            obj, data, reg, extra = self.evaluate(Z)
            trace.append(self.phase, it, clock.tick(), obj, data, reg,
                         numerical_rank(singular_values(Z)))
            history.append(obj)
            if obj < best[0]:
                best = (obj, Z, extra)
            if primal < cfg.primal_tol and dual < cfg.dual_tol:
                status = "converged"
                break
            if it >= cfg.stall_window:
                ref = history[-1 - cfg.stall_window]
                if abs(ref - obj) <= cfg.stall_tol * abs(ref):
                    status = "stalled"
                    break
            if cfg.rho_growth > 1.0 and self.rho < cfg.rho_max:
                new_rho = min(self.rho * cfg.rho_growth, cfg.rho_max)
                U = U * (self.rho / new_rho)
                self.set_rho(new_rho)
        trace.status[self.phase] = status
        if status == "converged":
            return Z, extra, trace
        return best[1], best[2], trace


class _LinearAdmm(AdmmState):
    def __init__(self, op: LinearMap, weights, cfg):
        super().__init__(weights, op.shape, cfg)
        self.op = op
        A = sp.csr_matrix(op.A)
        self.AtA2 = (2.0 * (A.T @ A)).tocsc()
        self.Atb2 = 2.0 * (A.T @ op.b)
        self.eye = sp.identity(self.AtA2.shape[0], format="csc")

    def set_rho(self, rho):
        super().set_rho(rho)
        self.solve = spla.factorized((self.AtA2 + rho * self.eye).tocsc())

    def x_update(self, Z, U):
        x = self.solve(self.Atb2 + self.rho * (Z - U).ravel(order="F"))
        return x.reshape(self.shape, order="F")

    def evaluate(self, Z):
        sigma = singular_values(Z)
        reg = float(self.w.extended(sigma.size) @ sigma)
        data = self.op.loss(Z)
        return data + reg, data, reg, None


def admm_solve(op: LinearMap, a, cfg: AdmmConfig | None = None, p: int | None = None,
               X0=None, clock: Clock | None = None):
    """ADMM on ``X`` started from the regularization-free solution.

    Weights shorter than ``min(X.shape)`` repeat their last entry. Returns the
    consensus estimate ``Z`` (the prox output) and the trace; when the run
    stalls or hits the iteration limit the best estimate seen is returned and
    ``trace.status["admm"]`` says why.
    """
    w = as_weights(a)
    if p is not None and len(w) < p:
        raise ValueError(f"{len(w)} weights for p = {p}")
    cfg = cfg or AdmmConfig()
    clock = clock or Clock()
    if X0 is None:
        X0 = regularization_free_init(op)
    Z, _, trace = _LinearAdmm(op, w, cfg).run(X0, clock)
    return Z, trace


# ---------------------------------------------------------------- LM

def levenberg_marquardt(residual: Callable, system: Callable, z0, cfg: LmConfig,
                        record: Callable, clock: Clock, phase: str = "lm"):
    """Damped Gauss-Newton with identity damping ``(J^T J + lambda I)``.

    ``residual(z)`` returns ``r``; ``system(z)`` returns ``(J, r)``;
    ``record(z)`` returns ``(data_term, reg_term, rank)`` for the trace.
    A trial step is accepted only when it strictly lowers ``|r|^2``; every
    accepted step (and the start point) gets one trace row.
    """
    trace = SolveTrace()
    z = np.array(z0, dtype=float)
    J, r = system(z)
    err = float(r @ r)
    data, reg, rank = record(z)
    trace.append(phase, 0, clock.tick(), err, data, reg, rank)
    lam = cfg.lambda0
    JtJ = (J.T @ J).toarray()
    g = J.T @ r
    diag = np.arange(z.size)
    rejects = 0
    status = "max_iters"
    for it in range(1, cfg.max_iters + 1):
        if err == 0.0:
            status = "converged"
            break
        Hm = JtJ.copy()
        Hm[diag, diag] += lam
        try:
            step = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(Hm, check_finite=False), g,
                                           check_finite=False)
        except np.linalg.LinAlgError:
            step = None
        new_err = math.inf
        if step is not None and np.all(np.isfinite(step)):
            z_new = z + step
            r_new = residual(z_new)
            new_err = float(r_new @ r_new)
        if new_err < err:
            decrease = (err - new_err) / err
            z, err = z_new, new_err
            lam /= cfg.alpha
            rejects = 0
            J, r = system(z)
            JtJ = (J.T @ J).toarray()
            g = J.T @ r
            data, reg, rank = record(z)
            trace.append(phase, it, clock.tick(), err, data, reg, rank)
            if decrease < cfg.rel_tol:
                status = "converged"
                break
        else:
            trace.rejections += 1
            rejects += 1
            lam *= cfg.alpha
            if lam > LAMBDA_CAP * cfg.lambda0:
                status = "stalled"
                break
            if rejects >= cfg.max_rejects:
                status = "no_progress"
                break
    trace.status[phase] = status
    return z, trace


def _split_z(z, m, n, p):
    B = z[: m * p].reshape((m, p), order="F")
    C = z[m * p: m * p + n * p].reshape((n, p))  # vec(C^T) is C in row-major order
    return B, C


def _join_z(B, C):
    return np.concatenate([B.ravel(order="F"), C.ravel()])


def _reg_blocks(sa, m, n):
    """Diagonals of ``diag(sqrt(a/2)) kron I_m`` and ``I_n kron diag(sqrt(a/2))``."""
    return np.repeat(sa, m), np.tile(sa, n)


class _LowRankSystem:
    def __init__(self, op: LinearMap, weights: WeightVector, p: int):
        self.op = op
        self.m, self.n = op.shape
        self.p = p
        if len(weights) != p:
            raise ValueError(f"{len(weights)} weights for p = {p}")
        self.w = weights
        self.pattern = OperatorPattern(op.A, self.m, self.n)
        self.dB, self.dC = _reg_blocks(np.sqrt(weights.a / 2.0), self.m, self.n)

    def residual(self, z):
        B, C = _split_z(z, self.m, self.n, self.p)
        return np.concatenate([self.op.residual(B @ C.T), self.dB * z[: self.m * self.p],
                               self.dC * z[self.m * self.p:]])

    def system(self, z):
        B, C = _split_z(z, self.m, self.n, self.p)
        ax, JB, JC = bilinear_jacobian(self.pattern, B, C)
        r = np.concatenate([ax - self.op.b, self.dB * z[: self.m * self.p],
                            self.dC * z[self.m * self.p:]])
        J = sp.vstack([
            sp.hstack([JB, JC]),
            sp.hstack([sp.diags(self.dB), sp.csr_matrix((self.dB.size, self.dC.size))]),
            sp.hstack([sp.csr_matrix((self.dC.size, self.dB.size)), sp.diags(self.dC)]),
        ], format="csr")
        return J, r

    def record(self, z):
        B, C = _split_z(z, self.m, self.n, self.p)
        data = self.op.loss(B @ C.T)
        reg = float(self.w.a @ (0.5 * (np.sum(B * B, axis=0) + np.sum(C * C, axis=0))))
        return data, reg, numerical_rank(product_singular_values(B, C))


def assemble_jacobian_lr(op: LinearMap, a, fact: Factorization):
    """Jacobian and residual of the bilinear objective at ``fact``.

    Unknowns are ``z = [vec(B); vec(C^T)]``; ``|r|^2`` is the objective and
    its gradient is ``2 J^T r``.
    """
    w = as_weights(a)
    m, n = op.shape
    if fact.B.shape[0] != m or fact.C.shape[0] != n:
        raise ValueError(f"factors {fact.B.shape}, {fact.C.shape} do not match operator {op.shape}")
    sys_ = _LowRankSystem(op, w, fact.p)
    return sys_.system(_join_z(fact.B, fact.C))


def lm_refine(op: LinearMap, a, fact0: Factorization, cfg: LmConfig | None = None,
              clock: Clock | None = None):
    """Levenberg-Marquardt on the bilinear objective, started at ``fact0``."""
    cfg = cfg or LmConfig()
    clock = clock or Clock()
    sys_ = _LowRankSystem(op, as_weights(a), fact0.p)
    z, trace = levenberg_marquardt(sys_.residual, sys_.system, _join_z(fact0.B, fact0.C), cfg,
                                   sys_.record, clock)
    B, C = _split_z(z, sys_.m, sys_.n, sys_.p)
    return Factorization(B.copy(), C.copy()), trace


def combined_solve(op: LinearMap, a, p: int, admm_cfg: AdmmConfig | None = None,
                   lm_cfg: LmConfig | None = None, clock: Clock | None = None):
    """ADMM until it stops making progress, then LM from its balanced factorization.

    ``a`` may be longer than ``p``: ADMM uses all of it (repeating the last
    entry past its end), LM uses the first ``p`` entries.
    """
    w = as_weights(a)
    clock = clock or Clock()
    Z, trace = admm_solve(op, w, admm_cfg, clock=clock)
    fact0 = balanced_factor_from_svd(Z, p)
    fact, lm_trace = lm_refine(op, WeightVector(w.extended(p)), fact0, lm_cfg, clock=clock)
    trace.extend(lm_trace)
    trace.status["handoff_truncated"] = fact0.truncated
    return fact, trace
