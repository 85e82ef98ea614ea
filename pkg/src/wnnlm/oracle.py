"""Brute-force checks of the permutation optimality of the bilinear surrogate.

For a fixed spectrum ``sigma`` every factorization ``(B V, C H)`` with
``V H^T = I`` has ``gamma = M sigma`` for a mixing matrix ``M``. The
minimum of a linear ``a^T gamma`` over that set is attained at a
permutation matrix; with non-decreasing ``a`` at the identity.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

MAX_EXHAUSTIVE = 8
COND_LIMIT = 1e6


@dataclass
class PermutationReport:
    min_sampled: float
    analytic_min: float
    violations: int
    argmin_perm: tuple
    trials: int

    def as_row(self) -> dict:
        row = asdict(self)
        row["argmin_perm"] = " ".join(str(i) for i in self.argmin_perm)
        return row


def permutation_minimum(sigma, a) -> tuple[float, tuple]:
    """Exhaustive ``min_P a^T P sigma`` over all permutations."""
    sigma = np.asarray(sigma, dtype=float)
    a = np.asarray(a, dtype=float)
    r = sigma.size
    if r > MAX_EXHAUSTIVE:
        raise ValueError(f"exhaustive search limited to r <= {MAX_EXHAUSTIVE}, got {r}")
    perms = np.array(list(itertools.permutations(range(r))), dtype=int).reshape(-1, r)
    vals = sigma[perms] @ a
    best = int(np.argmin(vals))
    return float(vals[best]), tuple(int(i) for i in perms[best])


def sample_invertible(rng: np.random.Generator, r: int, count: int) -> np.ndarray:
    """``count`` standard normal ``r x r`` matrices with condition number <= 1e6."""
    out = rng.standard_normal((count, r, r))
    bad = np.linalg.cond(out) > COND_LIMIT
    while np.any(bad):
        out[bad] = rng.standard_normal((int(bad.sum()), r, r))
        bad = np.linalg.cond(out) > COND_LIMIT
    return out


def sampled_penalties(sigma, a, V) -> np.ndarray:
    """``a^T M sigma`` for each square ``V`` (``H = V^{-T}``)."""
    Vt = np.swapaxes(V, 1, 2)
    Ht = np.linalg.inv(V)  # H^T = V^{-1}
    M = 0.5 * (Vt ** 2 + Ht ** 2)
    return (M @ np.asarray(sigma, dtype=float)) @ np.asarray(a, dtype=float)


def verify_optimal_permutation(sigma, a, trials: int = 1000, seed: int = 0,
                               tol: float = 1e-9) -> PermutationReport:
    sigma = np.asarray(sigma, dtype=float)
    a = np.asarray(a, dtype=float)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if sigma.size != a.size:
        raise ValueError("sigma and a must have equal length")
    analytic, perm = permutation_minimum(sigma, a)
    rng = np.random.default_rng(seed)
    vals = sampled_penalties(sigma, a, sample_invertible(rng, sigma.size, trials))
    return PermutationReport(
        min_sampled=float(vals.min()),
        analytic_min=analytic,
        violations=int(np.count_nonzero(vals < analytic - tol)),
        argmin_perm=perm,
        trials=trials,
    )
