"""Weighted nuclear norm recovery with ADMM and bilinear Levenberg-Marquardt."""

from .kernels import backend
from .nrsfm import (NrsfmProblem, NrsfmSolution, assemble_jacobian_nrsfm, nrsfm_solve,
                    reconstruction_error, weights_from_init)
from .oracle import verify_optimal_permutation
from .penalty import (CofactorTransform, Factorization, WeightVector, balanced_factor_from_svd,
                      bilinear_penalty, extend_to_square, gamma, gamma_mixing_matrix,
                      singular_values, weighted_nuclear_norm, wnn_prox)
from .pose import (ObservationSet, PoseOperator, build_pose_operator, load_observations,
                   normalize_measurements, pose_loss, regularization_free_init,
                   save_observations)
from .solvers import (AdmmConfig, LmConfig, admm_solve, assemble_jacobian_lr, combined_solve,
                      lm_refine)
from .synth import SynthSpec, make_scene, synth_generate
from .trace import Clock, SolveTrace

__version__ = "0.1.0"

__all__ = [
    "backend", "NrsfmProblem", "NrsfmSolution", "assemble_jacobian_nrsfm", "nrsfm_solve",
    "reconstruction_error", "weights_from_init", "verify_optimal_permutation",
    "CofactorTransform", "Factorization", "WeightVector", "balanced_factor_from_svd",
    "bilinear_penalty", "extend_to_square", "gamma", "gamma_mixing_matrix", "singular_values",
    "weighted_nuclear_norm", "wnn_prox", "ObservationSet", "PoseOperator",
    "build_pose_operator", "load_observations", "normalize_measurements", "pose_loss",
    "regularization_free_init", "save_observations", "AdmmConfig", "LmConfig", "admm_solve",
    "assemble_jacobian_lr", "combined_solve", "lm_refine", "SynthSpec", "make_scene",
    "synth_generate", "Clock", "SolveTrace",
]
