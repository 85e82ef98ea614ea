"""Synthetic deforming scenes seen by cameras with known rotations."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .nrsfm import reshape_from_sharp, save_rotations, save_structure
from .pose import ObservationSet, save_observations

CAMERAS = ("perspective", "affine")


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    """Scene size and corruption.

    ``noise_std`` is relative to the RMS of the clean image coordinates.
    ``camera="perspective"`` projects ``(x/z, y/z)`` and matches ``eta = 0``;
    ``camera="affine"`` keeps ``(x, y)`` and matches ``eta = 1``.
    """

    F: int = 10
    P: int = 20
    K: int = 2
    noise_std: float = 0.0
    missing_fraction: float = 0.0
    camera: str = "perspective"
    depth_offset: float = 5.0

    def __post_init__(self):
        if self.F < 1 or self.P < 1 or self.K < 1:
            raise SynthesisError("F, P and K must be positive")
        if self.noise_std < 0:
            raise SynthesisError("noise_std must be non-negative")
        if not (0.0 <= self.missing_fraction < 1.0):
            raise SynthesisError("missing_fraction must lie in [0, 1)")
        if self.camera not in CAMERAS:
            raise SynthesisError(f"camera must be one of {CAMERAS}")
        if self.depth_offset <= 0:
            raise SynthesisError("depth_offset must be positive")


@dataclass(frozen=True)
class SynthScene:
    obs: ObservationSet
    R: np.ndarray  # F x 3 x 3
    B: np.ndarray  # F x K
    C: np.ndarray  # 3P x K
    t: np.ndarray  # 3F

    @property
    def structure(self) -> np.ndarray:
        """World points ``g(B C^T)``, ``3F x P``."""
        return reshape_from_sharp(self.B @ self.C.T)

    @property
    def camera_points(self) -> np.ndarray:
        X = self.structure
        F = self.R.shape[0]
        out = np.concatenate([self.R[i] @ X[3 * i: 3 * i + 3] for i in range(F)])
        return out + self.t[:, None]


def _visibility(rng, F, P, missing_fraction):
    """Drop ``round(missing_fraction F P)`` entries keeping each row and column nonempty."""
    mask = np.ones((F, P), dtype=bool)
    target = int(round(missing_fraction * F * P))
    if target > F * P - max(F, P):
        raise SynthesisError(f"cannot remove {target} of {F * P} entries and keep "
                             "every frame and point observed")
    rows = np.full(F, P)
    cols = np.full(P, F)
    removed = 0
    for flat in rng.permutation(F * P):
        if removed == target:
            break
        i, j = divmod(int(flat), P)
        if rows[i] > 1 and cols[j] > 1:
            mask[i, j] = False
            rows[i] -= 1
            cols[j] -= 1
            removed += 1
    if removed < target:
        raise SynthesisError(f"only {removed} of {target} entries could be removed")
    return mask


def make_scene(spec: SynthSpec, seed: int = 0) -> SynthScene:
    rng = np.random.default_rng(seed)
    F, P, K = spec.F, spec.P, spec.K
    R = Rotation.random(F, random_state=rng).as_matrix().reshape(F, 3, 3)
    # mean shape plus smaller deformation modes, all centred on the origin
    basis = rng.standard_normal((K, 3, P))
    basis -= basis.mean(axis=2, keepdims=True)
    basis[1:] *= 0.3
    coef = np.empty((F, K))
    coef[:, 0] = 1.0 + 0.1 * rng.standard_normal(F)
    coef[:, 1:] = rng.standard_normal((F, K - 1))
    B = coef
    C = basis.reshape(K, 3 * P).T
    t = np.zeros((F, 3))
    t[:, :2] = 0.2 * rng.standard_normal((F, 2))
    t[:, 2] = spec.depth_offset
    t = t.ravel()
    scene = SynthScene(obs=None, R=R, B=B, C=C, t=t)
    Xc = scene.camera_points
    x, y, z = Xc[0::3], Xc[1::3], Xc[2::3]
    if spec.camera == "perspective":
        if np.any(z <= 0):
            raise SynthesisError("points behind a camera; increase depth_offset")
        u, v = x / z, y / z
    else:
        u, v = x, y
    mask = _visibility(rng, F, P, spec.missing_fraction)
    fi, pj = np.nonzero(mask)
    uv = np.stack([u[fi, pj], v[fi, pj]], axis=1)
    if spec.noise_std > 0:
        rms = np.sqrt(np.mean(uv ** 2))
        uv = uv + spec.noise_std * rms * rng.standard_normal(uv.shape)
    return SynthScene(obs=ObservationSet(F, P, fi, pj, uv), R=R, B=B, C=C, t=t)


def synth_generate(spec: SynthSpec, seed: int, out_dir, eval_frame: int = 0):
    """Write ``obs.txt``, ``rotations.txt`` and ``gt.txt``; return ``(B, C, t)``.

    The ground-truth file holds the world structure of ``eval_frame``.
    """
    if not 0 <= eval_frame < spec.F:
        raise SynthesisError(f"eval_frame {eval_frame} outside 0..{spec.F - 1}")
    scene = make_scene(spec, seed)
    os.makedirs(out_dir, exist_ok=True)
    save_observations(scene.obs, os.path.join(out_dir, "obs.txt"))
    save_rotations(scene.R, os.path.join(out_dir, "rotations.txt"))
    save_structure(scene.structure[3 * eval_frame: 3 * eval_frame + 3],
                   os.path.join(out_dir, "gt.txt"))
    return scene.B, scene.C, scene.t
