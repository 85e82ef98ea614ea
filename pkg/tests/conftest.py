import numpy as np
import pytest

from wnnlm.kernels import BACKENDS
from wnnlm.pose import ObservationSet


def random_obs(rng, F, P, frac=1.0):
    """Random observation set; every frame and point keeps at least one entry."""
    mask = rng.random((F, P)) < frac
    mask[np.arange(F), rng.integers(0, P, F)] = True
    mask[rng.integers(0, F, P), np.arange(P)] = True
    fi, pj = np.nonzero(mask)
    return ObservationSet(F, P, fi, pj, rng.standard_normal((fi.size, 2)))


def random_rotations(rng, F):
    Q, R = np.linalg.qr(rng.standard_normal((F, 3, 3)))
    Q = Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]
    Q[np.linalg.det(Q) < 0, :, 0] *= -1
    return Q


def central_gradient(f, z, h=1e-6):
    g = np.empty_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        g[k] = (f(z + e) - f(z - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(BACKENDS))
def kernel_backend(request):
    return request.param
