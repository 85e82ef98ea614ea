import numpy as np
import pytest

from wnnlm.oracle import (permutation_minimum, sample_invertible, sampled_penalties,
                          verify_optimal_permutation)


def test_ascending_weights_identity_is_optimal():
    rep = verify_optimal_permutation([3.0, 1.0], [1.0, 2.0], trials=1000)
    assert rep.analytic_min == 5.0 and rep.argmin_perm == (0, 1)
    assert rep.violations == 0 and rep.min_sampled >= 5.0 - 1e-9


def test_descending_weights_pick_the_swap():
    value, perm = permutation_minimum([3.0, 1.0], [2.0, 1.0])
    assert value == 5.0 and perm == (1, 0)


def test_tied_spectrum_has_no_violations():
    for a in ([1.0, 3.0], [2.0, 2.0]):
        rep = verify_optimal_permutation([2.0, 2.0], a, trials=300, seed=5)
        assert rep.violations == 0


def test_permutation_minimum_brute_force(rng):
    import itertools
    sigma, a = rng.random(4), rng.random(4)
    brute = min(sum(a[i] * sigma[p[i]] for i in range(4)) for p in itertools.permutations(range(4)))
    assert np.isclose(permutation_minimum(sigma, a)[0], brute)


def test_size_and_argument_errors():
    with pytest.raises(ValueError):
        permutation_minimum(np.ones(9), np.ones(9))
    with pytest.raises(ValueError):
        verify_optimal_permutation([1.0], [1.0], trials=0)
    with pytest.raises(ValueError):
        verify_optimal_permutation([1.0, 2.0], [1.0])


def test_samples_are_well_conditioned(rng):
    V = sample_invertible(rng, 3, 200)
    assert np.linalg.cond(V).max() <= 1e6


def test_sampled_penalty_matches_explicit_factorization(rng):
    sigma = np.array([3.0, 2.0, 0.5])
    a = np.array([0.1, 0.5, 1.0])
    V = sample_invertible(rng, 3, 5)
    B, C = np.diag(np.sqrt(sigma)), np.diag(np.sqrt(sigma))
    for k, Vk in enumerate(V):
        Bk, Ck = B @ Vk, C @ np.linalg.inv(Vk).T
        gamma = 0.5 * ((Bk ** 2).sum(0) + (Ck ** 2).sum(0))
        assert np.isclose(sampled_penalties(sigma, a, V)[k], a @ gamma, rtol=1e-12)


def test_report_row_is_flat():
    row = verify_optimal_permutation([3.0, 1.0], [1.0, 2.0], trials=10).as_row()
    assert row["argmin_perm"] == "0 1" and row["trials"] == 10
