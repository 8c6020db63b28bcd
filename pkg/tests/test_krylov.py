import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from kerrdpt.errors import ConvergenceError
from kerrdpt.krylov import expv


def test_matches_dense_expm(rng):
    n = 60
    A = rng.normal(size=(n, n)) / np.sqrt(n) - 0.5 * np.eye(n) + 1j * rng.normal(size=(n, n)) / np.sqrt(n)
    v = rng.normal(size=n) + 0j
    for t in (0.1, 1.0, 7.0):
        ref = la.expm(t * A) @ v
        out = expv(t, sp.csr_matrix(A), v, rtol=1e-10)
        assert np.linalg.norm(out - ref) <= 1e-8 * np.linalg.norm(ref)


def test_zero_time_and_zero_vector(rng):
    A = sp.random(20, 20, density=0.2, random_state=1)
    v = rng.normal(size=20)
    assert np.array_equal(expv(0.0, A, v), v)
    assert np.array_equal(expv(1.0, A, np.zeros(20)), np.zeros(20))


def test_happy_breakdown_small_invariant_subspace():
    A = sp.diags([-1.0, -2.0, -3.0, -4.0])
    v = np.array([1.0, 1.0, 0, 0])
    assert np.allclose(expv(2.0, A, v), [np.exp(-2), np.exp(-4), 0, 0], atol=1e-14)


def test_step_budget():
    A = sp.diags(-np.linspace(0, 1e4, 200)) * 1j
    with pytest.raises(ConvergenceError):
        expv(1e3, A, np.ones(200), m=2, max_steps=3)
