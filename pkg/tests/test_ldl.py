import numpy as np
import pytest
import scipy.sparse as sp

from smpscopf.ipm import FactorizationError, SymbolicLDL, factorize


def test_identity_inertia():
    F = factorize(sp.identity(5))
    assert F.inertia.as_tuple() == (5, 0, 0)


def test_saddle_inertia():
    F = factorize(sp.csr_matrix(np.diag([1.0, -1.0])))
    assert F.inertia.as_tuple() == (1, 1, 0)


def test_singular_inertia():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert factorize(A).inertia.zero == 1


def test_random_indefinite_matches_eigenvalues():
    rng = np.random.default_rng(0)
    n = 40
    B = sp.random(n, n, density=0.1, random_state=1).toarray()
    A = B + B.T + np.diag(rng.uniform(-3, 3, n))
    F = factorize(sp.csr_matrix(A))
    ev = np.linalg.eigvalsh(A)
    assert F.inertia.as_tuple() == (int((ev > 0).sum()), int((ev < 0).sum()), 0)
    b = rng.standard_normal(n)
    np.testing.assert_allclose(A @ F.solve(b), b, atol=1e-8)


def test_lower_and_full_storage_agree():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((6, 6))
    A = B + B.T + 6 * np.eye(6)
    b = rng.standard_normal(6)
    x1 = factorize(sp.csr_matrix(A)).solve(b)
    x2 = factorize(sp.tril(sp.csr_matrix(A))).solve(b)
    np.testing.assert_allclose(x1, x2, rtol=1e-12)


def test_value_length_checked():
    sym = SymbolicLDL([0, 1], [0, 1], 2)
    with pytest.raises(FactorizationError):
        sym.factor(np.ones(sym.nnz + 1))
    with pytest.raises(FactorizationError):
        sym.factor(np.full(sym.nnz, np.nan))
