import numpy as np
import pytest
import scipy.sparse as sp

from rdms.linalg import (
    BoundSolver,
    LinearSolveError,
    LinearSolveSpec,
    eig_sym_smallest,
    solve_linear,
    spmv,
)

from oracles import jacobi_full_spectrum


def random_spd(n, rng):
    b = rng.standard_normal((n, n))
    return sp.csr_matrix(b.T @ b + n * np.eye(n))


class TestSpmv:
    def test_zero_matrix(self):
        a = sp.csr_matrix((3, 3))
        np.testing.assert_array_equal(spmv(a, np.ones(3)), np.zeros(3))

    def test_identity_pattern(self):
        a = sp.identity(4, format="csr")
        x = np.array([1.0, -2.0, 3.0, 0.5])
        np.testing.assert_array_equal(spmv(a, x), x)

    def test_random_sparse_against_dense(self, rng):
        dense = rng.standard_normal((8, 8)) * (rng.random((8, 8)) < 0.4)
        a = sp.csr_matrix(dense)
        x = rng.standard_normal(8)
        assert np.abs(spmv(a, x) - dense @ x).max() < 1e-14

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            spmv(sp.identity(3, format="csr"), np.ones(4))


class TestSolveLinear:
    def test_diagonal_with_jacobi_converges_immediately(self):
        a = sp.diags([2.0, 4.0, 8.0], format="csr")
        b = np.array([2.0, 8.0, 32.0])
        spec = LinearSolveSpec(method="iterative", preconditioner="jacobi")
        x, iters = solve_linear(a, b, spec, symmetric=True)
        np.testing.assert_allclose(x, [1.0, 2.0, 4.0], rtol=1e-12)
        assert iters <= 2

    def test_zero_rhs_returns_zero(self):
        a = sp.identity(5, format="csr")
        x, iters = solve_linear(a, np.zeros(5))
        np.testing.assert_array_equal(x, np.zeros(5))
        assert iters == 0

    @pytest.mark.parametrize(
        "spec,symmetric",
        [
            (LinearSolveSpec(method="direct"), False),
            (LinearSolveSpec(method="iterative", preconditioner="jacobi", rel_tol=1e-12), True),
            (LinearSolveSpec(method="iterative", preconditioner="none", rel_tol=1e-12), True),
            (LinearSolveSpec(method="iterative", preconditioner="ilu", rel_tol=1e-12), False),
        ],
    )
    def test_spd_system_against_dense_oracle(self, rng, spec, symmetric):
        a = random_spd(50, rng)
        b = rng.standard_normal(50)
        expected = np.linalg.solve(a.toarray(), b)
        x, _ = solve_linear(a, b, spec, symmetric=symmetric)
        assert np.linalg.norm(x - expected) / np.linalg.norm(expected) < 1e-8

    def test_nonsymmetric_system_with_gmres_ilu(self, rng):
        dense = rng.standard_normal((40, 40)) + 40 * np.eye(40)
        a = sp.csr_matrix(dense)
        b = rng.standard_normal(40)
        x, _ = solve_linear(a, b, LinearSolveSpec(method="iterative", preconditioner="ilu"))
        expected = np.linalg.solve(dense, b)
        assert np.linalg.norm(x - expected) / np.linalg.norm(expected) < 1e-8

    def test_nonconvergence_raises_with_residual(self, rng):
        a = random_spd(60, rng)
        b = rng.standard_normal(60)
        spec = LinearSolveSpec(
            method="iterative", preconditioner="none", rel_tol=1e-14, max_iters=2
        )
        with pytest.raises(LinearSolveError) as err:
            solve_linear(a, b, spec, symmetric=True)
        assert err.value.residual > 0
        assert err.value.iterations >= 2

    def test_solution_residual_verified(self, rng):
        # the returned residual claim must hold when recomputed
        a = random_spd(30, rng)
        b = rng.standard_normal(30)
        for spec in (LinearSolveSpec(), LinearSolveSpec(method="iterative", preconditioner="jacobi")):
            x, _ = solve_linear(a, b, spec, symmetric=True)
            assert np.linalg.norm(b - a @ x) <= 1e-9 * np.linalg.norm(b)

    def test_bound_solver_reuses_factorization(self, rng):
        a = random_spd(25, rng)
        solver = BoundSolver(a, LinearSolveSpec(method="direct"))
        x1, _ = solver.solve(rng.standard_normal(25))
        assert solver._factor is not None
        factor = solver._factor
        solver.solve(rng.standard_normal(25))
        assert solver._factor is factor

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            LinearSolveSpec(method="magic")
        with pytest.raises(ValueError):
            LinearSolveSpec(rel_tol=1.5)
        with pytest.raises(ValueError):
            LinearSolveSpec(max_iters=0)


class TestEigSymSmallest:
    def test_diagonal_matrix(self):
        vals, vecs = eig_sym_smallest(np.diag([3.0, 1.0, 2.0]), 2)
        np.testing.assert_allclose(vals, [1.0, 2.0])
        np.testing.assert_allclose(np.abs(vecs), [[0, 0], [1, 0], [0, 1]], atol=1e-14)
        assert vecs[1, 0] > 0 and vecs[2, 1] > 0

    @pytest.mark.parametrize("t", [0.7, 1e-3])
    def test_two_cell_closed_form(self, t):
        a = np.array([[t, -t], [-t, t]])
        vals, vecs = eig_sym_smallest(a, 2)
        np.testing.assert_allclose(vals, [0.0, 2.0 * t], atol=1e-14)
        np.testing.assert_allclose(np.abs(vecs[:, 1]), 1.0 / np.sqrt(2.0), rtol=1e-12)

    def test_against_jacobi_rotation_oracle(self, rng):
        b = rng.standard_normal((30, 30))
        a = (b + b.T) / 2.0
        vals, vecs = eig_sym_smallest(a, 7)
        oracle_vals, oracle_vecs = jacobi_full_spectrum(a)
        np.testing.assert_allclose(vals, oracle_vals[:7], atol=1e-9)
        for c in range(7):
            overlap = abs(vecs[:, c] @ oracle_vecs[:, c])
            assert overlap == pytest.approx(1.0, abs=1e-8)

    def test_orthonormal_columns(self, rng):
        b = rng.standard_normal((20, 20))
        a = b + b.T
        _, vecs = eig_sym_smallest(a, 6)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(6), atol=1e-10)

    def test_residual_contract(self, rng):
        b = rng.standard_normal((25, 25))
        a = b + b.T
        vals, vecs = eig_sym_smallest(a, 5)
        norm = np.linalg.norm(a, 2)
        for c in range(5):
            res = np.linalg.norm(a @ vecs[:, c] - vals[c] * vecs[:, c])
            assert res <= 1e-10 * norm

    def test_sign_convention(self, rng):
        b = rng.standard_normal((12, 12))
        a = b + b.T
        _, vecs = eig_sym_smallest(a, 4)
        for c in range(4):
            lead = np.argmax(np.abs(vecs[:, c]))
            assert vecs[lead, c] > 0

    def test_deterministic(self, rng):
        b = rng.standard_normal((15, 15))
        a = b + b.T
        v1, w1 = eig_sym_smallest(a, 5)
        v2, w2 = eig_sym_smallest(a, 5)
        assert np.array_equal(v1, v2)
        assert np.array_equal(w1, w2)

    def test_rejects_asymmetric(self, rng):
        a = rng.standard_normal((6, 6))
        with pytest.raises(ValueError):
            eig_sym_smallest(a, 2)

    def test_rejects_too_many_pairs(self):
        with pytest.raises(ValueError):
            eig_sym_smallest(np.eye(3), 4)
