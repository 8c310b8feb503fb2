import numpy as np
import pytest

from flcreg.basis import (
    curvature_matrix,
    gram_matrix,
    make_basis,
    penalty_matrices,
    penalty_root,
)
from flcreg.errors import NumericalError


def trapz_grid(a, b, n=100_001):
    return np.linspace(a, b, n)


class TestMakeBasis:
    def test_equally_spaced_interior_knots(self):
        basis = make_basis((0.0, 1.0), 8, 3)
        interior = basis.knots[4:-4]
        np.testing.assert_allclose(interior, [0.2, 0.4, 0.6, 0.8], atol=1e-15)
        assert basis.num_basis == 8
        # clamped boundary multiplicity
        assert np.all(basis.knots[:4] == 0.0) and np.all(basis.knots[-4:] == 1.0)

    def test_partition_of_unity_at_midpoint(self):
        basis = make_basis((0.0, 1.0), 8, 3)
        assert abs(basis.evaluate(0.5).sum() - 1.0) < 1e-12

    def test_partition_of_unity_random_points(self):
        basis = make_basis((0.0, 1.0), 10, 3)
        pts = np.random.default_rng(0).uniform(0.0, 1.0, 1000)
        sums = basis.evaluate(pts).sum(axis=1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-10

    def test_nonnegative_and_local(self):
        basis = make_basis((0.0, 1.0), 10, 3)
        pts = np.linspace(0, 1, 501)
        vals = basis.evaluate(pts)
        assert vals.min() >= -1e-14
        # local support: the first basis function vanishes on the right half
        assert np.max(np.abs(vals[pts > 0.5, 0])) == 0.0

    def test_too_few_basis_functions_rejected(self):
        with pytest.raises(ValueError):
            make_basis((0.0, 100.0), 3, 3)

    def test_empty_domain_rejected(self):
        with pytest.raises(ValueError):
            make_basis((1.0, 1.0), 8, 3)


class TestGramMatrix:
    def test_degree_zero_equal_pieces(self):
        basis = make_basis((0.0, 1.0), 4, 0)
        R = gram_matrix(basis)
        np.testing.assert_allclose(R, 0.25 * np.eye(4), atol=1e-14)

    def test_exact_symmetry(self):
        basis = make_basis((0.0, 1.0), 8, 3)
        R = gram_matrix(basis)
        assert np.array_equal(R, R.T)

    def test_against_trapezoid_oracle(self):
        basis = make_basis((0.0, 1.0), 8, 3)
        R = gram_matrix(basis)
        grid = trapz_grid(0.0, 1.0)
        theta = basis.evaluate(grid)
        oracle = np.trapezoid(theta[:, :, None] * theta[:, None, :], grid, axis=0)
        assert np.max(np.abs(R - oracle)) <= 1e-8

    def test_positive_definite(self):
        basis = make_basis((0.0, 100.0), 10, 3)
        vals = np.linalg.eigvalsh(gram_matrix(basis))
        assert vals.min() > 0


class TestCurvatureMatrix:
    def test_piecewise_linear_has_zero_curvature(self):
        basis = make_basis((0.0, 1.0), 5, 1)
        assert np.all(curvature_matrix(basis) == 0.0)

    def test_affine_null_space(self):
        basis = make_basis((0.0, 1.0), 8, 3)
        Q = curvature_matrix(basis)
        b = basis.greville()  # reproduces f(t) = t
        assert abs(b @ Q @ b) <= 1e-10
        ones = np.ones(basis.num_basis)  # partition of unity: constants
        assert abs(ones @ Q @ ones) <= 1e-10

    def test_against_finite_difference_oracle(self):
        # finite differences per knot span (second derivatives kink at the
        # knots, so stencils must not straddle them; one-sided stencils at
        # the span ends are exact for cubic pieces) + trapezoid
        basis = make_basis((0.0, 1.0), 8, 3)
        Q = curvature_matrix(basis)
        breaks = np.unique(basis.knots)
        oracle = np.zeros_like(Q)
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            grid = np.linspace(lo, hi, 20_001)
            h = grid[1] - grid[0]
            theta = basis.evaluate(grid)
            d2 = np.empty_like(theta)
            d2[1:-1] = (theta[2:] - 2 * theta[1:-1] + theta[:-2]) / h**2
            d2[0] = (theta[0] - 2 * theta[1] + theta[2]) / h**2
            d2[-1] = (theta[-1] - 2 * theta[-2] + theta[-3]) / h**2
            oracle += np.trapezoid(d2[:, :, None] * d2[:, None, :], grid, axis=0)
        assert np.max(np.abs(Q - oracle)) <= 1e-6 * np.abs(oracle).max()

    def test_positive_semidefinite(self):
        basis = make_basis((0.0, 50.0), 9, 3)
        vals = np.linalg.eigvalsh(curvature_matrix(basis))
        assert vals.min() >= -1e-9 * max(vals.max(), 1.0)


class TestPenaltyRoot:
    def test_identity_with_zero_curvature(self):
        pm = penalty_root(np.eye(2), np.zeros((2, 2)), 5.0)
        np.testing.assert_allclose(pm.root, np.eye(2), atol=1e-14)

    def test_diagonal_cholesky(self):
        pm = penalty_root(np.eye(2), np.diag([3.0, 0.0]), 1.0)
        np.testing.assert_allclose(pm.root, np.diag([2.0, 1.0]), atol=1e-14)

    def test_random_pd_pair_factorization(self):
        rng = np.random.default_rng(11)
        A = rng.normal(size=(6, 6))
        R = A @ A.T + 6 * np.eye(6)
        B = rng.normal(size=(6, 3))
        Q = B @ B.T
        pm = penalty_root(R, Q, 2.5)
        err = np.max(np.abs(pm.root @ pm.root.T - pm.combined))
        assert err <= 1e-9 * np.max(np.abs(pm.combined))

    def test_negative_psi_rejected(self):
        with pytest.raises(ValueError):
            penalty_root(np.eye(2), np.eye(2), -1.0)

    def test_jitter_retry_on_near_singular(self):
        # exactly singular PSD "gram": jitter must rescue the factorization
        R = np.array([[1.0, 1.0], [1.0, 1.0]])
        pm = penalty_root(R, np.zeros((2, 2)), 0.0)
        assert np.all(np.isfinite(pm.root))

    def test_hard_failure_raises(self):
        R = np.array([[0.0, 0.0], [0.0, -1.0]])  # not PSD at all
        with pytest.raises(NumericalError):
            penalty_root(R, np.zeros((2, 2)), 0.0)


class TestPenaltyIdentities:
    """The identities that let the functional penalty become a group norm."""

    @pytest.mark.parametrize("psi", [0.0, 0.1, 1.0, 10.0])
    def test_quadratic_form_matches_function_integrals(self, psi):
        basis = make_basis((0.0, 1.0), 8, 3)
        pm = penalty_matrices(basis, psi)
        grid = trapz_grid(0.0, 1.0)
        theta = basis.evaluate(grid)
        d2 = basis.evaluate(grid, deriv=2)
        rng = np.random.default_rng(5)
        for _ in range(20):
            b = rng.normal(size=8)
            f = theta @ b
            f2 = d2 @ b
            oracle = np.trapezoid(f * f, grid) + psi * np.trapezoid(f2 * f2, grid)
            val = b @ pm.combined @ b
            assert abs(val - oracle) <= 1e-6 * max(1.0, abs(oracle))

    def test_root_norm_equals_quadratic_form(self):
        basis = make_basis((0.0, 100.0), 10, 3)
        pm = penalty_matrices(basis, 3.0)
        rng = np.random.default_rng(6)
        for _ in range(20):
            b = rng.normal(size=10)
            lhs = np.sum((pm.root.T @ b) ** 2)
            rhs = b @ pm.combined @ b
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))
