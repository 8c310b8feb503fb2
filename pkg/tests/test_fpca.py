import numpy as np
import pytest

from flcreg.errors import NumericalError
from flcreg.fpca import (
    FpcaModel,
    FunctionalObservations,
    eigendecompose,
    estimate_covariance,
    estimate_mean,
    fit_fpca,
    pace_scores,
    pooled_mean,
    reconstruct,
)

T = 100.0


def kl_process(n, grid, lambdas=(4.0, 1.0), noise_sd=0.0, seed=0):
    """Two-component expansion with known scores; returns (curves, scores)."""
    rng = np.random.default_rng(seed)
    phi1 = np.sqrt(2.0 / T) * np.sin(2 * np.pi * grid / T)
    phi2 = np.sqrt(2.0 / T) * np.cos(2 * np.pi * grid / T)
    mu = 1.0 + 0.01 * grid
    xi = rng.normal(0.0, 1.0, (n, 2)) * np.sqrt(lambdas)
    curves = mu[None, :] + xi[:, 0:1] * phi1[None, :] + xi[:, 1:2] * phi2[None, :]
    if noise_sd > 0:
        curves = curves + rng.normal(0.0, noise_sd, curves.shape)
    return curves, xi, mu, np.stack([phi1, phi2], axis=1)


def dense_obs(curves, grid):
    return FunctionalObservations(
        (0.0, T), [grid] * curves.shape[0], [c for c in curves])


class TestEstimateMean:
    def test_constant_reproduced(self):
        grid = np.linspace(0, T, 41)
        obs = FunctionalObservations(
            (0.0, T), [grid] * 5, [np.full(41, 3.25)] * 5)
        mu = estimate_mean(obs, np.linspace(0, T, 101), bandwidth=10.0)
        assert np.max(np.abs(mu - 3.25)) <= 1e-8

    def test_sine_mean_dense_noiseless(self):
        rng = np.random.default_rng(0)
        times = [np.sort(rng.uniform(0, T, 60)) for _ in range(50)]
        vals = [np.sin(np.pi * t / 50.0) for t in times]
        obs = FunctionalObservations((0.0, T), times, vals)
        grid = np.linspace(0, T, 101)
        mu = estimate_mean(obs, grid, bandwidth=5.0)
        assert np.max(np.abs(mu - np.sin(np.pi * grid / 50.0))) <= 0.02

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            FunctionalObservations((0.0, T), [], [])

    def test_bad_bandwidth_rejected(self):
        grid = np.linspace(0, T, 11)
        obs = FunctionalObservations((0.0, T), [grid], [np.zeros(11)])
        with pytest.raises(ValueError):
            estimate_mean(obs, grid, bandwidth=0.0)


class TestEstimateCovariance:
    def test_white_noise_only(self):
        rng = np.random.default_rng(1)
        grid = np.linspace(0, T, 51)
        obs = FunctionalObservations(
            (0.0, T), [grid] * 200, [rng.normal(0, 1, 51) for _ in range(200)])
        mean = estimate_mean(obs, grid, 10.0)
        G, s2 = estimate_covariance(obs, mean, grid, 20.0)
        assert np.max(np.abs(G)) <= 0.1
        assert 0.8 <= s2 <= 1.2

    def test_symmetry_exact(self):
        rng = np.random.default_rng(2)
        times = [np.sort(rng.uniform(0, T, 8)) for _ in range(40)]
        vals = [rng.normal(0, 1) * np.cos(np.pi * t / 50) + rng.normal(0, 0.2, 8)
                for t in times]
        obs = FunctionalObservations((0.0, T), times, vals)
        grid = np.linspace(0, T, 31)
        G, _ = estimate_covariance(obs, estimate_mean(obs, grid, 10.0), grid, 20.0)
        assert np.array_equal(G, G.T)

    def test_single_eigenfunction_recovery(self):
        rng = np.random.default_rng(3)
        grid = np.linspace(0, T, 51)
        phi = np.sqrt(2.0) * np.cos(np.pi * grid / 50.0)
        curves = rng.normal(0, 2.0, (200, 1)) * phi[None, :]
        obs = dense_obs(curves, grid)
        mean = estimate_mean(obs, grid, 10.0)
        G, _ = estimate_covariance(obs, mean, grid, 20.0)
        lam, vecs, _, _ = eigendecompose(G, grid, 0.95)
        # analytic leading eigenvalue: Var(score) * ||phi||^2
        target = 4.0 * np.trapezoid(phi * phi, grid)
        assert abs(lam[0] - target) <= 0.25 * target

    def test_all_singletons_unidentifiable(self):
        obs = FunctionalObservations(
            (0.0, T), [np.array([10.0 * i]) for i in range(1, 9)],
            [np.array([1.0])] * 8)
        with pytest.raises(ValueError):
            estimate_covariance(obs, np.zeros(11), np.linspace(0, T, 11), 20.0)


class TestEigendecompose:
    def test_rank_one_exact(self):
        grid = np.linspace(0, T, 81)
        h = grid[1] - grid[0]
        phi = np.sin(2 * np.pi * grid / T)
        phi = phi / np.sqrt(h * np.sum(phi * phi))
        surface = 4.0 * np.outer(phi, phi)
        lam, vecs, pve, K = eigendecompose(surface, grid, 0.99)
        assert K == 1
        assert abs(lam[0] - 4.0) < 1e-9
        assert min(np.max(np.abs(vecs[:, 0] - phi)),
                   np.max(np.abs(vecs[:, 0] + phi))) < 1e-9

    def test_flat_spectrum_k_tracks_pve(self):
        grid = np.linspace(0, T, 101)
        h = grid[1] - grid[0]
        surface = np.eye(101) / h  # all functional eigenvalues equal
        _, _, _, K = eigendecompose(surface, grid, 0.95)
        assert K == int(np.ceil(0.95 * 101))

    def test_two_component_pve_boundary(self):
        grid = np.linspace(0, T, 61)
        h = grid[1] - grid[0]
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(rng.normal(size=(61, 2)))
        phi = q / np.sqrt(h)
        surface = 9.0 * np.outer(phi[:, 0], phi[:, 0]) \
            + 1.0 * np.outer(phi[:, 1], phi[:, 1])
        _, _, _, K = eigendecompose(surface, grid, 0.90)
        assert K == 1

    def test_degenerate_surface_raises(self):
        grid = np.linspace(0, T, 21)
        with pytest.raises(NumericalError):
            eigendecompose(-np.eye(21), grid, 0.95)

    def test_pve_monotone(self):
        grid = np.linspace(0, T, 61)
        rng = np.random.default_rng(5)
        A = rng.normal(size=(61, 5))
        surface = A @ np.diag([10, 5, 2, 1, 0.5]) @ A.T
        prev_k, prev_real = 0, 0.0
        for pve in [0.5, 0.8, 0.9, 0.99]:
            lam, vecs, realized, K = eigendecompose(surface, grid, pve)
            assert realized >= pve - 1e-12
            assert K >= prev_k and realized >= prev_real
            prev_k, prev_real = K, realized


class TestPaceScores:
    def grid_model(self):
        grid = np.linspace(0, T, 81)
        _, _, mu, phis = kl_process(1, grid)
        h = grid[1] - grid[0]
        return FpcaModel(
            domain=(0.0, T), grid=grid, mean=mu,
            eigenvalues=np.array([4.0, 1.0]),
            eigenfunctions=phis / np.sqrt(h * np.sum(phis[:, 0] ** 2)),
            noise_var=0.25, pve=1.0,
        )

    def test_zero_residual_gives_zero_scores(self):
        m = self.grid_model()
        t = np.linspace(0, T, 25)
        scores = pace_scores(t, m.mean_at(t), m)
        assert np.max(np.abs(scores)) == 0.0

    def test_recovers_generating_score(self):
        m = self.grid_model()
        m.noise_var = 0.0
        t = m.grid
        u = m.mean + 2.0 * m.eigenfunctions[:, 0]
        scores = pace_scores(t, u, m)
        assert abs(scores[0] - 2.0) <= 1e-2
        assert abs(scores[1]) <= 1e-2

    def test_shrinkage_monotone_in_noise(self):
        m = self.grid_model()
        t = np.linspace(0, T, 30)
        rng = np.random.default_rng(6)
        u = m.mean_at(t) + rng.normal(0, 1.0, 30)
        mags = []
        for nv in [1.0, 10.0, 100.0]:
            m.noise_var = nv
            mags.append(np.linalg.norm(pace_scores(t, u, m)))
        assert mags[0] > mags[1] > mags[2]

    def test_scores_linear_in_data(self):
        m = self.grid_model()
        t = np.linspace(5, 95, 20)
        rng = np.random.default_rng(7)
        u1, u2 = rng.normal(0, 1, 20), rng.normal(0, 1, 20)
        a = 0.3
        lhs = pace_scores(t, a * u1 + (1 - a) * u2, m)
        rhs = a * pace_scores(t, u1, m) + (1 - a) * pace_scores(t, u2, m)
        # affine in the data: the mean offset cancels in this combination
        mean_part = pace_scores(t, np.zeros(20), m)
        assert np.max(np.abs(lhs - rhs - 0 * mean_part)) <= 1e-10


class TestReconstruct:
    def make_model(self):
        grid = np.linspace(0, T, 81)
        _, _, mu, phis = kl_process(1, grid)
        h = grid[1] - grid[0]
        phis = phis / np.sqrt(h * np.sum(phis[:, 0] ** 2))
        return FpcaModel(domain=(0.0, T), grid=grid, mean=mu,
                         eigenvalues=np.array([4.0, 1.0]),
                         eigenfunctions=phis, noise_var=0.0, pve=1.0)

    def test_zero_scores_give_mean(self):
        m = self.make_model()
        t = np.linspace(0, T, 33)
        np.testing.assert_allclose(reconstruct(m, [0.0, 0.0], t), m.mean_at(t))

    def test_exact_rank_k_round_trip(self):
        m = self.make_model()
        truth = m.mean + 1.5 * m.eigenfunctions[:, 0] - 0.7 * m.eigenfunctions[:, 1]
        scores = pace_scores(m.grid, truth, m)
        rec = reconstruct(m, scores, m.grid)
        assert np.max(np.abs(rec - truth)) <= 1e-6

    def test_out_of_domain_rejected(self):
        m = self.make_model()
        with pytest.raises(ValueError):
            reconstruct(m, [0.0, 0.0], [T + 1.0])

    def test_score_dimension_checked(self):
        m = self.make_model()
        with pytest.raises(ValueError):
            reconstruct(m, [1.0], [50.0])


class TestFitFpca:
    def test_dense_noiseless_two_component(self):
        grid = np.linspace(0, T, 81)
        curves, xi, mu, phis = kl_process(200, grid, seed=8)
        model = fit_fpca(dense_obs(curves, grid), pve=0.99)
        assert model.n_components == 2
        # reconstruction error well under 1% of the process variance
        mise = 0.0
        for c in curves:
            rec = reconstruct(model, pace_scores(grid, c, model), grid)
            mise += np.mean((rec - c) ** 2)
        mise /= len(curves)
        assert mise <= 0.01 * 5.0

    def test_orthonormality_under_grid_quadrature(self):
        grid = np.linspace(0, T, 81)
        curves, *_ = kl_process(150, grid, noise_sd=0.3, seed=9)
        model = fit_fpca(dense_obs(curves, grid), pve=0.95)
        h = model.grid[1] - model.grid[0]
        inner = h * model.eigenfunctions.T @ model.eigenfunctions
        off = inner - np.eye(model.n_components)
        assert np.max(np.abs(off)) <= 1e-6

    def test_eigenvalues_sorted_positive(self):
        grid = np.linspace(0, T, 61)
        curves, *_ = kl_process(100, grid, noise_sd=0.5, seed=10)
        model = fit_fpca(dense_obs(curves, grid), pve=0.99)
        assert np.all(np.diff(model.eigenvalues) <= 1e-12)
        assert np.all(model.eigenvalues > 0)

    def test_sparse_snapped_subsets(self):
        rng = np.random.default_rng(11)
        grid = np.linspace(0, T, 81)
        curves, xi, mu, phis = kl_process(150, grid, noise_sd=0.4, seed=11)
        times, vals, keep = [], [], []
        for i in range(150):
            ix = np.sort(rng.choice(81, 30, replace=False))
            times.append(grid[ix])
            vals.append(curves[i, ix])
            keep.append(ix)
        model = fit_fpca(FunctionalObservations((0.0, T), times, vals), pve=0.95)
        assert model.grid.size == 81  # snapped to the shared grid
        assert 1 <= model.n_components <= 4
        assert model.noise_var > 0.0

    def test_irregular_smoothing_path(self):
        rng = np.random.default_rng(12)
        times = [np.sort(rng.uniform(0, T, rng.integers(6, 12)))
                 for _ in range(80)]
        vals = []
        for t in times:
            phi = np.sqrt(2 / T) * np.sin(2 * np.pi * t / T)
            vals.append(1.0 + rng.normal(0, 2) * phi + rng.normal(0, 0.3, t.size))
        model = fit_fpca(FunctionalObservations((0.0, T), times, vals), pve=0.9,
                         working_grid_size=71)
        assert model.grid.size == 71
        assert model.n_components >= 1

    def test_gap_check(self):
        times = [np.array([1.0, 2.0, 3.0])] * 5
        vals = [np.zeros(3)] * 5
        with pytest.raises(ValueError):
            fit_fpca(FunctionalObservations((0.0, T), times, vals))

    def test_pve_monotone_through_fit(self):
        grid = np.linspace(0, T, 81)
        curves, *_ = kl_process(120, grid, noise_sd=0.5, seed=13)
        obs = dense_obs(curves, grid)
        prev_k = 0
        for pve in [0.5, 0.9, 0.99]:
            m = fit_fpca(obs, pve=pve)
            assert m.pve >= pve - 1e-12
            assert m.n_components >= prev_k
            prev_k = m.n_components


class TestPooledMean:
    def test_snapped_uses_binned_means(self):
        grid = np.linspace(0, T, 21)
        obs = FunctionalObservations(
            (0.0, T), [grid, grid], [np.ones(21), 3.0 * np.ones(21)])
        mu = pooled_mean(obs, grid)
        np.testing.assert_allclose(mu, 2.0)
