import numpy as np
import pytest

from flcreg.errors import NumericalError
from flcreg.solver import (
    Group,
    GroupDesign,
    PenaltySpec,
    default_lambda_grid,
    group_threshold,
    lambda_max,
    objective_value,
    orthonormalize_groups,
    penalty_value,
    solve,
    solve_path,
)


def two_group_design(seed=42, n=30, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    beta = np.array([1.0, -2.0, 0.5, 3.0])
    y = X @ beta + noise * rng.normal(size=n)
    groups = [Group("g1", 0, 2), Group("g2", 2, 2)]
    return GroupDesign(X=X, y=y, groups=groups)


# ---------------------------------------------------------------------------
# penalty formulas


class TestPenaltyValue:
    @pytest.mark.parametrize("family,phi", [
        ("group_lasso", None), ("group_scad", 4.0), ("group_mcp", 3.0),
    ])
    def test_zero_norm(self, family, phi):
        assert penalty_value(PenaltySpec(family, 1.3, phi), 0.0) == 0.0

    def test_scad_saturated_branch(self):
        # 0.5 * lambda^2 * (phi + 1) once the norm passes lambda * phi
        val = penalty_value(PenaltySpec("group_scad", 1.0, 4.0), 10.0)
        assert abs(val - 2.5) < 1e-12

    def test_mcp_quadratic_branch(self):
        val = penalty_value(PenaltySpec("group_mcp", 1.0, 3.0), 0.5)
        assert abs(val - (0.5 - 0.25 / 6.0)) < 1e-12

    def test_scad_middle_branch(self):
        val = penalty_value(PenaltySpec("group_scad", 1.0, 4.0), 2.0)
        assert abs(val - (4.0 * 2.0 - 0.5 * (4.0 + 1.0)) / 3.0) < 1e-12

    def test_phi_domain_errors(self):
        with pytest.raises(ValueError):
            PenaltySpec("group_scad", 1.0, 2.0)
        with pytest.raises(ValueError):
            PenaltySpec("group_mcp", 1.0, 1.0)
        with pytest.raises(ValueError):
            PenaltySpec("group_lasso", -0.5)

    def test_defaults(self):
        assert PenaltySpec("group_scad", 1.0).phi == 4.0
        assert PenaltySpec("group_mcp", 1.0).phi == 3.0

    @pytest.mark.parametrize("family,phi", [
        ("group_lasso", None), ("group_scad", 4.0), ("group_mcp", 3.0),
    ])
    def test_continuity_at_branch_boundaries(self, family, phi):
        lam = 0.8
        spec = PenaltySpec(family, lam, phi)
        for point in [lam, 2 * lam, lam * (spec.phi or 3.0)]:
            lo = penalty_value(spec, point - 1e-9)
            hi = penalty_value(spec, point + 1e-9)
            assert abs(hi - lo) < 1e-7

    def test_scad_continuously_differentiable_interior(self):
        lam, phi = 1.0, 4.0
        spec = PenaltySpec("group_scad", lam, phi)
        h = 1e-6
        for point in [lam, lam * phi]:
            left = (penalty_value(spec, point) - penalty_value(spec, point - h)) / h
            right = (penalty_value(spec, point + h) - penalty_value(spec, point)) / h
            assert abs(left - right) < 1e-4


class TestGroupThreshold:
    @pytest.mark.parametrize("family,phi", [
        ("group_lasso", None), ("group_scad", 4.0), ("group_mcp", 3.0),
    ])
    def test_zero_input(self, family, phi):
        out = group_threshold(PenaltySpec(family, 1.0, phi), np.zeros(3))
        assert np.all(out == 0.0)

    def test_mcp_identity_beyond_taper(self):
        z = np.array([3.0, 4.0])  # norm 5 > lambda * phi = 3
        out = group_threshold(PenaltySpec("group_mcp", 1.0, 3.0), z)
        np.testing.assert_allclose(out, z)
        # oracle: 1-D grid minimization of 0.5 (x - 5)^2 + P_mcp(x)
        xs = np.linspace(0.0, 7.5, 150_001)
        spec = PenaltySpec("group_mcp", 1.0, 3.0)
        objs = 0.5 * (xs - 5.0) ** 2 + np.array([penalty_value(spec, x) for x in xs])
        assert abs(xs[np.argmin(objs)] - 5.0) < 1e-3

    def test_group_lasso_soft_threshold(self):
        z = np.array([3.0, 4.0])
        out = group_threshold(PenaltySpec("group_lasso", 1.0), z)
        np.testing.assert_allclose(out, [2.4, 3.2], atol=1e-12)
        # oracle: 2-D lattice minimization of the blockwise objective
        spec = PenaltySpec("group_lasso", 1.0)
        g1, g2 = np.meshgrid(np.linspace(1.5, 3.5, 401), np.linspace(2.5, 4.5, 401))
        norms = np.hypot(g1, g2)
        objs = 0.5 * ((g1 - 3.0) ** 2 + (g2 - 4.0) ** 2) + spec.lam * norms
        k = np.unravel_index(np.argmin(objs), objs.shape)
        np.testing.assert_allclose([g1[k], g2[k]], [2.4, 3.2], atol=0.01)

    @pytest.mark.parametrize("family,phi", [
        ("group_lasso", None), ("group_scad", 4.0), ("group_mcp", 3.0),
    ])
    def test_prox_optimality_on_grid(self, family, phi):
        # every threshold output must beat a dense line search of its objective
        rng = np.random.default_rng(3)
        spec_by_norm = {}
        for _ in range(50):
            lam = rng.uniform(0.05, 2.0)
            spec = PenaltySpec(family, lam, phi)
            z = rng.normal(0, 2.0, size=2)
            out = group_threshold(spec, z)
            u = np.linalg.norm(z)
            d = z / u if u > 0 else np.array([1.0, 0.0])
            ts = np.linspace(0.0, u * 1.2 + 1.0, 20_001)
            objs = 0.5 * (ts - u) ** 2 + np.array(
                [penalty_value(spec, t) for t in ts])
            best = objs.min()
            got = 0.5 * np.sum((out - z) ** 2) + penalty_value(
                spec, float(np.linalg.norm(out)))
            assert got <= best + 1e-6 * max(1.0, abs(best))


# ---------------------------------------------------------------------------
# orthonormalization


class TestOrthonormalize:
    def test_already_orthonormal_identity_transform(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(20, 3)))
        d = GroupDesign(X=q, y=np.zeros(20), groups=[Group("g", 0, 3)])
        od = orthonormalize_groups(d)
        np.testing.assert_allclose(od.transforms[0].forward, np.eye(3))
        np.testing.assert_allclose(od.X, q)

    def test_scaled_block_back_transform(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(25, 2))
        y = X @ np.array([1.0, 2.0]) + 0.05 * rng.normal(size=25)
        c = 7.0
        d1 = GroupDesign(X=X, y=y, groups=[Group("g", 0, 2)])
        d2 = GroupDesign(X=c * X, y=y, groups=[Group("g", 0, 2)])
        r1 = solve(d1, PenaltySpec("group_lasso", 0.01), tol=1e-10)
        r2 = solve(d2, PenaltySpec("group_lasso", 0.01), tol=1e-10)
        np.testing.assert_allclose(r2.gamma, r1.gamma / c, rtol=1e-6)
        np.testing.assert_allclose(X @ r1.gamma, (c * X) @ r2.gamma, rtol=1e-6)

    def test_zero_block_degenerate(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(15, 4))
        X[:, 2:] = 0.0
        y = X[:, 0] + rng.normal(size=15)
        d = GroupDesign(X=X, y=y, groups=[Group("a", 0, 2), Group("b", 2, 2)])
        od = orthonormalize_groups(d)
        assert od.groups[1].degenerate and od.groups[1].size == 0
        res = solve(d, PenaltySpec("group_lasso", 0.01))
        assert np.all(res.gamma[2:] == 0.0)
        assert res.active_set == [0]

    def test_rank_deficient_block_keeps_nonzero_directions(self):
        rng = np.random.default_rng(3)
        col = rng.normal(size=(30, 1))
        X = np.concatenate([col, 2 * col, rng.normal(size=(30, 2))], axis=1)
        d = GroupDesign(X=X, y=rng.normal(size=30),
                        groups=[Group("a", 0, 2), Group("b", 2, 2)])
        od = orthonormalize_groups(d)
        assert od.groups[0].size == 1
        assert od.groups[1].size == 2


# ---------------------------------------------------------------------------
# solve / path


class TestSolve:
    def test_unpenalized_limit_matches_least_squares(self):
        d = two_group_design()
        res = solve(d, PenaltySpec("group_lasso", 0.0), tol=1e-10)
        ls = np.linalg.lstsq(d.X, d.y, rcond=None)[0]
        assert np.max(np.abs(res.gamma - ls)) <= 1e-6
        assert res.converged

    def test_all_zero_at_lambda_max(self):
        d = two_group_design()
        lam = lambda_max(d)
        res = solve(d, PenaltySpec("group_lasso", lam * (1 + 1e-10)))
        assert np.all(res.gamma == 0.0)
        # KKT oracle at the origin: blockwise gradients do not exceed lam
        od = orthonormalize_groups(d)
        s = np.sqrt(od.n_rows / 2.0)
        for g in od.groups:
            assert np.linalg.norm(od.X[:, g.sl].T @ od.y) / s <= lam * (1 + 1e-9)
        just_below = solve(d, PenaltySpec("group_lasso", lam * 0.99))
        assert len(just_below.active_set) >= 1

    def test_mcp_beats_lattice_oracle(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(20, 4))
        y = X @ np.array([1.2, -0.4, 0.0, 0.1]) + 0.3 * rng.normal(size=20)
        d = orthonormalize_groups(GroupDesign(
            X=X, y=y, groups=[Group("a", 0, 2), Group("b", 2, 2)]))
        lam = 0.4 * lambda_max(d)
        spec = PenaltySpec("group_mcp", lam)
        res = solve(d, spec, tol=1e-9)
        ls = np.linalg.lstsq(d.X, d.y, rcond=None)[0]
        axes = [np.arange(v - 2.0, v + 2.0 + 1e-12, 0.05) for v in ls]
        best = np.inf
        g2a, g2b = np.meshgrid(axes[2], axes[3], indexing="ij")
        pair2 = np.stack([g2a.ravel(), g2b.ravel()], axis=1)
        for a in axes[0]:
            for b in axes[1]:
                g = np.zeros(4)
                g[0], g[1] = a, b
                base = d.y - d.X[:, :2] @ g[:2]
                rss = ((base[:, None] - d.X[:, 2:] @ pair2.T) ** 2).sum(axis=0)
                s = np.sqrt(d.n_rows / 2.0)
                pen1 = penalty_value(spec, np.hypot(a, b) / s)
                pens = np.array([penalty_value(spec, np.linalg.norm(p) / s)
                                 for p in pair2])
                vals = rss + d.n_rows * (pen1 + pens)
                best = min(best, vals.min())
        assert res.objective <= best + 1e-6 * max(1.0, abs(best))

    def test_nonfinite_design_raises(self):
        d = two_group_design()
        d.X[0, 0] = np.nan
        with pytest.raises(NumericalError):
            solve(d, PenaltySpec("group_lasso", 0.1))

    def test_kkt_certificate_group_lasso(self):
        d = two_group_design(seed=9)
        lam = 0.3 * lambda_max(d)
        res = solve(d, PenaltySpec("group_lasso", lam), tol=1e-9)
        assert res.converged
        assert res.kkt_residual <= 1e-6 * max(lam, 1.0)

    def test_objective_monotone_group_lasso(self):
        d = two_group_design(seed=10)
        lam = 0.2 * lambda_max(d)
        res = solve(d, PenaltySpec("group_lasso", lam), track_objective=True)
        h = np.asarray(res.objective_history)
        assert np.all(np.diff(h) <= 1e-12 * np.maximum(np.abs(h[:-1]), 1.0))

    @pytest.mark.parametrize("family", ["group_scad", "group_mcp"])
    def test_objective_nonincreasing_nonconvex(self, family):
        d = two_group_design(seed=12)
        lam = 0.3 * lambda_max(d)
        res = solve(d, PenaltySpec(family, lam), track_objective=True)
        h = np.asarray(res.objective_history)
        assert np.all(np.diff(h) <= 1e-9 * np.maximum(np.abs(h[:-1]), 1.0))

    @pytest.mark.parametrize("family", ["group_scad", "group_mcp"])
    def test_family_nesting_at_large_phi(self, family):
        d = two_group_design(seed=13)
        lam = 0.4 * lambda_max(d)
        base = solve(d, PenaltySpec("group_lasso", lam), tol=1e-10)
        other = solve(d, PenaltySpec(family, lam, phi=1e6), tol=1e-10)
        assert np.max(np.abs(base.gamma - other.gamma)) <= 1e-4

    def test_reparameterization_invariance(self):
        rng = np.random.default_rng(14)
        d = two_group_design(seed=14)
        M = rng.normal(size=(2, 2)) + 2 * np.eye(2)
        X2 = d.X.copy()
        X2[:, 2:] = X2[:, 2:] @ M
        d2 = GroupDesign(X=X2, y=d.y, groups=[Group("g1", 0, 2), Group("g2", 2, 2)])
        lam = 0.3 * lambda_max(d)
        r1 = solve(d, PenaltySpec("group_lasso", lam), tol=1e-10)
        r2 = solve(d2, PenaltySpec("group_lasso", lam), tol=1e-10)
        assert r1.active_set == r2.active_set
        np.testing.assert_allclose(d.X @ r1.gamma, X2 @ r2.gamma, atol=1e-6)

    def test_objective_value_matches_result(self):
        d = two_group_design(seed=15)
        spec = PenaltySpec("group_scad", 0.3 * lambda_max(d))
        res = solve(d, spec, tol=1e-9)
        assert abs(objective_value(d, res.gamma, spec) - res.objective) \
            <= 1e-8 * max(1.0, res.objective)


class TestSolvePath:
    def test_single_point_grid_all_zero(self):
        d = two_group_design()
        lam = lambda_max(d)
        pts = solve_path(d, "group_lasso", lambda_grid=np.array([lam * 1.0001]))
        assert len(pts) == 1
        assert np.all(pts[0].result.gamma == 0.0)

    def test_grid_must_descend(self):
        d = two_group_design()
        with pytest.raises(ValueError):
            solve_path(d, "group_lasso", lambda_grid=np.array([0.1, 0.2]))

    def test_active_set_monotone_group_lasso(self):
        d = two_group_design(seed=21, n=40)
        pts = solve_path(d, "group_lasso", n_lambda=30)
        sizes = [len(p.result.active_set) for p in pts]
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))
        # cold-start oracle agrees at every grid point
        for p in pts[::7]:
            cold = solve(d, PenaltySpec("group_lasso", p.lam), tol=1e-9)
            assert cold.active_set == p.result.active_set

    def test_warm_equals_cold_objectives(self):
        d = two_group_design(seed=22)
        pts = solve_path(d, "group_lasso", n_lambda=20)
        for p in pts:
            cold = solve(d, PenaltySpec("group_lasso", p.lam), tol=1e-9)
            rel = abs(p.result.objective - cold.objective) / max(1.0, cold.objective)
            assert rel <= 1e-6

    def test_default_grid_shape(self):
        grid = default_lambda_grid(10.0, 100, 0.001)
        assert grid.size == 100
        assert grid[0] == 10.0
        assert abs(grid[-1] - 0.01) < 1e-12
        assert np.all(np.diff(grid) < 0)
