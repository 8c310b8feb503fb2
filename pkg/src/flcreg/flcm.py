"""Concurrent functional regression: design assembly, whitening, fitting.

The response at each observed time is modeled as a linear combination of
the covariate values at that same time, with smooth time-varying
coefficients expanded in B-spline bases.  The penalized criterion over
coefficient vectors ``b_j``,

    sum_{i,l} [Y_i(t_l) - sum_j Z_ij(t_l) theta_j(t_l)' b_j]^2
        + lambda * N * sum_j sqrt(b_j' K_j b_j),

is mapped to a plain group problem through the Cholesky root of each
``K_j``: substituting ``gamma_j = L_j' b_j`` turns each penalty term
into the Euclidean norm of ``gamma_j``, and the design block for
covariate ``j`` becomes ``Z_ij(t_l) * theta_j(t_l)' L_j^{-T}``.

The full fitting pipeline optionally reconstructs noisy covariates from
their eigenexpansions, whitens rows by the inverse square root of the
estimated error covariance, and tunes (lambda, psi) by extended BIC.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import fpca
from .basis import SplineBasis, gram_matrix, curvature_matrix, make_basis, penalty_root
from .dataset import FunctionalDataset
from .errors import NumericalError
from .solver import (
    Group,
    GroupDesign,
    PenaltySpec,
    penalty_value,
    solve_path,
)
from .tuning import TuningRecord, ebic, select_model

__all__ = [
    "ConcurrentModelSpec",
    "FitConfig",
    "FitResult",
    "TuningInfo",
    "build_design",
    "whitening_root",
    "prewhiten",
    "recover_coefficients",
    "penalized_criterion",
    "fit_flcm",
    "prepare_problem",
    "tune_and_fit",
]

METHOD_FAMILY = {
    "flasso": "group_lasso",
    "fscad": "group_scad",
    "fmcp": "group_mcp",
}

INTERCEPT_NAME = "(intercept)"


@dataclass
class ConcurrentModelSpec:
    """Bases and roughness weight defining one design construction."""

    bases: list[SplineBasis]
    intercept_basis: SplineBasis | None
    psi: float = 0.0


@dataclass
class FitConfig:
    """Every knob of the fitting pipeline, with its default."""

    method: str = "fscad"
    num_basis: int = 10
    degree: int = 3
    phi: float | None = None
    psi_grid: tuple = (0.0, 0.1, 1.0, 10.0, 100.0)
    n_lambda: int = 100
    lambda_min_ratio: float = 0.001
    ebic_gamma: float = 1.0
    ebic_row_fraction: float = 1.0
    include_intercept: bool = True
    prewhiten: bool = True
    denoise_covariates: bool = True
    standardize: bool = True
    surface_basis: int | None = 15
    residual_surface_basis: int | None = None
    whiten_shrinkage: float = 0.5
    pve_covariates: float = 0.99
    pve_residual: float = 0.95
    working_grid_size: int = 101
    mean_bandwidth: float | None = None
    cov_bandwidth: float | None = None
    tol: float = 1e-7
    max_iter: int = 10_000
    ridge: float = 1e-6

    def __post_init__(self):
        if self.method not in METHOD_FAMILY:
            raise ValueError(
                f"method must be one of {sorted(METHOD_FAMILY)}, got {self.method!r}")
        if len(self.psi_grid) == 0:
            raise ValueError("psi_grid must be nonempty")
        if any(p < 0 for p in self.psi_grid):
            raise ValueError("psi values must be nonnegative")


@dataclass
class TuningInfo:
    method: str
    family: str
    lam: float
    psi: float
    phi: float | None
    ebic: float
    ebic_gamma: float
    rss: float
    df: int
    k_selected: int
    n_rows: int
    whitened: bool
    records: list[TuningRecord] = field(repr=False, default_factory=list)


@dataclass
class FitResult:
    """Selected covariates and their fitted coefficient functions.

    ``coefficients`` are spline coefficients of the curves multiplying the
    covariates on their original scale.  When the pipeline centered the
    covariates, ``intercept_coefficients`` parameterize the intercept of
    the centered model; ``intercept_curve`` undoes the centering so its
    values always refer to the original covariates.
    """

    covariate_names: list[str]
    selected: list[int]
    coefficients: list[np.ndarray] = field(repr=False)
    intercept_coefficients: np.ndarray | None
    bases: list[SplineBasis] = field(repr=False)
    intercept_basis: SplineBasis | None
    tuning: TuningInfo
    residuals: list[np.ndarray] = field(repr=False, default_factory=list)
    center_grid: np.ndarray | None = field(repr=False, default=None)
    center_means: np.ndarray | None = field(repr=False, default=None)  # (p, G)

    @property
    def selected_names(self) -> list[str]:
        return [self.covariate_names[j] for j in self.selected]

    def beta(self, j: int, t) -> np.ndarray:
        """Fitted coefficient function of covariate ``j`` at times ``t``."""
        return self.bases[j].evaluate(t) @ self.coefficients[j]

    def intercept_curve(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.intercept_basis is None:
            return np.zeros(t.size)
        out = self.intercept_basis.evaluate(t) @ self.intercept_coefficients
        if self.center_means is not None:
            for j in self.selected:
                mu_j = np.interp(t, self.center_grid, self.center_means[j])
                out = out - mu_j * self.beta(j, t)
        return out

    def beta_matrix(self, t) -> np.ndarray:
        """All coefficient functions on a grid, shape (p, len(t))."""
        return np.stack([self.beta(j, t) for j in range(len(self.covariate_names))])


# ---------------------------------------------------------------------------
# design assembly


def _stacked_times(data: FunctionalDataset) -> tuple[np.ndarray, np.ndarray]:
    times = np.concatenate([np.asarray(t, dtype=float) for t in data.response_times])
    offsets = np.zeros(data.n_subjects + 1, dtype=int)
    offsets[1:] = np.cumsum([len(t) for t in data.response_times])
    return times, offsets


def _penalty_roots(spec: ConcurrentModelSpec) -> list[np.ndarray]:
    roots = []
    cache: dict[int, np.ndarray] = {}
    for basis in spec.bases:
        key = id(basis)
        if key not in cache:
            cache[key] = penalty_root(
                gram_matrix(basis), curvature_matrix(basis), spec.psi).root
        roots.append(cache[key])
    return roots


def build_design(
    data: FunctionalDataset,
    spec: ConcurrentModelSpec,
    penalty_roots: list[np.ndarray] | None = None,
) -> GroupDesign:
    """Stacked, Cholesky-transformed group design for the concurrent model.

    Each covariate's block at row (subject i, time t) is
    ``Z_ij(t) * theta_j(t)' @ L_j^{-T}``; the intercept block, when
    present, is the raw basis evaluation and is left unpenalized.

    Raises
    ------
    ValueError
        If some covariate is not observed at every response time; such
        data needs the eigenexpansion reconstruction pass first.
    """
    if len(spec.bases) != data.n_covariates:
        raise ValueError("one basis per covariate required")
    if not data.covariates_on_response_grid():
        raise ValueError(
            "covariate values are missing at some response times; "
            "reconstruct the covariates (FPCA denoising) before building "
            "the concurrent design"
        )
    if penalty_roots is None:
        penalty_roots = _penalty_roots(spec)

    times, offsets = _stacked_times(data)
    y = np.concatenate([np.asarray(v, dtype=float) for v in data.response_values])

    blocks: list[np.ndarray] = []
    groups: list[Group] = []
    start = 0
    if spec.intercept_basis is not None:
        theta0 = spec.intercept_basis.evaluate(times)
        blocks.append(theta0)
        groups.append(Group(INTERCEPT_NAME, start, theta0.shape[1], penalized=False))
        start += theta0.shape[1]

    theta_cache: dict[int, np.ndarray] = {}
    for j, basis in enumerate(spec.bases):
        key = id(basis)
        if key not in theta_cache:
            theta_cache[key] = basis.evaluate(times)
        zvals = np.concatenate([
            np.asarray(data.covariate_values[i][j], dtype=float)
            for i in range(data.n_subjects)
        ])
        raw = theta_cache[key] * zvals[:, None]
        L = penalty_roots[j]
        block = solve_triangular(L, raw.T, lower=True).T
        blocks.append(block)
        groups.append(Group(data.covariate_names[j], start, block.shape[1]))
        start += block.shape[1]

    return GroupDesign(X=np.concatenate(blocks, axis=1), y=y,
                       groups=groups, row_offsets=offsets)


def whitening_root(sigma: np.ndarray, floor_ratio: float = 1e-8) -> np.ndarray:
    """Symmetric inverse square root with eigenvalue flooring.

    Eigenvalues below ``floor_ratio`` times the largest are raised to the
    floor (with a warning) so nearly singular covariances still whiten.
    """
    sigma = 0.5 * (np.asarray(sigma, dtype=float) + np.asarray(sigma, dtype=float).T)
    vals, vecs = np.linalg.eigh(sigma)
    vmax = vals.max()
    if not np.isfinite(vmax) or vmax <= 0:
        raise NumericalError("covariance has no positive eigenvalue; cannot whiten")
    floor = floor_ratio * vmax
    if np.any(vals < floor):
        warnings.warn(
            "covariance eigenvalues below the stability floor were raised",
            RuntimeWarning,
        )
        vals = np.maximum(vals, floor)
    return (vecs / np.sqrt(vals)) @ vecs.T


def prewhiten(design: GroupDesign, sigma: np.ndarray) -> GroupDesign:
    """Left-multiply each subject's rows by the inverse root of ``sigma``.

    Requires a shared dense grid: every subject must contribute exactly
    ``sigma.shape[0]`` rows.
    """
    if design.row_offsets is None:
        raise ValueError("design lacks per-subject row offsets")
    m = sigma.shape[0]
    counts = np.diff(design.row_offsets)
    if np.any(counts != m):
        raise ValueError(
            "whitening with a single covariance matrix needs all subjects "
            f"on one shared grid of {m} points"
        )
    W = whitening_root(sigma)
    X = design.X.copy()
    y = design.y.copy()
    for a, b in zip(design.row_offsets[:-1], design.row_offsets[1:]):
        X[a:b] = W @ X[a:b]
        y[a:b] = W @ y[a:b]
    return GroupDesign(X=X, y=y, groups=design.groups, row_offsets=design.row_offsets)


def recover_coefficients(
    gamma: np.ndarray,
    groups: list[Group],
    penalty_roots: list[np.ndarray],
    has_intercept: bool,
) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Map group coefficients back to basis coefficients ``b_j = L_j^{-T} gamma_j``."""
    intercept = None
    coefs: list[np.ndarray] = []
    ci = 0
    for g in groups:
        block = gamma[g.sl]
        if not g.penalized and has_intercept and g.name == INTERCEPT_NAME:
            intercept = block.copy()
            continue
        L = penalty_roots[ci]
        if np.any(block):
            coefs.append(solve_triangular(L.T, block, lower=False))
        else:
            coefs.append(np.zeros_like(block))
        ci += 1
    return coefs, intercept


def penalized_criterion(
    data: FunctionalDataset,
    spec: ConcurrentModelSpec,
    coefficients: list[np.ndarray],
    lam: float,
    intercept_coefficients: np.ndarray | None = None,
) -> float:
    """Directly evaluated penalized criterion at basis coefficients.

    Residual sum of squares over every observed (subject, time) pair plus
    ``lam * N * sum_j sqrt(b_j' K_j b_j)``, with ``K_j`` the combined
    size + roughness penalty at the spec's psi.  This is the quantity the
    Cholesky reparameterization maps onto the group objective.
    """
    n_rows = sum(len(t) for t in data.response_times)
    rss = 0.0
    for i in range(data.n_subjects):
        t = np.asarray(data.response_times[i], dtype=float)
        fitted = np.zeros(t.size)
        if spec.intercept_basis is not None and intercept_coefficients is not None:
            fitted += spec.intercept_basis.evaluate(t) @ intercept_coefficients
        for j, basis in enumerate(spec.bases):
            beta_t = basis.evaluate(t) @ coefficients[j]
            fitted += np.asarray(data.covariate_values[i][j], dtype=float) * beta_t
        resid = np.asarray(data.response_values[i], dtype=float) - fitted
        rss += float(resid @ resid)

    pen = 0.0
    for j, basis in enumerate(spec.bases):
        K = gram_matrix(basis) + spec.psi * curvature_matrix(basis)
        pen += math.sqrt(max(float(coefficients[j] @ K @ coefficients[j]), 0.0))
    return rss + lam * n_rows * pen


# ---------------------------------------------------------------------------
# fitting pipeline


@dataclass
class PreparedProblem:
    """Shared state for fitting several methods on one dataset."""

    data: FunctionalDataset
    bases: list[SplineBasis]
    intercept_basis: SplineBasis | None
    gram: np.ndarray
    curvature: np.ndarray
    y: np.ndarray = field(repr=False)
    intercept_block: np.ndarray | None = field(repr=False)
    cov_blocks: list[np.ndarray] = field(repr=False)
    row_offsets: np.ndarray = field(repr=False)
    whitened: bool = False
    center_grid: np.ndarray | None = field(repr=False, default=None)
    center_means: np.ndarray | None = field(repr=False, default=None)
    scales: np.ndarray | None = field(repr=False, default=None)

    @property
    def n_rows(self) -> int:
        return self.y.size


def _denoise_covariates(data: FunctionalDataset, config: FitConfig) -> FunctionalDataset:
    """Replace covariates by truncated-eigenexpansion reconstructions
    evaluated on the response grid."""
    new_vals: list[list[np.ndarray]] = [[None] * data.n_covariates
                                        for _ in range(data.n_subjects)]
    for j in range(data.n_covariates):
        obs = fpca.FunctionalObservations(
            domain=data.domain,
            times=[data.covariate_times[i][j] for i in range(data.n_subjects)],
            values=[data.covariate_values[i][j] for i in range(data.n_subjects)],
        )
        try:
            model = fpca.fit_fpca(
                obs,
                pve=config.pve_covariates,
                working_grid_size=config.working_grid_size,
                mean_bandwidth=config.mean_bandwidth,
                cov_bandwidth=config.cov_bandwidth,
                surface_basis=config.surface_basis,
            )
        except NumericalError:
            warnings.warn(
                f"covariate {data.covariate_names[j]!r} has a degenerate "
                "covariance; using its mean curve as the reconstruction",
                RuntimeWarning,
            )
            model = None
        for i in range(data.n_subjects):
            t_eval = data.response_times[i]
            if model is None:
                tt, vv = obs.pooled()
                order = np.argsort(tt)
                new_vals[i][j] = np.interp(t_eval, tt[order], vv[order])
            else:
                scores = fpca.pace_scores(
                    data.covariate_times[i][j], data.covariate_values[i][j], model)
                new_vals[i][j] = fpca.reconstruct(model, scores, t_eval)
    return FunctionalDataset(
        domain=data.domain,
        covariate_names=list(data.covariate_names),
        response_times=data.response_times,
        response_values=data.response_values,
        covariate_times=[[data.response_times[i]] * data.n_covariates
                         for i in range(data.n_subjects)],
        covariate_values=new_vals,
    )


def _ridge_residuals(y, intercept_block, cov_blocks, row_offsets, ridge):
    """Residuals of the full (all-covariate) model, ridge stabilized."""
    parts = ([intercept_block] if intercept_block is not None else []) + cov_blocks
    X = np.concatenate(parts, axis=1)
    scale = np.sqrt(np.maximum((X * X).sum(axis=0), 1e-300))
    Xs = X / scale
    A = Xs.T @ Xs
    A[np.diag_indices_from(A)] += ridge * float(np.mean(np.diag(A)))
    coef = np.linalg.solve(A, Xs.T @ y)
    resid = y - Xs @ coef
    return [resid[a:b] for a, b in zip(row_offsets[:-1], row_offsets[1:])]


def prepare_problem(data: FunctionalDataset, config: FitConfig) -> PreparedProblem:
    """Denoise covariates, assemble raw design blocks, whiten rows.

    The returned object is method independent: tuning for any penalty
    family reuses it, so a study fitting several methods on one dataset
    pays for reconstruction and whitening once.
    """
    if config.denoise_covariates:
        data = _denoise_covariates(data, config)
    elif not data.covariates_on_response_grid():
        raise ValueError(
            "covariate grids differ from the response grid; enable "
            "covariate denoising to reconstruct them"
        )

    basis = make_basis(data.domain, config.num_basis, config.degree)
    bases = [basis] * data.n_covariates
    intercept_basis = basis if config.include_intercept else None

    times, offsets = _stacked_times(data)
    y = np.concatenate([np.asarray(v, dtype=float) for v in data.response_values])
    theta = basis.evaluate(times)
    intercept_block = theta.copy() if config.include_intercept else None

    # Covariates with a large shared mean make every block nearly collinear
    # with the intercept; centering each by its pooled mean curve (absorbed
    # by the unpenalized intercept) and rescaling to unit spread keeps
    # coordinate descent fast.  Scalar scales keep the coefficient curves
    # in spline form.
    center_grid = center_means = scales = None
    centered_vals = None
    if config.standardize and config.include_intercept:
        center_grid = np.linspace(data.domain[0], data.domain[1],
                                  config.working_grid_size)
        center_means = np.zeros((data.n_covariates, center_grid.size))
        scales = np.ones(data.n_covariates)
        centered_vals = []
        for j in range(data.n_covariates):
            obs_j = fpca.FunctionalObservations(
                domain=data.domain,
                times=[data.covariate_times[i][j] for i in range(data.n_subjects)],
                values=[data.covariate_values[i][j] for i in range(data.n_subjects)],
            )
            mu_j = fpca.pooled_mean(obs_j, center_grid, config.mean_bandwidth)
            center_means[j] = mu_j
            cvals = [
                np.asarray(data.covariate_values[i][j], dtype=float)
                - np.interp(data.covariate_times[i][j], center_grid, mu_j)
                for i in range(data.n_subjects)
            ]
            pooled_sq = np.concatenate(cvals) ** 2
            rms = math.sqrt(float(pooled_sq.mean()))
            if rms > 1e-10 * max(1.0, float(np.abs(mu_j).max())):
                scales[j] = rms
                cvals = [v / rms for v in cvals]
            centered_vals.append(cvals)

    cov_blocks = []
    for j in range(data.n_covariates):
        if centered_vals is not None:
            z = np.concatenate(centered_vals[j])
        else:
            z = np.concatenate([
                np.asarray(data.covariate_values[i][j], dtype=float)
                for i in range(data.n_subjects)
            ])
        cov_blocks.append(theta * z[:, None])

    whitened = False
    if config.prewhiten:
        master = data.master_grid()
        if master is None:
            warnings.warn(
                "observation times are irregular; row whitening needs a "
                "shared regular grid and was skipped",
                RuntimeWarning,
            )
        else:
            try:
                resid = _ridge_residuals(y, intercept_block, cov_blocks,
                                         offsets, config.ridge)
                obs = fpca.FunctionalObservations(
                    domain=data.domain, times=list(data.response_times), values=resid)
                # the error process may oscillate much faster than the
                # covariates, so its surface keeps a richer basis
                noise_model = fpca.fit_fpca(
                    obs,
                    pve=config.pve_residual,
                    working_grid_size=config.working_grid_size,
                    mean_bandwidth=config.mean_bandwidth,
                    cov_bandwidth=config.cov_bandwidth,
                    surface_basis=config.residual_surface_basis,
                )
                # plug-in GLS with a noisy covariance can cost more than it
                # buys; shrinking the off-diagonal toward the diagonal keeps
                # the whitening benefit without inheriting the noise
                alpha = config.whiten_shrinkage
                for i, (a, b) in enumerate(zip(offsets[:-1], offsets[1:])):
                    t_i = data.response_times[i]
                    C = noise_model.covariance_at(t_i)
                    if alpha < 1.0:
                        C = alpha * C + (1.0 - alpha) * np.diag(np.diag(C))
                    W = whitening_root(C)
                    y[a:b] = W @ y[a:b]
                    if intercept_block is not None:
                        intercept_block[a:b] = W @ intercept_block[a:b]
                    for blk in cov_blocks:
                        blk[a:b] = W @ blk[a:b]
                whitened = True
            except NumericalError as exc:
                warnings.warn(
                    f"residual covariance estimation degenerate ({exc}); "
                    "whitening skipped",
                    RuntimeWarning,
                )

    return PreparedProblem(
        data=data, bases=bases, intercept_basis=intercept_basis,
        gram=gram_matrix(basis), curvature=curvature_matrix(basis),
        y=y, intercept_block=intercept_block, cov_blocks=cov_blocks,
        row_offsets=offsets, whitened=whitened,
        center_grid=center_grid, center_means=center_means, scales=scales,
    )


def _design_for_psi(prepared: PreparedProblem, psi: float) -> tuple[GroupDesign, np.ndarray]:
    L = penalty_root(prepared.gram, prepared.curvature, psi).root
    blocks, groups = [], []
    start = 0
    if prepared.intercept_block is not None:
        blocks.append(prepared.intercept_block)
        groups.append(Group(INTERCEPT_NAME, start,
                            prepared.intercept_block.shape[1], penalized=False))
        start += prepared.intercept_block.shape[1]
    Linv_T = solve_triangular(L, np.eye(L.shape[0]), lower=True).T
    for j, blk in enumerate(prepared.cov_blocks):
        blocks.append(blk @ Linv_T)
        groups.append(Group(prepared.data.covariate_names[j], start, blk.shape[1]))
        start += blk.shape[1]
    design = GroupDesign(
        X=np.concatenate(blocks, axis=1), y=prepared.y,
        groups=groups, row_offsets=prepared.row_offsets,
    )
    return design, L


def tune_and_fit(prepared: PreparedProblem, config: FitConfig) -> FitResult:
    """Sweep (psi, lambda), pick the EBIC minimizer, map back to curves."""
    family = METHOD_FAMILY[config.method]
    phi = config.phi if config.phi is not None else None
    p = prepared.data.n_covariates
    n_rows = prepared.n_rows
    intercept_df = (prepared.intercept_block.shape[1]
                    if prepared.intercept_block is not None else 0)
    sizes = [b.shape[1] for b in prepared.cov_blocks]

    records: list[TuningRecord] = []
    fits = []  # (psi, lam, SolverResult, L)
    for psi in config.psi_grid:
        design, L = _design_for_psi(prepared, psi)
        path = solve_path(
            design, family, phi=phi, tol=config.tol, max_iter=config.max_iter,
            n_lambda=config.n_lambda, lambda_min_ratio=config.lambda_min_ratio,
        )
        for pt in path:
            if pt.result is None:
                continue
            res = pt.result
            k_sel = len(res.active_set)
            df = intercept_df + sum(sizes[_cov_index(design, j)] for j in res.active_set)
            n_eff = max(2, int(round(n_rows * config.ebic_row_fraction)))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                crit = ebic(res.rss, n_rows, df, p, k_sel, config.ebic_gamma,
                            n_effective=n_eff)
            records.append(TuningRecord(
                lam=pt.lam, psi=float(psi), rss=res.rss, df=df,
                k_selected=k_sel, converged=res.converged, ebic=crit,
                index=len(fits),
            ))
            fits.append((float(psi), pt.lam, res, L, design.groups))

    best_idx, table = select_model(records)
    psi_star, lam_star, best, L_star, groups_star = fits[best_idx]

    roots = [L_star] * p
    coefs, intercept = recover_coefficients(
        best.gamma, groups_star, roots,
        has_intercept=prepared.intercept_block is not None,
    )
    if prepared.scales is not None:
        coefs = [b / s for b, s in zip(coefs, prepared.scales)]
    selected = sorted(
        j for j, b in enumerate(coefs) if np.linalg.norm(b) > 0
    )

    info = TuningInfo(
        method=config.method, family=family, lam=lam_star, psi=psi_star,
        phi=PenaltySpec(family, lam_star, phi).phi if family != "group_lasso" else None,
        ebic=records[best_idx].ebic, ebic_gamma=config.ebic_gamma,
        rss=best.rss, df=records[best_idx].df,
        k_selected=records[best_idx].k_selected,
        n_rows=n_rows, whitened=prepared.whitened, records=table,
    )

    result = FitResult(
        covariate_names=list(prepared.data.covariate_names),
        selected=selected,
        coefficients=coefs,
        intercept_coefficients=intercept,
        bases=prepared.bases,
        intercept_basis=prepared.intercept_basis,
        tuning=info,
        center_grid=prepared.center_grid,
        center_means=prepared.center_means,
    )
    result.residuals = _final_residuals(prepared.data, result)
    return result


def _cov_index(design: GroupDesign, group_index: int) -> int:
    """Covariate position of a penalized group (skips the intercept)."""
    offset = 1 if design.groups and design.groups[0].name == INTERCEPT_NAME else 0
    return group_index - offset


def _final_residuals(data: FunctionalDataset, result: FitResult) -> list[np.ndarray]:
    out = []
    for i in range(data.n_subjects):
        t = np.asarray(data.response_times[i], dtype=float)
        fitted = result.intercept_curve(t)
        for j in range(data.n_covariates):
            if np.any(result.coefficients[j]):
                fitted = fitted + (
                    np.asarray(data.covariate_values[i][j], dtype=float)
                    * result.beta(j, t)
                )
        out.append(np.asarray(data.response_values[i], dtype=float) - fitted)
    return out


def fit_flcm(data: FunctionalDataset, config: FitConfig | None = None) -> FitResult:
    """Full pipeline: reconstruct covariates, whiten, tune, fit, back-map.

    With ``prewhiten=False`` the residual-covariance stages are skipped
    and the penalized fit runs on the unwhitened rows.
    """
    config = config or FitConfig()
    prepared = prepare_problem(data, config)
    return tune_and_fit(prepared, config)
