"""Functional principal component analysis for dense or sparse noisy curves.

Estimates the mean function, the smooth covariance surface, the
measurement-noise variance and the eigenstructure of a stochastic
process, predicts per-subject scores by conditional expectation, and
rebuilds denoised trajectories from the truncated eigenexpansion.

Two estimation routes share one public entry point (`fit_fpca`).  When
the pooled observation times all fall on a single equispaced grid, mean
and covariance are estimated cross-sectionally on that grid and no
smoothing is applied.  Otherwise pooled local-linear smoothing with an
Epanechnikov kernel is used on a working grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

__all__ = [
    "FunctionalObservations",
    "FpcaModel",
    "estimate_mean",
    "estimate_covariance",
    "eigendecompose",
    "pace_scores",
    "reconstruct",
    "fit_fpca",
    "pooled_mean",
]


@dataclass
class FunctionalObservations:
    """Noisy observations of one stochastic process, one grid per subject."""

    domain: tuple[float, float]
    times: list[np.ndarray]
    values: list[np.ndarray]

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have one entry per subject")
        if len(self.times) == 0 or all(len(t) == 0 for t in self.times):
            raise ValueError("no observations supplied")
        t0, t1 = self.domain
        for i, (t, v) in enumerate(zip(self.times, self.values)):
            t = np.asarray(t, dtype=float)
            if len(t) != len(v):
                raise ValueError(f"subject {i}: times/values length mismatch")
            if t.size and (t.min() < t0 - 1e-12 or t.max() > t1 + 1e-12):
                raise ValueError(f"subject {i}: observation times outside the domain")

    @property
    def n_subjects(self) -> int:
        return len(self.times)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        t = np.concatenate([np.asarray(x, dtype=float) for x in self.times])
        v = np.concatenate([np.asarray(x, dtype=float) for x in self.values])
        return t, v


@dataclass
class FpcaModel:
    """Fitted mean, eigenstructure and noise level of one process.

    Eigenfunctions are stored on ``grid`` and are orthonormal under the
    grid-spacing quadrature rule ``<f, g> = h * sum(f * g)``.
    """

    domain: tuple[float, float]
    grid: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray = field(repr=False)  # (len(grid), K)
    noise_var: float
    pve: float

    @property
    def n_components(self) -> int:
        return int(self.eigenvalues.size)

    def mean_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.interp(t, self.grid, self.mean)

    def eigenfunctions_at(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, self.n_components))
        for k in range(self.n_components):
            out[:, k] = np.interp(t, self.grid, self.eigenfunctions[:, k])
        return out

    def covariance_at(self, t, include_noise: bool = True) -> np.ndarray:
        """Covariance matrix of the process at the given time points."""
        phi = self.eigenfunctions_at(t)
        cov = (phi * self.eigenvalues) @ phi.T
        if include_noise:
            cov = cov + self.noise_var * np.eye(len(np.atleast_1d(t)))
        return cov


# ---------------------------------------------------------------------------
# local-linear smoothing (Epanechnikov kernel), with exact binning of
# duplicate coordinates so dense common-grid data stay cheap


def _epanechnikov(u):
    return 0.75 * np.clip(1.0 - u * u, 0.0, None)


def _bin_1d(t, y):
    tu, inv = np.unique(t, return_inverse=True)
    wsum = np.bincount(inv, minlength=tu.size).astype(float)
    ysum = np.bincount(inv, weights=y, minlength=tu.size)
    return tu, ysum / wsum, wsum


def _local_linear_1d(t, y, w, grid, bandwidth):
    """Weighted local-linear smooth of (t, y) with multiplicities w."""
    d = t[None, :] - grid[:, None]  # (G, P)
    kw = _epanechnikov(d / bandwidth) * w[None, :]
    s0 = kw.sum(axis=1)
    s1 = (kw * d).sum(axis=1)
    s2 = (kw * d * d).sum(axis=1)
    t0 = (kw * y[None, :]).sum(axis=1)
    t1 = (kw * d * y[None, :]).sum(axis=1)
    denom = s0 * s2 - s1 * s1
    scale = np.maximum(s0, 1e-300) ** 2 * max(bandwidth, 1e-300) ** 2
    good = denom > 1e-10 * scale
    out = np.empty(grid.size)
    out[good] = (s2[good] * t0[good] - s1[good] * t1[good]) / denom[good]
    if not np.all(good):
        warnings.warn(
            "bandwidth too small near some grid points; widening to the "
            "10 nearest observations there",
            RuntimeWarning,
        )
        for g in np.nonzero(~good)[0]:
            out[g] = _nearest_fit_1d(t, y, w, grid[g])
    return out


def _nearest_fit_1d(t, y, w, x, k=10):
    order = np.argsort(np.abs(t - x))[: min(k, t.size)]
    d = t[order] - x
    h = max(np.abs(d).max() * 1.0001, 1e-12)
    kw = _epanechnikov(d / h) * w[order]
    kw = np.maximum(kw, 1e-12)
    s0, s1, s2 = kw.sum(), (kw * d).sum(), (kw * d * d).sum()
    t0, t1 = (kw * y[order]).sum(), (kw * d * y[order]).sum()
    denom = s0 * s2 - s1 * s1
    if denom <= 0 or not np.isfinite(denom):
        return t0 / s0
    return (s2 * t0 - s1 * t1) / denom


def _local_linear_2d(t1, t2, y, w, grid, bandwidth):
    """Local-linear surface smooth of (t1, t2, y) with multiplicities w.

    Moments are accumulated with grid-by-points matrix products, so the
    cost is a handful of dense matmuls rather than a per-cell loop.
    """
    d1 = t1[None, :] - grid[:, None]  # (G, P)
    d2 = t2[None, :] - grid[:, None]
    k1 = _epanechnikov(d1 / bandwidth)
    k2 = _epanechnikov(d2 / bandwidth)

    def mom(a_extra, b_extra, vals):
        a = k1 * a_extra if a_extra is not None else k1
        b = k2 * b_extra if b_extra is not None else k2
        return (a * vals[None, :]) @ b.T

    s00 = mom(None, None, w)
    s10 = mom(d1, None, w)
    s01 = mom(None, d2, w)
    s20 = mom(d1 * d1, None, w)
    s02 = mom(None, d2 * d2, w)
    s11 = (k1 * d1 * w[None, :]) @ (k2 * d2).T
    r00 = mom(None, None, w * y)
    r10 = mom(d1, None, w * y)
    r01 = mom(None, d2, w * y)

    G = grid.size
    A = np.empty((G, G, 3, 3))
    A[..., 0, 0] = s00
    A[..., 0, 1] = A[..., 1, 0] = s10
    A[..., 0, 2] = A[..., 2, 0] = s01
    A[..., 1, 1] = s20
    A[..., 1, 2] = A[..., 2, 1] = s11
    A[..., 2, 2] = s02
    rhs = np.stack([r00, r10, r01], axis=-1)

    out = np.empty((G, G))
    dets = np.linalg.det(A)
    scale = np.maximum(s00, 1e-300) ** 3 * max(bandwidth, 1e-300) ** 4
    good = dets > 1e-12 * scale
    if np.any(good):
        sol = np.linalg.solve(A[good], rhs[good][..., None])
        out[good] = sol[:, 0, 0]
    if not np.all(good):
        warnings.warn(
            "covariance bandwidth too small near some grid cells; widening "
            "to the 10 nearest observation pairs there",
            RuntimeWarning,
        )
        bad = np.argwhere(~good)
        for a, b in bad:
            out[a, b] = _nearest_fit_2d(t1, t2, y, w, grid[a], grid[b])
    return out


def _nearest_fit_2d(t1, t2, y, w, x1, x2, k=10):
    dist = np.hypot(t1 - x1, t2 - x2)
    order = np.argsort(dist)[: min(k, t1.size)]
    kw = np.maximum(w[order], 1e-12)
    return float((kw * y[order]).sum() / kw.sum())


# ---------------------------------------------------------------------------
# spec-level operations


def estimate_mean(obs: FunctionalObservations, grid: np.ndarray, bandwidth: float) -> np.ndarray:
    """Local-linear smooth of the pooled observations on ``grid``.

    Parameters
    ----------
    obs : FunctionalObservations
    grid : np.ndarray
        Evaluation grid inside the domain.
    bandwidth : float
        Positive kernel bandwidth; widened locally (with a warning) where
        it fails to cover any observations.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    t, v = obs.pooled()
    tu, yu, wu = _bin_1d(t, v)
    return _local_linear_1d(tu, yu, wu, np.asarray(grid, dtype=float), bandwidth)


def estimate_covariance(
    obs: FunctionalObservations,
    mean: np.ndarray,
    grid: np.ndarray,
    bandwidth: float,
) -> tuple[np.ndarray, float]:
    """Smooth covariance surface and measurement-noise variance.

    Raw cross-products of centered observations are smoothed on
    ``grid x grid`` with the diagonal pairs excluded, so the white-noise
    variance does not contaminate the surface.  The noise variance is the
    average gap between the smoothed diagonal of the raw products and the
    diagonal of the smooth surface, floored at zero.

    Returns
    -------
    (G, sigma2) : symmetric surface on the grid, noise variance.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.asarray(grid, dtype=float)
    if all(len(t) < 2 for t in obs.times):
        raise ValueError(
            "covariance is unidentifiable: every subject has fewer than "
            "two observations"
        )

    off_t1, off_t2, off_y = [], [], []
    diag_t, diag_y = [], []
    for t, v in zip(obs.times, obs.values):
        t = np.asarray(t, dtype=float)
        if t.size == 0:
            continue
        resid = np.asarray(v, dtype=float) - np.interp(t, grid, mean)
        prod = np.outer(resid, resid)
        diag_t.append(t)
        diag_y.append(resid * resid)
        if t.size >= 2:
            iu, ju = np.triu_indices(t.size, k=1)
            off_t1.extend([t[iu], t[ju]])
            off_t2.extend([t[ju], t[iu]])
            off_y.extend([prod[iu, ju], prod[ju, iu]])

    t1 = np.concatenate(off_t1)
    t2 = np.concatenate(off_t2)
    yy = np.concatenate(off_y)
    # bin exact duplicate pairs so dense shared grids stay cheap
    key = np.stack([t1, t2], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    w = np.bincount(inv, minlength=uniq.shape[0]).astype(float)
    ym = np.bincount(inv, weights=yy, minlength=uniq.shape[0]) / w
    G = _local_linear_2d(uniq[:, 0], uniq[:, 1], ym, w, grid, bandwidth)
    G = 0.5 * (G + G.T)

    dt, dv = np.concatenate(diag_t), np.concatenate(diag_y)
    du, dy, dw = _bin_1d(dt, dv)
    smoothed_diag = _local_linear_1d(du, dy, dw, grid, bandwidth)
    sigma2 = float(max(np.mean(smoothed_diag - np.diag(G)), 0.0))
    return G, sigma2


def eigendecompose(surface: np.ndarray, grid: np.ndarray, pve: float) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Truncated eigenexpansion of a covariance surface on a uniform grid.

    Discrete eigenpairs are rescaled by the grid spacing so that each
    eigenfunction has unit L2 norm under the grid quadrature.  Components
    are kept until the retained fraction of the positive spectrum reaches
    ``pve``; negative eigenvalues are discarded first.

    Returns
    -------
    (eigenvalues, eigenfunctions, realized_pve, K)

    Raises
    ------
    NumericalError
        If the surface has no positive eigenvalue.
    """
    if not 0 < pve <= 1:
        raise ValueError("pve must be in (0, 1]")
    surface = 0.5 * (surface + surface.T)
    h = float(grid[1] - grid[0])
    vals, vecs = np.linalg.eigh(surface)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    lam = vals * h
    pos = lam > 0
    if not np.any(pos):
        raise NumericalError("degenerate covariance surface: no positive eigenvalue")
    lam_pos = lam[pos]
    vecs_pos = vecs[:, pos]
    total = lam_pos.sum()
    frac = np.cumsum(lam_pos) / total
    K = int(np.searchsorted(frac, pve - 1e-12) + 1)
    K = min(K, lam_pos.size)
    phi = vecs_pos[:, :K] / np.sqrt(h)
    # sign convention: make each eigenfunction start nonnegative on average
    for k in range(K):
        if phi[: max(2, phi.shape[0] // 10), k].sum() < 0:
            phi[:, k] = -phi[:, k]
    return lam_pos[:K].copy(), phi, float(frac[K - 1]), K


def pace_scores(times, values, model: FpcaModel) -> np.ndarray:
    """Best linear predictor of one subject's scores given its observations.

    Computes ``Lam @ Phi.T @ (Phi Lam Phi.T + noise I)^{-1} @ (u - mean)``
    with the eigenfunctions interpolated to the subject's own times.  A
    small ridge is added when the inner matrix is singular (no noise and
    duplicated times), and the solve floors tiny eigenvalues so a
    rank-deficient inner matrix cannot blow up the null directions.
    """
    t = np.atleast_1d(np.asarray(times, dtype=float))
    u = np.atleast_1d(np.asarray(values, dtype=float))
    if t.size == 0:
        raise ValueError("subject has no observations")
    phi = model.eigenfunctions_at(t)
    lam = model.eigenvalues
    resid = u - model.mean_at(t)
    A = (phi * lam) @ phi.T + model.noise_var * np.eye(t.size)
    if model.noise_var < 1e-8:
        A = A + 1e-8 * np.eye(t.size)
    vals, vecs = np.linalg.eigh(A)
    vals = np.maximum(vals, max(float(vals.max()) * 1e-10, 1e-300))
    sol = vecs @ ((vecs.T @ resid) / vals)
    return lam * (phi.T @ sol)


def reconstruct(model: FpcaModel, scores, eval_points) -> np.ndarray:
    """Denoised trajectory ``mean(t) + sum_k score_k * phi_k(t)``.

    Evaluation points must lie inside the model domain; there is no
    extrapolation.
    """
    scores = np.atleast_1d(np.asarray(scores, dtype=float))
    if scores.size != model.n_components:
        raise ValueError(
            f"expected {model.n_components} scores, got {scores.size}"
        )
    t = np.atleast_1d(np.asarray(eval_points, dtype=float))
    t0, t1 = model.domain
    if t.size and (t.min() < t0 - 1e-12 or t.max() > t1 + 1e-12):
        raise ValueError(f"evaluation points outside the domain [{t0}, {t1}]")
    return model.mean_at(t) + model.eigenfunctions_at(t) @ scores


# ---------------------------------------------------------------------------
# model fitting


def pooled_mean(obs: FunctionalObservations, grid: np.ndarray,
                bandwidth: float | None = None) -> np.ndarray:
    """Mean curve of the pooled observations on ``grid``.

    Cross-sectional averages when the pooled times sit on a shared
    regular grid, a local-linear smooth otherwise.
    """
    grid = np.asarray(grid, dtype=float)
    snap = _snap_grid(obs)
    if snap is not None:
        t, v = obs.pooled()
        tu, yu, _ = _bin_1d(t, v)
        return np.interp(grid, tu, yu)
    span = obs.domain[1] - obs.domain[0]
    return estimate_mean(obs, grid, bandwidth if bandwidth is not None else span / 10.0)


def _snap_grid(obs: FunctionalObservations, max_points: int = 512):
    """Shared equispaced grid behind the pooled times, or None."""
    t, _ = obs.pooled()
    grid = np.unique(t)
    if grid.size < 2 or grid.size > max_points:
        return None
    gaps = np.diff(grid)
    h = np.median(gaps)
    if not np.allclose(gaps, h, rtol=1e-8, atol=1e-8 * (grid[-1] - grid[0])):
        return None
    return grid


def _binned_surface(obs: FunctionalObservations, grid: np.ndarray):
    """Pointwise mean and pairwise covariance on a shared grid.

    Returns the raw (unsmoothed) surface with its diagonal replaced by a
    neighbour average (keeping the white-noise variance out of it), the
    variance of each cell's average, the raw pointwise variance, and the
    joint-observation counts.  Returns None when some grid point is never
    observed; the caller then falls back to kernel smoothing.
    """
    m = grid.size
    lookup = {v: i for i, v in enumerate(grid)}
    ssum = np.zeros(m)
    scount = np.zeros(m)
    idx_cache = []
    for t, v in zip(obs.times, obs.values):
        ix = np.array([lookup[x] for x in np.asarray(t, dtype=float)], dtype=int)
        idx_cache.append(ix)
        np.add.at(ssum, ix, v)
        np.add.at(scount, ix, 1.0)
    if np.any(scount == 0):
        return None
    mean = ssum / scount

    csum = np.zeros((m, m))
    csum2 = np.zeros((m, m))
    ccount = np.zeros((m, m))
    dsum = np.zeros(m)
    for (t, v), ix in zip(zip(obs.times, obs.values), idx_cache):
        r = np.asarray(v, dtype=float) - mean[ix]
        prod = np.outer(r, r)
        np.add.at(csum, (ix[:, None], ix[None, :]), prod)
        np.add.at(csum2, (ix[:, None], ix[None, :]), prod * prod)
        np.add.at(ccount, (ix[:, None], ix[None, :]), 1.0)
        np.add.at(dsum, ix, r * r)
    raw = np.where(ccount > 0, csum / np.maximum(ccount, 1.0), 0.0)
    # variance of each cell average, for noise-calibrated cleanup later
    cellvar = np.where(
        ccount > 1,
        (csum2 / np.maximum(ccount, 1.0) - raw * raw) / np.maximum(ccount, 1.0),
        0.0,
    )
    raw_diag = dsum / scount
    G = 0.5 * (raw + raw.T)
    diag_fill = np.empty(m)
    for a in range(m):
        if a == 0:
            diag_fill[a] = G[0, 1]
        elif a == m - 1:
            diag_fill[a] = G[m - 2, m - 1]
        else:
            diag_fill[a] = 0.5 * (G[a - 1, a] + G[a, a + 1])
    np.fill_diagonal(G, diag_fill)
    return mean, G, cellvar, raw_diag, ccount


def _clean_surface(obs, grid, surface_basis, threshold_factor):
    """Binned surface estimate with projection smoothing and junk-eigenvalue
    removal; returns (mean, surface, sigma2) or None if binning fails.

    The raw pairwise surface carries heavy sampling noise when subjects
    each observe only part of the grid: its eigenvalue tail is fat and
    its eigenvectors wiggle.  Projecting onto a moderate tensor spline
    space regularizes the eigenfunctions, and eigenvalues below the
    propagated cell-noise level are dropped so the variance-explained
    truncation sees an honest spectrum.  Exact noiseless data pass
    through untouched.
    """
    from .basis import make_basis  # deferred: basis imports nothing from here

    raw = _binned_surface(obs, grid)
    if raw is None:
        return None
    mean, G, cellvar, raw_diag, counts = raw
    W = grid.size
    offmask = ~np.eye(W, dtype=bool) & (counts > 1)
    if offmask.sum() < 0.9 * W * (W - 1):
        return None  # too many never-jointly-observed pairs; smooth instead

    P = None
    if surface_basis is not None and 4 <= surface_basis < W:
        bas = make_basis((grid[0], grid[-1]), int(surface_basis), 3)
        B = bas.evaluate(grid)
        P = B @ np.linalg.solve(B.T @ B, B.T)
    if P is not None:
        Gs = P @ G @ P.T
        Gs = 0.5 * (Gs + Gs.T)
        mean = P @ mean
        var_s = (P ** 2) @ cellvar @ (P ** 2).T
    else:
        Gs = G
        var_s = cellvar
    sigma2 = float(max(np.mean(raw_diag - np.diag(Gs)), 0.0))

    med_rowvar = float(np.median(var_s.sum(axis=1)))
    if threshold_factor > 0 and med_rowvar > 0:
        eta = threshold_factor * math.sqrt(med_rowvar)
        vals, vecs = np.linalg.eigh(Gs)
        keep = vals > eta
        if np.any(keep):
            Gs = (vecs[:, keep] * vals[keep]) @ vecs[:, keep].T
    return mean, Gs, sigma2


def fit_fpca(
    obs: FunctionalObservations,
    pve: float = 0.99,
    working_grid_size: int = 101,
    mean_bandwidth: float | None = None,
    cov_bandwidth: float | None = None,
    max_gap_fraction: float = 0.25,
    surface_basis: int | None = 15,
    threshold_factor: float = 3.0,
) -> FpcaModel:
    """Fit mean, eigenstructure and noise variance of one process.

    When all pooled observation times sit on a single equispaced grid the
    raw pointwise estimates are formed on that grid directly; the
    covariance surface is then regularized by projection onto a spline
    space of dimension ``surface_basis`` (``None`` keeps the raw surface,
    preserving structure faster than the projection can resolve) and
    eigenvalues below ``threshold_factor`` times the estimated cell-noise
    level are dropped.  Noiseless exact data pass through untouched.
    Pooled-irregular data instead go through local-linear smoothing on
    ``working_grid_size`` equispaced points, with default bandwidths
    span/10 (mean) and span/5 (covariance).

    Raises
    ------
    ValueError
        If the pooled times leave a gap larger than ``max_gap_fraction``
        of the domain span, or the data cannot identify a covariance.
    NumericalError
        If the estimated covariance surface is degenerate.
    """
    t0, t1 = obs.domain
    span = t1 - t0
    t_pooled, _ = obs.pooled()
    gaps = np.diff(np.unique(np.r_[t0, np.sort(t_pooled), t1]))
    if gaps.size and gaps.max() > max_gap_fraction * span:
        raise ValueError(
            "pooled observation times do not cover the domain densely "
            f"enough (max gap {gaps.max():.3g} > {max_gap_fraction} * span)"
        )

    snap = _snap_grid(obs)
    if snap is not None and snap.size >= 3:
        cleaned = _clean_surface(obs, snap, surface_basis, threshold_factor)
        if cleaned is not None:
            mean, G, sigma2 = cleaned
            lam, phi, realized, K = eigendecompose(G, snap, pve)
            return FpcaModel(
                domain=obs.domain, grid=snap, mean=mean,
                eigenvalues=lam, eigenfunctions=phi,
                noise_var=sigma2, pve=realized,
            )

    grid = np.linspace(t0, t1, working_grid_size)
    bw_mean = mean_bandwidth if mean_bandwidth is not None else span / 10.0
    bw_cov = cov_bandwidth if cov_bandwidth is not None else span / 5.0
    mean = estimate_mean(obs, grid, bw_mean)
    G, sigma2 = estimate_covariance(obs, mean, grid, bw_cov)
    lam, phi, realized, K = eigendecompose(G, grid, pve)
    return FpcaModel(
        domain=obs.domain, grid=grid, mean=mean,
        eigenvalues=lam, eigenfunctions=phi,
        noise_var=sigma2, pve=realized,
    )
