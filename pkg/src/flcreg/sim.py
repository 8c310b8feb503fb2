"""Synthetic benchmark suite: data generators and the replication harness.

The built-in study design generates twenty sinusoidal covariate processes
on an 81-point grid over [0, 100], of which the first three carry signal
through smooth time-varying coefficients; responses and covariates are
subsampled per subject and covariates carry measurement noise.  The
harness fits each requested method on many independently seeded
replicates and aggregates selection percentages, average model size, and
pointwise bias / mean squared error of the coefficient estimates.

A second design appends mean-zero pseudo covariates to a small set of
real ones, measuring the false-selection rate of the pipeline.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import FunctionalDataset
from .flcm import FitConfig, _denoise_covariates, prepare_problem, tune_and_fit

__all__ = [
    "SimConfig",
    "StudyReport",
    "true_beta",
    "true_intercept",
    "generate_dataset",
    "generate_pseudo_covariates",
    "generate_pseudo_dataset",
    "run_study",
]

N_COVARIATES = 20
N_PSEUDO = 15
ACTIVE = (0, 1, 2)  # indices of the signal-carrying covariates


def true_intercept(t):
    t = np.asarray(t, dtype=float)
    return 8.0 * np.sin(np.pi * t / 50.0)


def true_beta(j: int, t):
    """Coefficient function of covariate ``j`` (0-based) in the benchmark."""
    t = np.asarray(t, dtype=float)
    if j == 0:
        return 5.0 * np.sin(np.pi * t / 100.0)
    if j == 1:
        return 4.0 * np.sin(np.pi * t / 50.0) + 4.0 * np.cos(np.pi * t / 50.0)
    if j == 2:
        return 25.0 * np.exp(-t / 20.0)
    return np.zeros_like(t)


@dataclass
class SimConfig:
    """Scale, sampling and fitting knobs of one study run."""

    n: int = 100
    replicates: int = 50
    seed: int = 1
    methods: tuple = ("flasso", "fscad", "fmcp")
    prewhiten: bool = True
    study: str = "selection"  # "selection" | "pseudo"
    domain: tuple = (0.0, 100.0)
    grid_points: int = 81
    m_min: int = 30
    m_max: int = 41
    measurement_noise_sd: float = 0.6
    pve: float = 0.99
    eval_points: int = 100
    workers: int = 1
    verbose: bool = False
    # pass-through fitting knobs
    num_basis: int = 10
    degree: int = 3
    psi_grid: tuple = (0.0, 0.1, 1.0, 10.0, 100.0)
    n_lambda: int = 100
    lambda_min_ratio: float = 0.001
    ebic_gamma: float = 1.0
    ebic_row_fraction: float = 1.0
    phi: float | None = None
    surface_basis: int | None = 15
    residual_surface_basis: int | None = None
    whiten_shrinkage: float = 0.5

    def __post_init__(self):
        if self.n < 1 or self.replicates < 1:
            raise ValueError("n and replicates must be at least 1")
        bad = [m for m in self.methods if m not in ("flasso", "fscad", "fmcp")]
        if bad:
            raise ValueError(f"unknown methods: {bad}")
        if self.study not in ("selection", "pseudo"):
            raise ValueError("study must be 'selection' or 'pseudo'")
        if not 1 <= self.m_min <= self.m_max <= self.grid_points:
            raise ValueError("need 1 <= m_min <= m_max <= grid_points")

    def grid(self) -> np.ndarray:
        return np.linspace(self.domain[0], self.domain[1], self.grid_points)

    def eval_grid(self) -> np.ndarray:
        return np.linspace(self.domain[0], self.domain[1], self.eval_points)

    def fit_config(self, method: str, denoise: bool) -> FitConfig:
        return FitConfig(
            method=method,
            num_basis=self.num_basis,
            degree=self.degree,
            phi=self.phi,
            psi_grid=self.psi_grid,
            n_lambda=self.n_lambda,
            lambda_min_ratio=self.lambda_min_ratio,
            ebic_gamma=self.ebic_gamma,
            ebic_row_fraction=self.ebic_row_fraction,
            prewhiten=self.prewhiten,
            denoise_covariates=denoise,
            pve_covariates=self.pve,
            surface_basis=self.surface_basis,
            residual_surface_basis=self.residual_surface_basis,
            whiten_shrinkage=self.whiten_shrinkage,
        )


def _subsample(rng, n, grid_points, m_min, m_max):
    sizes = rng.integers(m_min, m_max + 1, size=n)
    return [np.sort(rng.choice(grid_points, size=int(m), replace=False))
            for m in sizes]


def generate_dataset(config: SimConfig, replicate_seed, return_latent: bool = False):
    """One synthetic dataset from the benchmark generator.

    Covariate ``j`` (1-based frequency index) is
    ``a * sqrt(2) * sin(pi j t / 400) + b * sqrt(2) * cos(pi j t / 400)``
    with subject-specific ``a, b ~ N(50, 2^2)``.  Errors combine two
    random harmonics with unit white noise, and covariates are observed
    with independent Gaussian measurement error.  Responses and
    covariates share each subject's subsampled grid points.
    """
    rng = np.random.default_rng(replicate_seed)
    grid = config.grid()
    n, m = config.n, config.grid_points

    a = rng.normal(50.0, 2.0, size=(n, N_COVARIATES))
    b = rng.normal(50.0, 2.0, size=(n, N_COVARIATES))
    freq = np.arange(1, N_COVARIATES + 1)[:, None] * grid[None, :] * (np.pi / 400.0)
    sin_f, cos_f = np.sqrt(2.0) * np.sin(freq), np.sqrt(2.0) * np.cos(freq)
    Z = a[:, :, None] * sin_f[None] + b[:, :, None] * cos_f[None]

    xi1 = rng.normal(0.0, 0.5, size=n)
    xi2 = rng.normal(0.0, 0.75, size=n)
    eps = (xi1[:, None] * np.cos(grid)[None, :]
           + xi2[:, None] * np.sin(grid)[None, :]
           + rng.standard_normal((n, m)))

    beta_vals = np.stack([true_beta(j, grid) for j in range(N_COVARIATES)])
    Y = true_intercept(grid)[None, :] + np.einsum("njm,jm->nm", Z, beta_vals) + eps

    if config.measurement_noise_sd > 0:
        U = Z + rng.normal(0.0, config.measurement_noise_sd, size=Z.shape)
    else:
        U = Z.copy()

    indices = _subsample(rng, n, m, config.m_min, config.m_max)
    names = [f"Var{j + 1}" for j in range(N_COVARIATES)]
    data = FunctionalDataset(
        domain=config.domain,
        covariate_names=names,
        response_times=[grid[ix] for ix in indices],
        response_values=[Y[i, ix] for i, ix in enumerate(indices)],
        covariate_times=[[grid[ix]] * N_COVARIATES for ix in indices],
        covariate_values=[[U[i, j, ix] for j in range(N_COVARIATES)]
                          for i, ix in enumerate(indices)],
    )
    if return_latent:
        return data, {"grid": grid, "Z": Z, "U": U, "Y": Y, "indices": indices}
    return data


def generate_pseudo_covariates(n: int, count: int, domain, grid, seed) -> np.ndarray:
    """Mean-zero sinusoidal decoy covariates, shape ``(n, count, len(grid))``.

    Decoy ``k`` (1-based) oscillates at frequency ``pi * k * t / 200``
    with subject-specific amplitudes ``a, b ~ N(0, 2^2)``.
    """
    grid = np.asarray(grid, dtype=float)
    if count == 0:
        return np.zeros((n, 0, grid.size))
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 2.0, size=(n, count))
    b = rng.normal(0.0, 2.0, size=(n, count))
    freq = np.arange(1, count + 1)[:, None] * grid[None, :] * (np.pi / 200.0)
    sin_f, cos_f = np.sqrt(2.0) * np.sin(freq), np.sqrt(2.0) * np.cos(freq)
    return a[:, :, None] * sin_f[None] + b[:, :, None] * cos_f[None]


def generate_pseudo_dataset(config: SimConfig, replicate_seed) -> FunctionalDataset:
    """False-selection protocol data: 3 real covariates (one driving the
    response) plus mean-zero decoys that should never be picked."""
    rng = np.random.default_rng(replicate_seed)
    grid = config.grid()
    n, m = config.n, config.grid_points
    n_real = 3

    a = rng.normal(50.0, 2.0, size=(n, n_real))
    b = rng.normal(50.0, 2.0, size=(n, n_real))
    freq = np.arange(1, n_real + 1)[:, None] * grid[None, :] * (np.pi / 400.0)
    Zr = (a[:, :, None] * (np.sqrt(2.0) * np.sin(freq))[None]
          + b[:, :, None] * (np.sqrt(2.0) * np.cos(freq))[None])

    xi1 = rng.normal(0.0, 0.5, size=n)
    xi2 = rng.normal(0.0, 0.75, size=n)
    eps = (xi1[:, None] * np.cos(grid)[None, :]
           + xi2[:, None] * np.sin(grid)[None, :]
           + rng.standard_normal((n, m)))
    Y = (true_intercept(grid)[None, :]
         + Zr[:, 0, :] * true_beta(0, grid)[None, :] + eps)

    if config.measurement_noise_sd > 0:
        Ur = Zr + rng.normal(0.0, config.measurement_noise_sd, size=Zr.shape)
    else:
        Ur = Zr.copy()
    pseudo = generate_pseudo_covariates(
        n, N_PSEUDO, config.domain, grid, rng.integers(0, 2**63 - 1))

    indices = _subsample(rng, n, m, config.m_min, config.m_max)
    names = [f"Var{j + 1}" for j in range(n_real)] + \
            [f"Pseudo{k + 1}" for k in range(N_PSEUDO)]
    U_all = np.concatenate([Ur, pseudo], axis=1)
    p = U_all.shape[1]
    return FunctionalDataset(
        domain=config.domain,
        covariate_names=names,
        response_times=[grid[ix] for ix in indices],
        response_values=[Y[i, ix] for i, ix in enumerate(indices)],
        covariate_times=[[grid[ix]] * p for ix in indices],
        covariate_values=[[U_all[i, j, ix] for j in range(p)]
                          for i, ix in enumerate(indices)],
    )


# ---------------------------------------------------------------------------
# the replication harness


@dataclass
class StudyReport:
    """Aggregated selection and estimation performance of one study."""

    study: str
    methods: list[str]
    variable_names: list[str]
    active_indices: list[int]
    eval_grid: np.ndarray
    selection_pct: dict = field(default_factory=dict)   # method -> (p,)
    avg_model_size: dict = field(default_factory=dict)  # method -> float
    bias: dict = field(default_factory=dict)            # method -> (n_active,)
    mse: dict = field(default_factory=dict)             # method -> (n_active,)
    n_completed: dict = field(default_factory=dict)
    n_failed: dict = field(default_factory=dict)
    seed: int = 0
    replicates: int = 0


def _replicate_seed(master: int, rep: int):
    return np.random.SeedSequence(master, spawn_key=(rep,))


def _run_replicate(config: SimConfig, rep: int) -> dict:
    """Fit every requested method on one generated dataset."""
    seed = _replicate_seed(config.seed, rep)
    if config.study == "selection":
        data = generate_dataset(config, seed)
        denoise_all = True
        n_real_noisy = None
    else:
        data = generate_pseudo_dataset(config, seed)
        # only the measurement-error covariates get reconstructed; the
        # decoys enter raw
        denoise_all = False
        n_real_noisy = 3

    eval_grid = config.eval_grid()
    out: dict = {"rep": rep, "methods": {}}
    base = config.fit_config(config.methods[0], denoise=denoise_all)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if not denoise_all:
                sub = FunctionalDataset(
                    domain=data.domain,
                    covariate_names=data.covariate_names[:n_real_noisy],
                    response_times=data.response_times,
                    response_values=data.response_values,
                    covariate_times=[row[:n_real_noisy] for row in data.covariate_times],
                    covariate_values=[row[:n_real_noisy] for row in data.covariate_values],
                )
                den = _denoise_covariates(sub, base)
                data = FunctionalDataset(
                    domain=data.domain,
                    covariate_names=data.covariate_names,
                    response_times=data.response_times,
                    response_values=data.response_values,
                    covariate_times=[
                        den.covariate_times[i] + data.covariate_times[i][n_real_noisy:]
                        for i in range(data.n_subjects)
                    ],
                    covariate_values=[
                        den.covariate_values[i] + data.covariate_values[i][n_real_noisy:]
                        for i in range(data.n_subjects)
                    ],
                )
            prepared = prepare_problem(data, base)
    except Exception as exc:  # preparation failed: all methods fail
        for m in config.methods:
            out["methods"][m] = {"error": f"prepare: {exc!r}"}
        return out

    active = list(ACTIVE) if config.study == "selection" else [0]
    for m in config.methods:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = tune_and_fit(prepared, replace(base, method=m))
            mask = np.zeros(data.n_covariates, dtype=bool)
            mask[fit.selected] = True
            betas = np.stack([fit.beta(j, eval_grid) for j in active])
            out["methods"][m] = {"selected": mask, "beta": betas}
        except Exception as exc:
            out["methods"][m] = {"error": repr(exc)}
    return out


def _worker(args):
    config, rep = args
    return _run_replicate(config, rep)


def run_study(config: SimConfig) -> StudyReport:
    """Generate, fit and aggregate over all replicates.

    Replicates are seeded independently from the master seed and may run
    in parallel; aggregation is keyed by replicate index, so the report
    does not depend on completion order.
    """
    if config.study == "selection":
        names = [f"Var{j + 1}" for j in range(N_COVARIATES)]
        active = [0, 1, 2]
    else:
        names = [f"Var{j + 1}" for j in range(3)] + \
                [f"Pseudo{k + 1}" for k in range(N_PSEUDO)]
        active = [0]
    p = len(names)
    eval_grid = config.eval_grid()

    tasks = [(config, r) for r in range(config.replicates)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_worker, tasks))
    else:
        results = [_worker(t) for t in tasks]
    results.sort(key=lambda r: r["rep"])
    if config.verbose:
        done = sum(1 for r in results for m in r["methods"].values() if "error" not in m)
        print(f"[study] {config.replicates} replicates finished, {done} method fits ok")

    truth = np.stack([true_beta(j, eval_grid) for j in active])
    report = StudyReport(
        study=config.study, methods=list(config.methods), variable_names=names,
        active_indices=active, eval_grid=eval_grid,
        seed=config.seed, replicates=config.replicates,
    )
    for m in config.methods:
        sel_rows, beta_rows = [], []
        failed = 0
        for r in results:
            entry = r["methods"].get(m, {"error": "missing"})
            if "error" in entry:
                failed += 1
                continue
            sel_rows.append(entry["selected"])
            beta_rows.append(entry["beta"])
        report.n_completed[m] = len(sel_rows)
        report.n_failed[m] = failed
        if not sel_rows:
            report.selection_pct[m] = np.full(p, np.nan)
            report.avg_model_size[m] = float("nan")
            report.bias[m] = np.full(len(active), np.nan)
            report.mse[m] = np.full(len(active), np.nan)
            continue
        sel = np.asarray(sel_rows, dtype=float)
        report.selection_pct[m] = 100.0 * sel.mean(axis=0)
        report.avg_model_size[m] = float(sel.sum(axis=1).mean())
        beta = np.asarray(beta_rows)  # (reps, n_active, grid)
        report.bias[m] = np.abs(beta.mean(axis=0) - truth).mean(axis=1)
        report.mse[m] = ((beta - truth[None]) ** 2).mean(axis=(0, 2))
    return report
