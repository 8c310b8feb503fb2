"""Subject-level bootstrap bands for the fitted coefficient functions.

Each replicate resamples whole subjects with replacement and reruns the
entire pipeline, variable selection included, so the bands reflect both
estimation noise and selection instability.  Covariates a replicate does
not select contribute exactly-zero curves to the percentile computation.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import FunctionalDataset
from .errors import NumericalError
from .flcm import FitConfig, FitResult, fit_flcm

__all__ = ["BootstrapResult", "bootstrap_ci"]


@dataclass
class BootstrapResult:
    """Pointwise percentile bands over bootstrap refits."""

    covariate_names: list[str]
    eval_grid: np.ndarray
    estimate: np.ndarray = field(repr=False)   # (p, G) original-fit curves
    lower: np.ndarray = field(repr=False)      # (p, G) at 2.5%
    upper: np.ndarray = field(repr=False)      # (p, G) at 97.5%
    curves: np.ndarray = field(repr=False)     # (B_ok, p, G) replicate curves
    selection: np.ndarray = field(repr=False)  # (B_ok, p) bool
    n_requested: int = 0
    n_failed: int = 0
    fit: FitResult | None = None

    def band(self, lower_pct: float, upper_pct: float) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise percentile band at an arbitrary nominal level."""
        lo = np.percentile(self.curves, lower_pct, axis=0)
        hi = np.percentile(self.curves, upper_pct, axis=0)
        return lo, hi


def _one_replicate(args):
    data, config, seed, eval_grid = args
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.n_subjects, size=data.n_subjects)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_flcm(data.subset(idx), config)
        mask = np.zeros(data.n_covariates, dtype=bool)
        mask[fit.selected] = True
        return fit.beta_matrix(eval_grid), mask, None
    except Exception as exc:
        return None, None, repr(exc)


def bootstrap_ci(
    data: FunctionalDataset,
    config: FitConfig | None = None,
    B: int = 200,
    seed: int = 0,
    eval_points: int = 100,
    workers: int = 1,
) -> BootstrapResult:
    """Percentile confidence bands from ``B`` subject resamples.

    The original-data fit must succeed; its curves are reported as the
    band's center estimate.  Replicate failures are skipped and counted,
    but more than 20% of them abort the run.

    Raises
    ------
    ValueError
        If ``B < 2``.
    NumericalError
        If too many replicates fail.
    """
    if B < 2:
        raise ValueError("bootstrap needs at least B = 2 replicates")
    config = config or FitConfig()
    eval_grid = np.linspace(data.domain[0], data.domain[1], eval_points)
    base_fit = fit_flcm(data, config)
    estimate = base_fit.beta_matrix(eval_grid)

    seeds = [np.random.SeedSequence(seed, spawn_key=(b,)) for b in range(B)]
    tasks = [(data, config, s, eval_grid) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_one_replicate, tasks))
    else:
        raw = [_one_replicate(t) for t in tasks]

    curves, masks, n_failed = [], [], 0
    for beta, mask, err in raw:
        if err is not None:
            n_failed += 1
        else:
            curves.append(beta)
            masks.append(mask)
    if n_failed > 0.2 * B:
        raise NumericalError(
            f"{n_failed} of {B} bootstrap replicates failed (> 20%)")

    curves = np.asarray(curves)
    lower = np.percentile(curves, 2.5, axis=0)
    upper = np.percentile(curves, 97.5, axis=0)
    return BootstrapResult(
        covariate_names=list(data.covariate_names),
        eval_grid=eval_grid,
        estimate=estimate, lower=lower, upper=upper,
        curves=curves, selection=np.asarray(masks, dtype=bool),
        n_requested=B, n_failed=n_failed, fit=base_fit,
    )
