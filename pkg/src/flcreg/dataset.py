"""Container for per-subject functional response and covariate observations.

Subjects may be observed on different (possibly sparse, irregular) grids.
Covariate grids may differ from the response grid; the fitting pipeline
then requires a reconstruction pass before the concurrent design can be
assembled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["FunctionalDataset"]


@dataclass
class FunctionalDataset:
    """Response and covariate curves observed per subject.

    Attributes
    ----------
    domain : (float, float)
        Common time domain of all observations.
    covariate_names : list of str
        One name per covariate.
    response_times, response_values : list of np.ndarray
        Per-subject sorted observation times and response values.
    covariate_times, covariate_values : list of list of np.ndarray
        Indexed ``[subject][covariate]``; grids may differ from the
        response grid.
    """

    domain: tuple[float, float]
    covariate_names: list[str]
    response_times: list[np.ndarray]
    response_values: list[np.ndarray]
    covariate_times: list[list[np.ndarray]] = field(repr=False)
    covariate_values: list[list[np.ndarray]] = field(repr=False)

    def __post_init__(self):
        t0, t1 = self.domain
        if not (np.isfinite(t0) and np.isfinite(t1)) or t1 <= t0:
            raise ValueError(f"degenerate domain [{t0}, {t1}]")
        n = len(self.response_times)
        if n == 0:
            raise ValueError("dataset must contain at least one subject")
        if not (len(self.response_values) == len(self.covariate_times)
                == len(self.covariate_values) == n):
            raise ValueError("per-subject lists must have equal length")
        p = len(self.covariate_names)
        for i in range(n):
            t = np.asarray(self.response_times[i], dtype=float)
            if t.size == 0:
                raise ValueError(f"subject {i} has no response observations")
            if np.any(np.diff(t) <= 0):
                raise ValueError(f"subject {i} response times must be strictly increasing")
            if t[0] < t0 - 1e-12 or t[-1] > t1 + 1e-12:
                raise ValueError(f"subject {i} has times outside the domain")
            if len(self.response_values[i]) != t.size:
                raise ValueError(f"subject {i}: response times/values length mismatch")
            if len(self.covariate_times[i]) != p or len(self.covariate_values[i]) != p:
                raise ValueError(f"subject {i}: expected {p} covariate series")

    @property
    def n_subjects(self) -> int:
        return len(self.response_times)

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_names)

    def covariates_on_response_grid(self) -> bool:
        """True when every covariate is observed exactly at the response times."""
        for i in range(self.n_subjects):
            rt = self.response_times[i]
            for j in range(self.n_covariates):
                ct = self.covariate_times[i][j]
                if len(ct) != len(rt) or not np.allclose(ct, rt, rtol=0, atol=1e-12):
                    return False
        return True

    def master_grid(self, rtol: float = 1e-8) -> np.ndarray | None:
        """Shared equispaced grid that all observation times fall on, if any.

        Subjects may each observe a subset of the grid.  Returns None when
        the pooled times are irregular, which disables the whitening path.
        """
        pooled = [np.asarray(t, dtype=float) for t in self.response_times]
        for row in self.covariate_times:
            pooled.extend(np.asarray(t, dtype=float) for t in row)
        allt = np.concatenate(pooled)
        grid = np.unique(allt)
        if grid.size < 2:
            return None
        gaps = np.diff(grid)
        h = np.median(gaps)
        if not np.allclose(gaps, h, rtol=rtol, atol=rtol * (grid[-1] - grid[0])):
            return None
        return grid

    def subset(self, indices) -> "FunctionalDataset":
        """New dataset from the given subject indices (repeats allowed)."""
        idx = list(indices)
        return FunctionalDataset(
            domain=self.domain,
            covariate_names=list(self.covariate_names),
            response_times=[self.response_times[i] for i in idx],
            response_values=[self.response_values[i] for i in idx],
            covariate_times=[self.covariate_times[i] for i in idx],
            covariate_values=[self.covariate_values[i] for i in idx],
        )

    def scale_covariate(self, j: int, factor: float) -> "FunctionalDataset":
        """Copy with covariate ``j`` multiplied by ``factor``."""
        vals = [
            [v * factor if k == j else v for k, v in enumerate(row)]
            for row in self.covariate_values
        ]
        return FunctionalDataset(
            domain=self.domain,
            covariate_names=list(self.covariate_names),
            response_times=self.response_times,
            response_values=self.response_values,
            covariate_times=self.covariate_times,
            covariate_values=vals,
        )
