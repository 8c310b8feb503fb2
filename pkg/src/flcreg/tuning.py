"""Extended BIC model selection over the penalty grid.

The criterion for the equivalent linear model is

    n * log(rss / n) + df * log(n) + 2 * gamma * log C(p, k)

where ``df`` counts every coefficient in the selected blocks (plus the
intercept block when present), ``p`` is the number of candidate
covariate groups and ``k`` the number selected.  The combinatorial term
guards against over-selection when many candidates compete.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

__all__ = ["ebic", "TuningRecord", "select_model"]


def _log_binom(p: int, k: int) -> float:
    return math.lgamma(p + 1) - math.lgamma(k + 1) - math.lgamma(p - k + 1)


def ebic(rss: float, n_rows: int, df: int, p: int, k_selected: int,
         gamma: float = 1.0, n_effective: int | None = None) -> float:
    """Extended BIC of one fitted model.

    Parameters
    ----------
    rss : float
        Residual sum of squares.
    n_rows : int
        Number of stacked observation rows.
    df : int
        Total coefficients in the selected blocks (intercept included).
    p : int
        Number of candidate penalized groups.
    k_selected : int
        Number of selected penalized groups.
    gamma : float, default 1.0
        Weight of the combinatorial term, in [0, 1]; 0 recovers BIC.
    n_effective : int, optional
        Sample size whose log multiplies ``df``.  Stacked rows from one
        subject are correlated, so the dimension penalty may use a
        smaller effective count than the raw row count; defaults to
        ``n_rows``.

    A zero ``rss`` returns ``-inf`` (with a warning) so a perfect fit
    always wins the comparison instead of crashing the log.
    """
    if n_rows <= 0:
        raise ValueError("n_rows must be positive")
    if df < 0:
        raise ValueError("df must be nonnegative")
    if not 0 <= k_selected <= p:
        raise ValueError("k_selected must lie in [0, p]")
    if n_effective is None:
        n_effective = n_rows
    if n_effective <= 1:
        raise ValueError("n_effective must exceed 1")
    if rss <= 0.0:
        warnings.warn("zero residual sum of squares; EBIC pinned at -inf", RuntimeWarning)
        return float("-inf")
    return (
        n_rows * math.log(rss / n_rows)
        + df * math.log(n_effective)
        + 2.0 * gamma * _log_binom(p, k_selected)
    )


@dataclass
class TuningRecord:
    """One candidate fit on the (lambda, psi) grid."""

    lam: float
    psi: float
    rss: float
    df: int
    k_selected: int
    converged: bool
    ebic: float
    index: int = -1


def select_model(records: list[TuningRecord]) -> tuple[int, list[TuningRecord]]:
    """Index of the EBIC-minimal converged record, plus the full table.

    Exact EBIC ties are broken toward larger lambda, then larger psi
    (the sparser and smoother candidate).
    """
    usable = [r for r in records if r.converged]
    if not usable:
        raise ValueError("no converged fits to select from")
    best = min(usable, key=lambda r: (r.ebic, -r.lam, -r.psi))
    return best.index if best.index >= 0 else records.index(best), records
