"""Group-penalized least squares by block coordinate descent.

Minimizes, over a stacked design partitioned into coefficient groups,

    ||y - X @ gamma||^2 + n_rows * sum_j P(||gamma_j||; lambda, phi)

for the group LASSO, group SCAD and group MCP penalties.  Groups are
orthonormalized first; in the rescaled coordinates every blockwise
subproblem is solved exactly by a closed-form threshold, so the
objective is non-increasing across cycles.  The per-row penalty scaling
is absorbed into the coordinates handed to the threshold, never into
the piecewise penalty formulas themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericalError

__all__ = [
    "PenaltySpec",
    "Group",
    "GroupDesign",
    "GroupTransform",
    "SolverResult",
    "PathPoint",
    "penalty_value",
    "group_threshold",
    "orthonormalize_groups",
    "solve",
    "solve_path",
    "lambda_max",
    "default_lambda_grid",
    "objective_value",
]

FAMILIES = ("group_lasso", "group_scad", "group_mcp")
DEFAULT_PHI = {"group_scad": 4.0, "group_mcp": 3.0}


@dataclass
class PenaltySpec:
    """Penalty family with its level and concavity parameters.

    ``phi`` defaults to 4 for SCAD and 3 for MCP; SCAD requires
    ``phi > 2`` and MCP ``phi > 1``.
    """

    family: str
    lam: float
    phi: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.phi is None:
            self.phi = DEFAULT_PHI.get(self.family)
        if self.family == "group_scad" and not self.phi > 2:
            raise ValueError("group SCAD requires phi > 2")
        if self.family == "group_mcp" and not self.phi > 1:
            raise ValueError("group MCP requires phi > 1")


@dataclass
class Group:
    name: str
    start: int
    size: int
    penalized: bool = True
    degenerate: bool = False

    @property
    def sl(self) -> slice:
        return slice(self.start, self.start + self.size)


@dataclass
class GroupTransform:
    """Invertible (on its retained range) map between original and
    orthonormal block coordinates: ``gamma = back @ gamma_orth``."""

    forward: np.ndarray  # (rank, size)
    back: np.ndarray     # (size, rank)


@dataclass
class GroupDesign:
    """Stacked regression problem with a group partition of the columns."""

    X: np.ndarray
    y: np.ndarray
    groups: list[Group]
    row_offsets: np.ndarray | None = None  # per-subject row starts, length n+1
    orthonormal: bool = False
    transforms: list[GroupTransform] | None = field(default=None, repr=False)
    parent_groups: list[Group] | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        total = sum(g.size for g in self.groups)
        if total != self.X.shape[1]:
            raise ValueError("group sizes must add up to the column count")
        if self.y.shape[0] != self.X.shape[0]:
            raise ValueError("response length must match the row count")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    # column cross-products, shared by every fit on this design
    def gram(self) -> np.ndarray:
        if "gram" not in self._cache:
            self._cache["gram"] = self.X.T @ self.X
        return self._cache["gram"]

    def xty(self) -> np.ndarray:
        if "xty" not in self._cache:
            self._cache["xty"] = self.X.T @ self.y
        return self._cache["xty"]

    def yty(self) -> float:
        if "yty" not in self._cache:
            self._cache["yty"] = float(self.y @ self.y)
        return self._cache["yty"]


@dataclass
class SolverResult:
    gamma: np.ndarray            # original design coordinates
    objective: float
    rss: float
    iterations: int
    converged: bool
    active_set: list[int]        # group indices with nonzero blocks
    kkt_residual: float
    objective_history: list[float] | None = None


@dataclass
class PathPoint:
    lam: float
    result: SolverResult | None
    error: str | None = None


# ---------------------------------------------------------------------------
# penalty formulas and blockwise minimizers


def penalty_value(spec: PenaltySpec, norm: float) -> float:
    """Piecewise penalty value at a nonnegative group norm."""
    if norm < 0:
        raise ValueError("norm must be nonnegative")
    lam, phi = spec.lam, spec.phi
    u = float(norm)
    if spec.family == "group_lasso":
        return lam * u
    if spec.family == "group_scad":
        if u <= lam:
            return lam * u
        if u <= lam * phi:
            return (lam * phi * u - 0.5 * (u * u + lam * lam)) / (phi - 1.0)
        return 0.5 * lam * lam * (phi + 1.0)
    # group MCP
    if u <= lam * phi:
        return lam * u - u * u / (2.0 * phi)
    return 0.5 * lam * lam * phi


def _soft(z: np.ndarray, norm: float, kappa: float) -> np.ndarray:
    if norm <= kappa:
        return np.zeros_like(z)
    return z * (1.0 - kappa / norm)


def group_threshold(spec: PenaltySpec, z: np.ndarray) -> np.ndarray:
    """Exact minimizer of ``0.5 * ||z - g||^2 + P(||g||)`` per family.

    Assumes the group's columns are orthonormal so that the blockwise
    subproblem has exactly this form.
    """
    z = np.asarray(z, dtype=float)
    u = float(np.linalg.norm(z))
    lam, phi = spec.lam, spec.phi
    if u == 0.0 or lam == 0.0:
        return z.copy() if lam == 0.0 else np.zeros_like(z)
    if spec.family == "group_lasso":
        return _soft(z, u, lam)
    if spec.family == "group_scad":
        if u <= 2.0 * lam:
            return _soft(z, u, lam)
        if u <= lam * phi:
            return _soft(z, u, phi * lam / (phi - 1.0)) / (1.0 - 1.0 / (phi - 1.0))
        return z.copy()
    # group MCP: firm threshold
    if u <= lam * phi:
        return _soft(z, u, lam) / (1.0 - 1.0 / phi)
    return z.copy()


# ---------------------------------------------------------------------------
# orthonormalization


def orthonormalize_groups(design: GroupDesign) -> GroupDesign:
    """Replace each block by an orthonormal-column equivalent.

    Thin SVD per block; directions with negligible singular values are
    dropped (rank-deficient blocks keep their nonzero directions, an
    all-zero block is flagged degenerate and forced out of the model).
    Already-orthonormal blocks get an identity transform.  The returned
    design records the per-group transforms needed to map solutions back
    to the original coordinates; fitted values are invariant.
    """
    if design.orthonormal:
        return design
    blocks, transforms, new_groups = [], [], []
    start = 0
    for g in design.groups:
        B = design.X[:, g.sl]
        gram = B.T @ B
        k = g.size
        if k > 0 and np.max(np.abs(gram - np.eye(k))) < 1e-12:
            blocks.append(B)
            transforms.append(GroupTransform(forward=np.eye(k), back=np.eye(k)))
            new_groups.append(replace(g, start=start))
            start += k
            continue
        U, sv, Vt = np.linalg.svd(B, full_matrices=False)
        if sv.size == 0 or sv[0] <= 0:
            rank = 0
        else:
            rank = int(np.sum(sv > sv[0] * 1e-12))
        if rank == 0:
            transforms.append(GroupTransform(
                forward=np.zeros((0, k)), back=np.zeros((k, 0))))
            new_groups.append(replace(g, start=start, size=0, degenerate=True))
            continue
        blocks.append(U[:, :rank])
        transforms.append(GroupTransform(
            forward=sv[:rank, None] * Vt[:rank],
            back=Vt[:rank].T / sv[:rank][None, :],
        ))
        new_groups.append(replace(g, start=start, size=rank))
        start += rank
    Xo = np.concatenate(blocks, axis=1) if blocks else np.zeros((design.n_rows, 0))
    return GroupDesign(
        X=Xo, y=design.y, groups=new_groups,
        row_offsets=design.row_offsets, orthonormal=True,
        transforms=transforms, parent_groups=design.groups,
    )


def _to_original(od: GroupDesign, gamma_orth: np.ndarray) -> np.ndarray:
    if od.parent_groups is None:
        return gamma_orth.copy()
    out = np.zeros(sum(g.size for g in od.parent_groups))
    pos = 0
    for g_orig, g_new, tr in zip(od.parent_groups, od.groups, od.transforms):
        if g_new.size:
            out[pos:pos + g_orig.size] = tr.back @ gamma_orth[g_new.sl]
        pos += g_orig.size
    return out


def _from_original(od: GroupDesign, gamma: np.ndarray) -> np.ndarray:
    out = np.zeros(od.X.shape[1])
    pos = 0
    for g_orig, g_new, tr in zip(od.parent_groups, od.groups, od.transforms):
        if g_new.size:
            out[g_new.sl] = tr.forward @ gamma[pos:pos + g_orig.size]
        pos += g_orig.size
    return out


# ---------------------------------------------------------------------------
# coordinate descent


def _penalty_total(od: GroupDesign, gamma: np.ndarray, spec: PenaltySpec, s: float) -> float:
    tot = 0.0
    for g in od.groups:
        if g.penalized and g.size:
            tot += penalty_value(spec, np.linalg.norm(gamma[g.sl]) / s)
    return tot


def objective_value(design: GroupDesign, gamma: np.ndarray, spec: PenaltySpec) -> float:
    """Penalized criterion at ``gamma`` given in the design's coordinates.

    The group norms entering the penalty are taken in the orthonormalized
    block coordinates rescaled by sqrt(n_rows / 2); this is the scaling
    under which the blockwise updates are the exact standard thresholds.
    """
    od = orthonormalize_groups(design)
    gamma = np.asarray(gamma, dtype=float)
    g = _from_original(od, gamma) if od.parent_groups is not None else gamma
    r = od.y - od.X @ g
    s = math.sqrt(od.n_rows / 2.0)
    return float(r @ r + od.n_rows * _penalty_total(od, g, spec, s))


def _bcd_pass(od, spec, s, gamma, grad, G, group_ids):
    """One sweep over the given groups; returns max coefficient change.

    ``grad`` caches ``X'(y - X gamma)`` and is kept current through
    rank-``size`` updates, so a sweep costs O(ncol * size) per updated
    group instead of a pass over the rows.
    """
    lam, phi, family = spec.lam, spec.phi, spec.family
    max_delta = 0.0
    for j in group_ids:
        g = od.groups[j]
        if g.size == 0:
            continue
        sl = g.sl
        old = gamma[sl]
        z = grad[sl] + old
        if g.penalized and lam > 0.0:
            # inlined group_threshold on z / s, rescaled by s
            u = math.sqrt(float(z @ z)) / s
            if family == "group_lasso":
                f = 0.0 if u <= lam else 1.0 - lam / u
            elif family == "group_scad":
                if u <= lam:
                    f = 0.0
                elif u <= 2.0 * lam:
                    f = 1.0 - lam / u
                elif u <= lam * phi:
                    f = (1.0 - phi * lam / ((phi - 1.0) * u)) / (1.0 - 1.0 / (phi - 1.0))
                else:
                    f = 1.0
            else:  # group_mcp
                if u <= lam:
                    f = 0.0
                elif u <= lam * phi:
                    f = (1.0 - lam / u) / (1.0 - 1.0 / phi)
                else:
                    f = 1.0
            new = z * f
        else:
            new = z
        delta = new - old
        d = float(np.max(np.abs(delta)))
        if d > 0.0:
            grad -= G[:, sl] @ delta
            gamma[sl] = new
            if d > max_delta:
                max_delta = d
    return max_delta


def _kkt_residual(od, spec, s, gamma, grad) -> float:
    """Max blockwise stationarity violation, in the threshold coordinates."""
    worst = 0.0
    lam = spec.lam
    for g in od.groups:
        if not g.penalized or g.size == 0:
            continue
        z = (grad[g.sl] + gamma[g.sl]) / s
        w = gamma[g.sl] / s
        nw = np.linalg.norm(w)
        if nw == 0.0:
            viol = max(0.0, np.linalg.norm(z) - lam)
        else:
            if spec.family == "group_lasso":
                grad_pen = lam * w / nw
            else:
                # derivative of the piecewise penalty at ||w||
                u = nw
                phi = spec.phi
                if spec.family == "group_scad":
                    dp = lam if u <= lam else (
                        max(lam * phi - u, 0.0) / (phi - 1.0) if u <= lam * phi else 0.0)
                else:
                    dp = max(lam - u / phi, 0.0)
                grad_pen = dp * w / nw
            viol = np.linalg.norm(z - w - grad_pen)
        worst = max(worst, viol)
    return worst


def solve(
    design: GroupDesign,
    spec: PenaltySpec,
    warm_start: np.ndarray | None = None,
    tol: float = 1e-7,
    max_iter: int = 10_000,
    track_objective: bool = False,
) -> SolverResult:
    """Block coordinate descent over the groups at one penalty level.

    Cycles over active groups until stable, then over all groups,
    repeating until the maximum coefficient change in a full sweep drops
    below ``tol`` relative to the coefficient scale.  The reported
    objective is the residual sum of squares plus ``n_rows`` times the
    summed group penalties.

    Raises
    ------
    NumericalError
        If the objective turns non-finite (divergence on ill-posed input).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if "finite" not in design._cache:
        design._cache["finite"] = bool(
            np.all(np.isfinite(design.X)) and np.all(np.isfinite(design.y)))
    if not design._cache["finite"]:
        raise NumericalError("design contains non-finite entries")
    od = orthonormalize_groups(design)
    n = od.n_rows
    s = math.sqrt(n / 2.0)
    ncol = od.X.shape[1]

    # warm_start and the returned gamma share the caller's coordinates:
    # the parent coordinates when orthonormalization introduced a transform
    gamma = np.zeros(ncol)
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float)
        gamma = _from_original(od, ws) if od.parent_groups is not None else ws.copy()

    G = od.gram()
    xty = od.xty()
    yty = od.yty()
    grad = xty - G @ gamma

    def rss_at(g):
        return max(float(yty - 2.0 * (xty @ g) + g @ (G @ g)), 0.0)

    all_ids = list(range(len(od.groups)))
    history = [] if track_objective else None
    iterations = 0
    converged = False
    while iterations < max_iter:
        # inner passes on the current active set, then one full sweep to
        # admit new groups; converged only when the full sweep is stable
        active = [j for j, g in enumerate(od.groups)
                  if not g.penalized or (g.size and np.any(gamma[g.sl]))]
        for _ in range(max_iter - iterations):
            d = _bcd_pass(od, spec, s, gamma, grad, G, active)
            iterations += 1
            if track_objective:
                history.append(rss_at(gamma) + n * _penalty_total(od, gamma, spec, s))
            if d <= tol * max(1.0, np.max(np.abs(gamma), initial=0.0)):
                break
            if iterations >= max_iter:
                break
        if iterations >= max_iter:
            break
        d_full = _bcd_pass(od, spec, s, gamma, grad, G, all_ids)
        iterations += 1
        if track_objective:
            history.append(rss_at(gamma) + n * _penalty_total(od, gamma, spec, s))
        if d_full <= tol * max(1.0, np.max(np.abs(gamma), initial=0.0)):
            converged = True
            break

    rss = rss_at(gamma)
    obj = rss + n * _penalty_total(od, gamma, spec, s)
    if not np.isfinite(obj):
        raise NumericalError("coordinate descent diverged: non-finite objective")
    kkt = _kkt_residual(od, spec, s, gamma, grad)
    gamma_orig = _to_original(od, gamma) if od.parent_groups is not None else gamma.copy()
    groups_ref = od.parent_groups if od.parent_groups is not None else od.groups
    active_set = [
        j for j, (g_new, g_ref) in enumerate(zip(od.groups, groups_ref))
        if g_ref.penalized and g_new.size and np.any(gamma[g_new.sl])
    ]
    return SolverResult(
        gamma=gamma_orig, objective=float(obj), rss=rss,
        iterations=iterations, converged=converged,
        active_set=active_set, kkt_residual=float(kkt),
        objective_history=history,
    )


def lambda_max(design: GroupDesign, tol: float = 1e-10) -> float:
    """Smallest penalty level at which every penalized group is zero.

    Unpenalized groups are fitted first; the result is the largest
    blockwise gradient norm at the penalized-zero solution, in the
    threshold coordinates.
    """
    od = orthonormalize_groups(design)
    s = math.sqrt(od.n_rows / 2.0)
    gamma = np.zeros(od.X.shape[1])
    G = od.gram()
    grad = od.xty().copy()
    unpen = [j for j, g in enumerate(od.groups) if not g.penalized and g.size]
    if unpen:
        dummy = PenaltySpec("group_lasso", 0.0)
        for _ in range(1000):
            d = _bcd_pass(od, dummy, s, gamma, grad, G, unpen)
            if d <= tol * max(1.0, np.max(np.abs(gamma), initial=0.0)):
                break
    best = 0.0
    for g in od.groups:
        if g.penalized and g.size:
            best = max(best, float(np.linalg.norm(grad[g.sl])) / s)
    return best


def default_lambda_grid(lam_max: float, n_points: int = 100, min_ratio: float = 0.001) -> np.ndarray:
    """Descending log-spaced grid from ``lam_max`` to ``min_ratio * lam_max``."""
    if lam_max <= 0:
        return np.array([0.0])
    return np.geomspace(lam_max, min_ratio * lam_max, n_points)


def solve_path(
    design: GroupDesign,
    family: str,
    lambda_grid: np.ndarray | None = None,
    phi: float | None = None,
    tol: float = 1e-7,
    max_iter: int = 10_000,
    n_lambda: int = 100,
    lambda_min_ratio: float = 0.001,
) -> list[PathPoint]:
    """Warm-started fits along a descending penalty grid.

    The default grid starts at the all-zero level and decays
    geometrically.  Failures at individual grid points are recorded and
    the path continues.
    """
    od = orthonormalize_groups(design)
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(lambda_max(od), n_lambda, lambda_min_ratio)
    else:
        lambda_grid = np.asarray(lambda_grid, dtype=float)
        if lambda_grid.size > 1 and np.any(np.diff(lambda_grid) >= 0):
            raise ValueError("lambda_grid must be strictly descending")

    points: list[PathPoint] = []
    warm = None
    for lam in lambda_grid:
        spec = PenaltySpec(family, float(lam), phi)
        try:
            res = solve(od, spec, warm_start=warm, tol=tol, max_iter=max_iter)
            warm = res.gamma
            points.append(PathPoint(lam=float(lam), result=res))
        except NumericalError as exc:
            points.append(PathPoint(lam=float(lam), result=None, error=str(exc)))
    return points
