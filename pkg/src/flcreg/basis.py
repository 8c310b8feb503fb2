"""B-spline bases and the penalty matrices used by the group-penalized fit.

Each coefficient function is expanded in a clamped B-spline basis on the
common time domain.  The penalty on a coefficient function combines its
L2 size (Gram matrix) and its curvature (second-derivative Gram matrix);
the Cholesky root of that combination is what turns the functional
penalty into a plain Euclidean group norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline

from .errors import NumericalError

__all__ = [
    "SplineBasis",
    "PenaltyMatrices",
    "make_basis",
    "gram_matrix",
    "curvature_matrix",
    "penalty_root",
    "penalty_matrices",
]


@dataclass(frozen=True)
class SplineBasis:
    """A clamped B-spline system on a closed interval.

    Attributes
    ----------
    domain : tuple of float
        Closed interval ``[t0, t1]`` the basis lives on.
    degree : int
        Polynomial degree of each piece (3 for cubic).
    num_basis : int
        Number of basis functions.
    knots : np.ndarray
        Full knot vector with boundary knots repeated ``degree + 1`` times.
    quad_nodes, quad_weights : np.ndarray
        Gauss-Legendre nodes/weights, ``degree + 1`` per knot span, exact
        for the polynomial integrands of the Gram and curvature matrices.
    """

    domain: tuple[float, float]
    degree: int
    num_basis: int
    knots: np.ndarray = field(repr=False)
    quad_nodes: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)

    def evaluate(self, t, deriv: int = 0) -> np.ndarray:
        """Evaluate all basis functions (or a derivative) at points ``t``.

        Returns an array of shape ``(len(t), num_basis)``.  Derivatives of
        order above the degree are identically zero.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if deriv > self.degree:
            return np.zeros((t.size, self.num_basis))
        bs = BSpline(self.knots, np.eye(self.num_basis), self.degree)
        if deriv > 0:
            bs = bs.derivative(deriv)
        return np.asarray(bs(t))

    def greville(self) -> np.ndarray:
        """Greville abscissae; coefficients reproducing ``f(t) = t`` exactly."""
        if self.degree == 0:
            k = self.knots
            return 0.5 * (k[:-1] + k[1:])
        cols = [self.knots[i + 1 : i + 1 + self.degree] for i in range(self.num_basis)]
        return np.array([c.mean() for c in cols])


@dataclass(frozen=True)
class PenaltyMatrices:
    """Size + roughness penalty for one coefficient-function block.

    ``combined = gram + psi * curvature`` and ``root @ root.T = combined``
    with ``root`` lower triangular.  The identity
    ``||root.T @ b||^2 = b.T @ combined @ b`` is what reduces the
    functional penalty to a group Euclidean norm.
    """

    gram: np.ndarray
    curvature: np.ndarray
    combined: np.ndarray
    root: np.ndarray
    psi: float


def make_basis(domain, num_basis: int, degree: int = 3) -> SplineBasis:
    """Construct a clamped B-spline basis with equally spaced interior knots.

    Parameters
    ----------
    domain : (float, float)
        Nondegenerate closed interval.
    num_basis : int
        Number of basis functions; must be at least ``degree + 1``.
    degree : int, default 3
        Spline degree.

    Raises
    ------
    ValueError
        If the domain is degenerate or ``num_basis < degree + 1``.
    """
    t0, t1 = float(domain[0]), float(domain[1])
    if not np.isfinite([t0, t1]).all() or t1 <= t0:
        raise ValueError(f"domain must be a nondegenerate interval, got [{t0}, {t1}]")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if num_basis < degree + 1:
        raise ValueError(
            f"num_basis must be at least degree + 1 = {degree + 1}, got {num_basis}"
        )

    n_interior = num_basis - degree - 1
    breaks = np.linspace(t0, t1, n_interior + 2)
    knots = np.concatenate(
        [np.full(degree + 1, t0), breaks[1:-1], np.full(degree + 1, t1)]
    )

    # Gauss-Legendre with degree+1 nodes per span: exact through degree 2*degree+1,
    # enough for products of basis functions.
    gl_x, gl_w = leggauss(degree + 1)
    nodes, weights = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(half * gl_x + 0.5 * (hi + lo))
        weights.append(half * gl_w)

    return SplineBasis(
        domain=(t0, t1),
        degree=degree,
        num_basis=num_basis,
        knots=knots,
        quad_nodes=np.concatenate(nodes),
        quad_weights=np.concatenate(weights),
    )


def gram_matrix(basis: SplineBasis) -> np.ndarray:
    """Matrix of pairwise L2 inner products of the basis functions."""
    theta = basis.evaluate(basis.quad_nodes)
    g = theta.T @ (basis.quad_weights[:, None] * theta)
    return 0.5 * (g + g.T)


def curvature_matrix(basis: SplineBasis) -> np.ndarray:
    """Matrix of pairwise L2 inner products of second derivatives.

    Zero for degree below 2 (piecewise-linear functions have no curvature).
    """
    if basis.degree < 2:
        return np.zeros((basis.num_basis, basis.num_basis))
    d2 = basis.evaluate(basis.quad_nodes, deriv=2)
    q = d2.T @ (basis.quad_weights[:, None] * d2)
    return 0.5 * (q + q.T)


def penalty_root(R: np.ndarray, Q: np.ndarray, psi: float) -> PenaltyMatrices:
    """Combine size and curvature penalties and take the Cholesky root.

    Parameters
    ----------
    R : np.ndarray
        Symmetric positive definite Gram matrix.
    Q : np.ndarray
        Symmetric positive semidefinite curvature matrix.
    psi : float
        Roughness weight, ``psi >= 0``.

    Returns
    -------
    PenaltyMatrices

    Raises
    ------
    NumericalError
        If the Cholesky factorization fails even after one jitter retry.
    """
    if psi < 0:
        raise ValueError(f"psi must be nonnegative, got {psi}")
    R = np.asarray(R, dtype=float)
    Q = np.asarray(Q, dtype=float)
    K = R + psi * Q
    K = 0.5 * (K + K.T)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        # psi = 0 with an ill-scaled Gram must not abort a tuning sweep:
        # retry once with a trace-scaled jitter, then give up loudly.
        jitter = 1e-10 * np.trace(K) / K.shape[0]
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "Cholesky factorization of the penalty matrix failed even "
                f"after adding jitter {jitter:.3e}; the Gram matrix is not "
                "positive definite"
            ) from exc
    return PenaltyMatrices(gram=R, curvature=Q, combined=K, root=L, psi=float(psi))


def penalty_matrices(basis: SplineBasis, psi: float) -> PenaltyMatrices:
    """Gram, curvature, combined penalty and its root for one basis."""
    return penalty_root(gram_matrix(basis), curvature_matrix(basis), psi)
