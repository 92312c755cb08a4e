"""Geometric-mean metric learning from two class-conditional covariances.

The learned metric interpolates between the inverse similarity matrix
``S^{-1}`` and the dissimilarity matrix ``D`` along the affine-invariant
geodesic; the interpolation point ``t`` trades the two off.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DefinitenessError
from .spd import smallest_eigenvalue, spd_pow, symmetrize

__all__ = [
    "LearnedMetric",
    "DEFAULT_T",
    "similarity_matrix",
    "dissimilarity_matrix",
    "gmml_metric",
    "mahalanobis_distance",
    "mean_relative_error",
]

DEFAULT_T = 0.1


@dataclass(frozen=True)
class LearnedMetric:
    """SPD metric matrix ``A`` with its interpolation point and origin.

    Attributes
    ----------
    A : ndarray, shape (d, d)
    t : float
    provenance : str
        Which estimator produced the class covariances (free-form label).
    """

    A: np.ndarray
    t: float
    provenance: str = ""

    @property
    def dim(self):
        return self.A.shape[0]


def _positive_definite(C, name):
    """Symmetrized ``C``; any eigenvalue ``<= 0`` is rejected, no tolerance."""
    C = symmetrize(C)
    lam = smallest_eigenvalue(C)
    if not lam > 0:
        raise DefinitenessError(f"{name} is not positive definite (smallest eigenvalue {lam:.6g})", eigenvalue=lam)
    return C


def similarity_matrix(cov0, cov1, validate=True):
    """``S = cov0 + cov1``.

    Both inputs must be strictly positive definite. ``validate=False`` skips
    that check for inputs that are positive definite by construction but
    whose smallest eigenvalue does not survive round-off (eigenvalues
    clamped at 1e-16, say); ``gmml_metric`` still checks ``S`` itself.
    """
    if validate:
        cov0 = _positive_definite(cov0, "class-0 covariance")
        cov1 = _positive_definite(cov1, "class-1 covariance")
    else:
        cov0, cov1 = symmetrize(cov0), symmetrize(cov1)
    if cov0.shape != cov1.shape:
        raise ValueError(f"dimension mismatch: {cov0.shape} vs {cov1.shape}")
    return cov0 + cov1


def dissimilarity_matrix(S, mu):
    """``D = S + mu mu^T`` for the class-mean difference ``mu``."""
    S = symmetrize(S)
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.shape[0] != S.shape[0]:
        raise ValueError(f"mean difference has length {mu.shape[0]}, expected {S.shape[0]}")
    return S + np.outer(mu, mu)


def gmml_metric(S, D, t=DEFAULT_T, provenance=""):
    """Point ``t`` on the geodesic from ``S^{-1}`` to ``D``.

    ``A = S^{-1/2} (S^{1/2} D S^{1/2})^t S^{-1/2}``.

    Raises
    ------
    DefinitenessError
        If ``S`` or ``D`` is not SPD.
    """
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    S = _positive_definite(S, "similarity matrix")
    D = _positive_definite(D, "dissimilarity matrix")
    if S.shape != D.shape:
        raise ValueError(f"dimension mismatch: {S.shape} vs {D.shape}")
    S_half = spd_pow(S, 0.5)
    S_ihalf = spd_pow(S, -0.5)
    inner = spd_pow(S_half @ D @ S_half, t)
    return LearnedMetric(symmetrize(S_ihalf @ inner @ S_ihalf), t, provenance)


def _matrix(metric):
    return metric.A if isinstance(metric, LearnedMetric) else np.asarray(metric, dtype=float)


def mahalanobis_distance(metric, y1, y2):
    """``sqrt((y1 - y2)^T A (y1 - y2))``."""
    A = _matrix(metric)
    diff = np.asarray(y1, dtype=float) - np.asarray(y2, dtype=float)
    if diff.shape != (A.shape[0],):
        raise ValueError(f"vectors must have length {A.shape[0]}")
    # clamp tiny negative round-off
    return float(np.sqrt(max(diff @ A @ diff, 0.0)))


def _norms(A, Y):
    return np.sqrt(np.maximum(np.einsum("ni,ij,nj->n", Y, A, Y), 0.0))


def mean_relative_error(metric, reference, test_points):
    """Mean over test points of ``|d_A(y, 0) - d_A0(y, 0)| / d_A0(y, 0)``.

    Test points at which the reference distance is zero are excluded and a
    warning reports how many were dropped.

    Raises
    ------
    ValueError
        If no usable test point remains.
    """
    A, A0 = _matrix(metric), _matrix(reference)
    Y = np.atleast_2d(np.asarray(test_points, dtype=float))
    if Y.shape[0] == 0:
        raise ValueError("mean relative error needs at least one test point")
    if Y.shape[1] != A0.shape[0]:
        raise ValueError(f"test points must have length {A0.shape[0]}")
    ref = _norms(A0, Y)
    keep = ref > 0
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        warnings.warn(f"excluded {dropped} test point(s) at the origin", RuntimeWarning, stacklevel=2)
    if not keep.any():
        raise ValueError("every test point is at the origin")
    est = _norms(A, Y[keep])
    return float(np.mean(np.abs(est - ref[keep]) / ref[keep]))
