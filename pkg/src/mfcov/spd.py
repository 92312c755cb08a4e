"""Dense symmetric / SPD linear algebra in the log-Euclidean geometry.

All matrix functions go through a full symmetric eigendecomposition, so
``spd_log`` and ``sym_exp`` are exact inverses on the spectrum. Matrices are
plain ``numpy.ndarray`` objects; inputs are symmetrized on entry.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DefinitenessError,
    EigenConvergenceError,
    MatrixRangeError,
)

__all__ = [
    "EigenDecomposition",
    "SPD_RTOL",
    "symmetrize",
    "as_spd",
    "is_spd",
    "sym_eig",
    "spd_log",
    "sym_exp",
    "spd_pow",
    "log_add",
    "log_sub",
    "dist_frobenius",
    "dist_log_euclidean",
    "dist_affine_invariant",
    "truncate_eigenvalues",
    "frechet_mean_log_euclidean",
    "smallest_eigenvalue",
]

# lambda_min > -SPD_RTOL * max(1, lambda_max) is accepted as SPD
SPD_RTOL = 1e-12

_EXP_MAX = float(np.log(np.finfo(np.float64).max))


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in descending order and matching orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self, values=None):
        """Return ``Q diag(values) Q^T`` (defaults to the eigenvalues)."""
        lam = self.eigenvalues if values is None else np.asarray(values)
        Q = self.eigenvectors
        return symmetrize((Q * lam) @ Q.T)

    def apply(self, func):
        """Apply a scalar function to the spectrum."""
        return self.reconstruct(func(self.eigenvalues))


def symmetrize(M):
    """Return ``(M + M^T) / 2`` as a float array; the result is exactly symmetric."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] < 1:
        raise ValueError("matrix dimension must be at least 1")
    return 0.5 * (M + M.T)


def _check_same_shape(A, B):
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")


def sym_eig(A):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Raises
    ------
    EigenConvergenceError
        If LAPACK fails to converge.
    """
    S = symmetrize(A)
    if not np.all(np.isfinite(S)):
        raise EigenConvergenceError("matrix contains non-finite entries", iterations=0)
    try:
        lam, Q = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        # LAPACK reports the number of off-diagonal elements that failed
        # to converge; surface it as the diagnostic count
        digits = [int(tok) for tok in str(exc).split() if tok.isdigit()]
        raise EigenConvergenceError(
            f"symmetric eigen-solver did not converge: {exc}",
            iterations=digits[0] if digits else None,
        ) from exc
    return EigenDecomposition(lam[::-1].copy(), Q[:, ::-1].copy())


def _spd_eig(A, name="matrix"):
    """Eigendecomposition plus SPD validation with the package tolerance."""
    eig = sym_eig(A)
    lam = eig.eigenvalues
    if lam[-1] <= -SPD_RTOL * max(1.0, abs(lam[0])):
        raise DefinitenessError(
            f"{name} is not positive definite: smallest eigenvalue {lam[-1]:.6g}",
            eigenvalue=float(lam[-1]),
        )
    return eig


def is_spd(A):
    """True if ``A`` passes SPD validation (tolerance ``SPD_RTOL``)."""
    try:
        _spd_eig(A)
    except DefinitenessError:
        return False
    return True


def as_spd(A):
    """Validate and return a symmetrized copy of an SPD matrix."""
    _spd_eig(A)
    return symmetrize(A)


def spd_log(A):
    """Matrix logarithm of an SPD matrix, ``Q log(Lambda) Q^T``.

    Raises
    ------
    DefinitenessError
        If any computed eigenvalue is not strictly positive.
    """
    eig = sym_eig(A)
    lam = eig.eigenvalues
    if lam[-1] <= 0.0:
        raise DefinitenessError(
            f"matrix logarithm needs positive eigenvalues; got {lam[-1]:.6g}",
            eigenvalue=float(lam[-1]),
        )
    return eig.apply(np.log)


def sym_exp(S):
    """Matrix exponential of a symmetric matrix; the result is SPD.

    Raises
    ------
    MatrixRangeError
        If an eigenvalue exceeds ``log(DBL_MAX)`` (about 709.78).
    """
    eig = sym_eig(S)
    if eig.eigenvalues[0] > _EXP_MAX:
        raise MatrixRangeError(
            f"eigenvalue {eig.eigenvalues[0]:.6g} overflows exp", eigenvalue=float(eig.eigenvalues[0])
        )
    return eig.apply(np.exp)


def spd_pow(A, t):
    """``A^t = Exp(t Log A)``; computed on the spectrum directly."""
    t = float(t)
    eig = sym_eig(A)
    lam = eig.eigenvalues
    if lam[-1] <= 0.0:
        raise DefinitenessError(
            f"matrix power needs positive eigenvalues; got {lam[-1]:.6g}",
            eigenvalue=float(lam[-1]),
        )
    if t == 0.0:
        return np.eye(lam.size)
    exponent = t * np.log(lam)
    if exponent.max() > _EXP_MAX:
        raise MatrixRangeError(
            f"eigenvalue {exponent.max():.6g} of t*Log(A) overflows exp",
            eigenvalue=float(exponent.max()),
        )
    return eig.reconstruct(np.exp(exponent))


def log_add(A, B):
    """Logarithmic addition ``Exp(Log A + Log B)``."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    _check_same_shape(A, B)
    return sym_exp(spd_log(A) + spd_log(B))


def log_sub(A, B):
    """Logarithmic subtraction ``Exp(Log A - Log B)``."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    _check_same_shape(A, B)
    return sym_exp(spd_log(A) - spd_log(B))


def dist_frobenius(A, B):
    """Euclidean distance ``||A - B||_F``."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    _check_same_shape(A, B)
    return float(np.linalg.norm(A - B, "fro"))


def dist_log_euclidean(A, B):
    """Log-Euclidean distance ``||Log A - Log B||_F``.

    Indefinite inputs raise :class:`DefinitenessError`; callers that report
    distances map that to ``inf``.
    """
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    _check_same_shape(A, B)
    return float(np.linalg.norm(spd_log(A) - spd_log(B), "fro"))


def dist_affine_invariant(A, B):
    r"""Affine-invariant distance ``||Log(A^{-1} B)||_F``.

    Evaluated through the symmetric similarity :math:`A^{-1/2} B A^{-1/2}`,
    whose eigenvalues are the generalized eigenvalues of ``(B, A)``.
    """
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    _check_same_shape(A, B)
    spd_log(B)  # definiteness check on B, same error as the log-Euclidean path
    # swapping the arguments only negates the logs; a canonical order makes
    # the computed distance exactly symmetric
    if tuple(B.ravel()) < tuple(A.ravel()):
        A, B = B, A
    A_isqrt = spd_pow(A, -0.5)
    lam = sym_eig(A_isqrt @ B @ A_isqrt).eigenvalues
    if lam[-1] <= 0.0:
        raise DefinitenessError(
            f"generalized eigenvalue {lam[-1]:.6g} is not positive",
            eigenvalue=float(lam[-1]),
        )
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def truncate_eigenvalues(A, delta):
    """Clamp the spectrum from below: ``Q max(Lambda, delta) Q^T``.

    Matrices whose eigenvalues are all at least ``delta`` are returned
    unchanged (symmetrized), not re-assembled from their decomposition.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    eig = sym_eig(A)
    if eig.eigenvalues[-1] >= delta:
        return symmetrize(A)
    return eig.reconstruct(np.maximum(eig.eigenvalues, delta))


def frechet_mean_log_euclidean(matrices, weights=None):
    """Weighted log-Euclidean Fréchet mean.

    The minimizer of ``sum_i w_i d_LE(X, A_i)^2`` over SPD ``X`` has the
    closed form ``Exp(sum_i w_i Log A_i / sum_i w_i)``.

    Parameters
    ----------
    matrices : sequence of ndarray, shape (d, d)
        SPD matrices of equal dimension.
    weights : sequence of float, optional
        Strictly positive weights; uniform if omitted.

    Returns
    -------
    ndarray, shape (d, d)
    """
    matrices = [np.asarray(M, dtype=float) for M in matrices]
    if not matrices:
        raise ValueError("Fréchet mean of an empty collection")
    if weights is None:
        weights = np.ones(len(matrices))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(matrices),):
        raise ValueError("need exactly one weight per matrix")
    if np.any(weights <= 0):
        raise ValueError("Fréchet weights must be strictly positive")
    for M in matrices[1:]:
        _check_same_shape(matrices[0], M)
    acc = sum(w * spd_log(M) for w, M in zip(weights, matrices))
    return sym_exp(acc / weights.sum())


def smallest_eigenvalue(A):
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(symmetrize(A))[0])
