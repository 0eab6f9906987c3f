"""Dense symmetric matrix algebra for the task-covariance updates.

Every function takes a square array, checks symmetry to an absolute 1e-10,
and works in float64. The eigensolver is cyclic Jacobi, which is accurate
to a few ulps for the small orders used here (one row per subtask).
"""
import numpy as np

from . import kernels
from .errors import (
    ContractViolation,
    DegenerateSubtaskError,
    NotPSDError,
    NumericalError,
    SingularMatrixError,
)

SYMMETRY_TOL = 1e-10
DEFAULT_REL_JITTER = 1e-8


def as_sym_matrix(m):
    """Validate ``m`` as a finite symmetric matrix and return a float64 copy."""
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ContractViolation(f"expected a nonempty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("matrix has non-finite entries")
    asym = np.max(np.abs(a - a.T))
    if asym > SYMMETRY_TOL:
        raise ContractViolation(f"matrix is not symmetric (max |m - m^T| = {asym:.3g})")
    return a


def sym_eigendecompose(m, tol=1e-14, max_sweeps=100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        Sorted in descending order.
    eigenvectors : ndarray, shape (n, n)
        Orthonormal columns; ``eigenvectors[:, i]`` pairs with
        ``eigenvalues[i]``.
    """
    a = np.ascontiguousarray(as_sym_matrix(m))
    a = 0.5 * (a + a.T)
    vals, vecs, sweeps = kernels.jacobi_eigh(a, float(tol), int(max_sweeps))
    if sweeps < 0:
        raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    order = np.argsort(-vals, kind="stable")
    return vals[order], np.ascontiguousarray(vecs[:, order])


def _reassemble(vecs, vals):
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def psd_sqrt(m, jitter=DEFAULT_REL_JITTER):
    """Symmetric PSD square root.

    Eigenvalues in ``[-jitter * trace(m), 0)`` are treated as round-off and
    clamped to zero; anything more negative raises :class:`NotPSDError`.
    """
    a = as_sym_matrix(m)
    vals, vecs = sym_eigendecompose(a)
    floor = -jitter * max(np.trace(a), 0.0)
    if vals[-1] < floor:
        raise NotPSDError(f"eigenvalue {vals[-1]:.6g} below tolerance {floor:.3g}")
    return _reassemble(vecs, np.sqrt(np.clip(vals, 0.0, None)))


def sym_inverse(m, ridge=None):
    """Inverse of ``m + ridge * I``; ``ridge`` defaults to ``1e-8 * trace(m)``."""
    a = as_sym_matrix(m)
    if ridge is None:
        ridge = DEFAULT_REL_JITTER * abs(np.trace(a))
    if ridge < 0:
        raise ContractViolation("ridge must be nonnegative")
    shifted = a + ridge * np.eye(a.shape[0])
    vals, vecs = sym_eigendecompose(shifted)
    tr = np.trace(shifted)
    if vals[-1] < 1e-12 * tr or tr <= 0:
        raise SingularMatrixError(
            f"smallest eigenvalue {vals[-1]:.3g} below 1e-12 * trace ({tr:.3g})"
        )
    return _reassemble(vecs, 1.0 / vals)


def covariance_to_correlation(omega):
    """Normalize a covariance matrix to unit diagonal."""
    a = as_sym_matrix(omega)
    d = np.diag(a)
    for i, v in enumerate(d):
        if not v > 0:
            raise DegenerateSubtaskError(i, float(v))
    s = np.sqrt(d)
    corr = a / np.outer(s, s)
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr
