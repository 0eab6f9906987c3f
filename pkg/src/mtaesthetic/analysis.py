"""Reading learned task covariances as subtask correlations."""
import numpy as np

from .errors import InputError
from .linalg import as_sym_matrix, covariance_to_correlation

AESTHETIC_PREFIX = "aesthetic_"


def check_covariance(omega, trace_tol=1e-6):
    """Validate a task covariance read from disk: symmetric, unit trace."""
    try:
        a = as_sym_matrix(omega)
    except ValueError as exc:
        raise InputError(f"not a symmetric matrix: {exc}") from None
    tr = float(np.trace(a))
    if abs(tr - 1.0) > trace_tol:
        raise InputError(f"covariance trace is {tr!r}, expected 1 within {trace_tol}")
    return a


def aesthetic_pairs(names, corr):
    """Every (subtask, aesthetic subtask, correlation) with a non-aesthetic subtask."""
    aes = [i for i, n in enumerate(names) if n.startswith(AESTHETIC_PREFIX)]
    other = [i for i, n in enumerate(names) if not n.startswith(AESTHETIC_PREFIX) and not n.startswith("aux_")]
    if not aes:
        raise InputError("no aesthetic subtasks among the matrix columns")
    return [(names[j], names[i], float(corr[j, i])) for j in other for i in aes]


def ranked_pairs(names, corr, k=5):
    """The ``k`` most positive and ``k`` most negative subtask/aesthetic pairs."""
    pairs = aesthetic_pairs(names, corr)
    by_value = sorted(pairs, key=lambda p: (-p[2], p[0], p[1]))
    positive = [p for p in by_value if p[2] > 0][:k]
    negative = [p for p in reversed(by_value) if p[2] < 0][:k]
    return positive, negative


def correlation_from_covariance(omega, trace_tol=1e-6):
    return covariance_to_correlation(check_covariance(omega, trace_tol))
