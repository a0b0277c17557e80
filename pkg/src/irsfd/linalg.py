"""Small Hermitian linear-algebra helpers shared across the optimizers."""
from __future__ import annotations

import numpy as np
import scipy.linalg


class NumericalError(RuntimeError):
    """Raised when a matrix that must be positive definite / invertible is not."""


def herm(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return a.conj().T


def hermitize(a: np.ndarray) -> np.ndarray:
    """Symmetrize a nominally Hermitian matrix to kill round-off drift."""
    return 0.5 * (a + herm(a))


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a Hermitian PD matrix.

    Raises NumericalError instead of LinAlgError so callers can distinguish
    "model guarantees violated" from programming errors.
    """
    try:
        return np.linalg.cholesky(hermitize(a))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"matrix is not positive definite: {exc}") from exc


def chol_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for Hermitian PD a."""
    low = cholesky(a)
    return scipy.linalg.cho_solve((low, True), b)


def chol_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a Hermitian PD matrix, re-hermitized."""
    eye = np.eye(a.shape[0], dtype=complex)
    return hermitize(chol_solve(a, eye))


def chol_logdet(a: np.ndarray) -> float:
    """log det of a Hermitian PD matrix (natural log)."""
    low = cholesky(a)
    return float(2.0 * np.sum(np.log(np.real(np.diag(low)))))
