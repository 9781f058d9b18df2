"""Small SPD helpers built on Cholesky factorizations."""

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalError


def cholesky(M):
    """Lower Cholesky factor of ``M``.

    On failure the diagonal is inflated once by ``1e-10 * trace / dim``;
    a second failure raises :class:`NumericalError`.
    """
    M = np.asarray(M, dtype=float)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    dim = M.shape[0]
    jitter = 1e-10 * abs(np.trace(M)) / max(dim, 1)
    try:
        return np.linalg.cholesky(M + jitter * np.eye(dim))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"matrix not positive definite (dim={dim})") from exc


def logdet_from_chol(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def solve_spd(L, b):
    return cho_solve((L, True), b)


def quad_inv(L, v):
    """v^T M^{-1} v given the Cholesky factor of M."""
    t = solve_triangular(L, v, lower=True)
    return float(t @ t)


def mvn_from_precision(mean, L, rng):
    """Draw from N(mean, (L L^T)^{-1})."""
    z = rng.standard_normal(len(mean))
    return mean + solve_triangular(L.T, z, lower=False)


def batched_cholesky(M):
    """Cholesky of a stack of SPD matrices with the same one-shot jitter rule."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return np.stack([cholesky(m) for m in M])
