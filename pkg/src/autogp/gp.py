"""Zero-mean GP machinery: jittered Cholesky, NLML and the posterior."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from . import autodiff as ad
from .autodiff import NotPositiveDefiniteError, Tensor

JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
LOG_2PI = math.log(2.0 * math.pi)


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def _check_symmetric(A: np.ndarray):
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise np.linalg.LinAlgError("covariance matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError("covariance matrix is not symmetric")


def _singular(A: np.ndarray) -> SingularCovarianceError:
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    return SingularCovarianceError(
        f"Cholesky failed up to jitter {JITTER_LADDER[-1]:g}: n={len(A)}, "
        f"eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}]")


def jittered_cholesky(A) -> tuple[np.ndarray, float]:
    """Lower factor of ``A + j I`` for the first j on the ladder that works."""
    A = np.asarray(A, dtype=np.float64)
    _check_symmetric(A)
    eye = np.eye(len(A))
    for j in JITTER_LADDER:
        try:
            return np.linalg.cholesky(A + j * eye), j
        except np.linalg.LinAlgError:
            continue
    raise _singular(A)


def cholesky_tensor(A: Tensor) -> tuple[Tensor, float]:
    """Differentiable counterpart of :func:`jittered_cholesky`."""
    for j in JITTER_LADDER:
        try:
            return ad.cholesky(A, jitter=j), j
        except NotPositiveDefiniteError:
            continue
    raise _singular(A.data)


def nlml(K, y, sigma2) -> Tensor:
    """``0.5 * (y^T (K + s2 I)^-1 y + log det(K + s2 I) + n log 2 pi)``.

    ``K`` and ``sigma2`` may be tensors; the result is differentiable in both.
    """
    K = ad.as_tensor(K)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    if K.shape != (n, n):
        raise ad.ShapeError(f"K has shape {K.shape} but y has {n} entries")
    A = K + ad.as_tensor(sigma2) * np.eye(n)
    L, _ = cholesky_tensor(A)
    alpha = ad.triangular_solve(L, y)
    quad = ad.tsum(ad.square(alpha))
    return 0.5 * (quad + ad.logdet_from_cholesky(L) + n * LOG_2PI)


@dataclass
class Posterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def posterior(K_tt, K_st, K_ss, y, mu_t=0.0, mu_s=0.0, sigma2=0.0) -> Posterior:
    """Conditional of f* given noisy training targets, via a Cholesky factor."""
    K_tt = np.asarray(K_tt, float)
    K_st = np.atleast_2d(np.asarray(K_st, float))
    K_ss = np.atleast_2d(np.asarray(K_ss, float))
    y = np.asarray(y, float).ravel()
    if K_tt.shape != (len(y), len(y)) or K_st.shape != (len(K_ss), len(y)):
        raise ad.ShapeError(f"posterior: K_tt {K_tt.shape}, K_st {K_st.shape}, K_ss {K_ss.shape}, y {y.shape}")
    L, _ = jittered_cholesky(K_tt + sigma2 * np.eye(len(y)))
    return posterior_from_factor(L, K_st, K_ss, y - mu_t, mu_s)


def posterior_from_factor(L: np.ndarray, K_st, K_ss, resid, mu_s=0.0) -> Posterior:
    alpha = sla.cho_solve((L, True), resid)
    V = sla.solve_triangular(L, K_st.T, lower=True)
    mean = mu_s + K_st @ alpha
    cov = K_ss - V.T @ V
    return Posterior(mean, 0.5 * (cov + cov.T))
