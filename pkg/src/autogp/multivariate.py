"""Multivariate covariance: shared-kernel blocks scaled by cross-variable weights.

Locations are flattened variable-major, so block ``(m, n)`` of every
``(N*B, N*B)`` matrix holds the pairs ``(h_i^m, h_j^n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _make

SOFTPLUS_ONE = math.log(math.e - 1.0)


def default_rank(N: int) -> int:
    return max(1, N // 4)


@dataclass
class CrossVariableWeights:
    D_prime: Tensor     # (N, V)
    raw_lambda: Tensor  # (N,), lambda = softplus(raw)

    @classmethod
    def init(cls, N: int, V: int | None = None, seed: int = 0, scale: float = 0.1) -> "CrossVariableWeights":
        V = default_rank(N) if V is None else int(V)
        if V < 1 or (N > 1 and V >= N):
            raise ValueError(f"rank V={V} must satisfy 1 <= V < N={N}")
        rng = np.random.default_rng(seed)
        return cls(Tensor(rng.normal(0.0, scale, (N, V)), requires_grad=True),
                   Tensor(np.full(N, SOFTPLUS_ONE), requires_grad=True))

    @property
    def N(self) -> int:
        return self.D_prime.shape[0]

    def matrix(self) -> Tensor:
        Dp = self.D_prime
        return Dp @ ad.transpose(Dp) + ad.softplus(self.raw_lambda) * np.eye(self.N)

    def parameters(self) -> list[Tensor]:
        return [self.D_prime, self.raw_lambda]


def flatten_locations(H) -> Tensor:
    """``(B, N)`` locations -> length ``N*B`` vector, variable-major."""
    H = ad.as_tensor(H)
    return ad.reshape(ad.transpose(H), (-1,))


def block_expand(D, rows: int, cols: int | None = None) -> Tensor:
    """Repeat each entry of ``D`` into a ``rows x cols`` block."""
    D = ad.as_tensor(D)
    cols = rows if cols is None else cols
    N, M = D.shape
    out = np.repeat(np.repeat(D.data, rows, axis=0), cols, axis=1)

    def grad_fn(g):
        return (g.reshape(N, rows, M, cols).sum(axis=(1, 3)),)

    return _make(out, (D,), grad_fn, "block_expand")


def shared_covariance(H, kernel, H2=None) -> Tensor:
    """Full shared-kernel covariance ``C`` with ``C[(m,i),(n,j)] = K(h_i^m, h_j^n)``."""
    x1 = flatten_locations(H)
    x2 = x1 if H2 is None else flatten_locations(H2)
    return kernel.gram(x1, x2)


def covariance_blocks(C, N: int) -> dict[tuple[int, int], np.ndarray]:
    C = C.data if isinstance(C, Tensor) else np.asarray(C)
    B = C.shape[0] // N
    return {(m, n): C[m * B:(m + 1) * B, n * B:(n + 1) * B] for m in range(N) for n in range(N)}


def assemble_K(C, W: CrossVariableWeights, B2: int | None = None) -> Tensor:
    """Hadamard product of ``C`` with the block-expanded cross-variable weights.

    ``C`` may be rectangular (test x train); then ``B2`` is the per-variable
    column count.
    """
    C = ad.as_tensor(C)
    N = W.N
    B1 = C.shape[0] // N
    B2 = C.shape[1] // N if B2 is None else B2
    return C * block_expand(W.matrix(), B1, B2)


def variable_importance(W: CrossVariableWeights) -> np.ndarray:
    return W.matrix().data.copy()


def select_top_variables(importance, target_var: int, fraction: float) -> list[int]:
    """Indices of the ceil(fraction*N) variables most related to ``target_var``.

    Ranked by ``|d[target, .]|``, target always kept, ties to the lower index.
    """
    D = np.asarray(importance, dtype=float)
    N = D.shape[0]
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if not 0 <= target_var < N:
        raise ValueError(f"target variable {target_var} out of range for N={N}")
    k = math.ceil(fraction * N - 1e-12)
    others = [j for j in range(N) if j != target_var]
    others.sort(key=lambda j: (-abs(D[target_var, j]), j))
    return sorted([target_var] + others[:k - 1])
