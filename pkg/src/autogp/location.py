"""Gaussian locations from subsequences: per-variable patch attention + MLP.

Each length-``delta`` patch of every variable is scored against a learned
pseudo observation; the attention-pooled values are projected with
``W_V``, concatenated over patches and variables, and mapped by a
3-layer tanh MLP to one scalar location per variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def default_patch_size(L: int) -> int:
    """Largest divisor of L that is <= L/2 (1 for L <= 3)."""
    divs = [d for d in range(1, L // 2 + 1) if L % d == 0]
    return divs[-1] if divs else 1


@dataclass
class PatchAttentionParams:
    T: Tensor      # (P, N, d) pseudo observations, shared across subsequences
    W_K: Tensor    # (d, 1)
    W_V: Tensor    # (1, d)
    heads: int
    delta: int

    @property
    def P(self) -> int:
        return self.T.shape[0]

    @property
    def d(self) -> int:
        return self.T.shape[2]


@dataclass
class MlpParams:
    weights: list
    biases: list


class LocationLearner:
    """``g_w``: maps ``(B, L, N)`` windows to ``(B, N)`` locations."""

    def __init__(self, L: int, N: int, delta: int | None = None, d: int = 8, heads: int = 1,
                 hidden=(64, 32), seed: int = 0):
        delta = default_patch_size(L) if delta is None else int(delta)
        if delta < 1 or L % delta:
            raise ValueError(f"patch size {delta} does not divide window length {L}")
        if heads < 1:
            raise ValueError("need at least one attention head")
        self.L, self.N = L, N
        rng = np.random.default_rng(seed)
        P = L // delta
        self.attn = PatchAttentionParams(
            T=Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (P, N, d)), requires_grad=True),
            W_K=Tensor(rng.normal(0.0, 1.0, (d, 1)), requires_grad=True),
            W_V=Tensor(rng.normal(0.0, 1.0, (1, d)), requires_grad=True),
            heads=heads, delta=delta)
        widths = [P * N * d, *hidden, N]
        self.mlp = MlpParams(
            weights=[Tensor(rng.normal(0.0, 1.0 / math.sqrt(a), (a, b)), requires_grad=True)
                     for a, b in zip(widths[:-1], widths[1:])],
            biases=[Tensor(np.zeros(b), requires_grad=True) for b in widths[1:]])

    def parameters(self) -> list[Tensor]:
        return [self.attn.T, self.attn.W_K, self.attn.W_V, *self.mlp.weights, *self.mlp.biases]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"attn.T": self.attn.T, "attn.W_K": self.attn.W_K, "attn.W_V": self.attn.W_V}
        for i, (w, b) in enumerate(zip(self.mlp.weights, self.mlp.biases)):
            out[f"mlp.W{i}"] = w
            out[f"mlp.b{i}"] = b
        return out

    def _patches(self, M) -> np.ndarray:
        M = np.asarray(M, dtype=np.float64)
        if M.ndim == 2:
            M = M[None]
        B, L, N = M.shape
        if (L, N) != (self.L, self.N):
            raise ad.ShapeError(f"expected windows of shape ({self.L}, {self.N}), got ({L}, {N})")
        a = self.attn
        # (B, P, N, delta)
        return M.reshape(B, a.P, a.delta, N).transpose(0, 1, 3, 2)

    def attention(self, M) -> Tensor:
        """Attention weights, shape ``(B, P, N, delta)``; rows sum to one."""
        a = self.attn
        Mp = self._patches(M)
        c = ad.matmul(a.T, a.W_K)  # (P, N, 1)
        return ad.softmax(Mp * c * (1.0 / math.sqrt(a.heads)), axis=-1)

    def patch_outputs(self, M) -> Tensor:
        """Patch representations ``O``, shape ``(B, P, N, d)``."""
        Mp = self._patches(M)
        A = self.attention(M)
        pooled = ad.tsum(A * Mp, axis=-1)  # (B, P, N)
        B, P, N = pooled.shape
        return ad.reshape(pooled, (B, P, N, 1)) * ad.reshape(self.attn.W_V, (1, 1, 1, self.attn.d))

    def __call__(self, M) -> Tensor:
        O = self.patch_outputs(M)
        h = ad.reshape(O, (O.shape[0], -1))
        n_layers = len(self.mlp.weights)
        for i, (w, b) in enumerate(zip(self.mlp.weights, self.mlp.biases)):
            h = ad.rowwise_matmul(h, w) + b
            if i < n_layers - 1:
                h = ad.tanh(h)
        return h

    embed_all = __call__

    def embed_subsequence(self, M_i) -> Tensor:
        return self(np.asarray(M_i)[None])[0]
