"""Basic covariance functions on scalar locations.

Parameters live in one raw 3-vector per kernel instance:
``[log sigma_k, log l, third]`` with ``third`` equal to ``log p`` (PER),
``c`` (LIN) or ``log a`` (RQ), and unused for SE. Squared distance is used
inside SE and RQ.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _gram
from .autodiff import Tensor, _make, as_tensor


class BasicKernelKind(enum.IntEnum):
    SE = _gram.SE
    PER = _gram.PER
    LIN = _gram.LIN
    RQ = _gram.RQ

    @classmethod
    def parse(cls, name: str) -> "BasicKernelKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown basic kernel {name!r}; expected one of SE, PER, LIN, RQ") from None


ALL_KINDS = tuple(BasicKernelKind)


@dataclass
class KernelParams:
    raw: Tensor

    @classmethod
    def from_values(cls, kind: BasicKernelKind, sigma=1.0, l=1.0, p=1.0, c=0.0, a=1.0) -> "KernelParams":
        third = {BasicKernelKind.SE: 0.0, BasicKernelKind.PER: math.log(p),
                 BasicKernelKind.LIN: c, BasicKernelKind.RQ: math.log(a)}[BasicKernelKind(kind)]
        return cls(Tensor([math.log(sigma), math.log(l), third], requires_grad=True))

    @property
    def sigma(self) -> float:
        return float(np.exp(self.raw.data[0]))

    @property
    def l(self) -> float:
        return float(np.exp(self.raw.data[1]))

    @property
    def p(self) -> float:
        return float(np.exp(self.raw.data[2]))

    a = p

    @property
    def c(self) -> float:
        return float(self.raw.data[2])

    def copy(self) -> "KernelParams":
        return KernelParams(Tensor(self.raw.data.copy(), requires_grad=True))


def constrained(kind: BasicKernelKind, raw: np.ndarray) -> np.ndarray:
    """Map raw parameters to ``(sigma2, l, extra)``."""
    third = raw[2] if kind == BasicKernelKind.LIN else math.exp(raw[2])
    return np.array([math.exp(2.0 * raw[0]), math.exp(raw[1]), third])


def gram(kind: BasicKernelKind, params: KernelParams, x1, x2=None) -> Tensor:
    """Differentiable Gram matrix ``k(x1_i, x2_j)`` for 1-d location tensors."""
    x1 = as_tensor(x1)
    x2 = x1 if x2 is None else as_tensor(x2)
    kind = int(kind)
    raw = params.raw
    theta = constrained(kind, raw.data)
    x1d, x2d = x1.data.ravel(), x2.data.ravel()
    out = _gram.gram_forward(kind, x1d, x2d, theta)

    def grad_fn(g):
        dx1, dx2, draw = _gram.gram_backward(kind, x1d, x2d, theta, g)
        return dx1.reshape(x1.shape), dx2.reshape(x2.shape), draw

    return _make(out, (x1, x2, raw), grad_fn, f"gram[{BasicKernelKind(kind).name}]")


def eval_basic(kind: BasicKernelKind, params: KernelParams, xi: float, xj: float) -> float:
    return float(_gram.gram_forward(int(kind), np.array([xi], float), np.array([xj], float),
                                    constrained(kind, params.raw.data))[0, 0])


def rq_limit_check(params: KernelParams, xi: float, xj: float) -> float:
    """``|RQ - SE|`` at one location pair, SE sharing sigma_k and l with the RQ params."""
    if params.a < 1e6 * (1 - 1e-12):
        raise ValueError("rq_limit_check needs a >= 1e6")
    se = KernelParams(Tensor([params.raw.data[0], params.raw.data[1], 0.0]))
    return abs(eval_basic(BasicKernelKind.RQ, params, xi, xj) - eval_basic(BasicKernelKind.SE, se, xi, xj))


def init_params(kind: BasicKernelKind, locations=None) -> KernelParams:
    """Default parameters: sigma_k = l = a = 1, p = range/4, c = mean.

    ``locations`` supplies the range and mean; without it p = 1 and c = 0.
    Initialisation is deterministic.
    """
    kind = BasicKernelKind(kind)
    p, c = 1.0, 0.0
    if locations is not None:
        x = np.asarray(locations, dtype=float).ravel()
        span = float(x.max() - x.min()) if x.size else 0.0
        p = span / 4.0 if span > 0 else 1.0
        c = float(x.mean()) if x.size else 0.0
    return KernelParams.from_values(kind, p=p, c=c)
