"""Small reverse-mode autodiff over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output adjoint to parent adjoints. Graphs are built
fresh for every forward pass; :func:`backward` walks them once and then
drops the closures so the tape does not outlive an optimizer step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import linalg as sla


class ShapeError(ValueError):
    pass


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failed; callers are expected to retry with more jitter."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "op", "name")
    # make ``ndarray op Tensor`` defer to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None
        self.op = "leaf"
        self.name = name

    # -- plumbing ---------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __len__(self):
        return len(self.data)

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise binary ----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), -unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def grad_fn(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return _make(out, (a, b), grad_fn, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), grad_fn, "matmul")


def rowwise_matmul(a, b) -> Tensor:
    """``a @ b`` for 2-d ``a`` where each output row depends only on its own input row.

    BLAS picks different blockings for different batch sizes, so plain
    ``a @ b`` on a batch need not match the same rows computed one at a time.
    Stacking rows as ``(B, 1, k)`` forces one product per row.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"rowwise_matmul needs (B, k) @ (k, m), got {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        return g @ bd.T, ad.T @ g

    return _make((ad[:, None, :] @ bd[None])[:, 0], (a, b), grad_fn, "rowwise_matmul")


# -- elementwise unary -----------------------------------------------------
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(exponent, Tensor):
        raise TypeError("power only supports constant exponents")
    ad = a.data
    p = float(exponent)
    return _make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),), f"pow{p:g}")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return _make(out, (a,), lambda g: (g / (1.0 + np.exp(-ad)),), "softplus")


# -- shape ops -------------------------------------------------------------
def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), grad_fn, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {old} -> {shape}") from exc
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {old} -> {shape}") from exc
    return _make(out, (a,), lambda g: (unbroadcast(g, old),), "broadcast")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, ts, grad_fn, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, ts, grad_fn, "stack")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), grad_fn, "getitem")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), grad_fn, "softmax")


# -- linear algebra --------------------------------------------------------
def _phi(x: np.ndarray) -> np.ndarray:
    out = np.tril(x)
    out[np.diag_indices_from(out)] *= 0.5
    return out


def cholesky(a, jitter: float = 0.0) -> Tensor:
    """Lower Cholesky factor of ``a + jitter * I``.

    Only symmetric inputs are accepted; the adjoint is returned in
    symmetrized form.
    """
    a = as_tensor(a)
    ad = a.data
    if ad.ndim != 2 or ad.shape[0] != ad.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got {ad.shape}")
    if not np.all(np.isfinite(ad)):
        raise np.linalg.LinAlgError("cholesky input has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(ad)))) if ad.size else 1.0
    if not np.allclose(ad, ad.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError("cholesky input is not symmetric")
    work = ad + jitter * np.eye(ad.shape[0]) if jitter else ad
    try:
        L = np.linalg.cholesky(work)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc

    def grad_fn(g):
        P = _phi(L.T @ g)
        S = sla.solve_triangular(L, P, trans="T", lower=True)
        S = sla.solve_triangular(L, S.T, trans="T", lower=True).T
        return (0.5 * (S + S.T),)

    return _make(L, (a,), grad_fn, "cholesky")


def triangular_solve(L, b, trans: bool = False) -> Tensor:
    """Solve ``L x = b`` (or ``L^T x = b`` if ``trans``) for lower-triangular L."""
    L, b = as_tensor(L), as_tensor(b)
    Ld, bd = L.data, b.data
    if Ld.ndim != 2 or Ld.shape[0] != Ld.shape[1] or bd.shape[0] != Ld.shape[0]:
        raise ShapeError(f"triangular_solve: {Ld.shape} vs {bd.shape}")
    x = sla.solve_triangular(Ld, bd, lower=True, trans="T" if trans else "N")

    def grad_fn(g):
        gb = sla.solve_triangular(Ld, g, lower=True, trans="N" if trans else "T")
        xx = x.reshape(len(x), -1)
        gg = gb.reshape(len(gb), -1)
        gL = -(xx @ gg.T) if trans else -(gg @ xx.T)
        return np.tril(gL), gb

    return _make(x, (L, b), grad_fn, "trisolve")


def logdet_from_cholesky(L) -> Tensor:
    L = as_tensor(L)
    Ld = L.data
    d = np.diag(Ld)

    def grad_fn(g):
        return (np.diag(2.0 * g / d),)

    return _make(np.asarray(2.0 * np.sum(np.log(d))), (L,), grad_fn, "logdet")


# -- backward --------------------------------------------------------------
def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Tensor, release: bool = True) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) for every leaf that requires grad.

    Returns a mapping from leaf tensor to gradient array and also stores
    it on ``leaf.grad`` (overwriting, not accumulating).
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    order = _topo_order(root)
    adj: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            node.grad = g
            grads[node] = g
            continue
        parent_grads = node._grad_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            adj[k] = pg if k not in adj else adj[k] + pg
    if release:
        for node in order:
            if node._grad_fn is not None:
                node._parents = ()
                node._grad_fn = None
    return grads


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- optimizer -------------------------------------------------------------
@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One in-place Adam update. Missing gradients count as zero."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    """Adam over a fixed list of leaf tensors with optional step decay."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 decay: float = 1.0, step_size: int = 10):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.decay = decay
        self.step_size = step_size
        self.state = AdamState()

    def current_lr(self) -> float:
        return self.lr * self.decay ** (self.state.step // self.step_size)

    def step(self, grads: dict[Tensor, np.ndarray]) -> None:
        lr = self.current_lr()
        adam_step([p.data for p in self.params], [grads.get(p) for p in self.params], self.state,
                  lr=lr, beta1=self.betas[0], beta2=self.betas[1], eps=self.eps)
