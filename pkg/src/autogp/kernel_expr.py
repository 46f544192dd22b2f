"""Composite kernels: expression trees, canonical text, relaxed search blocks.

A :class:`KernelExpr` is a tree of :class:`Leaf`, :class:`Sum` and
:class:`Product` nodes. Sums carry positive per-child weights
(``zeta = exp(raw_zeta)``); sums and products of kernels are kernels, so
every tree yields a PSD Gram matrix.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kernels import BasicKernelKind, KernelParams, eval_basic, gram, init_params

EDGE_PLUS, EDGE_SKIP = 0, 1
EDGES = ("+", "skip")


class KernelParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass
class Leaf:
    kind: BasicKernelKind
    params: KernelParams

    def gram(self, x1, x2=None) -> Tensor:
        return gram(self.kind, self.params, x1, x2)

    def parameters(self) -> list[Tensor]:
        return [self.params.raw]


@dataclass
class Product:
    children: list

    def gram(self, x1, x2=None) -> Tensor:
        out = self.children[0].gram(x1, x2)
        for child in self.children[1:]:
            out = out * child.gram(x1, x2)
        return out

    def parameters(self) -> list[Tensor]:
        return [p for c in self.children for p in c.parameters()]


@dataclass
class Sum:
    children: list
    raw_zeta: Tensor = None

    def __post_init__(self):
        if self.raw_zeta is None:
            s = len(self.children)
            self.raw_zeta = Tensor(np.full(s, math.log(1.0 / s)), requires_grad=True)

    @property
    def zeta(self) -> np.ndarray:
        return np.exp(self.raw_zeta.data)

    def gram(self, x1, x2=None) -> Tensor:
        z = ad.exp(self.raw_zeta)
        out = None
        for s, child in enumerate(self.children):
            term = z[s] * child.gram(x1, x2)
            out = term if out is None else out + term
        return out

    def parameters(self) -> list[Tensor]:
        return [p for c in self.children for p in c.parameters()] + [self.raw_zeta]


KernelExpr = Union[Leaf, Sum, Product]


# -- inspection ------------------------------------------------------------
def leaves(expr: KernelExpr) -> list[Leaf]:
    if isinstance(expr, Leaf):
        return [expr]
    return [lf for c in expr.children for lf in leaves(c)]


def kinds_in(expr: KernelExpr) -> set[BasicKernelKind]:
    return {lf.kind for lf in leaves(expr)}


def sums(expr: KernelExpr) -> list[Sum]:
    if isinstance(expr, Leaf):
        return []
    own = [expr] if isinstance(expr, Sum) else []
    return own + [s for c in expr.children for s in sums(c)]


def copy_expr(expr: KernelExpr) -> KernelExpr:
    if isinstance(expr, Leaf):
        return Leaf(expr.kind, expr.params.copy())
    if isinstance(expr, Product):
        return Product([copy_expr(c) for c in expr.children])
    return Sum([copy_expr(c) for c in expr.children], Tensor(expr.raw_zeta.data.copy(), requires_grad=True))


def distribute(expr: KernelExpr) -> list[list[Leaf]]:
    """Expand into a flat sum of products of leaves (weights ignored)."""
    if isinstance(expr, Leaf):
        return [[expr]]
    if isinstance(expr, Sum):
        return [term for c in expr.children for term in distribute(c)]
    terms = [[]]
    for c in expr.children:
        terms = [t + u for t in terms for u in distribute(c)]
    return terms


# -- text form -------------------------------------------------------------
def _format_product(children) -> str:
    parts: list[str] = []
    i = 0
    while i < len(children):
        c = children[i]
        if isinstance(c, Leaf):
            j = i
            while j + 1 < len(children) and isinstance(children[j + 1], Leaf) and children[j + 1].kind == c.kind:
                j += 1
            n = j - i + 1
            parts.append(c.kind.name if n == 1 else f"{c.kind.name}^{n}")
            i = j + 1
            continue
        text = format_expr(c)
        parts.append(f"({text})" if isinstance(c, Sum) and len(c.children) > 1 else text)
        i += 1
    return "*".join(parts)


def format_expr(expr: KernelExpr) -> str:
    """Canonical text such as ``SE + PER + SE*PER + PER^2``."""
    if isinstance(expr, Leaf):
        return expr.kind.name
    if isinstance(expr, Product):
        return _format_product(expr.children)
    parts = []
    for c in expr.children:
        text = format_expr(c)
        parts.append(f"({text})" if isinstance(c, Sum) and len(c.children) > 1 else text)
    return " + ".join(parts)


_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z]+)|(?P<num>\d+)|(?P<op>[+*^()×]))")


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            raise KernelParseError(f"unexpected character {text[pos:].lstrip()[0]!r}", len(text) - len(text[pos:].lstrip()))
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        value = m.group(kind)
        if value == "×":
            value = "*"
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, locations):
        self.tokens = _tokenize(text)
        self.i = 0
        self.locations = locations

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> KernelExpr:
        if self.peek()[0] == "end":
            raise KernelParseError("empty kernel expression", 0)
        expr = self.sum_()
        kind, value, pos = self.peek()
        if kind != "end":
            raise KernelParseError(f"unexpected {value!r}", pos)
        return expr

    def sum_(self) -> KernelExpr:
        terms = [self.product()]
        while self.peek()[1] == "+":
            self.take()
            terms.append(self.product())
        return terms[0] if len(terms) == 1 else Sum(terms)

    def product(self) -> KernelExpr:
        factors = self.power()
        while self.peek()[1] == "*":
            self.take()
            factors += self.power()
        return factors[0] if len(factors) == 1 else Product(factors)

    def power(self) -> list:
        base_start = self.i
        atom = self.atom()
        if self.peek()[1] != "^":
            return [atom]
        self.take()
        kind, value, pos = self.take()
        if kind != "num" or int(value) < 1:
            raise KernelParseError("expected a positive integer exponent", pos)
        out = [atom]
        for _ in range(int(value) - 1):
            out.append(self._reparse_atom(base_start))
        return out

    def _reparse_atom(self, start: int):
        # fresh parameters for each repeated factor
        saved = self.i
        self.i = start
        atom = self.atom()
        self.i = saved
        return atom

    def atom(self) -> KernelExpr:
        kind, value, pos = self.take()
        if kind == "name":
            try:
                k = BasicKernelKind.parse(value)
            except ValueError:
                raise KernelParseError(f"unknown kernel {value!r}", pos) from None
            return Leaf(k, init_params(k, self.locations))
        if value == "(":
            inner = self.sum_()
            k2, v2, p2 = self.take()
            if v2 != ")":
                raise KernelParseError("expected ')'", p2)
            return inner
        raise KernelParseError(f"unexpected {value or 'end of input'!r}", pos)


def parse_expr(text: str, locations=None) -> Sum:
    """Parse kernel text; the result is always wrapped in a weighted top-level Sum."""
    expr = _Parser(text, locations).parse()
    if isinstance(expr, Sum):
        return expr
    return Sum([expr])


def sum_of_products(terms: Sequence[Sequence[Leaf]]) -> Sum:
    children = [t[0] if len(t) == 1 else Product(list(t)) for t in terms]
    return Sum(children)


# -- relaxed search blocks --------------------------------------------------
def edge_weights(logits) -> Tensor:
    """Softmax over the edge axis (last axis)."""
    return ad.softmax(logits, axis=-1)


def relaxed_intra_block(alpha_r, basic_grams: Sequence[Tensor], prev_block=None) -> Tensor:
    """Softmax-weighted sum of basic Gram matrices, times the previous block.

    ``alpha_r`` has shape ``(|K|, 2)``; the skip edge contributes nothing.
    ``prev_block=None`` stands for the constant kernel 1.
    """
    alpha_r = ad.as_tensor(alpha_r)
    if alpha_r.shape != (len(basic_grams), len(EDGES)):
        raise ad.ShapeError(f"alpha_r must be ({len(basic_grams)}, 2), got {alpha_r.shape}")
    w = edge_weights(alpha_r)
    out = None
    for i, g in enumerate(basic_grams):
        term = w[i, EDGE_PLUS] * g
        out = term if out is None else out + term
    return out if prev_block is None else prev_block * out


def relaxed_inter_block(beta, block_grams: Sequence[Tensor]) -> Tensor:
    beta = ad.as_tensor(beta)
    if beta.shape != (len(block_grams), len(EDGES)):
        raise ad.ShapeError(f"beta must be ({len(block_grams)}, 2), got {beta.shape}")
    w = edge_weights(beta)
    out = None
    for r, g in enumerate(block_grams):
        term = w[r, EDGE_PLUS] * g
        out = term if out is None else out + term
    return out


@dataclass
class ArchWeights:
    alpha: Tensor
    beta: Tensor

    @classmethod
    def uniform(cls, n_kernels: int, R: int) -> "ArchWeights":
        if R < 1:
            raise ValueError("search depth R must be >= 1")
        return cls(Tensor(np.zeros((R, n_kernels, 2)), requires_grad=True),
                   Tensor(np.zeros((R, 2)), requires_grad=True))

    @property
    def R(self) -> int:
        return self.alpha.shape[0]


@dataclass
class RelaxedKernel:
    """Continuous relaxation of the block search over a basic kernel set.

    Each basic kernel keeps one parameter set shared by every block. Given
    locations, basic amplitudes are rescaled so every kernel's mean prior
    variance is ``2/|K|``; each block then starts at unit prior variance under
    the uniform initial edge weights.
    """

    basics: list[Leaf]
    arch: ArchWeights

    @classmethod
    def build(cls, kinds: Sequence[BasicKernelKind], R: int, locations=None) -> "RelaxedKernel":
        if not kinds:
            raise ValueError("basic kernel set is empty")
        basics = [Leaf(BasicKernelKind(k), init_params(k, locations)) for k in kinds]
        if locations is not None:
            x = np.asarray(locations, dtype=float).ravel()
            target = 2.0 / len(basics)
            for b in basics:
                var = float(np.mean([eval_basic(b.kind, b.params, v, v) for v in x]))
                if var > 1e-12:
                    b.params.raw.data[0] += 0.5 * math.log(target / var)
        return cls(basics, ArchWeights.uniform(len(basics), R))

    def block_grams(self, x1, x2=None) -> list[Tensor]:
        grams = [b.gram(x1, x2) for b in self.basics]
        blocks, prev = [], None
        for r in range(self.arch.R):
            prev = relaxed_intra_block(self.arch.alpha[r], grams, prev)
            blocks.append(prev)
        return blocks

    def gram(self, x1, x2=None) -> Tensor:
        return relaxed_inter_block(self.arch.beta, self.block_grams(x1, x2))

    def parameters(self) -> list[Tensor]:
        return [b.params.raw for b in self.basics] + [self.arch.alpha, self.arch.beta]


def discretize(kernel: RelaxedKernel) -> Sum:
    """Pick argmax edges and expand the selected blocks into a sum of products.

    Ties go to '+'. An all-skip block ends the multiplication chain, so it
    and every later block drop out. Duplicate products are merged; an empty
    result falls back to a lone SE kernel.
    """
    alpha = kernel.arch.alpha.data
    beta = kernel.arch.beta.data
    basics = kernel.basics
    terms: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    chain: list[tuple[int, ...]] = [()]
    for r in range(kernel.arch.R):
        selected = [i for i in range(len(kernel.basics)) if int(np.argmax(alpha[r, i])) == EDGE_PLUS]
        if not selected:
            break
        chain = [tuple(sorted(t + (i,), key=lambda j: (basics[j].kind, j))) for t in chain for i in selected]
        if int(np.argmax(beta[r])) != EDGE_PLUS:
            continue
        for t in chain:
            if t not in seen:
                seen.add(t)
                terms.append(t)
    if not terms:
        return Sum([Leaf(BasicKernelKind.SE, init_params(BasicKernelKind.SE))])
    return sum_of_products([[Leaf(basics[j].kind, basics[j].params.copy()) for j in t] for t in terms])
