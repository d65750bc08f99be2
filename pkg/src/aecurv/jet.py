"""Truncated multivariate Taylor jets.

A :class:`Jet` carries every partial derivative ``∂^α f`` with ``|α| <= order``
of a scalar (or of every entry of an array of scalars) at a point.  The
coefficient axis is always axis 0 and stores raw partial derivatives, not
normalised Taylor coefficients.  Trailing axes are free: tensor indices first,
then any batch of evaluation points, so one call propagates derivatives for a
whole tensor field sampled at many points.

Multi-indices are listed in graded order (by total degree), which makes the
coefficients of a lower-order jet a prefix of the higher-order ones.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

MAX_ORDER = 5
MAX_DIM = 8


class JetError(ValueError):
    """Base class for jet arithmetic failures."""


class JetMismatchError(JetError):
    def __init__(self, what: str, left, right):
        super().__init__(f"jet {what} mismatch: {left} != {right}")
        self.what = what
        self.left = left
        self.right = right


class JetDomainError(JetError):
    def __init__(self, function: str, detail: str):
        super().__init__(f"{function}: {detail}")
        self.function = function
        self.detail = detail


class JetOrderError(JetError):
    def __init__(self, needed: int, available: int, what: str = "operation"):
        super().__init__(
            f"{what} requires derivative order {needed}, jet carries order {available}"
        )
        self.needed = needed
        self.available = available
        self.what = what


class _Tables:
    """Index bookkeeping for one dimension, up to MAX_ORDER."""

    def __init__(self, dim: int):
        self.dim = dim
        alphas = []
        for degree in range(MAX_ORDER + 1):
            block = [
                a
                for a in itertools.product(range(degree + 1), repeat=dim)
                if sum(a) == degree
            ]
            alphas.extend(sorted(block, reverse=True))
        self.alphas = np.array(alphas, dtype=np.int64).reshape(len(alphas), dim)
        self.index = {a: i for i, a in enumerate(alphas)}
        self.degree = self.alphas.sum(axis=1)
        # ncoef[k] = number of multi-indices with |α| <= k
        self.ncoef = [int(np.sum(self.degree <= k)) for k in range(MAX_ORDER + 1)]

        # shift[i][p] = position of alphas[p] + e_i (defined for |alphas[p]| < MAX_ORDER)
        n_lower = self.ncoef[MAX_ORDER - 1]
        self.shift = np.empty((dim, n_lower), dtype=np.int64)
        for i in range(dim):
            for p in range(n_lower):
                a = list(alphas[p])
                a[i] += 1
                self.shift[i, p] = self.index[tuple(a)]

        # Leibniz pairs sorted by output position
        out, lo, hi, coef = [], [], [], []
        for p, a in enumerate(alphas):
            for b in itertools.product(*(range(ai + 1) for ai in a)):
                c = tuple(ai - bi for ai, bi in zip(a, b))
                out.append(p)
                lo.append(self.index[b])
                hi.append(self.index[c])
                coef.append(math.prod(math.comb(ai, bi) for ai, bi in zip(a, b)))
        self.pair_out = np.array(out, dtype=np.int64)
        self.pair_lo = np.array(lo, dtype=np.int64)
        self.pair_hi = np.array(hi, dtype=np.int64)
        self.pair_coef = np.array(coef, dtype=float)
        self.npairs = [int(np.sum(self.pair_out < self.ncoef[k])) for k in range(MAX_ORDER + 1)]
        starts = np.searchsorted(self.pair_out, np.arange(len(alphas)))
        self.pair_start = starts

    def pairs(self, order: int, skip_constant_lo: bool = False):
        m = self.npairs[order]
        lo, hi, coef = self.pair_lo[:m], self.pair_hi[:m], self.pair_coef[:m]
        starts = self.pair_start[: self.ncoef[order]]
        return lo, hi, coef, starts


@functools.lru_cache(maxsize=None)
def tables(dim: int) -> _Tables:
    if not 1 <= dim <= MAX_DIM:
        raise JetError(f"unsupported jet dimension {dim} (1..{MAX_DIM})")
    return _Tables(dim)


def ncoef(dim: int, order: int) -> int:
    return tables(dim).ncoef[order]


def multi_indices(dim: int, order: int) -> np.ndarray:
    """Multi-indices with ``|α| <= order`` in storage order."""
    t = tables(dim)
    return t.alphas[: t.ncoef[order]]


def _check_order(order: int) -> None:
    if not 0 <= order <= MAX_ORDER:
        raise JetOrderError(order, MAX_ORDER, "jet construction")


@dataclass(frozen=True, eq=False)
class Jet:
    """Derivatives up to ``order`` of an array of scalars at one or more points.

    ``coeffs[p, ...]`` is the partial derivative ``∂^α`` for the multi-index
    ``multi_indices(dim, order)[p]``.  Jets are treated as immutable values.
    """

    coeffs: np.ndarray
    dim: int
    order: int

    def __post_init__(self):
        _check_order(self.order)
        expected = ncoef(self.dim, self.order)
        if self.coeffs.shape[0] != expected:
            raise JetError(
                f"coefficient axis has length {self.coeffs.shape[0]}, expected {expected}"
            )

    # ---- construction -------------------------------------------------
    @classmethod
    def constant(cls, value, dim: int, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((ncoef(dim, order),) + value.shape)
        c[0] = value
        return cls(c, dim, order)

    @classmethod
    def zeros(cls, shape: tuple, dim: int, order: int) -> "Jet":
        return cls(np.zeros((ncoef(dim, order),) + tuple(shape)), dim, order)

    @classmethod
    def variable(cls, i: int, value, dim: int, order: int) -> "Jet":
        """Jet of the coordinate function ``x_i`` (0-based) taking ``value``."""
        jet = cls.constant(value, dim, order)
        if order >= 1:
            e = [0] * dim
            e[i] = 1
            jet.coeffs[tables(dim).index[tuple(e)]] = 1.0
        return jet

    @classmethod
    def from_partials(cls, partials: dict, dim: int, order: int) -> "Jet":
        """Build a scalar jet from ``{multi-index tuple: value}``; missing entries are 0."""
        t = tables(dim)
        c = np.zeros(ncoef(dim, order))
        for a, v in partials.items():
            if sum(a) > order:
                continue
            c[t.index[tuple(a)]] = v
        return cls(c, dim, order)

    # ---- inspection ---------------------------------------------------
    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    @property
    def shape(self) -> tuple:
        return self.coeffs.shape[1:]

    def partial(self, alpha: Sequence[int]) -> np.ndarray:
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.dim:
            raise JetMismatchError("dimension", len(alpha), self.dim)
        if sum(alpha) > self.order:
            raise JetOrderError(sum(alpha), self.order, "partial derivative")
        return self.coeffs[tables(self.dim).index[alpha]]

    def gradient(self) -> np.ndarray:
        """First partials stacked on a new leading axis."""
        if self.order < 1:
            raise JetOrderError(1, self.order, "gradient")
        return self.coeffs[1 : 1 + self.dim]

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in a): self.coeffs[p] for p, a in enumerate(multi_indices(self.dim, self.order))}

    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.coeffs[(slice(None),) + key], self.dim, self.order)

    def __repr__(self) -> str:
        return f"Jet(dim={self.dim}, order={self.order}, shape={self.shape})"

    # ---- structural ---------------------------------------------------
    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise JetOrderError(order, self.order, "truncation")
        if order == self.order:
            return self
        return Jet(self.coeffs[: ncoef(self.dim, order)], self.dim, order)

    def diff(self, i: int) -> "Jet":
        """``∂_i`` of the jet, one order lower."""
        if self.order < 1:
            raise JetOrderError(1, self.order, "differentiation")
        t = tables(self.dim)
        k = self.order - 1
        return Jet(self.coeffs[t.shift[i, : t.ncoef[k]]], self.dim, k)

    def grad(self) -> "Jet":
        """All first partials as a jet with a new leading tensor axis (derivative index)."""
        if self.order < 1:
            raise JetOrderError(1, self.order, "differentiation")
        t = tables(self.dim)
        k = self.order - 1
        idx = t.shift[:, : t.ncoef[k]]  # (dim, N_k)
        c = self.coeffs[idx.T]  # (N_k, dim, ...)
        return Jet(c, self.dim, k)

    def map_tensor(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Jet":
        """Apply a linear, coefficient-wise array map (reshape, transpose, sum...)."""
        return Jet(fn(self.coeffs), self.dim, self.order)

    def transpose(self, *axes) -> "Jet":
        return Jet(np.transpose(self.coeffs, (0,) + tuple(a + 1 for a in axes) + tuple(range(len(axes) + 1, self.coeffs.ndim))), self.dim, self.order)

    # ---- arithmetic ---------------------------------------------------
    def _same(self, other: "Jet") -> None:
        if self.dim != other.dim:
            raise JetMismatchError("dimension", self.dim, other.dim)
        if self.order != other.order:
            raise JetMismatchError("order", self.order, other.order)

    def __add__(self, other):
        if isinstance(other, Jet):
            return jet_add(self, other)
        c = self.coeffs.copy()
        c[0] = c[0] + other
        return Jet(c, self.dim, self.order)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            return jet_sub(self, other)
        return self + (-np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Jet(-self.coeffs, self.dim, self.order)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        return jet_scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, reciprocal(other))
        return jet_scale(self, 1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return jet_scale(reciprocal(self), other)

    def __pow__(self, p):
        return power(self, p)


def jet_add(a: Jet, b: Jet) -> Jet:
    a._same(b)
    return Jet(a.coeffs + b.coeffs, a.dim, a.order)


def jet_sub(a: Jet, b: Jet) -> Jet:
    a._same(b)
    return Jet(a.coeffs - b.coeffs, a.dim, a.order)


def jet_scale(a: Jet, s) -> Jet:
    """Multiply by a real (or an array broadcasting against the jet's trailing shape)."""
    if isinstance(s, Jet):
        return jet_mul(a, s)
    return Jet(a.coeffs * np.asarray(s, dtype=float), a.dim, a.order)


def _leibniz(a: Jet, b: Jet, combine: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Jet:
    a._same(b)
    t = tables(a.dim)
    lo, hi, coef, starts = t.pairs(a.order)
    if a.order == 0:
        return Jet(combine(a.coeffs, b.coeffs), a.dim, 0)
    prod = combine(a.coeffs[lo], b.coeffs[hi])
    prod *= coef.reshape((-1,) + (1,) * (prod.ndim - 1))
    return Jet(np.add.reduceat(prod, starts, axis=0), a.dim, a.order)


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Elementwise product (general Leibniz rule), broadcasting trailing shapes."""
    return _leibniz(a, b, np.multiply)


def contract(subscripts: str, a: Jet, b: Jet) -> Jet:
    """Product of two jet tensors with an einsum-style index contraction.

    ``subscripts`` names tensor axes only, e.g. ``"kl,lij->kij"``; any trailing
    batch axes are matched by broadcasting.
    """
    lhs, out = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    spec = f"P{sa}...,P{sb}...->P{out}..."
    return _leibniz(a, b, lambda x, y: np.einsum(spec, x, y))


def compose_univariate(derivs: Sequence, inner: Jet) -> Jet:
    """Jet of ``f ∘ inner`` given ``derivs[k] = f^(k)(inner.value)`` for k <= order.

    Uses the Taylor expansion of ``f`` around the inner value, evaluated on the
    nilpotent part of ``inner`` by Horner's scheme; this is Faà di Bruno's
    formula organised as truncated polynomial arithmetic.
    """
    K = inner.order
    if len(derivs) < K + 1:
        raise JetOrderError(K, len(derivs) - 1, "univariate composition")
    nil = Jet(inner.coeffs.copy(), inner.dim, K)
    nil.coeffs[0] = 0.0
    res = Jet.constant(np.asarray(derivs[K], dtype=float) / math.factorial(K), inner.dim, K)
    res = Jet(np.broadcast_to(res.coeffs, (res.coeffs.shape[0],) + np.broadcast_shapes(res.shape, inner.shape)).copy(), inner.dim, K)
    for k in range(K - 1, -1, -1):
        res = jet_mul(res, nil)
        res.coeffs[0] = res.coeffs[0] + np.asarray(derivs[k], dtype=float) / math.factorial(k)
    return res


def jet_compose_univariate(outer: Callable[[np.ndarray, int], list], inner: Jet) -> Jet:
    """``outer(x, K)`` must return ``[f(x), f'(x), ..., f^(K)(x)]``."""
    return compose_univariate(outer(inner.value, inner.order), inner)


# ---- elementary functions -------------------------------------------------

def _falling(p: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= p - j
    return out


def reciprocal(a: Jet) -> Jet:
    v = a.value
    if np.any(v == 0):
        raise JetDomainError("reciprocal", "division by a zero-valued jet")
    derivs = [(-1.0) ** k * math.factorial(k) * v ** (-(k + 1)) for k in range(a.order + 1)]
    return compose_univariate(derivs, a)


def sqrt(a: Jet) -> Jet:
    v = a.value
    if np.any(v <= 0):
        raise JetDomainError("sqrt", "argument must be positive (jets of sqrt at 0 are singular)")
    derivs = [_falling(0.5, k) * v ** (0.5 - k) for k in range(a.order + 1)]
    return compose_univariate(derivs, a)


def exp(a: Jet) -> Jet:
    e = np.exp(a.value)
    return compose_univariate([e] * (a.order + 1), a)


def log(a: Jet) -> Jet:
    v = a.value
    if np.any(v <= 0):
        raise JetDomainError("log", "argument must be positive")
    derivs = [np.log(v)] + [(-1.0) ** (k - 1) * math.factorial(k - 1) * v ** (-k) for k in range(1, a.order + 1)]
    return compose_univariate(derivs, a)


def _int_power(a: Jet, p: int) -> Jet:
    result = None
    base = a
    while p:
        if p & 1:
            result = base if result is None else jet_mul(result, base)
        p >>= 1
        if p:
            base = jet_mul(base, base)
    return result


def power(a: Jet, p: float) -> Jet:
    """``a ** p`` for real ``p``; integer exponents allow non-positive bases."""
    p = float(p)
    if p.is_integer():
        ip = int(p)
        if ip == 0:
            return Jet.constant(np.ones(a.shape), a.dim, a.order)
        if ip > 0:
            return _int_power(a, ip)
        return _int_power(reciprocal(a), -ip)
    v = a.value
    if np.any(v <= 0):
        raise JetDomainError("pow", f"non-integer exponent {p} needs a positive base")
    derivs = [_falling(p, k) * v ** (p - k) for k in range(a.order + 1)]
    return compose_univariate(derivs, a)


def integrate_gradient(value, gradient: Jet) -> Jet:
    """Rebuild a jet of order ``k+1`` from its value and a jet (order k) of its gradient.

    ``gradient`` has the derivative index as its first tensor axis.  Exact for
    gradient jets that are consistent (mixed partials symmetric).
    """
    t = tables(gradient.dim)
    k = gradient.order + 1
    value = np.asarray(value, dtype=float)
    c = np.empty((t.ncoef[k],) + value.shape)
    c[0] = value
    for p in range(1, t.ncoef[k]):
        a = t.alphas[p]
        i = int(np.nonzero(a)[0][0])
        lower = a.copy()
        lower[i] -= 1
        c[p] = gradient.coeffs[t.index[tuple(lower)], i]
    return Jet(c, gradient.dim, k)


def stack(jets: Sequence[Jet], axis: int = 0) -> Jet:
    first = jets[0]
    for j in jets[1:]:
        first._same(j)
    return Jet(np.stack([j.coeffs for j in jets], axis=axis + 1), first.dim, first.order)
