"""Interval arithmetic on float64 tensors.

An :class:`Interval` holds elementwise bounds ``lo <= hi`` of any shape, so the
same type serves as interval scalar, vector and matrix.  Arithmetic is plain
float (no outward rounding); downstream certificates carry an explicit slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from . import autodiff as ad
from .autodiff import as_tensor

TWO_PI = 2.0 * math.pi


class EmptyIntersection(ValueError):
    """An interval intersection came out empty."""


@dataclass(frozen=True, eq=False)
class Interval:
    lo: torch.Tensor
    hi: torch.Tensor

    def __post_init__(self):
        lo, hi = torch.broadcast_tensors(as_tensor(self.lo), as_tensor(self.hi))
        if bool((lo.detach() > hi.detach()).any()):
            raise ValueError("interval lower bound exceeds upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x) -> "Interval":
        x = as_tensor(x)
        return cls(x, x)

    @property
    def shape(self) -> torch.Size:
        return self.lo.shape

    @property
    def width(self) -> torch.Tensor:
        return self.hi - self.lo

    @property
    def center(self) -> torch.Tensor:
        return 0.5 * (self.lo + self.hi)

    def __getitem__(self, idx) -> "Interval":
        return Interval(self.lo[idx], self.hi[idx])

    def __repr__(self) -> str:
        return f"Interval(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def detach(self) -> "Interval":
        return Interval(self.lo.detach(), self.hi.detach())

    def contains(self, x, tol: float = 0.0) -> torch.Tensor:
        x = as_tensor(x)
        return (x >= self.lo - tol) & (x <= self.hi + tol)

    def subset_of(self, other: "Interval", tol: float = 0.0) -> bool:
        return bool(((self.lo >= other.lo - tol) & (self.hi <= other.hi + tol)).all())

    def __add__(self, other):
        other = _coerce(other)
        return Interval(self.lo + other.lo, self.hi + other.hi)

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        other = _coerce(other)
        return Interval(self.lo - other.hi, self.hi - other.lo)

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))


IntervalVector = Interval
IntervalMatrix = Interval


def _coerce(x) -> Interval:
    return x if isinstance(x, Interval) else Interval.point(x)


def add(a: Interval, b: Interval) -> Interval:
    return a + b


def mul(a: Interval, b: Interval) -> Interval:
    p1, p2 = a.lo * b.lo, a.lo * b.hi
    p3, p4 = a.hi * b.lo, a.hi * b.hi
    lo = ad.minimum(ad.minimum(p1, p2), ad.minimum(p3, p4))
    hi = ad.maximum(ad.maximum(p1, p2), ad.maximum(p3, p4))
    return Interval(lo, hi)


def matmul(a: Interval, b: Interval) -> Interval:
    """Interval matrix product; leading dimensions broadcast."""
    if a.lo.dim() < 2 or b.lo.dim() < 2:
        raise ValueError("matmul needs at least 2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"inner dimensions differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    prod = mul(
        Interval(a.lo.unsqueeze(-1), a.hi.unsqueeze(-1)),
        Interval(b.lo.unsqueeze(-3), b.hi.unsqueeze(-3)),
    )
    return Interval(prod.lo.sum(-2), prod.hi.sum(-2))


def real_matvec(a: torch.Tensor, x: Interval) -> Interval:
    """Exact interval hull of ``A x`` for a real (batched) matrix ``A``."""
    ap, an = ad.pos_neg_split(a)
    lo = _mv(ap, x.lo) + _mv(an, x.hi)
    hi = _mv(ap, x.hi) + _mv(an, x.lo)
    return Interval(lo, hi)


def _mv(a: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return (a @ x.unsqueeze(-1)).squeeze(-1)


def div(a: Interval, b: Interval) -> Interval:
    if bool(((b.lo.detach() <= 0) & (b.hi.detach() >= 0)).any()):
        raise ZeroDivisionError("interval divisor contains zero")
    return mul(a, Interval(1.0 / b.hi, 1.0 / b.lo))


def sqr(a: Interval) -> Interval:
    lo2, hi2 = a.lo * a.lo, a.hi * a.hi
    straddles = (a.lo.detach() <= 0) & (a.hi.detach() >= 0)
    lo = torch.where(straddles, torch.zeros_like(lo2), ad.minimum(lo2, hi2))
    return Interval(lo, ad.maximum(lo2, hi2))


def scale(a: Interval, c) -> Interval:
    c = as_tensor(c)
    lo, hi = a.lo * c, a.hi * c
    return Interval(ad.minimum(lo, hi), ad.maximum(lo, hi))


def cos(a: Interval) -> Interval:
    ca, cb = torch.cos(a.lo), torch.cos(a.hi)
    lo = ad.minimum(ca, cb)
    hi = ad.maximum(ca, cb)
    lo_d, hi_d = a.lo.detach(), a.hi.detach()
    has_max = torch.ceil(lo_d / TWO_PI) * TWO_PI <= hi_d
    has_min = torch.ceil((lo_d - math.pi) / TWO_PI) * TWO_PI + math.pi <= hi_d
    full = (hi_d - lo_d) >= TWO_PI
    one = torch.ones_like(lo)
    hi = torch.where(has_max | full, one, hi)
    lo = torch.where(has_min | full, -one, lo)
    return Interval(lo, hi)


def sin(a: Interval) -> Interval:
    return cos(a - math.pi / 2)


def tanh(a: Interval) -> Interval:
    return Interval(torch.tanh(a.lo), torch.tanh(a.hi))


def intersect(a: Interval, b: Interval) -> Interval:
    lo = ad.maximum(a.lo, b.lo)
    hi = ad.minimum(a.hi, b.hi)
    if bool((lo.detach() > hi.detach()).any()):
        raise EmptyIntersection("empty interval intersection")
    return Interval(lo, hi)


def hull(a: Interval, b: Interval) -> Interval:
    return Interval(ad.minimum(a.lo, b.lo), ad.maximum(a.hi, b.hi))


def stack(items, dim: int = 0) -> Interval:
    items = list(items)
    return Interval(
        torch.stack([i.lo for i in items], dim), torch.stack([i.hi for i in items], dim)
    )


def cat(items, dim: int = -1) -> Interval:
    items = list(items)
    return Interval(
        torch.cat([i.lo for i in items], dim), torch.cat([i.hi for i in items], dim)
    )


def pos_neg_split(a) -> tuple[torch.Tensor, torch.Tensor]:
    return ad.pos_neg_split(a)


def se_geq_zero(lo, hi) -> bool:
    """Southeast order against zero: ``lo >= 0`` and ``hi <= 0`` everywhere."""
    lo, hi = as_tensor(lo), as_tensor(hi)
    return bool((lo.detach() >= 0).all() and (hi.detach() <= 0).all())


def replace_entry(x, i: int, y):
    """Copy of ``x`` with entry ``i`` (0-based, last axis) taken from ``y``."""
    x, y = as_tensor(x), as_tensor(y)
    n = x.shape[-1]
    if not -n <= i < n:
        raise IndexError(f"index {i} out of range for length {n}")
    mask = torch.zeros(n, dtype=torch.bool)
    mask[i] = True
    return torch.where(mask, y, x)
