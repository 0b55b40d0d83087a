"""Open-loop systems, mixed-Jacobian bounds, disturbance partitions, RK4."""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import Callable

import torch

from . import autodiff as ad
from .autodiff import DTYPE, as_tensor
from .interval import Interval, cat


class OpenLoopSystem:
    """``xdot = f(x, u, w)`` with interval Jacobians.

    Subclasses implement :meth:`f` on batched tensors (last axis is the
    coordinate) and :meth:`jacobian`, which returns interval matrices
    ``(J_x, J_u, J_w)`` enclosing the Jacobians over the given boxes.
    """

    n: int
    p: int
    q: int

    def f(self, x, u, w) -> torch.Tensor:
        raise NotImplementedError

    def jacobian(self, x: Interval, u: Interval, w: Interval):
        raise NotImplementedError

    def point_jacobian(self, x, u, w):
        jx, ju, jw = self.jacobian(Interval.point(x), Interval.point(u), Interval.point(w))
        return jx.lo, ju.lo, jw.lo

    def jac_x(self, x, u, w) -> Interval:
        return self.jacobian(x, u, w)[0]

    def jac_u(self, x, u, w) -> Interval:
        return self.jacobian(x, u, w)[1]

    def jac_w(self, x, u, w) -> Interval:
        return self.jacobian(x, u, w)[2]


class LinearSystem(OpenLoopSystem):
    """``xdot = A x + B u + D w``."""

    def __init__(self, A, B, D=None):
        self.A = as_tensor(A)
        self.B = as_tensor(B)
        self.n, self.p = self.B.shape
        self.D = torch.zeros(self.n, 1, dtype=DTYPE) if D is None else as_tensor(D)
        self.q = self.D.shape[1]

    def f(self, x, u, w):
        return as_tensor(x) @ self.A.T + as_tensor(u) @ self.B.T + as_tensor(w) @ self.D.T

    def jacobian(self, x, u, w):
        batch = torch.broadcast_shapes(x.shape[:-1], u.shape[:-1], w.shape[:-1])
        return tuple(
            Interval.point(m.expand(*batch, *m.shape)) for m in (self.A, self.B, self.D)
        )


Corner = str  # "lower" | "upper"


def _corner_blocks(corner) -> tuple[Corner, Corner, Corner]:
    blocks = (corner,) * 3 if isinstance(corner, str) else tuple(corner)
    if len(blocks) != 3 or any(c not in ("lower", "upper") for c in blocks):
        raise ValueError(f"corner must be 'lower'/'upper' or a triple of them, got {corner!r}")
    return blocks


def mixed_jacobian_bound(sys: OpenLoopSystem, xbox: Interval, ubox: Interval, wbox: Interval, corner="lower"):
    """Componentwise mean-value enclosure anchored at a box corner.

    Returns ``(M_x, M_u, M_w, (x0, u0, w0))`` such that for all points in the
    boxes ``f(x,u,w) - f(x0,u0,w0)`` lies in
    ``M_x (x - x0) + M_u (u - u0) + M_w (w - w0)``.  Column ``j`` of the
    stacked matrix ``[M_x M_u M_w]`` is the interval Jacobian column ``j``
    evaluated with the coordinates ordered before ``j`` pinned at the anchor.
    """
    blocks = _corner_blocks(corner)
    boxes = (xbox, ubox, wbox)
    anchors = tuple(b.lo if c == "lower" else b.hi for b, c in zip(boxes, blocks))
    batch = torch.broadcast_shapes(*(b.shape[:-1] for b in boxes))
    boxes = tuple(Interval(b.lo.expand(*batch, -1), b.hi.expand(*batch, -1)) for b in boxes)
    anchors = tuple(a.expand(*batch, -1) for a in anchors)
    dims = [sys.n, sys.p, sys.q]
    z = cat(boxes)
    z0 = torch.cat(anchors, -1)
    nz = z.shape[-1]
    idx = torch.arange(nz)
    pinned = (idx.unsqueeze(1) < idx.unsqueeze(0)).T  # pinned[j, i]: coord i pinned for column j
    pinned = pinned.reshape(nz, *([1] * len(batch)), nz)
    lo = torch.where(pinned, z0, z.lo)
    hi = torch.where(pinned, z0, z.hi)
    parts = torch.split(lo, dims, -1), torch.split(hi, dims, -1)
    jx, ju, jw = sys.jacobian(*(Interval(l, h) for l, h in zip(*parts)))
    full = cat([jx, ju, jw], -1)  # (nz, *batch, n, nz)
    diag_lo = torch.diagonal(full.lo.movedim(0, -2), dim1=-2, dim2=-1)
    diag_hi = torch.diagonal(full.hi.movedim(0, -2), dim1=-2, dim2=-1)
    M = Interval(diag_lo, diag_hi)
    M_x, M_u, M_w = (M[..., s] for s in _slices(dims))
    return M_x, M_u, M_w, anchors


def _slices(dims):
    out, k = [], 0
    for d in dims:
        out.append(slice(k, k + d))
        k += d
    return out


@dataclass(frozen=True, eq=False)
class DisturbanceSpec:
    """Disturbance box with a covering partition (stacked as ``(P, q)``)."""

    box: Interval
    parts: Interval

    def __post_init__(self):
        if self.parts.shape[0] < 1:
            raise ValueError("partition must contain at least one sub-box")
        if not (self.parts.lo >= self.box.lo - 1e-15).all() or not (self.parts.hi <= self.box.hi + 1e-15).all():
            raise ValueError("partition sub-box leaves the disturbance box")

    @property
    def q(self) -> int:
        return self.box.shape[-1]

    @classmethod
    def uniform(cls, lo, hi, partitions_per_dim: int = 1) -> "DisturbanceSpec":
        """Box ``[lo, hi]`` split into ``partitions_per_dim`` pieces along every non-degenerate axis."""
        lo, hi = as_tensor(lo).reshape(-1), as_tensor(hi).reshape(-1)
        box = Interval(lo, hi)
        if partitions_per_dim not in (1, 2):
            raise ValueError("partitions_per_dim must be 1 or 2")
        pieces = []
        for a, b in zip(lo.tolist(), hi.tolist()):
            if partitions_per_dim == 2 and b > a:
                mid = 0.0 if a < 0.0 < b else 0.5 * (a + b)
                pieces.append([(a, mid), (mid, b)])
            else:
                pieces.append([(a, b)])
        combos = list(itertools.product(*pieces)) if pieces else [()]
        plo = torch.tensor([[c[0] for c in combo] for combo in combos], dtype=DTYPE).reshape(len(combos), lo.numel())
        phi = torch.tensor([[c[1] for c in combo] for combo in combos], dtype=DTYPE).reshape(len(combos), lo.numel())
        return cls(box, Interval(plo, phi))

    @classmethod
    def radius(cls, r, partitions_per_dim: int = 1) -> "DisturbanceSpec":
        r = as_tensor(r).reshape(-1)
        return cls.uniform(-r, r, partitions_per_dim)

    def covers(self, samples) -> bool:
        s = as_tensor(samples)
        inside = ((s.unsqueeze(-2) >= self.parts.lo) & (s.unsqueeze(-2) <= self.parts.hi)).all(-1)
        return bool(inside.any(-1).all())


def partition_minmax_field(fields):
    """Worst case over partitions: min of lower parts, max of upper parts.

    ``fields`` is a non-empty sequence of ``(lower, upper)`` pairs.
    """
    fields = list(fields)
    if not fields:
        raise ValueError("no partition fields given")
    lo = functools.reduce(ad.minimum, [f[0] for f in fields])
    hi = functools.reduce(ad.maximum, [f[1] for f in fields])
    return lo, hi


def reduce_partitions(lo: torch.Tensor, hi: torch.Tensor, dim: int = 0):
    """:func:`partition_minmax_field` for fields stacked along ``dim``."""
    return partition_minmax_field(zip(lo.unbind(dim), hi.unbind(dim)))


def rk4_step(field: Callable, x: torch.Tensor, w, dt: float) -> torch.Tensor:
    k1 = field(x, w)
    k2 = field(x + 0.5 * dt * k1, w)
    k3 = field(x + 0.5 * dt * k2, w)
    k4 = field(x + dt * k3, w)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate(field: Callable, x0, w=None, dt: float = 1e-3, T: float = 1.0) -> torch.Tensor:
    """Fixed-step RK4 trajectory of ``xdot = field(x, w)``.

    ``w`` is ``None`` (zero-dimensional disturbance), a constant tensor, a
    tensor of per-step values with leading axis of length ``steps``, or a
    callable ``k -> w_k``.  The disturbance is held constant over each step.
    Returns the states at ``t = 0, dt, ..., steps*dt`` stacked on axis 0.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(round(T / dt))
    x = as_tensor(x0)
    out = [x]
    for k in range(steps):
        x = rk4_step(field, x, _w_at(w, k, steps, x), dt)
        if not torch.isfinite(x).all():
            raise FloatingPointError(f"non-finite state at step {k + 1}")
        out.append(x)
    return torch.stack(out)


def _w_at(w, k, steps, x):
    if w is None:
        return torch.zeros(*x.shape[:-1], 0, dtype=DTYPE)
    if callable(w):
        return as_tensor(w(k))
    w = as_tensor(w)
    if w.dim() and w.shape[0] == steps and w.dim() >= 2:
        return w[k]
    return w


def piecewise_constant(spec_box: Interval, steps: int, batch=(), hold: int = 1, generator=None) -> torch.Tensor:
    """Uniform random disturbance held for ``hold`` steps, shape ``(steps, *batch, q)``."""
    q = spec_box.shape[-1]
    n_seg = -(-steps // hold)
    u = torch.rand(n_seg, *batch, q, dtype=DTYPE, generator=generator)
    vals = spec_box.lo + u * spec_box.width
    return vals.repeat_interleave(hold, dim=0)[:steps]
