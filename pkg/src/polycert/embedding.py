"""Closed-loop mixed-Jacobian inclusion function and hyperrectangle embedding."""

from __future__ import annotations

import json
from dataclasses import dataclass

import torch

from . import autodiff as ad
from .autodiff import as_tensor
from .dynamics import DisturbanceSpec, OpenLoopSystem, _corner_blocks, mixed_jacobian_bound, reduce_partitions
from .interval import Interval, se_geq_zero
from .neural import interval_output


def _mv(a, x):
    return (a @ x.unsqueeze(-1)).squeeze(-1)


@dataclass(frozen=True, eq=False)
class AffineInclusion:
    """Row-wise affine bounds ``J_lo x + k_lo <= f(x, pi(x), w) <= J_hi x + k_hi``.

    Valid for every ``x`` in ``xbox`` and every ``w`` in the disturbance box the
    bounds were built for.
    """

    J_lo: torch.Tensor
    J_hi: torch.Tensor
    k_lo: torch.Tensor
    k_hi: torch.Tensor
    xbox: Interval

    def concretize(self, box: Interval | None = None):
        box = self.xbox if box is None else box
        lp, ln = ad.pos_neg_split(self.J_lo)
        hp, hn = ad.pos_neg_split(self.J_hi)
        lo = _mv(lp, box.lo) + _mv(ln, box.hi) + self.k_lo
        hi = _mv(hn, box.lo) + _mv(hp, box.hi) + self.k_hi
        return lo, hi


@dataclass(eq=False)
class ClosedLoopInclusion:
    """``f(x, policy(x), w)`` bounded through CROWN and mixed Jacobians.

    ``policy`` is anything with ``__call__(x)`` and ``crown(box)``
    (an :class:`~polycert.neural.MLP` or a :class:`~polycert.neural.SharedPolicy`).
    """

    sys: OpenLoopSystem
    policy: object
    disturbance: DisturbanceSpec | None = None
    corner: object = "lower"

    def __post_init__(self):
        _corner_blocks(self.corner)
        if self.disturbance is None:
            self.disturbance = DisturbanceSpec.radius([0.0] * self.sys.q)

    def with_policy(self, policy) -> "ClosedLoopInclusion":
        return ClosedLoopInclusion(self.sys, policy, self.disturbance, self.corner)

    def vector_field(self, x, w):
        x = as_tensor(x)
        return self.sys.f(x, self.policy(x), w)

    def affine(self, xbox: Interval, wbox: Interval) -> AffineInclusion:
        """Affine form of the inclusion; ``xbox`` and ``wbox`` batch-broadcast."""
        rel = self.policy.crown(xbox)
        ubox = interval_output(rel)
        M_x, M_u, M_w, (x0, u0, w0) = mixed_jacobian_bound(self.sys, xbox, ubox, wbox, self.corner)
        f0 = self.sys.f(x0, u0, w0)
        cx, cu, cw = _corner_blocks(self.corner)
        # Lower-bound coefficients take the interval end matching the sign of (z - z0).
        lx, ux = (M_x.lo, M_x.hi) if cx == "lower" else (M_x.hi, M_x.lo)
        lu, uu = (M_u.lo, M_u.hi) if cu == "lower" else (M_u.hi, M_u.lo)
        lw, uw = (M_w.lo, M_w.hi) if cw == "lower" else (M_w.hi, M_w.lo)
        lu_p, lu_n = ad.pos_neg_split(lu)
        uu_p, uu_n = ad.pos_neg_split(uu)
        lw_p, lw_n = ad.pos_neg_split(lw)
        uw_p, uw_n = ad.pos_neg_split(uw)
        J_lo = lx + lu_p @ rel.C_lo + lu_n @ rel.C_hi
        J_hi = ux + uu_p @ rel.C_hi + uu_n @ rel.C_lo
        k_lo = (
            f0 - _mv(lx, x0)
            + _mv(lu_p, rel.d_lo - u0) + _mv(lu_n, rel.d_hi - u0)
            + _mv(lw_p, wbox.lo - w0) + _mv(lw_n, wbox.hi - w0)
        )
        k_hi = (
            f0 - _mv(ux, x0)
            + _mv(uu_p, rel.d_hi - u0) + _mv(uu_n, rel.d_lo - u0)
            + _mv(uw_p, wbox.hi - w0) + _mv(uw_n, wbox.lo - w0)
        )
        return AffineInclusion(J_lo, J_hi, k_lo, k_hi, xbox)

    def inclusion(self, xbox: Interval, wbox: Interval | None = None):
        """Lower and upper bounds of the closed-loop field over the boxes."""
        if wbox is None:
            wbox = self.disturbance.box
        return self.affine(xbox, wbox).concretize()


def box_faces(lo, hi):
    """The ``2n`` faces of ``[lo, hi]``: lower faces first, then upper faces.

    Returns an :class:`Interval` of shape ``(2n, n)``.
    """
    lo, hi = as_tensor(lo), as_tensor(hi)
    n = lo.shape[-1]
    eye = torch.eye(n, dtype=torch.bool)
    lower = Interval(lo.expand(n, n), torch.where(eye, lo, hi))
    upper = Interval(torch.where(eye, hi, lo), hi.expand(n, n))
    return Interval(torch.cat([lower.lo, upper.lo]), torch.cat([lower.hi, upper.hi]))


def _select_faces(lo, hi, n):
    """Pick component ``i`` of face ``i`` (lower) and ``n + i`` (upper)."""
    idx = torch.arange(n)
    return lo[..., idx, idx], hi[..., n + idx, idx]


def _parts(cli: ClosedLoopInclusion, wbox):
    if wbox is None:
        return cli.disturbance.parts
    if isinstance(wbox, DisturbanceSpec):
        return wbox.parts
    return Interval(wbox.lo.reshape(1, -1), wbox.hi.reshape(1, -1))


def embedding_field(cli: ClosedLoopInclusion, xbox: Interval, wbox=None):
    """Hyperrectangle embedding vector field ``(lower, upper)`` at ``xbox``.

    Each of the ``2n`` faces gets its own CROWN and Jacobian evaluation.  With a
    partitioned disturbance the worst case over partitions is taken.
    """
    n = xbox.shape[-1]
    faces = box_faces(xbox.lo, xbox.hi)  # (2n, n)
    parts = _parts(cli, wbox)  # (P, q)
    faces_b = Interval(faces.lo.unsqueeze(0), faces.hi.unsqueeze(0))
    lo, hi = cli.affine(faces_b, Interval(parts.lo.unsqueeze(1), parts.hi.unsqueeze(1))).concretize(faces_b)
    lo, hi = _select_faces(lo, hi, n)  # (P, n)
    return reduce_partitions(lo, hi)


@dataclass(frozen=True)
class Certificate:
    certified: bool
    lower_field: list
    upper_field: list
    margin: float

    @classmethod
    def from_field(cls, lo, hi) -> "Certificate":
        lo, hi = as_tensor(lo).detach(), as_tensor(hi).detach()
        margin = float(torch.minimum(lo.min(), (-hi).min())) if lo.numel() else float("inf")
        return cls(se_geq_zero(lo, hi), lo.tolist(), hi.tolist(), margin)

    def to_json(self) -> dict:
        return {
            "certified": self.certified,
            "lower_field": self.lower_field,
            "upper_field": self.upper_field,
            "margin": self.margin,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def check_box_invariant(cli: ClosedLoopInclusion, xbox: Interval, wbox=None) -> Certificate:
    with torch.no_grad():
        lo, hi = embedding_field(cli, xbox, wbox)
    return Certificate.from_field(lo, hi)
