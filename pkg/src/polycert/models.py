"""Builtin benchmark systems: double integrator, segway, vehicle platoon."""

from __future__ import annotations

import torch

from . import interval as iv
from .autodiff import DTYPE, as_tensor
from .dynamics import LinearSystem, OpenLoopSystem
from .interval import Interval
from .neural import MLP, SharedPolicy


def double_integrator() -> LinearSystem:
    """``x1' = x2, x2' = u``; one disturbance channel that enters nowhere."""
    return LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[0.0], [0.0]])


# Numerator coefficients of the segway model, in reading order.  Row 2 uses the
# first six, row 3 the last five.  The constant 24.7 in both denominators is
# not perturbed.
SEGWAY_COEFFS = (1.8, 11.5, 9.8, 10.9, 68.4, 1.2, 9.3, 58.8, 38.6, 234.5, 208.3)
SEGWAY_DEN = 24.7


class Segway(OpenLoopSystem):
    """Segway with state ``(phi, v, phidot)`` and multiplicative parameter noise.

    Coefficient ``k`` of :data:`SEGWAY_COEFFS` is scaled by ``(1 + w)`` for the
    disturbance entry assigned to it in ``active``; inactive coefficients stay
    nominal.
    """

    n, p = 3, 1

    def __init__(self, active=tuple(range(11))):
        self.active = tuple(int(k) for k in active)
        if len(set(self.active)) != len(self.active) or any(not 0 <= k < 11 for k in self.active):
            raise ValueError(f"bad active parameter list {active}")
        self.q = len(self.active)

    def _coeffs(self, w):
        """Per-coefficient multipliers, each a tensor broadcastable with ``w[..., 0]``."""
        one = torch.ones(w.shape[:-1], dtype=DTYPE)
        scale = [one] * 11
        for j, k in enumerate(self.active):
            scale[k] = 1.0 + w[..., j]
        return [c * s for c, s in zip(SEGWAY_COEFFS, scale)]

    def f(self, x, u, w):
        x, u, w = as_tensor(x), as_tensor(u), as_tensor(w)
        phi, v, om = x[..., 0], x[..., 1], x[..., 2]
        u = u[..., 0]
        a1, a2, a3, a4, a5, a6, b1, b2, b3, b4, b5 = self._coeffs(w)
        c, s = torch.cos(phi), torch.sin(phi)
        n2 = c * (-a1 * u + a2 * v + a3 * s) - a4 * u + a5 * v - a6 * om**2 * s
        n3 = (b1 * u - b2 * v) * c + b3 * u - b4 * v - s * (b5 + om**2 * c)
        return torch.stack([om, n2 / (c - SEGWAY_DEN), n3 / (c * c - SEGWAY_DEN)], -1)

    def jacobian(self, x: Interval, u: Interval, w: Interval):
        batch = torch.broadcast_shapes(x.shape[:-1], u.shape[:-1], w.shape[:-1])
        x = Interval(x.lo.expand(*batch, 3), x.hi.expand(*batch, 3))
        u = Interval(u.lo.expand(*batch, 1), u.hi.expand(*batch, 1))
        w = Interval(w.lo.expand(*batch, self.q), w.hi.expand(*batch, self.q))
        phi, v, om, uu = x[..., 0], x[..., 1], x[..., 2], u[..., 0]
        nominal = SEGWAY_COEFFS
        coef = []
        for k in range(11):
            if k in self.active:
                coef.append(iv.scale(w[..., self.active.index(k)] + 1.0, nominal[k]))
            else:
                coef.append(Interval.point(torch.full(batch, nominal[k], dtype=DTYPE)))
        a1, a2, a3, a4, a5, a6, b1, b2, b3, b4, b5 = coef

        c, s = iv.cos(phi), iv.sin(phi)
        om2 = iv.sqr(om)
        d2 = c - SEGWAY_DEN
        d3 = iv.sqr(c) - SEGWAY_DEN
        inner2 = -a1 * uu + a2 * v + a3 * s
        n2 = c * inner2 - a4 * uu + a5 * v - a6 * om2 * s
        n3 = (b1 * uu - b2 * v) * c + b3 * uu - b4 * v - s * (b5 + om2 * c)
        f2 = n2 / d2
        f3 = n3 / d3

        # d/dphi of the numerators
        n2_phi = -(s * inner2) + a3 * iv.sqr(c) - a6 * om2 * c
        n3_phi = -((b1 * uu - b2 * v) * s) - b5 * c - om2 * iv.cos(iv.scale(phi, 2.0))
        sin2 = iv.sin(iv.scale(phi, 2.0))
        zero = Interval.point(torch.zeros(batch, dtype=DTYPE))
        one = Interval.point(torch.ones(batch, dtype=DTYPE))

        row1 = [zero, zero, one]
        row2 = [(n2_phi + f2 * s) / d2, (a2 * c + a5) / d2, iv.scale(om * s, -2.0) * a6 / d2]
        row3 = [(n3_phi + f3 * sin2) / d3, (-(b2 * c) - b4) / d3, -(om * sin2) / d3]
        jx = iv.stack([iv.stack(r, -1) for r in (row1, row2, row3)], -2)
        ju = iv.stack([zero, (-(a1 * c) - a4) / d2, (b1 * c + b3) / d3], -1)
        ju = Interval(ju.lo.unsqueeze(-1), ju.hi.unsqueeze(-1))

        # d/dw_k = (d/dcoef_k) * nominal_k
        dn2 = [-(c * uu), c * v, c * s, -uu, v, -(om2 * s)]
        dn3 = [uu * c, -(v * c), uu, -v, -s]
        cols = []
        for k in self.active:
            if k < 6:
                col2, col3 = iv.scale(dn2[k], nominal[k]) / d2, zero
            else:
                col2, col3 = zero, iv.scale(dn3[k - 6], nominal[k]) / d3
            cols.append(iv.stack([zero, col2, col3], -1))
        if cols:
            jw = iv.stack(cols, -1)
        else:
            jw = Interval(torch.zeros(*batch, 3, 0, dtype=DTYPE), torch.zeros(*batch, 3, 0, dtype=DTYPE))
        return jx, ju, jw


def segway(active=tuple(range(11))) -> Segway:
    return Segway(active)


def sigma(u, u_lim: float = 10.0):
    return u_lim * torch.tanh(as_tensor(u) / u_lim)


class Platoon(OpenLoopSystem):
    """``N`` vehicles, ``p_j' = v_j``, ``v_j' = sigma(u_j) (1 + w_j)``.

    State ordering is ``(p_1, v_1, ..., p_N, v_N)``.
    """

    def __init__(self, N: int, u_lim: float = 10.0):
        if N < 1:
            raise ValueError("platoon needs at least one vehicle")
        self.N = N
        self.u_lim = float(u_lim)
        self.n, self.p, self.q = 2 * N, N, N

    def f(self, x, u, w):
        x, u, w = as_tensor(x), as_tensor(u), as_tensor(w)
        v = x[..., 1::2]
        acc = sigma(u, self.u_lim) * (1.0 + w)
        return torch.stack([v, acc], -1).reshape(*acc.shape[:-1], 2 * self.N)

    def jacobian(self, x: Interval, u: Interval, w: Interval):
        N = self.N
        batch = torch.broadcast_shapes(x.shape[:-1], u.shape[:-1], w.shape[:-1])
        jx = torch.zeros(*batch, 2 * N, 2 * N, dtype=DTYPE)
        jx[..., 0::2, 1::2] = torch.eye(N, dtype=DTYPE)
        th = iv.tanh(iv.scale(u, 1.0 / self.u_lim))
        dsig = 1.0 - iv.sqr(th)
        du = dsig * (w + 1.0)
        dw = iv.scale(th, self.u_lim)
        du_lo, du_hi = du.lo.expand(*batch, N), du.hi.expand(*batch, N)
        dw_lo, dw_hi = dw.lo.expand(*batch, N), dw.hi.expand(*batch, N)
        return (
            Interval.point(jx),
            Interval(_rows_odd_diag(du_lo, N), _rows_odd_diag(du_hi, N)),
            Interval(_rows_odd_diag(dw_lo, N), _rows_odd_diag(dw_hi, N)),
        )


def _rows_odd_diag(d, N):
    """``2N x N`` matrix with ``d_j`` at row ``2j+1``, column ``j``."""
    diag = torch.diag_embed(d)
    return torch.stack([torch.zeros_like(diag), diag], -2).reshape(*diag.shape[:-2], 2 * N, N)


def platoon(N: int, u_lim: float = 10.0) -> Platoon:
    return Platoon(N, u_lim)


def platoon_observation_maps(N: int) -> torch.Tensor:
    """Observation matrices ``(N, 6, 2N)`` for the shared platoon policy.

    Leaders are vehicles ``1, 4, 7, ...`` (1-based, ``(j - 1) % 3 == 0``) and
    see ``(x_j, x_{j-3} - x_j, x_j - x_{j+3})``; every other vehicle sees
    ``(0, x_{j-1} - x_j, x_j - x_{j+1})``.  Vehicles outside ``1..N`` are the
    fixed origin.  With this placement the ``(1, 3, 9)`` bound pattern gives
    leaders the tightest sets and ends on a leader when ``N % 3 == 1``.
    """
    maps = torch.zeros(N, 6, 2 * N, dtype=DTYPE)
    eye = torch.eye(2, dtype=DTYPE)

    def put(j, block, vehicle, sign):
        if 1 <= vehicle <= N:
            c = 2 * (vehicle - 1)
            maps[j - 1, 2 * block : 2 * block + 2, c : c + 2] += sign * eye

    for j in range(1, N + 1):
        leader = (j - 1) % 3 == 0
        step = 3 if leader else 1
        if leader:
            put(j, 0, j, 1.0)
        put(j, 1, j - step, 1.0)
        put(j, 1, j, -1.0)
        put(j, 2, j, 1.0)
        put(j, 2, j + step, -1.0)
    return maps


def platoon_policy(net: MLP, N: int) -> SharedPolicy:
    if net.in_dim != 6 or net.out_dim != 1:
        raise ValueError("platoon policy network must map R^6 -> R")
    return SharedPolicy(net, platoon_observation_maps(N))


def platoon_lifting(N: int):
    """Polytope ``(H, y_lo, y_hi)`` used for the platoon benchmark."""
    block = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], dtype=DTYPE)
    H = torch.kron(torch.eye(N, dtype=DTYPE), block)
    pattern = torch.tensor([(1.0, 3.0, 9.0)[j % 3] for j in range(N)], dtype=DTYPE)
    y_hi = torch.kron(pattern, torch.tensor([0.1, 0.1, 0.08], dtype=DTYPE))
    return H, -y_hi, y_hi
