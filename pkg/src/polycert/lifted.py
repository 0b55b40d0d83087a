"""Lifted systems: left inverses, subspace refinement, polytope certificates."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import torch

from . import autodiff as ad
from .autodiff import DTYPE, as_tensor
from .dynamics import reduce_partitions, simulate
from .embedding import Certificate, ClosedLoopInclusion, _parts, box_faces
from .interval import EmptyIntersection, Interval, real_matvec

NULL_TOL = 1e-12


class RankError(ValueError):
    pass


def _check_rank(H: np.ndarray) -> np.ndarray:
    m, n = H.shape
    if m < n:
        raise RankError(f"H must be tall, got {m}x{n}")
    q, r = np.linalg.qr(H, mode="complete")
    d = np.abs(np.diag(r))
    if d.size and d.min() <= 1e-10 * max(1.0, d.max()):
        raise RankError("H is rank deficient")
    return q


def nullspace_basis(H) -> torch.Tensor:
    """Orthonormal basis ``N`` (``m x (m-n)``) of ``{v : v^T H = 0}``.

    Uses the trailing columns of the complete Householder QR of ``H``.
    """
    H = as_tensor(H).detach().numpy()
    q = _check_rank(H)
    return torch.from_numpy(q[:, H.shape[1]:].copy())


def pseudo_inverse(H) -> torch.Tensor:
    H = as_tensor(H)
    return torch.linalg.solve(H.T @ H, H.T)


@dataclass(eq=False)
class Polytope:
    """``{x : y_lo <= H x <= y_hi}`` with ``H`` tall and full column rank."""

    H: torch.Tensor
    y_lo: torch.Tensor
    y_hi: torch.Tensor

    def __post_init__(self):
        self.H, self.y_lo, self.y_hi = as_tensor(self.H), as_tensor(self.y_lo), as_tensor(self.y_hi)
        m = self.H.shape[0]
        if self.y_lo.shape != (m,) or self.y_hi.shape != (m,):
            raise ValueError("y_lo / y_hi must have one entry per row of H")
        _check_rank(self.H.numpy())
        if bool((self.y_lo > self.y_hi).any()):
            raise ValueError("y_lo exceeds y_hi")
        refine(nullspace_basis(self.H), self.box)

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def box(self) -> Interval:
        return Interval(self.y_lo, self.y_hi)

    def contains(self, x, tol: float = 0.0) -> torch.Tensor:
        y = as_tensor(x) @ self.H.T
        return ((y >= self.y_lo - tol) & (y <= self.y_hi + tol)).all(-1)

    def to_json(self) -> dict:
        return {"H": self.H.tolist(), "y_lo": self.y_lo.tolist(), "y_hi": self.y_hi.tolist()}


@dataclass(eq=False)
class Lifting:
    """``H`` with its pseudoinverse, left null basis and the free parameter ``eta``."""

    H: torch.Tensor
    H_dagger: torch.Tensor
    N: torch.Tensor
    eta: torch.Tensor

    @classmethod
    def from_H(cls, H, eta=None) -> "Lifting":
        H = as_tensor(H)
        N = nullspace_basis(H)
        m, n = H.shape
        eta = torch.zeros(n, m - n, dtype=DTYPE) if eta is None else as_tensor(eta)
        if eta.shape != (n, m - n):
            raise ValueError(f"eta must be {n}x{m - n}, got {tuple(eta.shape)}")
        return cls(H, pseudo_inverse(H), N, eta)

    def with_eta(self, eta) -> "Lifting":
        return Lifting(self.H, self.H_dagger, self.N, eta)

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]


def left_inverse(lifting: Lifting) -> torch.Tensor:
    return lifting.H_dagger + lifting.eta @ lifting.N.T


def constraint_rows(N) -> torch.Tensor:
    """Reduced row-echelon form of ``N^T``.

    Same constraint set as ``N^T y = 0`` but with sparse rows: interval
    propagation is basis dependent, and an orthonormal basis of a
    multi-dimensional nullspace mixes constraints that are decoupled (one per
    block of a block-diagonal ``H``), which makes the propagation far weaker.
    """
    A = as_tensor(N).T.detach().numpy().copy()
    rows, m = A.shape
    r = 0
    for c in range(m):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(A[r:, c])))
        if abs(A[p, c]) <= NULL_TOL:
            continue
        A[[r, p]] = A[[p, r]]
        A[r] /= A[r, c]
        for i in range(rows):
            if i != r:
                A[i] -= A[i, c] * A[r]
        r += 1
    # snap round-off so integer-structured constraints propagate exactly
    near = np.abs(A - np.round(A)) <= 1e-12
    A[near] = np.round(A[near])
    return torch.from_numpy(A)


def refine(N, ybox: Interval, tol: float = 1e-10) -> Interval:
    """Shrink ``ybox`` using ``N^T y = 0`` (one sweep over rows and coordinates).

    The constraints are taken in the row-echelon form of
    :func:`constraint_rows`.  For each row ``r`` and coordinate ``j`` with
    ``A[r, j] != 0``, coordinate ``j`` is solved from row ``r`` in interval
    arithmetic and intersected with its current range.  Intersections that are
    empty by more than ``tol`` (relative) raise :class:`EmptyIntersection`;
    smaller overlaps are round-off and collapse to a point.  Batched over the
    leading axes of ``ybox``.
    """
    A = constraint_rows(N)
    lo, hi = list(ybox.lo.unbind(-1)), list(ybox.hi.unbind(-1))
    m = len(lo)
    for r in range(A.shape[0]):
        row = A[r]
        nz = [j for j in range(m) if abs(float(row[j])) > NULL_TOL]
        for j in nz:
            s_lo = s_hi = 0.0
            for k in nz:
                if k == j:
                    continue
                c = -float(row[k]) / float(row[j])
                if c >= 0:
                    s_lo, s_hi = s_lo + c * lo[k], s_hi + c * hi[k]
                else:
                    s_lo, s_hi = s_lo + c * hi[k], s_hi + c * lo[k]
            new_lo = ad.maximum(lo[j], s_lo)
            new_hi = ad.minimum(hi[j], s_hi)
            gap = (new_lo - new_hi).detach()
            scale = 1.0 + torch.maximum(new_lo.detach().abs(), new_hi.detach().abs())
            if bool((gap > tol * scale).any()):
                raise EmptyIntersection(f"refinement of coordinate {j} from constraint {r} is empty")
            mid = 0.5 * (new_lo + new_hi)
            crossed = gap > 0
            lo[j] = torch.where(crossed, mid, new_lo)
            hi[j] = torch.where(crossed, mid, new_hi)
    return Interval(torch.stack(lo, -1), torch.stack(hi, -1))


def refined_faces(lifting: Lifting, ybox: Interval) -> Interval:
    """The ``2m`` faces of ``ybox`` (lower then upper), each refined."""
    faces = box_faces(ybox.lo, ybox.hi)
    if lifting.m == lifting.n:
        return faces
    return refine(lifting.N, faces)


def lifted_embedding_field(lifting: Lifting, cli: ClosedLoopInclusion, ybox: Interval, wbox=None, faces=None):
    """Lifted embedding vector field ``(lower, upper)``, each of length ``m``.

    Face ``i`` is refined, mapped to an ``x``-box through the left inverse and
    bounded by the closed-loop inclusion in affine form; the affine coupling is
    pushed through ``H`` and the left inverse before it is evaluated on the
    refined face, so first-order interactions survive the lifting.
    """
    m = lifting.m
    if faces is None:
        faces = refined_faces(lifting, ybox)
    Hp = left_inverse(lifting)
    xbox = real_matvec(Hp, faces)  # (2m, n)
    parts = _parts(cli, wbox)
    xb = Interval(xbox.lo.unsqueeze(0), xbox.hi.unsqueeze(0))
    wb = Interval(parts.lo.unsqueeze(1), parts.hi.unsqueeze(1))
    aff = cli.affine(xb, wb)  # J: (P, 2m, n, n), k: (P, 2m, n)

    rows = torch.cat([torch.arange(m), torch.arange(m)])
    h_pos, h_neg = ad.pos_neg_split(lifting.H[rows])  # (2m, n)
    hp_, hn_ = h_pos.unsqueeze(-2), h_neg.unsqueeze(-2)
    a_lo = (hp_ @ aff.J_lo + hn_ @ aff.J_hi).squeeze(-2) @ Hp  # (P, 2m, m)
    a_hi = (hp_ @ aff.J_hi + hn_ @ aff.J_lo).squeeze(-2) @ Hp
    c_lo = (h_pos * aff.k_lo).sum(-1) + (h_neg * aff.k_hi).sum(-1)
    c_hi = (h_pos * aff.k_hi).sum(-1) + (h_neg * aff.k_lo).sum(-1)
    lp, ln = ad.pos_neg_split(a_lo)
    up, un = ad.pos_neg_split(a_hi)
    val_lo = (lp * faces.lo).sum(-1) + (ln * faces.hi).sum(-1) + c_lo
    val_hi = (up * faces.hi).sum(-1) + (un * faces.lo).sum(-1) + c_hi
    return reduce_partitions(val_lo[..., :m], val_hi[..., m:])


def certify_polytope(lifting: Lifting, cli: ClosedLoopInclusion, ybox: Interval, wbox=None) -> Certificate:
    with torch.no_grad():
        lo, hi = lifted_embedding_field(lifting.with_eta(lifting.eta.detach()), cli, ybox.detach(), wbox)
    return Certificate.from_field(lo, hi)


def lifting_from_linearization(A_cl, extra_rows=None, tol: float = 1e-9) -> torch.Tensor:
    """``H = T^{-1}`` from the real Jordan decomposition ``T^{-1} A_cl T = Lambda``.

    Eigenvalues are ordered by decreasing real part.  A real eigenvalue
    contributes its unit-norm eigenvector, signed so the largest-magnitude
    entry is positive.  A complex pair contributes ``(Re v, Im v)`` for the
    member with positive imaginary part, where ``v`` has unit norm and its
    largest-magnitude entry is real and positive; the block of ``Lambda`` is
    then ``[[a, b], [-b, a]]``.  Defective matrices are rejected.
    ``extra_rows`` are appended below.
    """
    A = as_tensor(A_cl).detach().numpy()
    vals, vecs = np.linalg.eig(A)
    order = sorted(range(len(vals)), key=lambda i: (-vals[i].real, -vals[i].imag))
    cols = []
    for i in order:
        v = vecs[:, i] / np.linalg.norm(vecs[:, i])
        k = int(np.abs(v).argmax())
        v = v * (abs(v[k]) / v[k])
        if abs(vals[i].imag) <= tol:
            cols.append(v.real)
        elif vals[i].imag > 0:
            cols.extend([v.real, v.imag])
    T = np.array(cols).T
    if T.shape != A.shape or np.linalg.cond(T) > 1.0 / tol:
        raise ValueError("linearization is defective (eigenvectors not independent)")
    H = np.linalg.inv(T)
    if extra_rows is not None:
        H = np.vstack([H, np.atleast_2d(np.asarray(extra_rows, dtype=float))])
    return torch.from_numpy(H)


def lifted_vector_field(lifting: Lifting, cli: ClosedLoopInclusion):
    Hp = left_inverse(lifting).detach()
    H = lifting.H

    def g(y, w):
        return cli.vector_field(as_tensor(y) @ Hp.T, w) @ H.T

    return g


def lifted_simulate_check(lifting: Lifting, cli: ClosedLoopInclusion, x0, w=None, dt: float = 1e-3, T: float = 5.0) -> float:
    """Max over time of ``|H x(t) - y(t)|_inf`` for the original and lifted flows."""
    x0 = as_tensor(x0)
    if w is None:
        w = torch.zeros(*x0.shape[:-1], cli.sys.q, dtype=DTYPE)
    with torch.no_grad():
        xs = simulate(cli.vector_field, x0, w, dt, T)
        ys = simulate(lifted_vector_field(lifting, cli), x0 @ lifting.H.T, w, dt, T)
        return float((xs @ lifting.H.T - ys).abs().max())


def boundary_points(polytope: Polytope, k: int, generator=None) -> torch.Tensor:
    """``k`` points on the boundary of a polytope that contains the origin.

    A point is drawn uniformly from a random refined face, projected onto the
    range of ``H`` with the pseudoinverse, and pushed along its ray until it
    hits the boundary.
    """
    if bool((polytope.y_lo > 0).any()) or bool((polytope.y_hi < 0).any()):
        raise ValueError("boundary sampling needs the origin inside the polytope")
    lifting = Lifting.from_H(polytope.H)
    faces = refined_faces(lifting, polytope.box)
    out = []
    while len(out) < k:
        i = int(torch.randint(faces.shape[0], (1,), generator=generator))
        u = torch.rand(polytope.m, dtype=DTYPE, generator=generator)
        y = faces.lo[i] + u * (faces.hi[i] - faces.lo[i])
        x = lifting.H_dagger @ y
        hx = polytope.H @ x
        with torch.no_grad():
            lim = torch.where(hx > 0, polytope.y_hi / hx, torch.where(hx < 0, polytope.y_lo / hx, torch.full_like(hx, math.inf)))
        s = float(lim.min())
        if math.isfinite(s) and s > 0:
            out.append(s * x)
    return torch.stack(out)


def polytope_vertices(polytope: Polytope, tol: float = 1e-9) -> torch.Tensor:
    """Vertices by brute force over ``n``-subsets of the ``2m`` constraints."""
    H, lo, hi = polytope.H.numpy(), polytope.y_lo.numpy(), polytope.y_hi.numpy()
    n = polytope.n
    rows = np.vstack([H, H])
    rhs = np.concatenate([lo, hi])
    verts = []
    for idx in itertools.combinations(range(rows.shape[0]), n):
        A = rows[list(idx)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, rhs[list(idx)])
        y = H @ x
        if (y >= lo - tol).all() and (y <= hi + tol).all() and not any(np.allclose(x, v, atol=tol) for v in verts):
            verts.append(x)
    return torch.from_numpy(np.array(verts).reshape(-1, n))
