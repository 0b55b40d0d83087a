import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from polycert.dynamics import DisturbanceSpec, LinearSystem
from polycert.embedding import ClosedLoopInclusion, embedding_field
from polycert.interval import EmptyIntersection, Interval
from polycert.lifted import (
    Lifting,
    Polytope,
    constraint_rows,
    RankError,
    boundary_points,
    left_inverse,
    lifted_embedding_field,
    lifted_simulate_check,
    lifting_from_linearization,
    nullspace_basis,
    polytope_vertices,
    refine,
    refined_faces,
)
from polycert.models import double_integrator, platoon_lifting, segway
from polycert.neural import MLP

H2 = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def cube(m, r=1.0):
    return Interval(-r * torch.ones(m), r * torch.ones(m))


def test_nullspace_of_three_by_two():
    N = nullspace_basis(H2)
    assert N.shape == (3, 1)
    v = torch.tensor([1.0, 1.0, -1.0]) / math.sqrt(3)
    assert torch.allclose(N[:, 0].abs(), v.abs()) and abs(float(N[:, 0] @ v)) == pytest.approx(1.0)


def test_nullspace_square_and_rank_deficient():
    assert nullspace_basis(torch.eye(3)).shape == (3, 0)
    with pytest.raises(RankError):
        nullspace_basis(torch.tensor([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]))
    with pytest.raises(RankError):
        nullspace_basis(torch.ones(1, 2))


@st.composite
def tall_matrices(draw):
    n = draw(st.integers(1, 3))
    m = draw(st.integers(n, n + 3))
    seed = draw(st.integers(0, 10_000))
    return torch.randn(m, n, generator=torch.Generator().manual_seed(seed)), seed


@given(tall_matrices())
def test_left_inverse_family(arg):
    H, seed = arg
    m, n = H.shape
    N = nullspace_basis(H)
    assert torch.allclose(N.T @ H, torch.zeros(m - n, n), atol=1e-10)
    assert torch.allclose(N.T @ N, torch.eye(m - n), atol=1e-10)
    eta = torch.randn(n, m - n, generator=torch.Generator().manual_seed(seed + 1))
    assert torch.allclose(left_inverse(Lifting.from_H(H, eta)) @ H, torch.eye(n), atol=1e-9)


def test_refine_fixture():
    face = Interval(torch.tensor([-1.0, -1.0, -1.0]), torch.tensor([1.0, 1.0, -1.0]))
    out = refine(nullspace_basis(H2), face)
    assert torch.allclose(out.lo, torch.tensor([-1.0, -1.0, -1.0]), atol=1e-12)
    assert torch.allclose(out.hi, torch.tensor([0.0, 0.0, -1.0]), atol=1e-12)


def test_constraint_rows_decouple_block_diagonal_H():
    H, y_lo, y_hi = platoon_lifting(4)
    A = constraint_rows(nullspace_basis(H))
    assert torch.allclose(A, torch.kron(torch.eye(4), torch.tensor([[1.0, 1.0, -1.0]])), atol=1e-12)
    # lower position face of vehicle 1: p = -0.1 and p + v >= -0.08 force v >= 0.02
    face = Interval(y_lo.clone(), y_hi.clone())
    face.hi[0] = face.lo[0]
    out = refine(nullspace_basis(H), face)
    assert out.lo[1] == pytest.approx(0.02, abs=1e-12)


def test_refine_empty_raises():
    box = Interval(torch.tensor([0.5, 0.5, -1.0]), torch.tensor([1.0, 1.0, 0.0]))
    with pytest.raises(EmptyIntersection):
        refine(nullspace_basis(H2), box)


def test_refine_square_is_identity():
    box = cube(2)
    out = refine(nullspace_basis(torch.eye(2)), box)
    assert torch.equal(out.lo, box.lo) and torch.equal(out.hi, box.hi)


@given(tall_matrices(), st.integers(0, 10_000))
def test_refine_sandwich(arg, seed):
    H, _ = arg
    m, n = H.shape
    g = torch.Generator().manual_seed(seed)
    x0 = torch.randn(n, generator=g)
    y0 = H @ x0
    box = Interval(y0 - torch.rand(m, generator=g) * 2, y0 + torch.rand(m, generator=g) * 2)
    out = refine(nullspace_basis(H), box)
    assert out.subset_of(box, tol=1e-12)
    # every subspace point of the box survives refinement
    xs = x0 + 2.0 * torch.randn(4000, n, generator=g)
    ys = xs @ H.T
    keep = box.contains(ys).all(-1)
    assert out.contains(ys[keep], tol=1e-9).all()


def test_linear_double_integrator_field():
    cli = ClosedLoopInclusion(double_integrator(), MLP.linear([[-2.0, -3.0]]))
    lo, hi = lifted_embedding_field(Lifting.from_H(H2), cli, cube(3))
    assert torch.allclose(lo, torch.tensor([0.0, 1.0, 4.0 / 3.0]), atol=1e-9)
    assert torch.allclose(hi, torch.tensor([0.0, -1.0, -4.0 / 3.0]), atol=1e-9)


def test_square_identity_lifting_matches_box_embedding():
    cli = ClosedLoopInclusion(segway((1, 2, 7)), MLP.init([3, 8, 1], 0), DisturbanceSpec.radius([0.02] * 3, 2))
    box = cube(3, 0.1)
    lo1, hi1 = lifted_embedding_field(Lifting.from_H(torch.eye(3)), cli, box)
    lo2, hi2 = embedding_field(cli, box)
    assert torch.allclose(lo1, lo2, atol=1e-12) and torch.allclose(hi1, hi2, atol=1e-12)


def test_lifted_field_bounds_true_derivative_on_faces():
    # sample points of the polytope on each face and compare H f(x) with the field
    sys = LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[0.0], [0.3]])
    cli = ClosedLoopInclusion(sys, MLP.init([2, 8, 1], 3), DisturbanceSpec.radius([1.0]))
    poly = Polytope(H2, -torch.ones(3), torch.ones(3))
    lifting = Lifting.from_H(H2)
    lo, hi = lifted_embedding_field(lifting, cli, poly.box)
    g = torch.Generator().manual_seed(0)
    x = 2 * torch.rand(20000, 2, generator=g) - 1
    x = x[poly.contains(x)]
    w = 2 * torch.rand(x.shape[0], 1, generator=g) - 1
    ydot = cli.vector_field(x, w) @ H2.T
    y = x @ H2.T
    for i in range(3):
        on_lo = (y[:, i] - poly.y_lo[i]).abs() < 2e-2
        on_hi = (y[:, i] - poly.y_hi[i]).abs() < 2e-2
        # near-face points: allow the first-order change over the 2e-2 band
        assert (ydot[on_lo, i] >= lo[i] - 0.2).all()
        assert (ydot[on_hi, i] <= hi[i] + 0.2).all()


def test_lifting_from_linearization_example():
    A = torch.tensor([[0.0, 1.0], [-2.0, -3.0]])
    H = lifting_from_linearization(A)
    T = torch.linalg.inv(H)
    assert torch.allclose(H @ A @ T, torch.diag(torch.tensor([-1.0, -2.0])), atol=1e-12)
    # columns are the unit-norm versions of (1, -1) and (1, -2), sign-fixed
    expect = torch.tensor([[1.0, -1.0], [-1.0, 2.0]]) / torch.tensor([math.sqrt(2), math.sqrt(5)])
    assert torch.allclose(T, expect, atol=1e-12)


def test_lifting_from_linearization_complex_pair():
    A = torch.tensor([[-1.0, 2.0, 0.0], [-2.0, -1.0, 0.0], [0.0, 0.0, -3.0]])
    H = lifting_from_linearization(A, extra_rows=[[1.0, 1.0, 1.0]])
    assert H.shape == (4, 3)
    T = torch.linalg.inv(H[:3])
    lam = H[:3] @ A @ T
    assert torch.allclose(lam, torch.tensor([[-1.0, 2.0, 0.0], [-2.0, -1.0, 0.0], [0.0, 0.0, -3.0]]), atol=1e-10) or \
        torch.allclose(lam, torch.tensor([[-1.0, -2.0, 0.0], [2.0, -1.0, 0.0], [0.0, 0.0, -3.0]]), atol=1e-10)


def test_lifting_from_linearization_defective():
    with pytest.raises(ValueError):
        lifting_from_linearization(torch.tensor([[0.0, 1.0], [0.0, 0.0]]))


def test_polytope_validation():
    with pytest.raises(ValueError):
        Polytope(H2, torch.ones(3), -torch.ones(3))
    with pytest.raises(ValueError):
        Polytope(H2, -torch.ones(2), torch.ones(2))
    with pytest.raises(EmptyIntersection):
        Polytope(H2, torch.tensor([0.5, 0.5, -1.0]), torch.tensor([1.0, 1.0, 0.0]))


def test_vertices_and_boundary_points():
    poly = Polytope(H2, -torch.ones(3), torch.ones(3))
    verts = polytope_vertices(poly)
    expect = {(-1.0, 0.0), (-1.0, 1.0), (0.0, -1.0), (1.0, -1.0), (1.0, 0.0), (0.0, 1.0)}
    assert {tuple(round(float(v), 9) + 0.0 for v in row) for row in verts} == expect
    pts = boundary_points(poly, 50, torch.Generator().manual_seed(0))
    y = pts @ H2.T
    assert poly.contains(pts, tol=1e-12).all()
    slack = torch.minimum(y - poly.y_lo, poly.y_hi - y).min(-1).values
    assert slack.abs().max() < 1e-12


def test_refined_faces_shape():
    faces = refined_faces(Lifting.from_H(H2), cube(3))
    assert faces.shape == (6, 3)


@pytest.mark.parametrize("seed", range(3))
def test_lifted_simulation_stays_on_subspace(seed):
    cli = ClosedLoopInclusion(double_integrator(), MLP.init([2, 8, 1], seed))
    eta = torch.randn(2, 1, generator=torch.Generator().manual_seed(seed))
    err = lifted_simulate_check(Lifting.from_H(H2, eta), cli, torch.tensor([0.3, -0.2]), None, 1e-3, 2.0)
    assert err < 1e-9


def test_eta_shape_checked():
    with pytest.raises(ValueError):
        Lifting.from_H(H2, np.zeros((1, 2)))
