import json

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from polycert.dynamics import DisturbanceSpec, LinearSystem
from polycert.embedding import Certificate, ClosedLoopInclusion, box_faces, check_box_invariant, embedding_field
from polycert.interval import Interval
from polycert.models import double_integrator, platoon, platoon_policy, segway
from polycert.neural import MLP


def zero_net(n, p=1):
    return MLP.linear(torch.zeros(p, n))


def sym_box(r):
    r = torch.as_tensor(r, dtype=torch.float64)
    return Interval(-r, r)


def test_box_faces_layout():
    f = box_faces(torch.tensor([0.0, 1.0]), torch.tensor([2.0, 3.0]))
    assert torch.equal(f.lo, torch.tensor([[0.0, 1.0], [0.0, 1.0], [2.0, 1.0], [0.0, 3.0]]))
    assert torch.equal(f.hi, torch.tensor([[0.0, 3.0], [2.0, 1.0], [2.0, 3.0], [2.0, 3.0]]))


def test_diagonal_stable_system_field():
    # xdot = diag(-1, -2) x on [-1/2, 1/2]^2: lower faces move in at 1/2 and 1
    sys = LinearSystem([[-1.0, 0.0], [0.0, -2.0]], torch.zeros(2, 1))
    lo, hi = embedding_field(ClosedLoopInclusion(sys, zero_net(2)), sym_box([0.5, 0.5]))
    assert torch.allclose(lo, torch.tensor([0.5, 1.0])) and torch.allclose(hi, torch.tensor([-0.5, -1.0]))


def test_unstable_scalar_not_certified():
    sys = LinearSystem([[1.0]], torch.zeros(1, 1))
    cert = check_box_invariant(ClosedLoopInclusion(sys, zero_net(1)), sym_box([1.0]))
    assert not cert.certified and cert.lower_field == [-1.0] and cert.upper_field == [1.0]


def test_disturbed_stable_scalar_boundary():
    # xdot = -x + w, |w| <= 2 on [-1, 1]: the faces are pushed out at rate 1
    sys = LinearSystem([[-1.0]], torch.zeros(1, 1), [[1.0]])
    cli = ClosedLoopInclusion(sys, zero_net(1), DisturbanceSpec.radius([2.0]))
    cert = check_box_invariant(cli, sym_box([1.0]))
    assert cert.lower_field == [-1.0] and cert.upper_field == [1.0] and cert.margin == -1.0


def test_degenerate_box_is_exact():
    sys = segway((1, 2, 7))
    net = MLP.init([3, 8, 1], 0)
    cli = ClosedLoopInclusion(sys, net)
    x, w = torch.tensor([0.1, -0.2, 0.3]), torch.tensor([0.01, -0.02, 0.0])
    lo, hi = cli.inclusion(Interval.point(x), Interval.point(w))
    f = cli.vector_field(x, w)
    assert torch.allclose(lo, f, atol=1e-12) and torch.allclose(hi, f, atol=1e-12)


def _inclusion_sound(cli, xbox, wbox, k, seed):
    g = torch.Generator().manual_seed(seed)
    lo, hi = cli.inclusion(xbox, wbox)
    x = xbox.lo + torch.rand(k, xbox.shape[-1], generator=g) * xbox.width
    w = wbox.lo + torch.rand(k, wbox.shape[-1], generator=g) * wbox.width
    f = cli.vector_field(x, w)
    return bool(((lo <= f + 1e-9) & (f <= hi + 1e-9)).all())


@given(st.integers(0, 1000))
def test_inclusion_sound_segway(seed):
    cli = ClosedLoopInclusion(segway(), MLP.init([3, 16, 16, 1], seed))
    c = 0.3 * (torch.rand(3, generator=torch.Generator().manual_seed(seed)) - 0.5)
    assert _inclusion_sound(cli, Interval(c - 0.1, c + 0.1), sym_box([0.02] * 11), 500, seed)


@given(st.integers(0, 1000))
def test_inclusion_sound_platoon(seed):
    N = 3
    cli = ClosedLoopInclusion(platoon(N), platoon_policy(MLP.init([6, 16, 1], seed), N))
    assert _inclusion_sound(cli, sym_box([0.3] * 6), sym_box([0.1] * N), 500, seed)


@given(st.integers(0, 1000))
def test_inclusion_sound_double_integrator(seed):
    cli = ClosedLoopInclusion(double_integrator(), MLP.init([2, 16, 16, 1], seed))
    assert _inclusion_sound(cli, sym_box([1.0, 1.0]), sym_box([0.0]), 500, seed)


@given(st.integers(0, 1000))
def test_double_integrator_box_never_certifies(seed):
    # face x1 = lo has velocity x2 ranging over both signs, whatever the controller
    cli = ClosedLoopInclusion(double_integrator(), MLP.init([2, 8, 1], seed))
    assert not check_box_invariant(cli, sym_box([1.0, 1.0])).certified


def test_shrinking_disturbance_never_breaks_certificate():
    sys = LinearSystem([[-2.0, 0.5], [0.0, -3.0]], torch.zeros(2, 1), [[1.0], [0.5]])
    box = sym_box([1.0, 1.0])
    prev = None
    for r in (1.2, 1.0, 0.5, 0.1, 0.0):
        cert = check_box_invariant(ClosedLoopInclusion(sys, zero_net(2), DisturbanceSpec.radius([r])), box)
        if prev:
            assert cert.certified
        prev = cert.certified
        if cert.certified:
            assert cert.margin >= 0
    assert prev


def test_partitions_never_loosen_the_field():
    cli1 = ClosedLoopInclusion(segway((1, 2, 7)), MLP.init([3, 8, 1], 1), DisturbanceSpec.radius([0.02] * 3, 1))
    cli2 = ClosedLoopInclusion(segway((1, 2, 7)), MLP.init([3, 8, 1], 1), DisturbanceSpec.radius([0.02] * 3, 2))
    box = sym_box([0.05, 0.05, 0.05])
    lo1, hi1 = embedding_field(cli1, box)
    lo2, hi2 = embedding_field(cli2, box)
    assert (lo2 >= lo1 - 1e-12).all() and (hi2 <= hi1 + 1e-12).all()


def test_certificate_json():
    cert = Certificate.from_field(torch.tensor([0.5, 0.0]), torch.tensor([-0.1, -0.2]))
    data = json.loads(cert.dumps())
    assert data == {"certified": True, "lower_field": [0.5, 0.0], "upper_field": [-0.1, -0.2], "margin": 0.0}


def test_corner_validation():
    with pytest.raises(ValueError):
        ClosedLoopInclusion(double_integrator(), zero_net(2), corner="middle")
