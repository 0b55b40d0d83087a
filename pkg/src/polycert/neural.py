"""ReLU controllers and CROWN local affine bounds."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from . import autodiff as ad
from .autodiff import DTYPE, as_tensor
from .interval import Interval


@dataclass(eq=False)
class MLP:
    """Feedforward network; ReLU on hidden layers, identity on the output."""

    weights: list[torch.Tensor]
    biases: list[torch.Tensor]

    def __post_init__(self):
        self.weights = [as_tensor(w) for w in self.weights]
        self.biases = [as_tensor(b) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.dim() != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {tuple(w.shape)} / bias {tuple(b.shape)}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} input dim does not match previous output")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    @classmethod
    def init(cls, dims, seed: int = 0) -> "MLP":
        """Uniform He-style init, ``U(-a, a)`` with ``a = sqrt(6 / fan_in)``."""
        gen = torch.Generator().manual_seed(seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            a = math.sqrt(6.0 / fan_in)
            ws.append((torch.rand(fan_out, fan_in, generator=gen, dtype=DTYPE) * 2 - 1) * a)
            bs.append(torch.zeros(fan_out, dtype=DTYPE))
        return cls(ws, bs)

    @classmethod
    def linear(cls, K, b=None) -> "MLP":
        K = as_tensor(K)
        return cls([K], [torch.zeros(K.shape[0], dtype=DTYPE) if b is None else b])

    def num_params(self) -> int:
        return sum(w.numel() + b.numel() for w, b in zip(self.weights, self.biases))

    def flat(self) -> torch.Tensor:
        return torch.cat([t.reshape(-1) for w, b in zip(self.weights, self.biases) for t in (w, b)])

    def with_flat(self, theta: torch.Tensor) -> "MLP":
        """Same architecture with parameters read from ``theta`` (keeps the graph)."""
        ws, bs, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(theta[k : k + w.numel()].view(w.shape))
            k += w.numel()
            bs.append(theta[k : k + b.numel()])
            k += b.numel()
        out = MLP.__new__(MLP)
        out.weights, out.biases = ws, bs
        return out

    def detach(self) -> "MLP":
        return MLP([w.detach().clone() for w in self.weights], [b.detach().clone() for b in self.biases])

    def __call__(self, x):
        return forward(self, x)

    def crown(self, box: Interval) -> "AffineRelaxation":
        return crown(self, box)

    def to_json(self) -> dict:
        return {
            "layers": [
                {"W": w.detach().tolist(), "b": b.detach().tolist()}
                for w, b in zip(self.weights, self.biases)
            ]
        }

    @classmethod
    def from_json(cls, data: dict) -> "MLP":
        layers = data["layers"]
        return cls([l["W"] for l in layers], [l["b"] for l in layers])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MLP":
        return cls.from_json(json.loads(Path(path).read_text()))


def forward(net: MLP, x) -> torch.Tensor:
    x = as_tensor(x)
    if x.shape[-1] != net.in_dim:
        raise ValueError(f"input has dim {x.shape[-1]}, network expects {net.in_dim}")
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        x = x @ w.T + b
        if k < last:
            x = ad.relu(x)
    return x


@dataclass(frozen=True, eq=False)
class AffineRelaxation:
    """``C_lo x + d_lo <= pi(x) <= C_hi x + d_hi`` for every ``x`` in ``domain``."""

    C_lo: torch.Tensor
    C_hi: torch.Tensor
    d_lo: torch.Tensor
    d_hi: torch.Tensor
    domain: Interval


def _mv(a, x):
    return (a @ x.unsqueeze(-1)).squeeze(-1)


def _concretize(C_lo, d_lo, C_hi, d_hi, lo, hi):
    lp, ln = ad.pos_neg_split(C_lo)
    hp, hn = ad.pos_neg_split(C_hi)
    return _mv(lp, lo) + _mv(ln, hi) + d_lo, _mv(hn, lo) + _mv(hp, hi) + d_hi


def _relu_relaxation(l, u):
    """Slopes/intercepts of the ReLU relaxation given pre-activation bounds.

    Upper line ``s z + t``, lower line ``alpha z``.  Unstable neurons use the
    chord for the upper line and ``alpha = 1`` iff ``u >= -l``.
    """
    inactive = ad.branch(-u)
    active = ad.branch(l) & ~inactive
    unstable = ~(inactive | active)
    one, zero = torch.ones_like(u), torch.zeros_like(u)
    den = torch.where(unstable, u - l, one)
    s = torch.where(unstable, u / den, torch.where(active, one, zero))
    t = torch.where(unstable, -l * u / den, zero)
    wide_up = ad.branch(u + l)
    alpha = torch.where(active | (unstable & wide_up), one, zero)
    return alpha, s, t


def _backward(weights, biases, relax, k):
    """Linear bounds of layer ``k``'s pre-activation in terms of the input."""
    lam_hi = lam_lo = weights[k]
    bias_hi = bias_lo = biases[k]
    for j in range(k - 1, -1, -1):
        alpha, s, t = relax[j]
        s_, a_ = s.unsqueeze(-2), alpha.unsqueeze(-2)
        hp, hn = ad.pos_neg_split(lam_hi)
        lp, ln = ad.pos_neg_split(lam_lo)
        bias_hi = bias_hi + _mv(hp, t)
        bias_lo = bias_lo + _mv(ln, t)
        lam_hi = hp * s_ + hn * a_
        lam_lo = lp * a_ + ln * s_
        bias_hi = bias_hi + _mv(lam_hi, biases[j])
        bias_lo = bias_lo + _mv(lam_lo, biases[j])
        lam_hi = lam_hi @ weights[j]
        lam_lo = lam_lo @ weights[j]
    return lam_lo, bias_lo, lam_hi, bias_hi


def crown(net: MLP, box: Interval, input_map: torch.Tensor | None = None) -> AffineRelaxation:
    """CROWN affine bounds of ``net(input_map @ x)`` over the (batched) ``box``.

    Every hidden layer's pre-activation bounds come from a full backward pass
    through the relaxations of the layers below it.
    """
    weights = list(net.weights)
    if input_map is not None:
        weights[0] = weights[0] @ as_tensor(input_map)
    if box.shape[-1] != weights[0].shape[-1]:
        raise ValueError(f"box has dim {box.shape[-1]}, network expects {weights[0].shape[-1]}")
    lo, hi = box.lo, box.hi
    relax = []
    last = len(weights) - 1
    for k in range(last + 1):
        C_lo, d_lo, C_hi, d_hi = _backward(weights, net.biases, relax, k)
        if k == last:
            break
        l, u = _concretize(C_lo, d_lo, C_hi, d_hi, lo, hi)
        relax.append(_relu_relaxation(l, u))
    p, n = C_lo.shape[-2], C_lo.shape[-1]
    batch = torch.broadcast_shapes(lo.shape[:-1], C_lo.shape[:-2], d_lo.shape[:-1])
    C_lo = C_lo.expand(*batch, p, n)
    C_hi = C_hi.expand(*batch, p, n)
    d_lo = d_lo.expand(*batch, p)
    d_hi = d_hi.expand(*batch, p)
    return AffineRelaxation(C_lo, C_hi, d_lo, d_hi, box)


def interval_output(rel: AffineRelaxation, box: Interval | None = None) -> Interval:
    """Interval enclosure of the controller output over ``box``."""
    if box is None:
        box = rel.domain
    elif not box.subset_of(rel.domain, tol=1e-12):
        raise ValueError("box is not contained in the relaxation domain")
    lo, hi = _concretize(rel.C_lo, rel.d_lo, rel.C_hi, rel.d_hi, box.lo, box.hi)
    return Interval(lo, hi)


@dataclass(eq=False)
class SharedPolicy:
    """Applies one network to several linear observations of the state.

    ``maps`` has shape ``(p, k, n)``; output ``j`` is ``net(maps[j] @ x)``.
    """

    net: MLP
    maps: torch.Tensor

    def __post_init__(self):
        self.maps = as_tensor(self.maps)

    @property
    def in_dim(self) -> int:
        return self.maps.shape[-1]

    @property
    def out_dim(self) -> int:
        return self.maps.shape[0]

    def __call__(self, x):
        x = as_tensor(x)
        obs = torch.einsum("pkn,...n->...pk", self.maps, x)
        return forward(self.net, obs).squeeze(-1)

    def crown(self, box: Interval) -> AffineRelaxation:
        p = self.out_dim
        batched = Interval(box.lo.unsqueeze(-2), box.hi.unsqueeze(-2))
        rel = crown(self.net, batched, input_map=self.maps)
        # (..., p, 1, n) -> (..., p, n)
        return AffineRelaxation(
            rel.C_lo.squeeze(-2), rel.C_hi.squeeze(-2),
            rel.d_lo.squeeze(-1), rel.d_hi.squeeze(-1), box,
        )

    def with_net(self, net: MLP) -> "SharedPolicy":
        return SharedPolicy(net, self.maps)
