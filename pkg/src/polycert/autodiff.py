"""Reverse-mode differentiation over the scalar contract.

The scalar contract is a float64 ``torch.Tensor``.  Untracked evaluation uses
plain tensors; tracked evaluation uses leaves with ``requires_grad=True`` and
the graph torch records while the same code runs.  The helpers below pin the
subgradient conventions used throughout the package:

* ``relu'(0) = 0``
* ``minimum``/``maximum`` send the gradient to the first argument on exact ties
* ``|x|'(0) = 0``

Branch predicates (CROWN stability masks, pos/neg splits, interval endpoint selections) are
routed through :func:`branch` so that a :func:`tie_monitor` can report how close
an evaluation came to a kink.  Gradient checks use this to reject points where
finite differences would straddle a branch switch.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import torch

DTYPE = torch.float64

_monitors: list["TieMonitor"] = []


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.as_tensor(x, dtype=DTYPE)


@dataclass
class TieMonitor:
    """Smallest absolute branch argument seen while active."""

    margin: float = math.inf
    grad_only: bool = False

    def record(self, arg: torch.Tensor) -> None:
        # a tie between constants cannot put a kink in the parameters, and an
        # exact zero comes from comparing an expression with itself (degenerate
        # interval), where both branches carry the same gradient
        if self.grad_only:
            if not arg.requires_grad:
                return
            arg = arg.detach()
            arg = arg[arg != 0]
        if arg.numel():
            self.margin = min(self.margin, float(arg.detach().abs().min()))


@contextlib.contextmanager
def tie_monitor(grad_only: bool = False) -> Iterator[TieMonitor]:
    """Track the smallest branch argument; ``grad_only`` ignores structural ties."""
    mon = TieMonitor(grad_only=grad_only)
    _monitors.append(mon)
    try:
        yield mon
    finally:
        _monitors.remove(mon)


def branch(arg: torch.Tensor) -> torch.Tensor:
    """Return the detached mask ``arg >= 0``; records ``arg`` for tie monitors."""
    for mon in _monitors:
        mon.record(arg)
    return arg.detach() >= 0


def relu(x: torch.Tensor) -> torch.Tensor:
    if _monitors:
        branch(x)
    return torch.relu(x)


def minimum(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a, b = torch.broadcast_tensors(as_tensor(a), as_tensor(b))
    return torch.where(branch(b - a), a, b)


def maximum(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a, b = torch.broadcast_tensors(as_tensor(a), as_tensor(b))
    return torch.where(branch(a - b), a, b)


def abs(x: torch.Tensor) -> torch.Tensor:  # noqa: A001
    if _monitors:
        branch(x)
    return torch.abs(x)


def pos_neg_split(a: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """``(A+, A-)`` with ``A+ = max(A, 0)`` and ``A- = A - A+``."""
    a = as_tensor(a)
    ap = relu(a)
    return ap, a - ap


class NonFiniteError(FloatingPointError):
    pass


def grad(f: Callable[[torch.Tensor], torch.Tensor], theta) -> torch.Tensor:
    """Gradient of the scalar function ``f`` at ``theta``.

    Raises :class:`NonFiniteError` when the forward value is NaN or infinite.
    """
    theta = as_tensor(theta).detach().clone().requires_grad_(True)
    out = f(theta)
    if not torch.isfinite(out).all():
        raise NonFiniteError(f"non-finite forward value {out.item()}")
    (g,) = torch.autograd.grad(out, theta, allow_unused=True)
    if g is None:
        g = torch.zeros_like(theta)
    return g.detach()


@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    t: int = 0

    @classmethod
    def zeros_like(cls, theta: torch.Tensor) -> "AdamState":
        return cls(torch.zeros_like(theta), torch.zeros_like(theta), 0)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    theta: torch.Tensor,
    g: torch.Tensor,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[torch.Tensor, AdamState]:
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta = theta - lr * m_hat / (torch.sqrt(v_hat) + eps)
    return theta, AdamState(m, v, t)
