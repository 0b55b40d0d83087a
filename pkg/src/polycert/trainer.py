"""Certified training of a controller and lifting parameter eta."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import torch

from . import autodiff as ad
from .autodiff import DTYPE, AdamConfig, AdamState, adam_step, as_tensor
from .dynamics import DisturbanceSpec, OpenLoopSystem
from .embedding import Certificate, ClosedLoopInclusion
from .interval import Interval, se_geq_zero
from .lifted import Lifting, certify_polytope, lifted_embedding_field, refined_faces
from .neural import MLP


class NotCertified(RuntimeError):
    def __init__(self, report: "TrainReport"):
        self.report = report
        super().__init__(
            f"no certificate after {report.iterations} iterations "
            f"(best margin {report.best_margin:.6g} at iteration {report.best_iteration})"
        )


@dataclass(frozen=True)
class ImitationSpec:
    """Imitation data loss against ``u = K x`` on uniform samples from a box."""

    K: list
    box_lo: list
    box_hi: list
    batch_size: int = 1000


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    epsilon: float = 0.02
    max_iters: int = 20000
    adam: AdamConfig = field(default_factory=AdamConfig)
    imitation: ImitationSpec | None = None
    train_eta: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(eq=False)
class TrainProblem:
    """Everything the loss depends on apart from the trainable parameters.

    ``make_policy`` turns an :class:`MLP` into the closed-loop policy (identity
    for single-controller systems, a shared wrapper for the platoon).
    """

    sys: OpenLoopSystem
    net: MLP
    lifting: Lifting
    y_lo: torch.Tensor
    y_hi: torch.Tensor
    disturbance: DisturbanceSpec
    make_policy: Callable = lambda net: net
    corner: object = "lower"

    def __post_init__(self):
        self.y_lo, self.y_hi = as_tensor(self.y_lo), as_tensor(self.y_hi)
        self.faces = refined_faces(self.lifting, self.ybox)
        self.n_net = self.net.num_params()

    @property
    def ybox(self) -> Interval:
        return Interval(self.y_lo, self.y_hi)

    def initial_theta(self) -> torch.Tensor:
        return torch.cat([self.net.flat().detach(), self.lifting.eta.detach().reshape(-1)]).clone()

    def unpack(self, theta):
        net = self.net.with_flat(theta[: self.n_net])
        eta = theta[self.n_net :].view(self.lifting.eta.shape)
        return net, self.lifting.with_eta(eta)

    def inclusion(self, net: MLP) -> ClosedLoopInclusion:
        return ClosedLoopInclusion(self.sys, self.make_policy(net), self.disturbance, self.corner)

    def field(self, theta):
        net, lifting = self.unpack(theta)
        return lifted_embedding_field(lifting, self.inclusion(net), self.ybox, faces=self.faces)

    def certify(self, theta) -> Certificate:
        net, lifting = self.unpack(theta.detach())
        return certify_polytope(lifting, self.inclusion(net), self.ybox)


def invariance_loss(lo, hi, epsilon: float):
    """``sum relu(hi + eps) + sum relu(-lo + eps)``."""
    return ad.relu(as_tensor(hi) + epsilon).sum() + ad.relu(-as_tensor(lo) + epsilon).sum()


def imitation_loss(net, K, samples):
    """Mean over the batch of ``|net(x) - K x|^2``."""
    x = as_tensor(samples)
    err = net(x) - x @ as_tensor(K).T
    return (err**2).sum(-1).mean()


def total_loss(problem: TrainProblem, cfg: TrainConfig, theta, samples=None):
    """``(L, L_S, L_data, (lo, hi))`` at ``theta``."""
    lo, hi = problem.field(theta)
    ls = invariance_loss(lo, hi, cfg.epsilon)
    if cfg.imitation is not None and samples is not None:
        net, _ = problem.unpack(theta)
        ld = imitation_loss(net, cfg.imitation.K, samples)
    else:
        ld = torch.zeros((), dtype=DTYPE)
    return ld + cfg.lam * ls, ls, ld, (lo, hi)


@dataclass
class TrainReport:
    certified: bool
    iterations: int
    steps: int
    certificate: Certificate
    best_margin: float
    best_iteration: int
    loss_trace: list
    wall_time: float = field(default=0.0, compare=False)
    net: MLP | None = field(default=None, compare=False, repr=False)
    eta: torch.Tensor | None = field(default=None, compare=False, repr=False)

    def to_json(self) -> dict:
        return {
            "certified": self.certified,
            "iterations": self.iterations,
            "steps": self.steps,
            "best_margin": self.best_margin,
            "best_iteration": self.best_iteration,
            "certificate": self.certificate.to_json(),
            "eta": None if self.eta is None else self.eta.tolist(),
        }

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "invariance_loss", "data_loss", "margin"])
        for row in self.loss_trace:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def _sampler(cfg: TrainConfig):
    if cfg.imitation is None:
        return lambda: None
    gen = torch.Generator().manual_seed(cfg.seed)
    lo, hi = as_tensor(cfg.imitation.box_lo), as_tensor(cfg.imitation.box_hi)
    size = cfg.imitation.batch_size

    def draw():
        return lo + (hi - lo) * torch.rand(size, lo.numel(), dtype=DTYPE, generator=gen)

    return draw


def train(problem: TrainProblem, cfg: TrainConfig, log: Callable | None = None) -> TrainReport:
    """Gradient steps on ``L_data + lam * L_S`` until the lifted field is SE-positive.

    Each iteration evaluates the field on tracked parameters.  If it is
    SE-positive, an independent untracked certificate is computed and training
    stops when that also passes; otherwise one ADAM step is taken.  Raises
    :class:`NotCertified` after ``cfg.max_iters`` iterations.
    """
    start = time.perf_counter()
    theta = problem.initial_theta()
    if not cfg.train_eta:
        frozen_eta = theta[problem.n_net :].clone()
    state = AdamState.zeros_like(theta)
    draw = _sampler(cfg)
    trace, best = [], (-math.inf, 0)
    cert = None
    for it in range(1, cfg.max_iters + 1):
        samples = draw()
        th = theta.clone().requires_grad_(True)
        loss, ls, ld, (lo, hi) = total_loss(problem, cfg, th, samples)
        lo_d, hi_d = lo.detach(), hi.detach()
        margin = float(torch.minimum(lo_d.min(), (-hi_d).min()))
        trace.append((it, float(loss.detach()), float(ls.detach()), float(ld.detach()), margin))
        if margin > best[0]:
            best = (margin, it)
        if log is not None:
            log(it, float(loss.detach()), float(ls.detach()), margin)
        if float(ls.detach()) == 0.0 and not se_geq_zero(lo_d, hi_d):
            raise AssertionError("zero invariance loss without a positive field")
        if se_geq_zero(lo_d, hi_d):
            cert = problem.certify(theta)
            if cert.certified:
                return _report(problem, theta, True, it, it - 1, cert, best, trace, start)
        if it == cfg.max_iters:
            break
        g = _grad_of(loss, th)
        theta, state = adam_step(theta, g, state, cfg.adam.lr, cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps)
        if not cfg.train_eta:
            theta[problem.n_net :] = frozen_eta
    cert = problem.certify(theta)
    report = _report(problem, theta, False, cfg.max_iters, cfg.max_iters - 1, cert, best, trace, start)
    raise NotCertified(report)


def _grad_of(loss, th):
    (g,) = torch.autograd.grad(loss, th)
    if not torch.isfinite(g).all():
        raise ad.NonFiniteError("non-finite gradient")
    return g.detach()


def _report(problem, theta, certified, it, steps, cert, best, trace, start):
    net, lifting = problem.unpack(theta.detach())
    return TrainReport(
        certified=certified,
        iterations=it,
        steps=steps,
        certificate=cert,
        best_margin=best[0],
        best_iteration=best[1],
        loss_trace=trace,
        wall_time=time.perf_counter() - start,
        net=net.detach(),
        eta=lifting.eta.detach().clone(),
    )
