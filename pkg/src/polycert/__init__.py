"""Certified polytope invariance for neural-network-controlled systems."""

from .embedding import Certificate, ClosedLoopInclusion, check_box_invariant, embedding_field
from .interval import EmptyIntersection, Interval
from .lifted import Lifting, Polytope, certify_polytope, lifted_embedding_field, refine
from .neural import MLP, crown
from .trainer import NotCertified, TrainConfig, TrainProblem, train

__version__ = "0.1.0"

__all__ = [
    "Certificate", "ClosedLoopInclusion", "EmptyIntersection", "Interval", "Lifting", "MLP",
    "NotCertified", "Polytope", "TrainConfig", "TrainProblem", "certify_polytope",
    "check_box_invariant", "crown", "embedding_field", "lifted_embedding_field", "refine", "train",
]
