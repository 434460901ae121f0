"""Variance-reduced stochastic gradient methods built from Jacobian sketches."""

__version__ = "0.1.0"

from .problem import FiniteSumProblem, reference_solution, smoothness_profile, subset_smoothness
from .sampling import CustomSampling, FullBatch, SingleElement, TauNice, TauPartition, make_rng
from .sketch import SketchRule, WeightMatrix
from .solver import SolverConfig, run
from .presets import build_method

__all__ = [
    "FiniteSumProblem",
    "reference_solution",
    "smoothness_profile",
    "subset_smoothness",
    "CustomSampling",
    "FullBatch",
    "SingleElement",
    "TauNice",
    "TauPartition",
    "make_rng",
    "SketchRule",
    "WeightMatrix",
    "SolverConfig",
    "run",
    "build_method",
]
