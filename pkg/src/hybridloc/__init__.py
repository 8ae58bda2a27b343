"""Hybrid range/bearing network localization by a ball-constrained convex relaxation."""
from .certify import CertificateReport, certify, localization_error, residual_E1, residual_E2
from .cost import WeightMode, ml_cost, ml_gradient, relaxed_cost, relaxed_gradient
from .gen import GenConfig, make_instance
from .harness import McConfig, McSummary, run_mc
from .model import (
    AnchorMeasurement, EdgeMeasurement, GroundTruth, ProblemInstance, parse, serialize,
    validate_instance,
)
from .solver import Solution, SolverConfig, refine_nonconvex, solve_alternating, solve_convex

__version__ = "0.1.0"
