"""Sample-average ensemble optimal control of control-affine systems.

The package solves ``min (1/k) sum_i g(x(T, w_i), w_i)`` over a single
open-loop control shared by an ensemble of parameterized systems, and
analyzes the resulting extremals (switching functions, bang and singular
arcs, singular controls from nested Lie brackets).
"""

from __future__ import annotations

__version__ = "0.1.0"

from .dynamics import ControlAffineSystem, VectorField, bracket, dynamics_eval, lie_bracket
from .integrate import ControlGrid, TimeGrid, integrate_adjoint, integrate_forward
from .optimize import SolveOptions, solve, solve_problem, sweep, sweep_problem
from .params import FiniteSet, Product, TruncatedNormal, Uniform, sample_parameters
from .problems import get_problem

__all__ = [
    "ControlAffineSystem",
    "ControlGrid",
    "FiniteSet",
    "Product",
    "SolveOptions",
    "TimeGrid",
    "TruncatedNormal",
    "Uniform",
    "VectorField",
    "bracket",
    "dynamics_eval",
    "get_problem",
    "integrate_adjoint",
    "integrate_forward",
    "lie_bracket",
    "sample_parameters",
    "solve",
    "solve_problem",
    "sweep",
    "sweep_problem",
]
