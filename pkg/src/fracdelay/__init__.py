"""Caputo-fractional delay differential equations with exponential weight.

Solves D^alpha [y(t) e^{beta t}] = f(t, y_t) e^{beta t} through its Volterra
integral form, and measures stability of solution ensembles.
"""
from .analysis import (
    EnvelopeParams,
    LipschitzProbe,
    StabilityReport,
    check_growth_bound,
    contraction_bound,
    estimate_lipschitz,
    fit_gronwall_K,
    gronwall_envelope,
    stability_harness,
)
from .model import (
    FdeProblem,
    History,
    RhsField,
    SegmentView,
    Trajectory,
    ValidationError,
    example_4_1_rhs,
    example_4_2_rhs,
    history_from_name,
    make_problem,
    segment_at,
)
from .quad import kernel_decay_check, product_trapezoid_weights, weighted_convolution
from .solver import (
    SolveResult,
    SolverConfig,
    SolverError,
    residual,
    solve,
    solve_picard,
    solve_predictor_corrector,
)
from .specfun import gamma, lower_incomplete_gamma

__version__ = "0.1.0"
