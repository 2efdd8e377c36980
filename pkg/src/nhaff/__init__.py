"""Simulation and conservation analysis of nonholonomic systems with
affine velocity constraints, one chart at a time."""

from .expr import DomainError, EvalError, Expr, ExprError, ParseError, parse
from .linalg import RankDropError
from .model import (
    BUILTIN_NAMES,
    EvaluatedFrame,
    GuardViolation,
    ModelError,
    ModelSpec,
    State,
    builtin,
    evaluate_frame,
    load_model,
    model_from_dict,
    model_to_dict,
    project_velocity,
    validate,
)
from .reaction import (
    ConstraintResidualError,
    ReactionSample,
    ell,
    kernel_basis,
    multiplier,
    projector_D,
    projector_Dcirc,
    reaction_force,
    sigma,
    xi,
)
from .dynamics import IntegrateOpts, Trajectory, acceleration, energy, integrate, momentum
from .analysis import (
    ChartMap,
    DriftReport,
    FiberReport,
    GaugeVerdict,
    SectionVerdict,
    VectorFieldSpec,
    builtin_fields,
    covariance_check,
    energy_conservation_test,
    gauge_symmetry_test,
    generator_projection,
    grid_box,
    is_section_of_rad,
    momentum_drift,
    rad_fiber,
    transform_model,
    xi_field,
)

__version__ = "0.1.0"
