"""Numerical laboratory for Landau damping in the Vlasov equation on the torus.

Modules
-------
model     equilibria, interactions, phase-space grids and states
linstab   dispersion functional, roots and stability conditions
volterra  linear response of single modes
norms     analytic and hybrid norms
sim       split-step nonlinear solver, diagnostics and echoes
newton    Newton iteration on linearized problems
cli       experiment runner (``vdlab``)
"""
from ._kernels import BACKEND
from .errors import (
    BlowupError,
    DivergenceError,
    InsufficientData,
    InvalidArgument,
    NumericalFailure,
    VdlabError,
)
from .linstab import (
    DispersionRoot,
    StabilityReport,
    condition_a,
    condition_b,
    condL_scan,
    curlyL,
    dispersion_roots,
    laplace_kernel,
)
from .model import (
    ATTRACTIVE,
    REPULSIVE,
    DistributionState,
    Interaction,
    PhaseSpaceGrid,
    Perturbation,
    VelocityProfile,
    equilibrium_state,
    force_field,
    sample_initial,
)
from .newton import NewtonResult, linearized_step, newton_solve
from .norms import NormIndices, algebra_norm_F, hybrid_norm_Z, norm_lambda_mu_beta
from .sim import (
    Kick,
    TrajectoryRecord,
    characteristics,
    diagnostics,
    echo_experiment,
    echo_kernel,
    predict_echo_time,
    run,
    scattering_deviation,
    step,
)
from .volterra import DecayFit, ModeSeries, fit_decay, kernel_K0, solve_mode

__version__ = "0.1.0"

__all__ = [
    "ATTRACTIVE", "BACKEND", "BlowupError", "DecayFit", "DispersionRoot", "DistributionState",
    "DivergenceError", "InsufficientData", "Interaction", "InvalidArgument", "Kick", "ModeSeries",
    "NewtonResult", "NormIndices", "NumericalFailure", "PhaseSpaceGrid", "Perturbation", "REPULSIVE",
    "StabilityReport", "TrajectoryRecord", "VdlabError", "VelocityProfile", "algebra_norm_F",
    "characteristics", "condL_scan", "condition_a", "condition_b", "curlyL", "diagnostics",
    "dispersion_roots", "echo_experiment", "echo_kernel", "equilibrium_state", "fit_decay",
    "force_field", "hybrid_norm_Z", "kernel_K0", "laplace_kernel", "linearized_step", "newton_solve",
    "norm_lambda_mu_beta", "predict_echo_time", "run", "sample_initial", "scattering_deviation",
    "solve_mode", "step",
]
