"""Conditional and unconditional master equations and the predictability sieve."""

from .errors import (
    ConfigError,
    DomainError,
    ModelError,
    NumericError,
    ParameterError,
    PointerSieveError,
    StepSizeError,
    TruncationError,
)
from .models import AtomParams, QbmParams, SubspaceState, atom_model, b_ensemble, qbm_model, subspace_reduce
from .qmatrix import BlochVector, DensityMatrix, FockBasis, coherent_state, fidelity_to, number_state, purity
from .sieve import SieveReport, fidelity_loss_rate, purity_loss_rate_closed, purity_loss_rate_mc, sieve_scan_bloch, sieve_scan_coherent
from .unravel import MeasurementScheme, Model, Trajectory, ensemble_mean, run_trajectory, solve_ume

__version__ = "0.1.0"
