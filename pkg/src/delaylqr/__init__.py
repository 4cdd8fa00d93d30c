"""Sub-optimal LQ regulators for input-delay plants from noisy input-state data."""

from .plant import (
    CostWeights, DelayPlant, Trajectory, UnstableClosedLoopError, SimulationError, cost_matrix,
    evaluate_cost, lift_augmented, simulate, stack_state,
)
from .data import (
    DataSet, NoiseModel, PsiForm, build_data, compute_psi, is_consistent, make_sigma_phi,
    min_consistent_sigma, preflight, sample_consistent_models,
)
from .slemma import QmiCertificate, QmiPair, QuadraticSet, check_certificate, find_certificate
from .synthesis import (
    SynthesisOptions, SynthesisResult, feasible_interval, solve_data_driven, solve_model_based,
    solve_stabilization_only, sweep_sigma,
)
from ._sdp import SolverOptions

__version__ = "0.1.0"
