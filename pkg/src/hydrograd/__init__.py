"""Differentiable process-based rainfall-runoff modeling toolkit.

Reverse-mode scalar autodiff (tape), a differentiable HBV bucket model,
a small MLP, hybrid couplings (parameter regionalization, flux-law
replacement, direct calibration), gradient-descent training, and a
synthetic-basin experiment harness with a CLI.
"""

from .tape import Tape, Var, FLOATS, DomainError
from .gradcheck import grad_check, GradCheckReport
from .mlp import MLPConfig, MLPWeights, init as mlp_init
from .hbv import (
    PARAM_BOUNDS,
    PARAM_NAMES,
    Forcings,
    ForcingRecord,
    FluxRecord,
    HBVParameters,
    HBVState,
    SimulationOutput,
    default_initial_state,
    route,
    simulate,
    step,
    water_balance,
)
from .metrics import MetricsRow, compute_metrics, nse
from .coupling import (
    CouplingSpec,
    HybridModel,
    derive_parameters,
    direct_calibrate_params,
    extract_learned_relation,
    recharge_override,
)
from .training import LossSpec, OptimizerConfig, TrainReport, adam_step, train
from .dataio import Basin, BasinAttributes, BasinDataset, DataError, load_dataset, save_dataset
from .synthetic import SyntheticSpec, generate_synthetic, truth_parameters
from .experiment import ExperimentConfig, parse_config, run_experiment

__version__ = "0.1.0"
