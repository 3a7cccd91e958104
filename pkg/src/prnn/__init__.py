"""Particle RNN: recurrent sequence density models with verified objectives.

The package implements a small recurrent generative model over sequences,
four interchangeable training objectives (direct log-likelihood, two
particle-averaged forms, and a noisy lower-bound estimator), exact
enumeration oracles for checking the bound inequalities, BPTT gradients with
a finite-difference oracle, and a deterministic training loop. The `prnn`
command line exposes data generation, training, and the verification suites.
"""

from .data import BimodalSpec, Dataset, analytic_optimal_loglik, gen_bimodal
from .estimator import ParticleRNN
from .exceptions import (
    BudgetExceeded,
    CheckpointError,
    ConfigError,
    ContractViolation,
    InputError,
    NumericsError,
)
from .grad import backprop, finite_diff, grad_compare
from .model import (
    CATEGORICAL,
    GAUSSIAN,
    HiddenTrajectory,
    ModelConfig,
    Parameters,
    VisibleTrajectory,
)
from .numkit import RngState
from .objectives import (
    OBJECTIVE_IDS,
    ObjectiveReport,
    loglik_deterministic,
    noisy_elbo_estimate,
    objective_gap_report,
    objective_value,
    sequence_particle_bound,
    step_particle_objective,
    variational_objective_deterministic,
)
from .oracle import (
    EnumerationBudget,
    NoiseGrid,
    enumerate_exact_elbo,
    enumerate_exact_loglik,
    jensen_gap_report,
    mixture_exact_loglik,
)
from .trainer import (
    Checkpoint,
    TrainConfig,
    evaluate,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sigma_sweep,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BimodalSpec",
    "BudgetExceeded",
    "CATEGORICAL",
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "ContractViolation",
    "Dataset",
    "EnumerationBudget",
    "GAUSSIAN",
    "HiddenTrajectory",
    "InputError",
    "ModelConfig",
    "NoiseGrid",
    "NumericsError",
    "OBJECTIVE_IDS",
    "ObjectiveReport",
    "Parameters",
    "ParticleRNN",
    "RngState",
    "TrainConfig",
    "VisibleTrajectory",
    "analytic_optimal_loglik",
    "backprop",
    "enumerate_exact_elbo",
    "enumerate_exact_loglik",
    "evaluate",
    "finite_diff",
    "gen_bimodal",
    "grad_compare",
    "init_params",
    "jensen_gap_report",
    "load_checkpoint",
    "loglik_deterministic",
    "mixture_exact_loglik",
    "noisy_elbo_estimate",
    "objective_gap_report",
    "objective_value",
    "save_checkpoint",
    "sequence_particle_bound",
    "sigma_sweep",
    "step_particle_objective",
    "train",
    "variational_objective_deterministic",
]
