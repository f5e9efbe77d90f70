"""Multi-fidelity GP-UCB hotspot search for an altitude-varying aerial camera."""

from .field import FieldConfig, ScalarField, evaluate, generate_random_field, global_optimum
from .gp import ExactGP, Hyperparams, IncrementalGP, SparseGP, TrainingSet, posterior, sparse_posterior
from .planner import DEFAULT_BETAS, MFGPUCB, BetaSchedule, PlannerConfig, run_episode
from .sensing import ArmGrid, build_arm_grid, make_levels

__version__ = "0.1.0"
