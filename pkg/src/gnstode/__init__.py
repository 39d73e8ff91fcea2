"""Learned particle simulation with coupled spatial and temporal graph neural ODEs."""
from .autodiff import AdamState, Tape, Tensor, adam_step, backward, grad_check
from .evaluation import EvalReport, constant_velocity_baseline, energy_error, evaluate, rmse, rollout
from .graph import SpatialGraph, knn_graph
from .model import ModelConfig, ModelParameters, NormStats, init_params, predict_step, zero_params
from .ode import OdeConfig, integrate
from .physics import (
    ParticleState,
    System,
    SystemSpec,
    Trajectory,
    acceleration,
    downsample,
    generate_dataset,
    hamiltonian,
    leapfrog_step,
    sample_initial,
)
from .training import TrainingConfig, TrainRecord, make_pairs, step_loss, train

__version__ = "0.1.0"
