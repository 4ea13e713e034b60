"""Hitting times of transient one-dimensional random walks in i.i.d. random environments:
exact quenched formulas, fast valley-crossing simulation and stable limit laws."""
from .env_model import EnvironmentModel, model_from_config, solve_kappa, speed
from .errors import ValleyWalkError
from .experiments import ExperimentConfig, RunRecord, load_config, run
from .kernels import BACKEND
from .potential import ExcursionStream, build_potential, sample_excursions, sample_z
from .quenched import (WindowEnvironment, build_h_transforms, consistency_check, exit_probability,
                       expected_hitting_time, failure_moments, hitting_time_variance)
from .stable_limits import StableLaw, cf_distance, compute_constants, stable_sample, limit_prediction
from .valleys import critical_height, decompose, valley_width
from .walker import (LazyEnvironment, crossing_time_batch, simulate_hitting_time, simulate_tau_n,
                     simulate_valley_crossing_direct, simulate_valley_crossing_fast)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "EnvironmentModel", "ExcursionStream", "ExperimentConfig", "LazyEnvironment", "RunRecord",
    "StableLaw", "ValleyWalkError", "WindowEnvironment", "build_h_transforms", "build_potential",
    "cf_distance", "compute_constants", "consistency_check", "critical_height", "crossing_time_batch",
    "decompose", "exit_probability", "expected_hitting_time", "failure_moments", "hitting_time_variance",
    "load_config", "model_from_config", "run", "sample_excursions", "sample_z", "simulate_hitting_time",
    "simulate_tau_n", "simulate_valley_crossing_direct", "simulate_valley_crossing_fast", "solve_kappa",
    "speed", "stable_sample", "limit_prediction", "valley_width",
]
