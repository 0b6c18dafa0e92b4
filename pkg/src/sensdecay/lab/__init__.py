from .config import ExperimentConfig, load_config
from .experiment import DecayFit, ExperimentResult, fit_decay, run_experiment, sweep
from ..model import discrete_l2

__all__ = ["ExperimentConfig", "load_config", "DecayFit", "ExperimentResult", "fit_decay",
           "run_experiment", "sweep", "discrete_l2"]
