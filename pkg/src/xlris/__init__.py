"""Two-stage cascaded channel estimation for near-field XL-RIS-aided multi-user MIMO."""
from .channel import SystemConfig, build_angular_dictionary, build_polar_dictionary, sample_scenario
from .harness import ExperimentSpec, load_config, preset, run_experiment, save_config
from .pilots import generate_training, synthesize_observations
from .pipeline import EstimatorOptions, build_dictionaries, estimate

__version__ = "0.1.0"

__all__ = [
    "EstimatorOptions", "ExperimentSpec", "SystemConfig", "build_angular_dictionary",
    "build_dictionaries", "build_polar_dictionary", "estimate", "generate_training",
    "load_config", "preset", "run_experiment", "sample_scenario", "save_config",
    "synthesize_observations",
]
