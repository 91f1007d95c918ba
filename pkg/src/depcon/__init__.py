"""Multiscale parameter estimation for ODEs driven by discontinuous inputs."""
from .errors import (ConfigError, ContractError, DivergenceError, DomainError,
                     InitializationError)
from .harness import (DataConfig, ExperimentConfig, default_config, load_config, mape,
                      run_experiment)
from .training import DepconConfig, TrialResult, estimate, train

__version__ = "0.1.0"
