"""Deterministic federated-learning simulator.

Server rounds, client local training, weighted aggregation (plain averaging,
server-optimizer, and normalized-averaging variants), non-IID partitioners,
and a binary wire protocol with in-process and TCP carriers. Everything is
seeded: one master seed reproduces a run byte for byte.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, parse_config
from .server import run_training

__all__ = ["ExperimentConfig", "load_config", "parse_config", "run_training",
           "__version__"]
