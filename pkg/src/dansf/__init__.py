"""Simulator for distributed adaptive node-specific signal fusion over sensor networks."""

from .engine import EngineConfig, Simulation, run
from .experiment import ExperimentConfig, run_experiment, sweep_topologies
from .network import NetworkGraph, generate_topology, prune_to_tree
from .problems import make_coupled_family, verify_coupling
from .signals import ChannelLayout, MixtureModel, random_mixture

__all__ = [
    "ChannelLayout",
    "EngineConfig",
    "ExperimentConfig",
    "MixtureModel",
    "NetworkGraph",
    "Simulation",
    "generate_topology",
    "make_coupled_family",
    "prune_to_tree",
    "random_mixture",
    "run",
    "run_experiment",
    "sweep_topologies",
    "verify_coupling",
]
