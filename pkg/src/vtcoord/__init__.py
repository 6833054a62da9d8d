"""Distributed MPC time coordination of agents on pre-assigned paths."""
from .analysis import certify, feasibility_margins, h_max, propagate_closed_loop
from .graph import Topology, build_topology, spectral_decomposition
from .mpc import Consensus, MpcConfig, OrderedSeparation, Race
from .scenario import load_scenario, scenario_from_dict
from .sim import Scenario, SimTrace, consensus_time, corridor_metrics, run
from .solver import gains, solve_local, solve_qp

__version__ = "0.1.0"

__all__ = [
    "Consensus", "MpcConfig", "OrderedSeparation", "Race", "Scenario", "SimTrace", "Topology",
    "build_topology", "certify", "consensus_time", "corridor_metrics", "feasibility_margins", "gains",
    "h_max", "load_scenario", "propagate_closed_loop", "run", "scenario_from_dict", "solve_local",
    "solve_qp", "spectral_decomposition",
]
