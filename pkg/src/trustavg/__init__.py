"""Average consensus that can exclude untrustworthy nodes after the fact."""

from .adversary import Behavior, behavior_from_dict
from .engine import Scenario, ScenarioError, Trace, World, convergence_metrics, run_scenario, trustworthy_average
from .graph import Graph, build_graph, validate_assumptions
from .io import emit_outputs, load_scenario, parse_scenario, serialize_scenario
from .trust import TrustSchedule

__all__ = [
    "Behavior",
    "Graph",
    "Scenario",
    "ScenarioError",
    "Trace",
    "TrustSchedule",
    "World",
    "behavior_from_dict",
    "build_graph",
    "convergence_metrics",
    "emit_outputs",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
    "serialize_scenario",
    "trustworthy_average",
    "validate_assumptions",
]
