"""Self-stabilizing regular register under mobile Byzantine agents, with a
deterministic simulator and an offline trace checker."""

from .checker import Verdict, check_trace
from .scenario import Scenario, ScenarioError
from .sim import Simulation, simulate

__all__ = ["Scenario", "ScenarioError", "Simulation", "Verdict", "check_trace", "simulate"]
__version__ = "0.1.0"
