"""Deterministic discrete-event simulation of a full deployment."""
from .net import DropRule, InvariantViolation, NetModel, Network, Partition
from .run import (RunReport, Simulation, censorship_bound, check_agreement,
                  check_censorship_bound, check_liveness, check_no_dup, run)
from .scenario import Burst, ClientPlan, FaultSpec, Scenario, ScenarioError, load, loads

__all__ = ["Burst", "ClientPlan", "DropRule", "FaultSpec", "InvariantViolation", "NetModel",
           "Network", "Partition", "RunReport", "Scenario", "ScenarioError", "Simulation",
           "censorship_bound", "check_agreement", "check_censorship_bound", "check_liveness",
           "check_no_dup", "load", "loads", "run"]
