"""Planar ballbot with a leaning rider: dynamics, LQR gains, HACS/iHACS controllers and a scenario runner."""
from .dynamics import InteractionWrench, PlantParams, State
from .gains import RiderParams, personalize_gains
from .scenario import Scenario, load
from .sim import SimConfig, TrajectoryLog, run_scenario

__all__ = [
    "InteractionWrench",
    "PlantParams",
    "RiderParams",
    "Scenario",
    "SimConfig",
    "State",
    "TrajectoryLog",
    "load",
    "personalize_gains",
    "run_scenario",
]
