"""Contouring-control motion planner with a multimodal, sampling-refined warmstart."""

from .mpcc import CostWeights, LaneMarkers, MpccProblem, ObstacleForecast
from .path import ReferencePath, Waypoint, build_path
from .solver import SolveResult, SolveStatus, SolverConfig, solve
from .vehicle import (
    AugmentedInput,
    AugmentedState,
    ControlInput,
    EgoState,
    Trajectory,
    VehicleParams,
)

__all__ = [
    "AugmentedInput",
    "AugmentedState",
    "ControlInput",
    "CostWeights",
    "EgoState",
    "LaneMarkers",
    "MpccProblem",
    "ObstacleForecast",
    "ReferencePath",
    "SolveResult",
    "SolveStatus",
    "SolverConfig",
    "Trajectory",
    "VehicleParams",
    "Waypoint",
    "build_path",
    "solve",
]
