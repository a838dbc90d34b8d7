"""Scenario ingestion, the simulation loop, log formats and analysis tools."""
from .analysis import (
    Grid, energy_expenditure, hand_target_distance, head_pose, power_series, reach_envelope,
    vision_cone_test,
)
from .log import Row, TrajectoryLog, export_log, import_log
from .run import run, write_outputs
from .scenario import ScenarioConfig, bundled_scenarios, build_world, parse_scenario

__all__ = [
    "Grid", "Row", "ScenarioConfig", "TrajectoryLog", "build_world", "bundled_scenarios",
    "energy_expenditure", "export_log", "hand_target_distance", "head_pose", "import_log",
    "parse_scenario", "power_series", "reach_envelope", "run", "vision_cone_test", "write_outputs",
]
