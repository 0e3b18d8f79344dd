"""Scenario configuration, closed-loop orchestration, export, CLI."""

from .controllers import CurvyRoad, LtiRegulator, QuadrotorController, StraightRoad, VehicleLaneKeeping
from .export import csv_header, export_csv, export_plots, read_csv
from .runner import (
    ClosedLoop,
    RunRecord,
    RunResult,
    RunSummary,
    SuccessReport,
    evaluate_success,
    make_loop,
    rollout_frozen,
    run_scenario,
)
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario

__all__ = [
    "CurvyRoad",
    "LtiRegulator",
    "QuadrotorController",
    "StraightRoad",
    "VehicleLaneKeeping",
    "csv_header",
    "export_csv",
    "export_plots",
    "read_csv",
    "ClosedLoop",
    "RunRecord",
    "RunResult",
    "RunSummary",
    "SuccessReport",
    "evaluate_success",
    "make_loop",
    "rollout_frozen",
    "run_scenario",
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "parse_scenario",
]
