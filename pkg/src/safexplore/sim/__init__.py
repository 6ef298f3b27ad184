"""Scenario files, closed-loop simulation, logging and export."""
from .config import SHIPPED, ScenarioConfig, ScenarioError, load_scenario, parse_scenario, shipped_scenario
from .log import LogFormatError, StepLog, read_log, write_log
from .runner import (
    ComparisonRow,
    RunAborted,
    compare_modes,
    export_plot_data,
    load_run,
    run_closed_loop,
    scenario_document,
)

__all__ = [
    "SHIPPED", "ScenarioConfig", "ScenarioError", "load_scenario", "parse_scenario", "shipped_scenario",
    "LogFormatError", "StepLog", "read_log", "write_log", "ComparisonRow", "RunAborted", "compare_modes",
    "export_plot_data", "load_run", "run_closed_loop", "scenario_document",
]
