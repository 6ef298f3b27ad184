"""Transitory-setpoint predicates and offline verification of run logs."""
from .transitory import (
    TransitoryReport,
    Witness,
    delta_ladder,
    is_transitory_def1,
    is_transitory_def2,
    steady_setpoints,
)
from .verify import CHECKS, CheckResult, RunVerdict, read_verdict, verify_run, write_verdict

__all__ = [
    "TransitoryReport", "Witness", "delta_ladder", "is_transitory_def1", "is_transitory_def2",
    "steady_setpoints", "CHECKS", "CheckResult", "RunVerdict", "read_verdict", "verify_run", "write_verdict",
]
