"""Configuration-driven verification campaigns and the command-line entry point."""
from .campaigns import (
    CAMPAIGNS,
    pool_map,
    run_dfl_diagnostics,
    run_interchange,
    run_lyapunov_certificate,
    run_renewal,
    run_simulate,
    run_tightness,
    tightness_verdict,
)
from .config import DEFAULTS, ExperimentConfig, ExperimentConfigError
from .report import Report, Verdict, write_report

__all__ = [
    "CAMPAIGNS", "DEFAULTS", "ExperimentConfig", "ExperimentConfigError", "Report", "Verdict",
    "pool_map", "run_dfl_diagnostics", "run_interchange", "run_lyapunov_certificate", "run_renewal",
    "run_simulate", "run_tightness", "tightness_verdict", "write_report",
]
