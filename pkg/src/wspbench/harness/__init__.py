from .config import ExperimentSpec, RunConfig, SweepGrid, WorkbenchConfig, load_config
from .experiments import (
    ExperimentResult,
    Workbench,
    run_direct_ft,
    run_self_training,
    run_weak_only,
    run_wsp_ft,
)
from .report import report
from .sweep import grid_specs, run_config, run_sweep

__all__ = [
    "ExperimentSpec", "RunConfig", "SweepGrid", "WorkbenchConfig", "load_config",
    "ExperimentResult", "Workbench", "run_direct_ft", "run_self_training", "run_weak_only",
    "run_wsp_ft", "report", "grid_specs", "run_config", "run_sweep",
]
