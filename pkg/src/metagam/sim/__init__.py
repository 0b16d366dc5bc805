"""Simulation harness for estimation accuracy, null calibration and power."""
from .estimation import run_estimation
from .functions import group_effect, lifespan_trajectory, make_true_functions
from .power import run_power
from .report import ExperimentReport
from .runner import run_replications, thread_count
from .scenarios import (
    EstimationScenario,
    PowerScenario,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)


def run_scenario(scenario, threads=None) -> ExperimentReport:
    """Dispatch to :func:`run_estimation` or :func:`run_power`."""
    if isinstance(scenario, EstimationScenario):
        return run_estimation(scenario, threads)
    return run_power(scenario, threads)


__all__ = [
    "EstimationScenario", "PowerScenario", "ExperimentReport", "run_estimation", "run_power",
    "run_scenario", "load_scenario", "scenario_from_dict", "scenario_to_dict",
    "make_true_functions", "lifespan_trajectory", "group_effect", "run_replications",
    "thread_count",
]
