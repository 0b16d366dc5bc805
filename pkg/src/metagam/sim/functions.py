"""Fixed analytic test functions for the simulation experiments.

Estimation functions live on ``[0, 1]`` and are centered to mean zero over a
fine uniform grid. Their amplitudes put the additive signal variance near 0.67,
which gives an adjusted R^2 of about 0.40 at noise sd 1.0 and about 0.21 at
noise sd 1.6.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

CENTERING_GRID = np.linspace(0.0, 1.0, 10001)


def _bump(x):
    return 1.25 * np.sin(np.pi * x)


def _sigmoid(x):
    return 0.6 * np.tanh(10.0 * (x - 0.5))


def _two_peaks(x):
    # peaks near 0.25 and 0.75; the dip between them sits at the function's mean
    return 0.75 * (np.sin(2.0 * np.pi * x) ** 2 - 1.5 * (2.0 * x - 1.0) ** 2)


def _gentle_slope(x):
    return 0.35 * (x - 0.5)


_RAW = {"f0": _bump, "f1": _sigmoid, "f2": _two_peaks, "f3": _gentle_slope}
FORMULAS = {
    "f0": "1.25 sin(pi x)",
    "f1": "0.6 tanh(10 (x - 0.5))",
    "f2": "0.75 (sin^2(2 pi x) - 1.5 (2x - 1)^2)",
    "f3": "0.35 (x - 0.5)",
}


@dataclass(frozen=True)
class TrueFunction:
    """A centered function of one variable with its defining formula."""

    name: str
    formula: str
    raw: Callable
    offset: float

    def __call__(self, x):
        return self.raw(np.asarray(x, dtype=float)) - self.offset


def make_true_functions() -> Dict[str, TrueFunction]:
    """The four estimation targets ``f0`` (bump), ``f1`` (sigmoid), ``f2`` (two peaks), ``f3`` (slope)."""
    return {name: TrueFunction(name, FORMULAS[name] + " - mean", f, float(f(CENTERING_GRID).mean()))
            for name, f in _RAW.items()}


# lifespan trajectory in volume units (mm^3) for the power experiment
AGE_RANGE = (4.0, 94.0)
TRAJECTORY_FORMULA = "95000 + 12000 (1 - exp(-(age - 4) / 7)) - 15000 max(0, (age - 30) / 64)^2"
GROUP_EFFECT_FORMULA = "amplitude * max(0, (age - 40) / 54)^2"


def lifespan_trajectory(age):
    """Growth to a plateau in early adulthood followed by accelerating decline after 30."""
    age = np.asarray(age, dtype=float)
    return 95000.0 + 12000.0 * (1.0 - np.exp(-(age - 4.0) / 7.0)) \
        - 15000.0 * np.maximum(0.0, (age - 30.0) / 64.0) ** 2


def group_effect(age, amplitude: float):
    """Extra volume of group 1 (less atrophy), zero before 40 and growing with age."""
    age = np.asarray(age, dtype=float)
    return amplitude * np.maximum(0.0, (age - 40.0) / 54.0) ** 2
