"""Scenario definitions and JSON config loading."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Tuple, Union

SCHEMES = ("equal_5x800", "unequal", "unequal_range", "mega")
META_SCHEMES = SCHEMES[:3]
EFFECTS = ("null", "group_interaction")
PVALUE_COLUMNS = ("mega", "single", "stouffer", "tippett", "fisher", "edgington",
                  "wilkinson_max", "logitp")

# sizes of the five cohorts at n_total = 4000; rescaled for other totals
UNEQUAL_SIZES = (300, 500, 800, 1000, 1400)
BASE_TOTAL = 4000


def _as_tuple(v, cast=float) -> tuple:
    if isinstance(v, (list, tuple)):
        return tuple(cast(x) for x in v)
    return (cast(v),)


@dataclass(frozen=True)
class EstimationScenario:
    """Function-estimation experiment: mega fit versus pooled cohort fits.

    ``sigma`` may hold several noise levels; every replication draws one
    dataset per level and analyses it under every scheme in ``schemes``.
    """

    n_total: int = 4000
    sigma: Tuple[float, ...] = (1.0,)
    replications: int = 200
    schemes: Tuple[str, ...] = SCHEMES
    true_functions: Tuple[str, ...] = ("f0", "f1", "f2", "f3")
    basis_dims: Tuple[int, ...] = (20, 10, 30, 5)
    grid_size: int = 201
    reference: float = 0.5
    method: str = "FE"
    alpha: float = 0.05
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sigma", _as_tuple(self.sigma))
        object.__setattr__(self, "schemes", _as_tuple(self.schemes, str))
        object.__setattr__(self, "true_functions", _as_tuple(self.true_functions, str))
        object.__setattr__(self, "basis_dims", _as_tuple(self.basis_dims, int))
        bad = set(self.schemes) - set(SCHEMES)
        if bad:
            raise ValueError(f"unknown schemes {sorted(bad)}; choose from {SCHEMES}")
        if len(self.basis_dims) != len(self.true_functions):
            raise ValueError("basis_dims must give one basis dimension per true function")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma must be non-negative")
        if self.replications < 1 or self.grid_size < 2:
            raise ValueError("replications must be >= 1 and grid_size >= 2")
        if self.n_total < 50:
            raise ValueError("n_total must be at least 50")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class PowerScenario:
    """Null-calibration or power experiment for a smooth-by-group interaction.

    ``sigma`` and ``n_total`` may each hold several values; the experiment
    runs over their product, giving power curves.
    """

    n_total: Tuple[int, ...] = (3000,)
    sigma: Tuple[float, ...] = (3500.0,)
    effect: str = "null"
    n_cohorts: int = 6
    amplitude: float = 2000.0
    basis_dim: int = 10
    replications: int = 500
    alpha: float = 0.05
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n_total", _as_tuple(self.n_total, int))
        object.__setattr__(self, "sigma", _as_tuple(self.sigma))
        if self.effect not in EFFECTS:
            raise ValueError(f"effect must be one of {EFFECTS}")
        if self.n_cohorts < 2:
            raise ValueError("n_cohorts must be at least 2")
        if any(n < 20 * self.n_cohorts for n in self.n_total):
            raise ValueError("each cohort needs at least 20 observations")
        if any(s <= 0 for s in self.sigma):
            raise ValueError("sigma must be positive")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


Scenario = Union[EstimationScenario, PowerScenario]
_KINDS = {"estimation": EstimationScenario, "power": PowerScenario}


def scenario_to_dict(scenario: Scenario) -> dict:
    kind = "estimation" if isinstance(scenario, EstimationScenario) else "power"
    return {"kind": kind, **{k: list(v) if isinstance(v, tuple) else v for k, v in asdict(scenario).items()}}


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"config 'kind' must be one of {sorted(_KINDS)}, got {kind!r}")
    cls = _KINDS[kind]
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {kind} settings: {sorted(unknown)}")
    return cls(**d)


def load_scenario(path) -> Scenario:
    """Read a scenario from a JSON file with a ``kind`` of ``estimation`` or ``power``."""
    with open(Path(path), encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
