"""Null calibration and power for a smooth-by-group interaction test."""
from __future__ import annotations

import time
from itertools import product

import numpy as np
import pandas as pd
from scipy import stats

from ..gam import fit_gam
from ..meta import PVALUE_METHODS, combine_pvalues
from .functions import AGE_RANGE, group_effect, lifespan_trajectory
from .report import ExperimentReport
from .runner import run_replications
from .scenarios import PVALUE_COLUMNS, PowerScenario, scenario_to_dict
from .splits import check_partition, equal_split

INTERACTION = "s(age):g"
QUANTILES = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9)


def model_formula(scenario: PowerScenario) -> str:
    k = scenario.basis_dim
    return f"y ~ s(age, k={k}) + s(age, by=g, k={k}) + g"


def simulate_dataset(scenario: PowerScenario, n: int, sigma: float, rng) -> pd.DataFrame:
    """Uniform ages, groups assigned with probability 1/2, Gaussian noise."""
    age = rng.uniform(*AGE_RANGE, size=n)
    g = (rng.random(n) < 0.5).astype(float)
    y = lifespan_trajectory(age) + rng.normal(0.0, sigma, n)
    if scenario.effect == "group_interaction":
        y = y + g * group_effect(age, scenario.amplitude)
    return pd.DataFrame({"age": age, "g": g, "y": y})


def _replication(scenario: PowerScenario, r: int, rng):
    formula = model_formula(scenario)
    out = []
    for n, sigma in product(scenario.n_total, scenario.sigma):
        data = simulate_dataset(scenario, n, sigma, rng)
        parts = equal_split(n, scenario.n_cohorts, rng)
        check_partition(parts, n)
        p_mega = fit_gam(data, formula).term_pvalues[INTERACTION]
        ps = [fit_gam(data.iloc[idx], formula).term_pvalues[INTERACTION] for idx in parts]
        row = {"n_total": n, "sigma": sigma, "replication": r, "mega": p_mega, "single": ps[0]}
        for method in PVALUE_METHODS:
            # equal weights: the cohorts have equal sizes
            row[method] = combine_pvalues(ps, np.ones(len(ps)) if method == "stouffer" else None, method)
        out.append(row)
    return out


def run_power(scenario: PowerScenario, threads: int = None) -> ExperimentReport:
    """Rejection rates, KS distances from uniformity and p-value quantiles.

    Raises
    ------
    ReplicationError
        If any replication fails, naming the replication index.
    """
    start = time.perf_counter()
    results = run_replications(_replication, scenario, scenario.replications, scenario.seed, threads)
    pvalues = pd.DataFrame([row for rep in results for row in rep])
    rej, quant = [], []
    for (n, sigma), group in pvalues.groupby(["n_total", "sigma"], sort=False):
        for method in PVALUE_COLUMNS:
            p = group[method].to_numpy()
            rej.append({"n_total": n, "sigma": sigma, "method": method,
                        "rejection_rate": float(np.mean(p < scenario.alpha)),
                        "ks_distance": float(stats.kstest(p, "uniform").statistic),
                        "replications": len(p)})
            q = np.quantile(p, QUANTILES)
            quant.append({"n_total": n, "sigma": sigma, "method": method,
                          **{f"q{int(round(100 * a)):02d}": float(v) for a, v in zip(QUANTILES, q)}})
    tables = {"rejection": pd.DataFrame(rej), "quantiles": pd.DataFrame(quant), "pvalues": pvalues}
    return ExperimentReport("power", scenario_to_dict(scenario), tables, time.perf_counter() - start)
