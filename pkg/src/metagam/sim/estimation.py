"""Function-estimation experiment: accuracy and coverage of pooled smooth terms.

Each cohort's curve for term ``s`` is its full prediction (intercept plus all
smooth terms) along ``x_s`` with the other covariates held at a common
reference value. That quantity has the same meaning in every cohort whatever
each cohort's identifiability constraints or covariate ranges. Cohorts only
contribute inside their own range of ``x_s``; the pooled curve is centered
over the grid to match the sum-to-zero convention of the true functions. The
mega fit uses sum-to-zero constraints over a uniform grid on ``[0, 1]``
directly, with standard errors that include the intercept's uncertainty.
"""
from __future__ import annotations

import time

import numpy as np
import pandas as pd
from scipy import stats

from ..gam import fit_gam, predict_term, predict_terms, r_squared_adjusted
from ..gam import TermPrediction
from ..meta import pool_pointwise
from .functions import make_true_functions
from .report import ExperimentReport
from .runner import run_replications
from .scenarios import EstimationScenario, scenario_to_dict
from .splits import check_partition, equal_split, range_split, scaled_sizes, sized_split


def covariate_names(scenario: EstimationScenario):
    return [f"x{i}" for i in range(len(scenario.true_functions))]


def model_formula(scenario: EstimationScenario) -> str:
    terms = [f"s({x}, k={k})" for x, k in zip(covariate_names(scenario), scenario.basis_dims)]
    return "y ~ " + " + ".join(terms)


def simulate_dataset(scenario: EstimationScenario, sigma: float, rng) -> pd.DataFrame:
    """Independent uniform covariates on [0, 1] and an additive response."""
    funcs = make_true_functions()
    names = covariate_names(scenario)
    X = rng.uniform(0.0, 1.0, size=(scenario.n_total, len(names)))
    y = rng.normal(0.0, sigma, scenario.n_total) if sigma > 0 else np.zeros(scenario.n_total)
    for j, fname in enumerate(scenario.true_functions):
        y = y + funcs[fname](X[:, j])
    data = pd.DataFrame(X, columns=names)
    data["y"] = y
    return data


def split_scheme(scheme: str, data: pd.DataFrame, rng):
    n = len(data)
    if scheme == "mega":
        return [np.arange(n)]
    if scheme == "equal_5x800":
        return equal_split(n, 5, rng)
    if scheme == "unequal":
        return sized_split(n, scaled_sizes(n), rng)
    if scheme == "unequal_range":
        return range_split(data, scaled_sizes(n), rng)
    raise ValueError(f"unknown scheme {scheme!r}")


def _pooled_term(models, scenario, j, grid):
    names = covariate_names(scenario)
    frame = pd.DataFrame({x: grid if i == j else np.full(grid.size, scenario.reference)
                          for i, x in enumerate(names)})
    terms = [s.id for s in models[0].smooths]
    step = grid[1] - grid[0]
    preds = []
    for m in models:
        full = predict_terms(m, terms, frame, include_intercept=True, label=terms[j])
        # a cohort covers the grid points within one step of its observed range
        lo, hi = m.covariate_ranges[names[j]]
        in_range = (grid >= lo - step) & (grid <= hi + step)
        preds.append(TermPrediction(frame, full.fit, full.se, True, terms[j], in_range,
                                    m.cohort_label, m.n))
    meta = pool_pointwise(preds, scenario.method, range_restrict=True)
    fit = meta.pooled_fit - np.nanmean(meta.pooled_fit)
    return fit, meta.pooled_se


def _replication(scenario: EstimationScenario, r: int, rng):
    funcs = make_true_functions()
    names = covariate_names(scenario)
    grid = np.linspace(0.0, 1.0, scenario.grid_size)
    z = stats.norm.ppf(1.0 - scenario.alpha / 2.0)
    formula = model_formula(scenario)
    out = []
    for sigma in scenario.sigma:
        data = simulate_dataset(scenario, sigma, rng)
        r2 = np.nan
        for scheme in scenario.schemes:
            parts = split_scheme(scheme, data, rng)
            check_partition(parts, len(data))
            if scheme == "mega":
                model = fit_gam(data, formula, constraint_grids={x: grid for x in names},
                                cohort_label="mega")
                r2 = r_squared_adjusted(model)
            else:
                models = [fit_gam(data.iloc[p], formula, cohort_label=f"cohort{c + 1}")
                          for c, p in enumerate(parts)]
            for j, fname in enumerate(scenario.true_functions):
                if scheme == "mega":
                    pr = predict_term(model, model.smooths[j].id, pd.DataFrame({names[j]: grid}),
                                      se_with_mean=True)
                    fit, se = pr.fit, pr.se
                else:
                    fit, se = _pooled_term(models, scenario, j, grid)
                truth = funcs[fname](grid)
                ok = np.isfinite(fit) & np.isfinite(se)
                err = fit[ok] - truth[ok]
                out.append({
                    "sigma": sigma, "replication": r, "scheme": scheme, "term": fname,
                    "rmse": float(np.sqrt(np.mean(err**2))),
                    "coverage": float(np.mean(np.abs(err) <= z * se[ok])),
                    "fit": fit,
                })
        out.append({"sigma": sigma, "replication": r, "r2_adj": r2})
    return out


def run_estimation(scenario: EstimationScenario, threads: int = None) -> ExperimentReport:
    """Run the estimation experiment and summarise RMSE and band coverage.

    Raises
    ------
    ReplicationError
        If any replication fails, naming the replication index.
    """
    start = time.perf_counter()
    results = run_replications(_replication, scenario, scenario.replications, scenario.seed, threads)
    rows = [row for rep in results for row in rep if "scheme" in row]
    r2rows = [row for rep in results for row in rep if "r2_adj" in row]
    grid = np.linspace(0.0, 1.0, scenario.grid_size)
    funcs = make_true_functions()

    per_rep = pd.DataFrame([{k: v for k, v in row.items() if k != "fit"} for row in rows])
    summary = (per_rep.groupby(["sigma", "scheme", "term"], sort=False)
               .agg(rmse_mean=("rmse", "mean"), rmse_sd=("rmse", "std"),
                    coverage_mean=("coverage", "mean"), coverage_sd=("coverage", "std"),
                    replications=("rmse", "size"))
               .reset_index())
    mega = summary[summary.scheme == "mega"].set_index(["sigma", "term"])["rmse_mean"]
    summary["rmse_ratio_to_mega"] = [
        row.rmse_mean / mega.get((row.sigma, row.term), np.nan) for row in summary.itertuples()
    ]
    fits = []
    for key, group in _group_fits(rows).items():
        sigma, scheme, term = key
        mean_fit = np.nanmean(np.vstack(group), axis=0)
        fits.append(pd.DataFrame({"sigma": sigma, "scheme": scheme, "term": term, "x": grid,
                                  "mean_fit": mean_fit, "truth": funcs[term](grid)}))
    mean_fits = pd.concat(fits, ignore_index=True)
    r2 = (pd.DataFrame(r2rows).groupby("sigma", sort=False)
          .agg(r2_adj_mean=("r2_adj", "mean"), r2_adj_sd=("r2_adj", "std")).reset_index())
    tables = {"summary": summary, "replications": per_rep, "mean_fits": mean_fits, "r2": r2}
    return ExperimentReport("estimation", scenario_to_dict(scenario), tables,
                            time.perf_counter() - start)


def _group_fits(rows):
    groups = {}
    for row in rows:
        groups.setdefault((row["sigma"], row["scheme"], row["term"]), []).append(row["fit"])
    return groups
