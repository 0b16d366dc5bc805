"""Penalized-spline additive models with GCV smoothing.

``fit_gam`` is the functional entry point; :class:`GAM` wraps it in the
scikit-learn estimator protocol. Both produce a :class:`FittedGam` whose
``predict_term`` works identically on the raw-data-free
:class:`~metagam.strip.StrippedModel`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .basis import (
    KnotSequence,
    SmoothSpec,
    eval_basis,
    expand_by,
    penalty_matrix,
    place_knots,
    resolve_constraint,
)
from .exceptions import (
    EmptyInput,
    RankDeficientDesign,
    SingleGroup,
    UnknownTerm,
)
from .formula import ModelFormula, SmoothTerm, parse_formula
from .smooth_test import smooth_term_test
from .solver import PenalizedLS, Penalty, dependent_columns, gcv_search
from .validation import check_table

MIN_OBSERVATIONS = 10
DECILE_PROBS = np.arange(1, 10) / 10.0
INTERCEPT = "(Intercept)"


@dataclass(frozen=True)
class Block:
    """Contiguous coefficient block belonging to one model term."""

    label: str
    kind: str  # intercept | linear | smooth | random
    start: int
    stop: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    def to_dict(self):
        return {"label": self.label, "kind": self.kind, "start": self.start, "stop": self.stop}

    @classmethod
    def from_dict(cls, d):
        return cls(d["label"], d["kind"], int(d["start"]), int(d["stop"]))


@dataclass(frozen=True)
class TermPrediction:
    """Fitted values and standard errors of one term over a grid."""

    grid: pd.DataFrame
    fit: np.ndarray
    se: np.ndarray
    includes_intercept: bool
    term_id: str
    in_range: np.ndarray
    cohort_label: str = ""
    n: int = 0


class ModelView:
    """Lookup and prediction shared by full and stripped models."""

    def block(self, label) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise UnknownTerm(f"unknown term {label!r}; available: {[b.label for b in self.blocks]}")

    def smooth(self, term_id) -> SmoothSpec:
        for s in self.smooths:
            if s.id == term_id:
                return s
        raise UnknownTerm(f"{term_id!r} is not a smooth term")

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def predict_term(self, term_id, grid, include_intercept=False, se_with_mean=False):
        return predict_term(self, term_id, grid, include_intercept, se_with_mean)

    def predict(self, data):
        return predict(self, data)


@dataclass(frozen=True)
class FittedGam(ModelView):
    formula: ModelFormula
    smooths: Tuple[SmoothSpec, ...]
    blocks: Tuple[Block, ...]
    coefficient_labels: Tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    scale: float
    lambdas: Dict[str, float]
    edf: Dict[str, float]
    edf_total: float
    n: int
    n_subjects: Optional[int]
    term_pvalues: Dict[str, float]
    covariate_ranges: Dict[str, Tuple[float, float]]
    covariate_deciles: Dict[str, Tuple[float, ...]]
    factor_levels: Dict[str, Tuple[str, ...]]
    column_means: np.ndarray
    gcv: float
    cohort_label: str = "cohort"
    # individual-level quantities; dropped by strip_rawdata
    fitted_values: Optional[np.ndarray] = field(default=None, repr=False)
    residuals: Optional[np.ndarray] = field(default=None, repr=False)
    groups: Optional[Tuple[str, ...]] = field(default=None, repr=False)


def _is_factor(series: pd.Series) -> bool:
    return not pd.api.types.is_numeric_dtype(series) or pd.api.types.is_bool_dtype(series)


def _factor_levels(series: pd.Series) -> Tuple[str, ...]:
    return tuple(sorted({str(v) for v in series}))


def _dummy_columns(values, levels, col):
    values = np.asarray([str(v) for v in values])
    unknown = set(values) - set(levels)
    if unknown:
        raise ValueError(f"unknown level(s) {sorted(unknown)} for factor {col!r}")
    return np.column_stack([(values == lev).astype(float) for lev in levels[1:]]) if len(
        levels) > 1 else np.zeros((len(values), 0))


def _linear_design(data, col, factor_levels):
    if col in factor_levels:
        levels = factor_levels[col]
        return _dummy_columns(data[col], levels, col), [f"{col}[{lev}]" for lev in levels[1:]]
    return np.asarray(data[col], dtype=float)[:, None], [col]


def _smooth_design(spec: SmoothSpec, data) -> np.ndarray:
    basis = eval_basis(spec, np.asarray(data[spec.covariate], dtype=float))
    if spec.by is not None:
        basis = expand_by(basis, np.asarray(data[spec.by], dtype=float))
    return np.asarray(basis.values)


def _resolve_smooth(term: SmoothTerm, data, knots, knot_rule, constraint_grids) -> SmoothSpec:
    x = np.asarray(data[term.covariate], dtype=float)
    ks = None
    if knots:
        ks = knots.get(term.id, knots.get(term.covariate))
    if ks is None:
        ks = place_knots(x, term.k, knot_rule)
    elif not isinstance(ks, KnotSequence):
        ks = KnotSequence(tuple(ks[1:-1]), (ks[0], ks[-1]), "explicit")
    spec = SmoothSpec(term.covariate, ks, term.constraint, term.point, term.by, term.id)
    cdata = None
    if constraint_grids:
        cdata = constraint_grids.get(term.id, constraint_grids.get(term.covariate))
    return resolve_constraint(spec, x if cdata is None else np.asarray(cdata, dtype=float))


def _check_support(spec: SmoothSpec, data):
    """Every B-spline must have at least one observation inside its support."""
    x = np.asarray(data[spec.covariate], dtype=float)
    if spec.by is not None:
        x = x[np.asarray(data[spec.by], dtype=float) != 0]
    t = spec.knots.full_knots
    empty = []
    for k in range(spec.basis_dim):
        lo, hi = t[k], t[k + 4]
        inside = (x >= lo) & (x <= hi) if k in (0, spec.basis_dim - 1) else (x > lo) & (x < hi)
        if not inside.any():
            empty.append(f"{spec.id}[{k + 1}]")
    if empty:
        raise RankDeficientDesign(
            f"unidentifiable spline coefficients {empty}: no observations of "
            f"{spec.covariate!r} inside their support; the knots "
            f"(boundary {spec.knots.boundary}) do not suit this covariate range",
            empty,
        )


def _null_space(P: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(P)
    tol = max(w.max(), 0.0) * 1e-9
    return V[:, w <= tol]


def build_design(formula: ModelFormula, smooths, factor_levels, data, with_random=None):
    """Model matrix for ``data``; returns ``(X, blocks, labels)``.

    ``with_random`` is the tuple of group names for the random-intercept block
    (omitted when ``None``).
    """
    n = len(data)
    cols, blocks, labels = [np.ones((n, 1))], [Block(INTERCEPT, "intercept", 0, 1)], [INTERCEPT]
    p = 1
    for col in formula.linear_terms:
        Xl, names = _linear_design(data, col, factor_levels)
        cols.append(Xl)
        blocks.append(Block(col, "linear", p, p + Xl.shape[1]))
        labels += names
        p += Xl.shape[1]
    for spec in smooths:
        Xs = _smooth_design(spec, data)
        cols.append(Xs)
        blocks.append(Block(spec.id, "smooth", p, p + Xs.shape[1]))
        labels += [f"{spec.id}.{j + 1}" for j in range(Xs.shape[1])]
        p += Xs.shape[1]
    if with_random is not None:
        g = np.asarray([str(v) for v in data[formula.random_intercept]])
        Xr = (g[:, None] == np.asarray(with_random)[None, :]).astype(float)
        cols.append(Xr)
        label = f"(1|{formula.random_intercept})"
        blocks.append(Block(label, "random", p, p + Xr.shape[1]))
        labels += [f"{label}[{name}]" for name in with_random]
    return np.hstack(cols), tuple(blocks), tuple(labels)


def _check_identifiable(X, blocks, labels, smooths, data):
    for spec in smooths:
        _check_support(spec, data)
    cols, names = [], []
    for b in blocks:
        if b.kind in ("intercept", "linear"):
            cols.append(X[:, b.slice])
            names += list(labels[b.slice])
        elif b.kind == "smooth":
            spec = next(s for s in smooths if s.id == b.label)
            N = _null_space(penalty_matrix(spec))
            cols.append(X[:, b.slice] @ N)
            names += [f"{b.label} (unpenalized direction {j + 1})" for j in range(N.shape[1])]
    Xu = np.hstack(cols)
    bad = dependent_columns(Xu)
    if bad.size:
        flagged = [names[i] for i in bad]
        raise RankDeficientDesign(
            f"unpenalized model columns are collinear; cannot identify {flagged}", flagged
        )


def term_pvalue(model, term_id, data=None, rank=None) -> float:
    """Test that the smooth ``term_id`` is identically zero.

    The term is evaluated on the rows of ``data`` (the fitting data at fit
    time); without data it falls back to the stored deciles of its covariate
    with the ``by`` variable set to 1. ``rank`` defaults to the term's EDF.
    The scale is estimated, so the reference is F-type on ``n - edf_total``
    residual degrees of freedom. See :func:`metagam.smooth_test.smooth_term_test`.
    """
    spec = model.smooth(term_id)
    b = model.block(term_id)
    if data is None:
        data = pd.DataFrame({spec.covariate: np.asarray(model.covariate_deciles[spec.covariate])})
        if spec.by is not None:
            data[spec.by] = 1.0
    Xt = _smooth_design(spec, data)
    if rank is None:
        rank = model.edf[term_id]
    rank = min(float(rank), float(Xt.shape[1]))
    res_df = max(float(model.n) - float(model.edf_total), 1.0)
    return smooth_term_test(Xt, np.asarray(model.coefficients)[b.slice],
                            np.asarray(model.covariance)[b.slice, b.slice], rank, res_df)


def _as_lambda_vector(lambdas, penalties):
    if isinstance(lambdas, Mapping):
        missing = [p.label for p in penalties if p.label not in lambdas]
        if missing:
            raise ValueError(f"missing smoothing parameters for {missing}")
        return np.array([float(lambdas[p.label]) for p in penalties])
    lam = np.asarray(lambdas, dtype=float).ravel()
    if lam.size == 1 and len(penalties) > 1:
        lam = np.repeat(lam, len(penalties))
    return lam


def fit_gam(
    data,
    formula: Union[str, ModelFormula],
    lambda_grid=None,
    *,
    lambdas=None,
    knots: Optional[Mapping] = None,
    knot_rule: str = "quantile",
    constraint_grids: Optional[Mapping] = None,
    sweeps: int = 2,
    refine: bool = False,
    cohort_label: str = "cohort",
) -> FittedGam:
    """Fit a penalized additive model.

    Parameters
    ----------
    data : DataFrame or dict of columns
    formula : str or ModelFormula
    lambda_grid : sequence of float, optional
        Relative smoothing parameters searched by GCV (each multiplied by a
        per-term scale that balances the penalty against the data). Defaults
        to 30 log-spaced values in ``[1e-6, 1e6]``.
    lambdas : mapping or sequence, optional
        Fixed smoothing parameters in the units of the penalty matrices;
        skips the GCV search.
    knots : mapping, optional
        Explicit knots per term id or covariate, as a :class:`KnotSequence` or
        a sequence whose first and last entries are the boundary.
    constraint_grids : mapping, optional
        Values over which a sum-to-zero constraint is imposed instead of the
        observed covariate values.
    sweeps : int
        Coordinate-descent passes of the GCV grid search.
    refine : bool
        Polish the grid optimum with a continuous search over log lambda.

    Raises
    ------
    RankDeficientDesign
        If any spline coefficient has no data in its support or the
        unpenalized columns are collinear.
    """
    if isinstance(formula, str):
        formula = parse_formula(formula)
    numeric = [t.covariate for t in formula.smooth_terms] + [t.by for t in formula.smooth_terms if t.by]
    data = check_table(data, (formula.response,) + formula.covariates, [formula.response] + numeric)
    data = data.reset_index(drop=True)
    n = len(data)
    if n < MIN_OBSERVATIONS:
        raise EmptyInput(f"at least {MIN_OBSERVATIONS} observations are required, got {n}")
    y = np.asarray(data[formula.response], dtype=float)

    factor_levels = {c: _factor_levels(data[c]) for c in formula.linear_terms if _is_factor(data[c])}
    smooths = tuple(_resolve_smooth(t, data, knots, knot_rule, constraint_grids)
                    for t in formula.smooth_terms)
    groups = None
    if formula.random_intercept:
        groups = _factor_levels(data[formula.random_intercept])
        if len(groups) < 2:
            raise SingleGroup(f"random intercept {formula.random_intercept!r} has a single group")
    X, blocks, labels = build_design(formula, smooths, factor_levels, data, groups)
    _check_identifiable(X, blocks, labels, smooths, data)

    penalties = []
    for b in blocks:
        if b.kind == "smooth":
            penalties.append(Penalty(b.slice, penalty_matrix(next(s for s in smooths if s.id == b.label)), b.label))
        elif b.kind == "random":
            penalties.append(Penalty(b.slice, np.eye(b.stop - b.start), b.label))
    problem = PenalizedLS(X, y, penalties)
    if lambdas is None:
        search = gcv_search(problem, lambda_grid, sweeps, refine)
        lam = search.lambdas
    else:
        lam = _as_lambda_vector(lambdas, penalties)
    sol = problem.fit(lam)

    edf_total = sol.edf_total
    resid_df = n - edf_total
    if resid_df <= 0:
        raise RankDeficientDesign(
            f"effective degrees of freedom {edf_total:.2f} leave no residual degrees of freedom (n={n})"
        )
    scale = max(sol.rss / resid_df, np.finfo(float).tiny)
    cov = scale * sol.a_inv
    cov = (cov + cov.T) / 2.0
    edf = {b.label: float(sol.edf[b.slice].sum()) for b in blocks}
    fitted = X @ sol.beta

    ranges, deciles = {}, {}
    for col in dict.fromkeys([s.covariate for s in smooths] + [s.by for s in smooths if s.by]
                             + [c for c in formula.linear_terms if c not in factor_levels]):
        v = np.asarray(data[col], dtype=float)
        ranges[col] = (float(v.min()), float(v.max()))
        deciles[col] = tuple(float(q) for q in np.quantile(v, DECILE_PROBS))
    col_means = np.zeros(X.shape[1])
    for b in blocks:
        if b.kind in ("intercept", "linear"):
            col_means[b.slice] = X[:, b.slice].mean(axis=0)

    model = FittedGam(
        formula=formula,
        smooths=smooths,
        blocks=blocks,
        coefficient_labels=labels,
        coefficients=sol.beta,
        covariance=cov,
        scale=float(scale),
        lambdas={p.label: float(v) for p, v in zip(penalties, lam)},
        edf=edf,
        edf_total=float(edf_total),
        n=n,
        n_subjects=None if groups is None else len(groups),
        term_pvalues={},
        covariate_ranges=ranges,
        covariate_deciles=deciles,
        factor_levels=factor_levels,
        column_means=col_means,
        gcv=float(sol.gcv),
        cohort_label=cohort_label,
        fitted_values=fitted,
        residuals=y - fitted,
        groups=groups,
    )
    # alternative EDF tr(2F - FF), F = A^{-1} X'X, sets the rank of each term test
    F = sol.a_inv @ problem.XtX
    edf1 = 2.0 * np.diag(F) - np.einsum("ij,ji->i", F, F)
    pvalues = {s.id: term_pvalue(model, s.id, data, edf1[model.block(s.id).slice].sum()) for s in smooths}
    return replace(model, term_pvalues=pvalues)


def fit_random_intercept(data, formula, lambda_grid=None, **kwargs) -> FittedGam:
    """Fit a model whose formula carries a ``(1|group)`` random intercept.

    The group effects are ridge-penalized indicator columns whose smoothing
    parameter is chosen by GCV together with the smooth terms.
    """
    if isinstance(formula, str):
        formula = parse_formula(formula)
    if not formula.random_intercept:
        raise ValueError("formula has no random intercept term")
    return fit_gam(data, formula, lambda_grid, **kwargs)


def _grid_frame(grid) -> pd.DataFrame:
    if isinstance(grid, pd.DataFrame):
        return grid.reset_index(drop=True)
    return pd.DataFrame(grid)


def _term_rows(model, term_id, grid):
    """Design rows of ``term_id`` over ``grid`` and the covariate used for range checks."""
    try:
        b = model.block(term_id)
    except UnknownTerm:
        raise UnknownTerm(f"unknown term {term_id!r}") from None
    if b.kind == "smooth":
        spec = model.smooth(term_id)
        check_table(grid, [spec.covariate] + ([spec.by] if spec.by else []),
                    [spec.covariate] + ([spec.by] if spec.by else []))
        return b, _smooth_design(spec, grid), spec.covariate
    if b.kind == "linear":
        check_table(grid, [term_id])
        Xl, _ = _linear_design(grid, term_id, model.factor_levels)
        return b, Xl, None if term_id in model.factor_levels else term_id
    raise UnknownTerm(f"cannot predict {b.kind} term {term_id!r}")


def predict_terms(model, term_ids, grid, include_intercept=False, se_with_mean=False,
                  label=None) -> TermPrediction:
    """Predict the sum of several terms over ``grid`` with pointwise standard errors.

    With ``include_intercept`` the intercept is added to the fit and its
    variance and covariance enter the standard error. With ``se_with_mean``
    (and no intercept) the fit is the terms alone but the standard error also
    carries the uncertainty of the intercept, other linear terms held at their
    means. A grid point is in range when every covariate involved lies within
    the range the model was fitted on. Works on fitted and stripped models.
    """
    grid = _grid_frame(grid)
    if isinstance(term_ids, str):
        term_ids = (term_ids,)
    if not term_ids:
        raise UnknownTerm("no terms requested")
    p = len(model.coefficients)
    rows = np.zeros((len(grid), p))
    in_range = np.ones(len(grid), dtype=bool)
    for term_id in term_ids:
        b, Xt, covariate = _term_rows(model, term_id, grid)
        rows[:, b.slice] = Xt
        if covariate is not None and covariate in model.covariate_ranges:
            lo, hi = model.covariate_ranges[covariate]
            x = np.asarray(grid[covariate], dtype=float)
            in_range &= (x >= lo) & (x <= hi)
    if include_intercept:
        rows[:, 0] = 1.0
    fit = rows @ np.asarray(model.coefficients)
    se_rows = rows
    if se_with_mean and not include_intercept:
        se_rows = rows.copy()
        means = np.asarray(model.column_means)
        for blk in model.blocks:
            if blk.kind in ("intercept", "linear") and blk.label not in term_ids:
                se_rows[:, blk.slice] = means[blk.slice]
    V = np.asarray(model.covariance)
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", se_rows, V, se_rows), 0.0))
    return TermPrediction(grid, fit, se, bool(include_intercept), label or " + ".join(term_ids),
                          in_range, model.cohort_label, int(model.n))


def predict_term(model, term_id, grid, include_intercept=False, se_with_mean=False) -> TermPrediction:
    """Predict a single term over ``grid``; see :func:`predict_terms`."""
    return predict_terms(model, (term_id,), grid, include_intercept, se_with_mean)


def predict(model, data) -> np.ndarray:
    """Population-level predictions (random intercepts excluded)."""
    data = _grid_frame(data)
    X, _, _ = build_design(model.formula, model.smooths, model.factor_levels, data)
    return X @ np.asarray(model.coefficients)[: X.shape[1]]


class GAM(RegressorMixin, BaseEstimator):
    """Additive model estimator with the scikit-learn fit/predict protocol.

    ``X`` is a table (DataFrame or dict of columns) holding every covariate in
    ``formula``; the response is taken from ``y`` when given, otherwise from the
    response column of ``X``.

    Parameters
    ----------
    formula : str or ModelFormula
    lambda_grid, lambdas, knots, knot_rule, constraint_grids, sweeps, refine
        Forwarded to :func:`fit_gam`.
    cohort_label : str
        Label carried into stripped models and meta-analysis output.
    """

    def __init__(self, formula="y ~ s(x)", lambda_grid=None, lambdas=None, knots=None,
                 knot_rule="quantile", constraint_grids=None, sweeps=2, refine=False,
                 cohort_label="cohort"):
        self.formula = formula
        self.lambda_grid = lambda_grid
        self.lambdas = lambdas
        self.knots = knots
        self.knot_rule = knot_rule
        self.constraint_grids = constraint_grids
        self.sweeps = sweeps
        self.refine = refine
        self.cohort_label = cohort_label

    def fit(self, X, y=None):
        formula = parse_formula(self.formula) if isinstance(self.formula, str) else self.formula
        data = _grid_frame(X).copy()
        if y is not None:
            data[formula.response] = np.asarray(y, dtype=float)
        self.model_ = fit_gam(
            data, formula, self.lambda_grid, lambdas=self.lambdas, knots=self.knots,
            knot_rule=self.knot_rule, constraint_grids=self.constraint_grids,
            sweeps=self.sweeps, refine=self.refine, cohort_label=self.cohort_label,
        )
        self.coef_ = self.model_.coefficients
        self.intercept_ = self.model_.intercept
        self.scale_ = self.model_.scale
        self.edf_ = dict(self.model_.edf)
        self.lambdas_ = dict(self.model_.lambdas)
        self.n_features_in_ = len(formula.covariates)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, X)

    def predict_term(self, X, term, include_intercept=False, se_with_mean=False):
        check_is_fitted(self, "model_")
        return predict_term(self.model_, term, X, include_intercept, se_with_mean)

    def summary(self) -> dict:
        check_is_fitted(self, "model_")
        return fit_summary(self.model_)

    def strip(self):
        from .strip import strip_rawdata

        check_is_fitted(self, "model_")
        return strip_rawdata(self.model_)


def fit_summary(model) -> dict:
    return {
        "cohort": model.cohort_label,
        "formula": str(model.formula),
        "n": model.n,
        "scale": model.scale,
        "edf_total": model.edf_total,
        "edf": dict(model.edf),
        "lambdas": dict(model.lambdas),
        "term_pvalues": dict(model.term_pvalues),
    }


def r_squared_adjusted(model: FittedGam) -> float:
    """Adjusted R^2 with residual degrees of freedom ``n - EDF``."""
    if model.residuals is None:
        raise ValueError("adjusted R^2 needs the residuals of a full (unstripped) model")
    y = model.fitted_values + model.residuals
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    rss = float(model.residuals @ model.residuals)
    return 1.0 - (rss / (model.n - model.edf_total)) / (ss_tot / (model.n - 1))
