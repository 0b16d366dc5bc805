"""Pointwise meta-analysis of term predictions and combination of p-values.

Every grid point is pooled independently, so all operations are vectorized
over the ``(cohort, grid point)`` plane.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np
import pandas as pd
from scipy import special, stats

from .exceptions import BadAlpha, GridMismatch, OutOfRangeP, TooFewCohorts
from .gam import TermPrediction, _grid_frame, predict_term

METHODS = ("FE", "DL")
PVALUE_METHODS = ("stouffer", "tippett", "fisher", "edgington", "wilkinson_max", "logitp")
IRWIN_HALL_EXACT_MAX = 12


def _fe_tau2(fits, variances, included):
    return np.zeros(fits.shape[1])


def _q_statistic(fits, variances, included):
    w = np.where(included, 1.0 / np.where(included, variances, 1.0), 0.0)
    sw = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        fbar = (w * np.where(included, fits, 0.0)).sum(axis=0) / sw
    dev = np.where(included, fits - fbar, 0.0)
    return (w * dev**2).sum(axis=0), w, sw


def _dl_tau2(fits, variances, included):
    """DerSimonian-Laird moment estimator, truncated at zero."""
    q, w, sw = _q_statistic(fits, variances, included)
    k = included.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = sw - (w**2).sum(axis=0) / sw
        tau2 = np.maximum(0.0, (q - (k - 1)) / c)
    return np.where((k >= 2) & (c > 0), tau2, 0.0)


# name -> f(fits, variances, included) returning one between-study variance per grid point
TAU2_ESTIMATORS: Dict[str, Callable] = {"FE": _fe_tau2, "DL": _dl_tau2}


def register_tau2_estimator(name: str, estimator: Callable) -> None:
    """Add a between-study variance estimator usable as ``method=name``."""
    TAU2_ESTIMATORS[name.upper()] = estimator


@dataclass(frozen=True)
class MetaFit:
    grid: pd.DataFrame
    pooled_fit: np.ndarray
    pooled_se: np.ndarray
    tau2: np.ndarray
    cohort_fits: np.ndarray  # (M, G)
    cohort_variances: np.ndarray  # (M, G)
    weights: np.ndarray  # (M, G), normalized, 0 for excluded cohorts
    included: np.ndarray  # (M, G) bool
    in_range: np.ndarray  # (M, G) bool
    cohort_labels: tuple
    method: str
    term_id: str
    includes_intercept: bool

    @property
    def n_cohorts(self) -> int:
        return self.cohort_fits.shape[0]

    @property
    def pooled(self) -> np.ndarray:
        """Grid points with at least two contributing cohorts."""
        return np.isfinite(self.pooled_fit)

    def to_frame(self, alpha: float = 0.05) -> pd.DataFrame:
        low, high = confidence_band(self, alpha)
        out = self.grid.copy()
        out["fit"] = self.pooled_fit
        out["se"] = self.pooled_se
        out["tau2"] = self.tau2
        out["ci_low"] = low
        out["ci_high"] = high
        return out


@dataclass(frozen=True)
class HeterogeneityCurve:
    grid: pd.DataFrame
    Q: np.ndarray
    df: int
    df_pointwise: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        out = self.grid.copy()
        out["Q"] = self.Q
        out["df"] = self.df_pointwise
        out["excess"] = self.Q - self.df_pointwise
        out["ci_low"] = self.ci_low
        out["ci_high"] = self.ci_high
        return out


@dataclass(frozen=True)
class DominanceCurve:
    grid: pd.DataFrame
    fractions: np.ndarray  # (M, G)
    cohort_labels: tuple

    def to_frame(self) -> pd.DataFrame:
        out = self.grid.copy()
        for label, row in zip(self.cohort_labels, self.fractions):
            out[label] = row
        return out


def _stack(predictions: Sequence[TermPrediction]):
    predictions = list(predictions)
    if len(predictions) < 2:
        raise TooFewCohorts(f"pointwise pooling needs at least 2 cohorts, got {len(predictions)}")
    ref = predictions[0].grid
    for i, p in enumerate(predictions[1:], start=1):
        g = p.grid
        if list(g.columns) != list(ref.columns) or len(g) != len(ref) or not all(
            np.array_equal(g[c].to_numpy(), ref[c].to_numpy()) for c in ref.columns
        ):
            raise GridMismatch(f"prediction {i} ({p.cohort_label}) is on a different grid")
    if len({p.includes_intercept for p in predictions}) > 1:
        raise GridMismatch("cannot pool predictions with and without the intercept")
    fits = np.vstack([np.asarray(p.fit, dtype=float) for p in predictions])
    se = np.vstack([np.asarray(p.se, dtype=float) for p in predictions])
    in_range = np.vstack([np.asarray(p.in_range, dtype=bool) for p in predictions])
    return predictions, ref, fits, se, in_range


def _included(fits, se, in_range, range_restrict):
    ok = np.isfinite(fits) & np.isfinite(se) & (se > 0)
    if np.any(np.isfinite(se) & (se == 0)):
        warnings.warn("zero standard error in a cohort prediction; cohort dropped at those points",
                      RuntimeWarning, stacklevel=3)
    if range_restrict:
        ok &= in_range
    return ok


def pool_pointwise(predictions: Sequence[TermPrediction], method: str = "FE",
                   range_restrict: bool = False) -> MetaFit:
    """Inverse-variance pooling of per-cohort term predictions at each grid point.

    ``method`` is ``"FE"`` (fixed effects) or ``"DL"`` (random effects with the
    DerSimonian-Laird between-study variance); further estimators can be added
    through :func:`register_tau2_estimator`. With ``range_restrict`` a cohort
    only contributes inside the covariate range it was fitted on. Points with
    fewer than two contributing cohorts are left as NaN.
    """
    method = method.upper()
    if method not in TAU2_ESTIMATORS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(TAU2_ESTIMATORS)}")
    predictions, grid, fits, se, in_range = _stack(predictions)
    variances = se**2
    included = _included(fits, se, in_range, range_restrict)
    tau2 = TAU2_ESTIMATORS[method](fits, variances, included)
    w = np.where(included, 1.0 / np.where(included, variances + tau2, 1.0), 0.0)
    sw = w.sum(axis=0)
    enough = included.sum(axis=0) >= 2
    with np.errstate(invalid="ignore", divide="ignore"):
        weights = np.where(sw > 0, w / sw, 0.0)
        pooled = np.where(enough, (weights * np.where(included, fits, 0.0)).sum(axis=0), np.nan)
        pooled_se = np.where(enough, 1.0 / np.sqrt(sw), np.nan)
    tau2 = np.where(enough, tau2, np.nan)
    return MetaFit(
        grid=grid, pooled_fit=pooled, pooled_se=pooled_se, tau2=tau2,
        cohort_fits=fits, cohort_variances=variances, weights=weights,
        included=included, in_range=in_range,
        cohort_labels=tuple(p.cohort_label or f"cohort{i + 1}" for i, p in enumerate(predictions)),
        method=method, term_id=predictions[0].term_id,
        includes_intercept=predictions[0].includes_intercept,
    )


def confidence_band(meta: MetaFit, alpha: float = 0.05):
    """Pointwise ``(1 - alpha)`` normal confidence band ``(low, high)``."""
    if not (0.0 < alpha < 1.0):
        raise BadAlpha(f"alpha must lie in (0, 1), got {alpha}")
    lo_q, hi_q = stats.norm.ppf(alpha / 2.0), stats.norm.ppf(1.0 - alpha / 2.0)
    return meta.pooled_fit + lo_q * meta.pooled_se, meta.pooled_fit + hi_q * meta.pooled_se


def cochran_q(predictions: Sequence[TermPrediction], grid=None, range_restrict=False,
              alpha: float = 0.05) -> HeterogeneityCurve:
    """Cochran's Q at each grid point with a normal-approximation band for ``Q - df``.

    The band is ``(Q - df) -/+ z * sqrt(2 df)``, treating Q as having the
    variance of a chi-square on ``df`` degrees of freedom.
    """
    predictions, ref, fits, se, in_range = _stack(predictions)
    if grid is not None:
        g = _grid_frame(grid)
        if len(g) != len(ref) or not all(
            c in ref and np.array_equal(g[c].to_numpy(), ref[c].to_numpy()) for c in g.columns
        ):
            raise GridMismatch("grid does not match the predictions' grid")
    included = _included(fits, se, in_range, range_restrict)
    q, _, _ = _q_statistic(fits, se**2, included)
    df_pt = np.maximum(included.sum(axis=0) - 1, 0)
    z = stats.norm.ppf(1.0 - alpha / 2.0)
    half = z * np.sqrt(2.0 * df_pt)
    excess = q - df_pt
    return HeterogeneityCurve(ref, q, len(predictions) - 1, df_pt, excess - half, excess + half)


def dominance(meta: MetaFit) -> DominanceCurve:
    """Share of each cohort's inverse-variance weight in the pooled fit at each point."""
    fr = np.array(meta.weights, dtype=float)
    fr[:, ~meta.included.any(axis=0)] = np.nan
    return DominanceCurve(meta.grid, fr, meta.cohort_labels)


def _irwin_hall_cdf(s, m: int):
    """CDF of the sum of ``m`` independent uniforms, exact alternating sum.

    Evaluated on the nearer half (``s <= m/2``) where the sum is best
    conditioned, using the symmetry ``F(s) = 1 - F(m - s)``.
    """
    s = np.asarray(s, dtype=float)
    flip = s > m / 2.0
    t = np.where(flip, m - s, s)
    total = np.zeros_like(t)
    for k in range(int(np.floor(m / 2.0)) + 1):
        total += np.where(t > k, (-1) ** k * math.comb(m, k) * np.clip(t - k, 0.0, None) ** m, 0.0)
    cdf = np.clip(total / math.factorial(m), 0.0, 1.0)
    cdf = np.where(flip, 1.0 - cdf, cdf)
    out = np.where(s <= 0, 0.0, np.where(s >= m, 1.0, cdf))
    return float(out) if out.ndim == 0 else out


def _check_p(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim > 2:
        raise ValueError("p must be a vector or a 2-D array with one set of p-values per row")
    if p.size == 0:
        raise OutOfRangeP("no p-values to combine")
    if not (np.all(p > 0) and np.all(p <= 1)):  # NaN fails both comparisons
        raise OutOfRangeP(f"p-values must lie in (0, 1], got {p.ravel()[:10].tolist()}")
    return p


def combine_pvalues(p, weights=None, method: str = "stouffer", sample_sizes=None):
    """Combine independent p-values into one.

    Parameters
    ----------
    p : array_like
        One set of p-values, or a 2-D array holding one set per row.
    weights : array_like, optional
        Only used by ``stouffer``. When absent they default to
        ``sqrt(sample_sizes)`` if sample sizes are given and to equal weights
        otherwise.
    method : str
        One of ``stouffer``, ``tippett``, ``fisher``, ``edgington``,
        ``wilkinson_max`` or ``logitp``.

    Returns
    -------
    float, or an array with one combined p-value per row of a 2-D ``p``.
    """
    p = _check_p(p)
    batch = p.ndim == 2
    P = p if batch else p[None, :]
    m = P.shape[1]
    if method == "stouffer":
        if weights is None:
            weights = np.sqrt(np.asarray(sample_sizes, float)) if sample_sizes is not None else np.ones(m)
        w = np.asarray(weights, dtype=float).ravel()
        if w.size != m or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("stouffer weights must be positive and match the p-values")
        # scipy.special ufuncs: same functions as scipy.stats without the per-call overhead
        z = (-special.ndtri(P) @ w) / np.sqrt(np.sum(w**2))
        out = special.ndtr(-z)
    elif method == "tippett":
        out = -np.expm1(m * np.log1p(-P.min(axis=1)))
    elif method == "fisher":
        out = special.chdtrc(2 * m, -2.0 * np.log(P).sum(axis=1))
    elif method == "wilkinson_max":
        out = P.max(axis=1) ** m
    elif method == "edgington":
        s = P.sum(axis=1)
        if m <= IRWIN_HALL_EXACT_MAX:
            out = _irwin_hall_cdf(s, m)
        else:
            out = special.ndtr((s - m / 2.0) / math.sqrt(m / 12.0))
    elif method == "logitp":
        mult = math.sqrt((15 * m + 12) / ((5 * m + 2) * m * math.pi**2))
        with np.errstate(divide="ignore"):
            t = -special.logit(P).sum(axis=1) * mult
        out = special.stdtr(5 * m + 4, -t)
    else:
        raise ValueError(f"unknown method {method!r}; choose from {PVALUE_METHODS}")
    out = np.asarray(out, dtype=float)
    return out if batch else float(out[0])


def metagam(models, grid, term: str, method: str = "FE", intercept: bool = False,
            range_restrict: bool = False, se_with_mean: bool = False):
    """Predict ``term`` from every model over ``grid`` and pool the predictions.

    Returns ``(MetaFit, predictions)``. Models may be full or stripped.
    """
    grid = _grid_frame(grid)
    preds = [predict_term(m, term, grid, intercept, se_with_mean) for m in models]
    return pool_pointwise(preds, method, range_restrict), preds


def meta_pvalue(models, term: str, method: str = "stouffer", weights=None) -> float:
    """Combine the per-cohort p-values of ``term`` (Stouffer weights default to sqrt(n))."""
    p = [m.term_pvalues[term] for m in models]
    n = [m.n for m in models]
    return combine_pvalues(p, weights, method, sample_sizes=n)
