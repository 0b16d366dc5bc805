"""Meta-analysis of penalized-spline additive models fitted in separate cohorts.

Each cohort fits a model locally (:func:`fit_gam` or :class:`GAM`), strips the
individual-level data (:func:`strip_rawdata`) and shares the resulting
``.metagam.json`` file. Pooling happens pointwise over a grid of covariate
values (:func:`pool_pointwise`, :func:`metagam`), and term-level p-values can
be combined with :func:`combine_pvalues`.
"""
from . import exceptions
from .basis import KnotSequence, SmoothSpec, bspline_basis, eval_basis, penalty_matrix, place_knots
from .formula import parse_formula
from .gam import GAM, FittedGam, TermPrediction, fit_gam, fit_summary, predict, predict_term, predict_terms
from .meta import (
    DominanceCurve,
    HeterogeneityCurve,
    MetaFit,
    cochran_q,
    combine_pvalues,
    confidence_band,
    dominance,
    meta_pvalue,
    metagam,
    pool_pointwise,
    register_tau2_estimator,
)
from .solver import PenalizedLS, Penalty, gcv_search
from .strip import StrippedModel, audit_privacy, deserialize, load, save, serialize, strip_rawdata

__version__ = "0.1.0"

__all__ = [
    "exceptions", "KnotSequence", "SmoothSpec", "bspline_basis", "eval_basis", "penalty_matrix",
    "place_knots", "parse_formula", "GAM", "FittedGam", "TermPrediction", "fit_gam", "fit_summary",
    "predict", "predict_term", "predict_terms", "DominanceCurve", "HeterogeneityCurve", "MetaFit",
    "cochran_q", "combine_pvalues", "confidence_band", "dominance", "meta_pvalue", "metagam",
    "pool_pointwise", "register_tau2_estimator", "PenalizedLS", "Penalty", "gcv_search",
    "StrippedModel", "audit_privacy", "deserialize", "load", "save", "serialize", "strip_rawdata",
]
