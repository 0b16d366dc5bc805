"""Raw-data-free model summaries and their canonical JSON form.

A :class:`StrippedModel` keeps exactly what prediction, term p-values and
pointwise meta-analysis need: knots and constraints, coefficients and their
covariance, smoothing summaries, covariate ranges and deciles. Random-effect
coefficients (one per subject) and every per-observation quantity are
dropped, and :func:`audit_privacy` re-checks that structurally.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import jsonschema
import numpy as np

from .basis import SmoothSpec
from .exceptions import PrivacyViolation, SchemaViolation, VersionMismatch
from .formula import ModelFormula, SmoothTerm
from .gam import Block, FittedGam, ModelView

FORMAT_VERSION = 1
SUFFIX = ".metagam.json"
FULL_SUFFIX = ".gam.json"


@dataclass(frozen=True)
class StrippedModel(ModelView):
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
    cohort_label: str = "cohort"
    format_version: int = FORMAT_VERSION

    def __eq__(self, other):
        if not isinstance(other, StrippedModel):
            return NotImplemented
        return to_document(self) == to_document(other)

    __hash__ = None


def strip_rawdata(model: FittedGam) -> StrippedModel:
    """Drop individual-level data (observations, residuals, subject effects)."""
    keep = [b for b in model.blocks if b.kind != "random"]
    p = max(b.stop for b in keep)
    if any(b.kind == "random" and b.start < p for b in model.blocks):
        raise ValueError("random-effect block must come last in the coefficient vector")
    coef = np.array(model.coefficients[:p])
    cov = np.array(model.covariance[:p, :p])
    sm = StrippedModel(
        formula=model.formula,
        smooths=model.smooths,
        blocks=tuple(keep),
        coefficient_labels=tuple(model.coefficient_labels[:p]),
        coefficients=coef,
        covariance=cov,
        scale=float(model.scale),
        lambdas=dict(model.lambdas),
        edf=dict(model.edf),
        edf_total=float(model.edf_total),
        n=int(model.n),
        n_subjects=model.n_subjects,
        term_pvalues=dict(model.term_pvalues),
        covariate_ranges={k: tuple(v) for k, v in model.covariate_ranges.items()},
        covariate_deciles={k: tuple(v) for k, v in model.covariate_deciles.items()},
        factor_levels={k: tuple(v) for k, v in model.factor_levels.items()},
        column_means=np.array(model.column_means[:p]),
        cohort_label=model.cohort_label,
    )
    audit_privacy(sm)
    return sm


def _formula_document(formula: ModelFormula, smooths) -> dict:
    return {
        "response": formula.response,
        "linear_terms": list(formula.linear_terms),
        "random_intercept": formula.random_intercept,
        "source": str(formula),
        "smooth_terms": [s.to_dict() for s in smooths],
    }


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def to_document(sm: StrippedModel) -> dict:
    return {
        "format_version": int(sm.format_version),
        "cohort_label": sm.cohort_label,
        "formula": _formula_document(sm.formula, sm.smooths),
        "blocks": [b.to_dict() for b in sm.blocks],
        "coefficient_labels": list(sm.coefficient_labels),
        "coefficients": _floats(sm.coefficients),
        "covariance": [_floats(row) for row in np.asarray(sm.covariance)],
        "scale": float(sm.scale),
        "lambdas": {k: float(v) for k, v in sm.lambdas.items()},
        "edf": {k: float(v) for k, v in sm.edf.items()},
        "edf_total": float(sm.edf_total),
        "n": int(sm.n),
        "n_subjects": None if sm.n_subjects is None else int(sm.n_subjects),
        "term_pvalues": {k: float(v) for k, v in sm.term_pvalues.items()},
        "covariate_ranges": {k: _floats(v) for k, v in sm.covariate_ranges.items()},
        "covariate_deciles": {k: _floats(v) for k, v in sm.covariate_deciles.items()},
        "factor_levels": {k: [str(x) for x in v] for k, v in sm.factor_levels.items()},
        "column_means": _floats(sm.column_means),
    }


def canonical_json(doc) -> bytes:
    """UTF-8 JSON with sorted keys, no whitespace and shortest round-trip floats."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def serialize(sm: StrippedModel) -> bytes:
    audit_privacy(sm)
    return canonical_json(to_document(sm))


def _schema():
    text = resources.files("metagam").joinpath("schemas/stripped_model.schema.json").read_text("utf-8")
    return json.loads(text)


_VALIDATOR = None


def _validator():
    global _VALIDATOR
    if _VALIDATOR is None:
        schema = _schema()
        jsonschema.Draft202012Validator.check_schema(schema)
        _VALIDATOR = jsonschema.Draft202012Validator(schema)
    return _VALIDATOR


def _pointer(path) -> str:
    return "".join(f"/{str(p).replace('~', '~0').replace('/', '~1')}" for p in path)


def validate_document(doc) -> None:
    """Raise :class:`SchemaViolation` (with a JSON pointer) or :class:`VersionMismatch`."""
    if not isinstance(doc, dict):
        raise SchemaViolation("document must be a JSON object", "")
    if "format_version" in doc and doc["format_version"] != FORMAT_VERSION:
        raise VersionMismatch(
            f"unsupported format_version {doc['format_version']!r}; this reader handles {FORMAT_VERSION}"
        )
    errors = sorted(_validator().iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        pointer = _pointer(err.absolute_path)
        if err.validator == "required":
            # one error per missing property; match the name quoted in this message
            missing = [r for r in err.validator_value
                       if r not in err.instance and err.message.startswith(repr(r))]
            if missing:
                pointer += _pointer([missing[0]])
        raise SchemaViolation(err.message, pointer)
    p = len(doc["coefficients"])
    if len(doc["covariance"]) != p or any(len(r) != p for r in doc["covariance"]):
        raise SchemaViolation(f"covariance must be {p} x {p}", "/covariance")
    for name in ("coefficient_labels", "column_means"):
        if len(doc[name]) != p:
            raise SchemaViolation(f"{name} must have {p} entries", f"/{name}")
    stop = 0
    for i, b in enumerate(doc["blocks"]):
        if b["start"] != stop or b["stop"] <= b["start"]:
            raise SchemaViolation("blocks must tile the coefficient vector", f"/blocks/{i}")
        stop = b["stop"]
    if stop != p:
        raise SchemaViolation("blocks do not cover every coefficient", "/blocks")
    for i, s in enumerate(doc["formula"]["smooth_terms"]):
        if len(s["knots"]["interior_knots"]) + 4 != s["basis_dim"]:
            raise SchemaViolation("knot count does not match basis_dim",
                                  f"/formula/smooth_terms/{i}/knots/interior_knots")


def from_document(doc) -> StrippedModel:
    validate_document(doc)
    try:
        smooths = tuple(SmoothSpec.from_dict(s) for s in doc["formula"]["smooth_terms"])
    except (ValueError, KeyError) as exc:
        raise SchemaViolation(str(exc), "/formula/smooth_terms") from None
    f = doc["formula"]
    formula = ModelFormula(
        response=f["response"],
        smooth_terms=tuple(SmoothTerm(s.covariate, s.basis_dim, s.by, s.constraint, s.point)
                           for s in smooths),
        linear_terms=tuple(f["linear_terms"]),
        random_intercept=f["random_intercept"],
        source=f["source"],
    )
    sm = StrippedModel(
        formula=formula,
        smooths=smooths,
        blocks=tuple(Block.from_dict(b) for b in doc["blocks"]),
        coefficient_labels=tuple(doc["coefficient_labels"]),
        coefficients=np.array(doc["coefficients"], dtype=float),
        covariance=np.array(doc["covariance"], dtype=float).reshape(len(doc["coefficients"]), -1),
        scale=float(doc["scale"]),
        lambdas=dict(doc["lambdas"]),
        edf=dict(doc["edf"]),
        edf_total=float(doc["edf_total"]),
        n=int(doc["n"]),
        n_subjects=doc["n_subjects"],
        term_pvalues=dict(doc["term_pvalues"]),
        covariate_ranges={k: tuple(v) for k, v in doc["covariate_ranges"].items()},
        covariate_deciles={k: tuple(v) for k, v in doc["covariate_deciles"].items()},
        factor_levels={k: tuple(v) for k, v in doc["factor_levels"].items()},
        column_means=np.array(doc["column_means"], dtype=float),
        cohort_label=doc["cohort_label"],
        format_version=doc["format_version"],
    )
    audit_privacy(sm)
    return sm


def deserialize(data: Union[bytes, str]) -> StrippedModel:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaViolation(f"not valid JSON: {exc}", "") from None
    return from_document(doc)


def _array_lengths(node, path=""):
    if isinstance(node, dict):
        for k, v in node.items():
            yield from _array_lengths(v, f"{path}/{k}")
    elif isinstance(node, list):
        yield path, len(node)
        for i, v in enumerate(node):
            yield from _array_lengths(v, f"{path}/{i}")


def _structural_length(path: str, doc) -> Optional[int]:
    """Length an array must have given the model's dimensions, if pinned."""
    p = len(doc["coefficients"])
    parts = path.strip("/").split("/")
    head = parts[0]
    if head in ("coefficients", "coefficient_labels", "column_means"):
        return p
    if head == "covariance":
        return p
    if head == "covariate_deciles":
        return 9
    if head == "covariate_ranges":
        return 2
    if head == "blocks":
        return len(doc["blocks"])
    if head == "formula" and len(parts) >= 3 and parts[1] == "smooth_terms":
        spec = doc["formula"]["smooth_terms"][int(parts[2])]
        leaf = parts[-1]
        if leaf == "constraint_row":
            return spec["basis_dim"]
        if leaf == "interior_knots":
            return spec["basis_dim"] - 4
        if leaf == "boundary":
            return 2
    if head == "formula" and len(parts) == 2:
        return len(doc["formula"][parts[1]])
    return None


def audit_privacy(sm: StrippedModel) -> None:
    """Structural check that no array could hold one value per observation or subject.

    Arrays whose length is pinned by the model dimensions (coefficient count,
    basis size, 9 deciles, 2-element ranges) must have exactly that length;
    any other array whose length equals ``n`` or ``n_subjects`` is rejected.
    """
    doc = to_document(sm)
    forbidden = {int(sm.n)} | ({int(sm.n_subjects)} if sm.n_subjects else set())
    for path, length in _array_lengths(doc):
        expected = _structural_length(path, doc)
        if expected is not None:
            if length != expected:
                raise PrivacyViolation(f"{path}: length {length} does not match model dimension {expected}")
            continue
        if length in forbidden:
            raise PrivacyViolation(f"{path}: array of length {length} matches the observation/subject count")
    if any(b.kind == "random" for b in sm.blocks):
        raise PrivacyViolation("stripped model must not contain subject-level random effects")


def save(sm: StrippedModel, path) -> Path:
    path = Path(path)
    path.write_bytes(serialize(sm))
    return path


def load(path) -> StrippedModel:
    return deserialize(Path(path).read_bytes())


# Full (local-only) format: everything in a FittedGam, individual data included.

def full_document(model: FittedGam) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "full",
        "cohort_label": model.cohort_label,
        "formula": _formula_document(model.formula, model.smooths),
        "blocks": [b.to_dict() for b in model.blocks],
        "coefficient_labels": list(model.coefficient_labels),
        "coefficients": _floats(model.coefficients),
        "covariance": [_floats(r) for r in np.asarray(model.covariance)],
        "scale": float(model.scale),
        "lambdas": {k: float(v) for k, v in model.lambdas.items()},
        "edf": {k: float(v) for k, v in model.edf.items()},
        "edf_total": float(model.edf_total),
        "n": int(model.n),
        "n_subjects": model.n_subjects,
        "term_pvalues": {k: float(v) for k, v in model.term_pvalues.items()},
        "covariate_ranges": {k: _floats(v) for k, v in model.covariate_ranges.items()},
        "covariate_deciles": {k: _floats(v) for k, v in model.covariate_deciles.items()},
        "factor_levels": {k: list(v) for k, v in model.factor_levels.items()},
        "column_means": _floats(model.column_means),
        "gcv": float(model.gcv),
        "fitted_values": _floats(model.fitted_values),
        "residuals": _floats(model.residuals),
        "groups": None if model.groups is None else list(model.groups),
    }


def save_full(model: FittedGam, path) -> Path:
    path = Path(path)
    path.write_bytes(canonical_json(full_document(model)))
    return path


def load_full(path) -> FittedGam:
    try:
        doc = json.loads(Path(path).read_bytes())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaViolation(f"not valid JSON: {exc}", "") from None
    if not isinstance(doc, dict) or doc.get("kind") != "full":
        raise SchemaViolation("not a full fitted-model document", "/kind")
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported format_version {doc.get('format_version')!r}")
    smooths = tuple(SmoothSpec.from_dict(s) for s in doc["formula"]["smooth_terms"])
    f = doc["formula"]
    formula = ModelFormula(
        f["response"],
        tuple(SmoothTerm(s.covariate, s.basis_dim, s.by, s.constraint, s.point) for s in smooths),
        tuple(f["linear_terms"]), f["random_intercept"], source=f["source"],
    )
    p = len(doc["coefficients"])
    return FittedGam(
        formula=formula,
        smooths=smooths,
        blocks=tuple(Block.from_dict(b) for b in doc["blocks"]),
        coefficient_labels=tuple(doc["coefficient_labels"]),
        coefficients=np.array(doc["coefficients"], dtype=float),
        covariance=np.array(doc["covariance"], dtype=float).reshape(p, p),
        scale=doc["scale"],
        lambdas=doc["lambdas"],
        edf=doc["edf"],
        edf_total=doc["edf_total"],
        n=doc["n"],
        n_subjects=doc["n_subjects"],
        term_pvalues=doc["term_pvalues"],
        covariate_ranges={k: tuple(v) for k, v in doc["covariate_ranges"].items()},
        covariate_deciles={k: tuple(v) for k, v in doc["covariate_deciles"].items()},
        factor_levels={k: tuple(v) for k, v in doc["factor_levels"].items()},
        column_means=np.array(doc["column_means"], dtype=float),
        gcv=doc["gcv"],
        cohort_label=doc["cohort_label"],
        fitted_values=np.array(doc["fitted_values"], dtype=float),
        residuals=np.array(doc["residuals"], dtype=float),
        groups=None if doc["groups"] is None else tuple(doc["groups"]),
    )
