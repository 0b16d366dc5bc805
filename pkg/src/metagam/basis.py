"""Cubic B-spline smooth terms: knots, basis evaluation, roughness penalty, constraints.

A smooth term with ``basis_dim = K`` uses ``K - 4`` interior knots and the
clamped cubic B-spline basis on ``[low, high]``. Outside the boundary the
spline is continued linearly (value and slope continuous). Identifiability
constraints are absorbed by an orthonormal null-space reparameterization
``Z`` so that constrained coefficients map to unconstrained ones as
``gamma = Z @ theta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import BSpline

from .exceptions import EmptyInput, NonFiniteInput, TooFewDistinctValues
from .validation import as_float_vector, check_same_length

DEGREE = 3
ORDER = DEGREE + 1
PENALTY_ORDER = 2
CONSTRAINTS = ("sum_to_zero", "point", "none")
PLACEMENT_RULES = ("quantile", "uniform", "explicit")

# 3-point Gauss-Legendre integrates the piecewise quadratic B_j'' B_k'' exactly.
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(3)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class KnotSequence:
    """Interior knots plus boundary of a cubic spline.

    ``interior_knots`` may be empty (``basis_dim == 4`` gives a single cubic).
    """

    interior_knots: Tuple[float, ...]
    boundary: Tuple[float, float]
    placement_rule: str = "explicit"

    def __post_init__(self):
        interior = tuple(float(k) for k in self.interior_knots)
        low, high = (float(b) for b in self.boundary)
        object.__setattr__(self, "interior_knots", interior)
        object.__setattr__(self, "boundary", (low, high))
        if self.placement_rule not in PLACEMENT_RULES:
            raise ValueError(f"unknown placement rule {self.placement_rule!r}")
        if not all(np.isfinite(interior)) or not (np.isfinite(low) and np.isfinite(high)):
            raise NonFiniteInput("knots must be finite")
        if not low < high:
            raise ValueError(f"boundary must satisfy low < high, got ({low}, {high})")
        if any(b <= a for a, b in zip(interior, interior[1:])):
            raise ValueError("interior knots must be strictly increasing")
        if interior and not (low < interior[0] and interior[-1] < high):
            raise ValueError("interior knots must lie strictly inside the boundary")

    @property
    def basis_dim(self) -> int:
        return len(self.interior_knots) + ORDER

    @property
    def full_knots(self) -> np.ndarray:
        """Clamped knot vector with the boundary repeated ``ORDER`` times."""
        low, high = self.boundary
        return np.concatenate([[low] * ORDER, self.interior_knots, [high] * ORDER])

    @property
    def breakpoints(self) -> np.ndarray:
        low, high = self.boundary
        return np.concatenate([[low], self.interior_knots, [high]])

    def greville(self) -> np.ndarray:
        """Greville abscissae; coefficients ``a + b * greville`` reproduce ``a + b x``."""
        t = self.full_knots
        return np.array([t[k + 1:k + ORDER].mean() for k in range(self.basis_dim)])

    def to_dict(self) -> dict:
        return {
            "interior_knots": list(self.interior_knots),
            "boundary": list(self.boundary),
            "placement_rule": self.placement_rule,
        }

    @classmethod
    def from_dict(cls, d) -> "KnotSequence":
        return cls(tuple(d["interior_knots"]), tuple(d["boundary"]), d["placement_rule"])


def place_knots(x, basis_dim: int, rule: str = "quantile") -> KnotSequence:
    """Place ``basis_dim - 4`` interior knots for a cubic B-spline basis.

    ``quantile`` uses equally spaced quantiles (linear interpolation, type 7)
    of the distinct values of ``x``; ``uniform`` spaces them evenly between
    ``min(x)`` and ``max(x)``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("cannot place knots on empty input")
    x = as_float_vector(x)
    if int(basis_dim) != basis_dim or basis_dim < ORDER:
        raise ValueError(f"basis_dim must be an integer >= {ORDER}, got {basis_dim}")
    basis_dim = int(basis_dim)
    if rule not in ("quantile", "uniform"):
        raise ValueError(f"place_knots supports 'quantile' and 'uniform', got {rule!r}")
    distinct = np.unique(x)
    if distinct.size < basis_dim:
        raise TooFewDistinctValues(
            f"{distinct.size} distinct values cannot support basis_dim={basis_dim}"
        )
    n_interior = basis_dim - ORDER
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    low, high = float(distinct[0]), float(distinct[-1])
    if rule == "quantile":
        interior = np.quantile(distinct, probs)
    else:
        interior = low + (high - low) * probs
    return KnotSequence(tuple(interior), (low, high), rule)


def bspline_basis(knots: KnotSequence, x, deriv: int = 0) -> np.ndarray:
    """Unconstrained cubic B-spline basis (or derivative) at ``x``, shape ``(n, K)``.

    Values outside the boundary follow the linear continuation of the spline,
    so the second derivative there is zero.
    """
    x = np.asarray(x, dtype=float).ravel()
    K = knots.basis_dim
    spline = BSpline(knots.full_knots, np.eye(K), DEGREE, extrapolate=False)
    low, high = knots.boundary
    inside = (x >= low) & (x <= high)
    out = np.zeros((x.size, K))
    if inside.any():
        out[inside] = spline.derivative(deriv)(x[inside]) if deriv else spline(x[inside])
    if deriv >= 2:
        return out
    for edge, mask in ((low, x < low), (high, x > high)):
        if not mask.any():
            continue
        slope = spline.derivative(1)(np.array([edge]))[0]
        if deriv == 1:
            out[mask] = slope
        else:
            value = spline(np.array([edge]))[0]
            out[mask] = value + np.outer(x[mask] - edge, slope)
    return out


def unconstrained_penalty(knots: KnotSequence) -> np.ndarray:
    """Gram matrix of second derivatives, ``S[j, k] = int b_j'' b_k''`` over the boundary."""
    brk = knots.breakpoints
    a, b = brk[:-1], brk[1:]
    half = (b - a) / 2.0
    pts = ((a + b) / 2.0)[:, None] + half[:, None] * _GAUSS_NODES[None, :]
    wts = half[:, None] * _GAUSS_WEIGHTS[None, :]
    d2 = bspline_basis(knots, pts.ravel(), deriv=2)
    S = d2.T @ (d2 * wts.ravel()[:, None])
    return (S + S.T) / 2.0


def constraint_transform(row: Optional[np.ndarray], basis_dim: int) -> np.ndarray:
    """Orthonormal basis ``Z`` of the null space of the constraint ``row @ gamma = 0``."""
    if row is None:
        return np.eye(basis_dim)
    c = np.asarray(row, dtype=float).reshape(-1, 1)
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


def term_label(covariate: str, by: Optional[str] = None) -> str:
    return f"s({covariate})" if by is None else f"s({covariate}):{by}"


@dataclass(frozen=True)
class SmoothSpec:
    """A smooth term: covariate, knots, identifiability constraint and optional ``by``.

    ``constraint_row`` stores the resolved linear constraint (column means of
    the basis over the constraint data, or the basis row at ``point``). An
    unresolved ``sum_to_zero`` spec takes its constraint from whatever data is
    passed to :func:`eval_basis`.
    """

    covariate: str
    knots: KnotSequence
    constraint: str = "sum_to_zero"
    point: Optional[float] = None
    by: Optional[str] = None
    id: str = ""
    constraint_row: Optional[Tuple[float, ...]] = field(default=None, compare=True)

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", term_label(self.covariate, self.by))
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.constraint == "point":
            if self.point is None or not np.isfinite(self.point):
                raise ValueError("point constraint requires a finite point")
            object.__setattr__(self, "point", float(self.point))
        if self.constraint_row is not None:
            row = tuple(float(v) for v in self.constraint_row)
            if len(row) != self.basis_dim:
                raise ValueError("constraint_row length must equal basis_dim")
            object.__setattr__(self, "constraint_row", row)

    @property
    def basis_dim(self) -> int:
        return self.knots.basis_dim

    @property
    def penalty_order(self) -> int:
        return PENALTY_ORDER

    @property
    def n_coef(self) -> int:
        """Number of columns after the constraint is absorbed."""
        return self.basis_dim - (self.constraint != "none")

    @property
    def resolved(self) -> bool:
        return self.constraint == "none" or self.constraint_row is not None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "covariate": self.covariate,
            "by": self.by,
            "basis_dim": self.basis_dim,
            "knots": self.knots.to_dict(),
            "constraint": self.constraint,
            "point": self.point,
            "constraint_row": None if self.constraint_row is None else list(self.constraint_row),
            "penalty_order": PENALTY_ORDER,
        }

    @classmethod
    def from_dict(cls, d) -> "SmoothSpec":
        knots = KnotSequence.from_dict(d["knots"])
        if d.get("basis_dim", knots.basis_dim) != knots.basis_dim:
            raise ValueError("basis_dim does not match knot count")
        row = d.get("constraint_row")
        return cls(
            covariate=d["covariate"],
            knots=knots,
            constraint=d["constraint"],
            point=d.get("point"),
            by=d.get("by"),
            id=d["id"],
            constraint_row=None if row is None else tuple(row),
        )


def resolve_constraint(spec: SmoothSpec, x=None) -> SmoothSpec:
    """Freeze the constraint of ``spec``; ``sum_to_zero`` uses the mean basis row over ``x``."""
    if spec.constraint == "none":
        return replace(spec, constraint_row=None)
    if spec.constraint == "point":
        row = bspline_basis(spec.knots, [spec.point])[0]
    else:
        if x is None:
            if spec.constraint_row is not None:
                return spec
            raise ValueError(f"sum_to_zero constraint of {spec.id} needs constraint data")
        row = bspline_basis(spec.knots, as_float_vector(x, spec.covariate)).mean(axis=0)
    return replace(spec, constraint_row=tuple(row))


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray
    penalty: np.ndarray
    constraint_transform: np.ndarray

    def __post_init__(self):
        for name in ("values", "penalty", "constraint_transform"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


def _transform_for(spec: SmoothSpec, x: np.ndarray) -> np.ndarray:
    if spec.constraint == "none":
        return np.eye(spec.basis_dim)
    if not spec.resolved:
        spec = resolve_constraint(spec, x)
    return constraint_transform(np.asarray(spec.constraint_row), spec.basis_dim)


def eval_basis(spec: SmoothSpec, x) -> BasisMatrix:
    """Evaluate the constrained basis of ``spec`` at ``x``."""
    x = as_float_vector(x, spec.covariate)
    Z = _transform_for(spec, x)
    B = bspline_basis(spec.knots, x)
    return BasisMatrix(B @ Z, Z.T @ unconstrained_penalty(spec.knots) @ Z, Z)


def penalty_matrix(spec: SmoothSpec) -> np.ndarray:
    """Second-derivative penalty in the constrained parameterization."""
    if not spec.resolved:
        raise ValueError(f"constraint of {spec.id} is unresolved; call resolve_constraint first")
    Z = constraint_transform(
        None if spec.constraint_row is None else np.asarray(spec.constraint_row), spec.basis_dim
    )
    P = Z.T @ unconstrained_penalty(spec.knots) @ Z
    return (P + P.T) / 2.0


def expand_by(basis: BasisMatrix, by) -> BasisMatrix:
    """Varying-coefficient expansion: scale each basis row by ``by``."""
    by = np.asarray(by, dtype=float).ravel()
    check_same_length(basis.values, by, ("basis rows", "by"))
    if not np.all(np.isfinite(by)):
        raise NonFiniteInput("by variable contains non-finite values")
    return BasisMatrix(basis.values * by[:, None], basis.penalty, basis.constraint_transform)
