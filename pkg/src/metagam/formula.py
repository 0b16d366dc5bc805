"""A small model-formula language.

Grammar (whitespace is ignored)::

    response ~ term + term + ...
    term := s(var[, k=N][, by=col][, pc=x0][, constraint=sum_to_zero|none])
          | col
          | (1|group)

``pc=x0`` requests a point constraint at ``x0``. A ``by`` smooth defaults to a
sum-to-zero constraint when its ``by`` column also enters linearly (so the
two are not confounded) and to no constraint otherwise.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .basis import CONSTRAINTS, term_label
from .exceptions import FormulaError

DEFAULT_K = 10

_SMOOTH_RE = re.compile(r"^s\((.*)\)$")
_RANDOM_RE = re.compile(r"^\(\s*1\s*\|\s*([A-Za-z_.][\w.]*)\s*\)$")
_NAME_RE = re.compile(r"^[A-Za-z_.][\w.]*$")


@dataclass(frozen=True)
class SmoothTerm:
    """Declaration of a smooth term before any data are seen."""

    covariate: str
    k: int = DEFAULT_K
    by: Optional[str] = None
    constraint: str = "sum_to_zero"
    point: Optional[float] = None

    @property
    def id(self) -> str:
        return term_label(self.covariate, self.by)


@dataclass(frozen=True)
class ModelFormula:
    response: str
    smooth_terms: Tuple[SmoothTerm, ...] = ()
    linear_terms: Tuple[str, ...] = ()
    random_intercept: Optional[str] = None
    source: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "smooth_terms", tuple(self.smooth_terms))
        object.__setattr__(self, "linear_terms", tuple(self.linear_terms))
        ids = [t.id for t in self.smooth_terms] + list(self.linear_terms)
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise FormulaError(f"duplicate terms: {sorted(dup)}")
        if self.response in self.covariates:
            raise FormulaError(f"response {self.response!r} also used as a covariate")
        for t in self.smooth_terms:
            if t.k < 4:
                raise FormulaError(f"{t.id}: k must be at least 4, got {t.k}")

    @property
    def covariates(self) -> Tuple[str, ...]:
        cols = []
        for t in self.smooth_terms:
            cols += [t.covariate] + ([t.by] if t.by else [])
        cols += list(self.linear_terms)
        if self.random_intercept:
            cols.append(self.random_intercept)
        return tuple(dict.fromkeys(cols))

    def __str__(self):
        if self.source:
            return self.source
        parts = []
        for t in self.smooth_terms:
            args = [t.covariate, f"k={t.k}"]
            if t.by:
                args.append(f"by={t.by}")
            if t.constraint == "point":
                args.append(f"pc={t.point!r}")
            parts.append(f"s({', '.join(args)})")
        parts += list(self.linear_terms)
        if self.random_intercept:
            parts.append(f"(1|{self.random_intercept})")
        return f"{self.response} ~ {' + '.join(parts) or '1'}"


def _split_top_level(rhs: str):
    parts, depth, cur = [], 0, []
    for ch in rhs:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise FormulaError("unbalanced parentheses")
        if ch == "+" and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise FormulaError("unbalanced parentheses")
    parts.append("".join(cur).strip())
    if any(not p for p in parts):
        raise FormulaError("empty term in formula")
    return parts


def _parse_smooth(body: str, linear_names) -> SmoothTerm:
    args = [a.strip() for a in body.split(",")]
    if not args or not _NAME_RE.match(args[0]):
        raise FormulaError(f"s(...) needs a covariate name, got {body!r}")
    kw = {}
    for a in args[1:]:
        if "=" not in a:
            raise FormulaError(f"expected key=value in s(...), got {a!r}")
        key, val = (p.strip() for p in a.split("=", 1))
        kw[key] = val
    unknown = set(kw) - {"k", "by", "pc", "constraint", "bs"}
    if unknown:
        raise FormulaError(f"unknown s() arguments: {sorted(unknown)}")
    try:
        k = int(kw.get("k", DEFAULT_K))
        point = float(kw["pc"]) if "pc" in kw else None
    except ValueError as exc:
        raise FormulaError(f"bad numeric argument in s({body}): {exc}") from None
    by = kw.get("by")
    if by is not None and not _NAME_RE.match(by):
        raise FormulaError(f"bad by variable {by!r}")
    if point is not None:
        constraint = "point"
    elif "constraint" in kw:
        constraint = kw["constraint"]
        if constraint not in CONSTRAINTS or constraint == "point":
            raise FormulaError("constraint must be sum_to_zero or none (use pc= for points)")
    elif by is not None and by not in linear_names:
        constraint = "none"
    else:
        constraint = "sum_to_zero"
    return SmoothTerm(args[0], k, by, constraint, point)


def parse_formula(text: str) -> ModelFormula:
    """Parse ``text`` into a :class:`ModelFormula`."""
    if text.count("~") != 1:
        raise FormulaError("formula must contain exactly one '~'")
    lhs, rhs = (p.strip() for p in text.split("~"))
    if not _NAME_RE.match(lhs):
        raise FormulaError(f"bad response {lhs!r}")
    parts = _split_top_level(rhs)
    linear = [p for p in parts if _NAME_RE.match(p)]
    smooths, random = [], None
    for p in parts:
        if _NAME_RE.match(p) or p == "1":
            continue
        m = _SMOOTH_RE.match(p)
        if m:
            smooths.append(_parse_smooth(m.group(1), linear))
            continue
        m = _RANDOM_RE.match(p)
        if m:
            if random is not None:
                raise FormulaError("only one random intercept is supported")
            random = m.group(1)
            continue
        raise FormulaError(f"cannot parse term {p!r}")
    linear = [p for p in linear if p != "1"]
    return ModelFormula(lhs, tuple(smooths), tuple(linear), random, source=text.strip())
