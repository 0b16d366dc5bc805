"""Penalized least squares and GCV smoothing-parameter search.

The objective is ``||y - X b||^2 + sum_j lambda_j b' S_j b`` with each ``S_j``
acting on a contiguous block of coefficients. Solves go through the QR
factor of ``X`` stacked on penalty square roots, which stays well conditioned
for very large ``lambda``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.optimize import minimize

DEFAULT_LAMBDA_GRID = np.logspace(-6, 6, 30)
DEFAULT_SWEEPS = 2


@dataclass(frozen=True)
class Penalty:
    """Penalty matrix ``S`` acting on coefficients ``block`` of the full vector."""

    block: slice
    S: np.ndarray
    label: str = ""


@dataclass(frozen=True)
class PLSFit:
    beta: np.ndarray
    lambdas: np.ndarray
    rss: float
    edf: np.ndarray  # per-coefficient diagonal of the influence (hat) transform
    gcv: float
    a_inv: np.ndarray  # (X'X + S_lambda)^{-1}

    @property
    def edf_total(self) -> float:
        return float(self.edf.sum())


def _penalty_root(S: np.ndarray) -> np.ndarray:
    """Matrix ``E`` with ``E.T @ E == S`` (rows for positive eigenvalues only)."""
    w, V = np.linalg.eigh((S + S.T) / 2.0)
    keep = w > w.max() * 1e-13 if w.max() > 0 else np.zeros_like(w, dtype=bool)
    return np.sqrt(w[keep])[:, None] * V[:, keep].T


class PenalizedLS:
    """Precomputed factorization of one penalized regression problem."""

    def __init__(self, X, y, penalties: Sequence[Penalty]):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        self.n, self.p = X.shape
        self.penalties: List[Penalty] = list(penalties)
        Q, R = np.linalg.qr(X)
        self.R = R
        self.f = Q.T @ y
        resid = y - Q @ self.f
        self.rss_perp = float(resid @ resid)
        # RSS below rounding resolution carries no information; flooring it
        # makes exact fits tie, and ties resolve towards the smoother end.
        self.rss_floor = 1e-13 * float(y @ y)
        self.XtX = R.T @ R
        self._roots = [_penalty_root(pen.S) for pen in self.penalties]
        self.scales = np.empty(len(self.penalties))
        for j, pen in enumerate(self.penalties):
            block = self.XtX[pen.block, pen.block]
            s_norm = np.linalg.norm(pen.S)
            self.scales[j] = np.linalg.norm(block) / s_norm if s_norm > 0 else 1.0
            if not np.isfinite(self.scales[j]) or self.scales[j] <= 0:
                self.scales[j] = 1.0

    def fit(self, lambdas) -> PLSFit:
        lambdas = np.asarray(lambdas, dtype=float).ravel()
        if lambdas.size != len(self.penalties):
            raise ValueError(f"expected {len(self.penalties)} smoothing parameters, got {lambdas.size}")
        if np.any(lambdas < 0) or not np.all(np.isfinite(lambdas)):
            raise ValueError("smoothing parameters must be finite and non-negative")
        rows = [self.R]
        for lam, pen, E in zip(lambdas, self.penalties, self._roots):
            if lam == 0 or E.shape[0] == 0:
                continue
            block = np.zeros((E.shape[0], self.p))
            block[:, pen.block] = np.sqrt(lam) * E
            rows.append(block)
        M = np.vstack(rows)
        Q2, R2 = np.linalg.qr(M)
        rhs = Q2[: self.R.shape[0]].T @ self.f
        beta = solve_triangular(R2, rhs)
        R2_inv = solve_triangular(R2, np.eye(self.p))
        a_inv = R2_inv @ R2_inv.T
        edf = np.einsum("ij,ji->i", a_inv, self.XtX)
        fitted_gap = self.f - self.R @ beta
        rss = self.rss_perp + float(fitted_gap @ fitted_gap)
        denom = self.n - edf.sum()
        gcv = self.n * max(rss, self.rss_floor) / denom**2 if denom > 0 else np.inf
        return PLSFit(beta, lambdas, rss, edf, float(gcv), a_inv)


@dataclass(frozen=True)
class GcvSearch:
    """Result of the coordinate-wise GCV grid search."""

    lambdas: np.ndarray
    score: float
    trace: Tuple[Tuple[Tuple[float, ...], float], ...]  # (lambdas, gcv) for every evaluation


def gcv_search(problem: PenalizedLS, lambda_grid=None, sweeps: int = DEFAULT_SWEEPS,
               refine: bool = False) -> GcvSearch:
    """Minimize GCV over ``lambda_grid`` (relative to each penalty's scale).

    Starts every smoothing parameter at the grid point closest to 1 and runs
    ``sweeps`` coordinate-descent passes, each trying every grid value for
    one penalty with the others held fixed. With ``refine`` the grid optimum
    seeds a bounded quasi-Newton search over ``log10(lambda)`` within the
    grid's span.
    """
    grid = np.asarray(DEFAULT_LAMBDA_GRID if lambda_grid is None else lambda_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
        raise ValueError("lambda_grid must be a non-empty vector of positive values")
    J = len(problem.penalties)
    if J == 0:
        fit = problem.fit([])
        return GcvSearch(np.empty(0), fit.gcv, (((), fit.gcv),))
    idx = np.full(J, int(np.argmin(np.abs(np.log(grid)))))
    cache = {}

    def score(index):
        key = tuple(index)
        if key not in cache:
            cache[key] = problem.fit(grid[index] * problem.scales).gcv
        return cache[key]

    best = score(idx)
    for _ in range(sweeps):
        for j in range(J):
            scores = []
            for g in range(grid.size):
                trial = idx.copy()
                trial[j] = g
                scores.append(score(trial))
            g_best = int(np.argmin(scores))
            if scores[g_best] < best:
                best = scores[g_best]
                idx[j] = g_best
    trace = [(tuple(grid[np.array(k)] * problem.scales), v) for k, v in cache.items()]
    rel = grid[idx]
    if refine:
        lo, hi = np.log10(grid.min()), np.log10(grid.max())

        def objective(z):
            v = problem.fit(10.0**z * problem.scales).gcv
            trace.append((tuple(10.0**z * problem.scales), v))
            return v

        res = minimize(objective, np.log10(rel), method="L-BFGS-B", bounds=[(lo, hi)] * J,
                       options={"eps": 1e-4, "maxiter": 50})
        if res.fun < best:
            best, rel = float(res.fun), 10.0**res.x
    return GcvSearch(rel * problem.scales, float(best), tuple(trace))


def select_lambda_gcv(X, y, penalties: Sequence[Penalty], lambda_grid=None,
                      sweeps: int = DEFAULT_SWEEPS, refine: bool = False) -> np.ndarray:
    """GCV-optimal smoothing parameters (in the units of each ``S_j``)."""
    return gcv_search(PenalizedLS(X, y, penalties), lambda_grid, sweeps, refine).lambdas


def dependent_columns(X, rtol: float = 1e-7) -> np.ndarray:
    """Indices of columns of ``X`` that are (numerically) linear combinations of others.

    Columns are scaled to unit norm; a zero column is always dependent.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 0:
        return np.empty(0, dtype=int)
    norms = np.linalg.norm(X, axis=0)
    zero = norms <= np.finfo(float).tiny
    Xs = X / np.where(zero, 1.0, norms)
    Xs[:, zero] = 0.0
    _, R, piv = qr(Xs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size < X.shape[1]:
        diag = np.concatenate([diag, np.zeros(X.shape[1] - diag.size)])
    lead = diag[0] if diag.size and diag[0] > 0 else 1.0
    bad = piv[diag <= rtol * lead]
    return np.sort(np.union1d(bad, np.flatnonzero(zero)))
