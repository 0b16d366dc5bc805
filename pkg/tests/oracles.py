"""Independent reference implementations used by the unit and acceptance tests."""
import numpy as np

from metagam.solver import Penalty


def difference_penalty(k, order=2):
    D = np.diff(np.eye(k), n=order, axis=0)
    return D.T @ D


def random_pls_instance(rng, max_n=300, max_k=25):
    """Random penalized regression: design, response, penalties, smoothing parameters."""
    k = int(rng.integers(4, max_k + 1))
    n = int(rng.integers(k + 5, max_n + 1))
    X = rng.normal(size=(n, k))
    X[:, 0] = 1.0
    y = X @ rng.normal(size=k) + rng.normal(size=n)
    penalties, start = [], 1
    while start < k - 2:
        width = int(rng.integers(3, k - start + 1))
        penalties.append(Penalty(slice(start, start + width), difference_penalty(width)))
        start += width
    lambdas = 10.0 ** rng.uniform(-3, 3, len(penalties))
    return X, y, penalties, lambdas


def normal_equations(X, y, penalties, lambdas):
    """Dense oracle: solve ``(X'X + sum lambda_j S_j) beta = X'y``."""
    A = X.T @ X
    for lam, pen in zip(lambdas, penalties):
        A[pen.block, pen.block] += lam * pen.S
    return np.linalg.solve(A, X.T @ y), A


def dense_gcv(X, y, penalties, lambdas):
    beta, A = normal_equations(X, y, penalties, lambdas)
    H = X @ np.linalg.solve(A, X.T)
    rss = float(np.sum((y - X @ beta) ** 2))
    n = len(y)
    return n * rss / (n - np.trace(H)) ** 2, np.trace(H)


def stouffer_oracle(p, w):
    from scipy import stats

    z = np.sum(w * stats.norm.isf(p)) / np.sqrt(np.sum(np.square(w)))
    return z, stats.norm.sf(z)


def term_prediction(fit, se, in_range=None, label="c", grid=None):
    """A TermPrediction built straight from arrays."""
    import pandas as pd

    from metagam.gam import TermPrediction

    fit = np.atleast_1d(np.asarray(fit, dtype=float))
    se = np.atleast_1d(np.asarray(se, dtype=float))
    grid = pd.DataFrame({"x": np.arange(fit.size, dtype=float)}) if grid is None else grid
    in_range = np.ones(fit.size, bool) if in_range is None else np.asarray(in_range, bool)
    return TermPrediction(grid, fit, se, False, "s(x)", in_range, label, 100)
