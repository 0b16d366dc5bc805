"""Wald-type test that a penalized smooth term is identically zero.

The statistic uses a rank-truncated pseudoinverse of the term's covariance.
A non-integer rank is handled by blending the last two eigen-directions so
that the reference distribution becomes a two-component chi-square mixture;
its upper tail comes from a moment-matched noncentral chi-square. When the
scale was estimated, the mixture is divided by an independent
``chi2(res_df) / res_df`` variable, giving an F-type reference.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

_EIG_TOL = np.finfo(float).eps ** 0.9
_P_FLOOR = np.finfo(float).tiny


def _liu_sf(x, weights):
    """Vectorized four-moment (Liu, Tang and Zhang, 2009) tail of a chi-square mixture."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(weights, dtype=float)
    mu = lam.sum()
    c2, c3, c4 = (lam**2).sum(), (lam**3).sum(), (lam**4).sum()
    s1 = c3 / c2**1.5
    s2 = c4 / c2**2
    t = (x - mu) / np.sqrt(2.0 * c2)
    if s1**2 > s2:
        a = 1.0 / (s1 - np.sqrt(s1**2 - s2))
        delta = s1 * a**3 - a**2
        dof = a**2 - 2.0 * delta
    else:
        if c3 == 0:
            return (x < mu).astype(float)
        a, delta = 1.0 / s1, 0.0
        dof = c2**3 / c3**2
    q = t * np.sqrt(2.0) * a + dof + delta
    if delta > 0:
        return stats.ncx2.sf(q, dof, delta)
    return stats.chi2.sf(q, dof)


def mixture_chi2_sf(x: float, weights) -> float:
    """Upper tail of ``sum_i weights[i] * chi2_1`` by four-moment matching.

    Matches skewness and kurtosis to a (possibly noncentral) chi-square
    (Liu, Tang and Zhang, 2009).
    """
    return float(_liu_sf(x, weights))


def mixture_f_sf(x: float, weights, res_df: float, nodes: int = 50) -> float:
    """Upper tail of ``sum_i weights[i] * chi2_1 / (chi2_res_df / res_df)``.

    Midpoint quadrature over the quantiles of the denominator.
    """
    q = stats.chi2.ppf((np.arange(nodes) + 0.5) / nodes, res_df) / res_df
    return float(np.mean(_liu_sf(x * q, weights)))


def smooth_term_test(X, beta, V, rank: float, res_df: float = None) -> float:
    """p-value for ``H0: X @ beta == 0`` given ``Cov(beta) = V``.

    Parameters
    ----------
    X : (n, p) array
        Rows of the term's design (usually the observed data).
    beta, V : term coefficients and their (Bayesian) covariance.
    rank : float
        Effective rank of the test; typically the term's alternative EDF
        ``tr(2F - F F)`` capped at ``p``.
    res_df : float, optional
        Residual degrees of freedom when ``V`` uses an estimated scale; the
        reference distribution is then F-type instead of chi-square.
    """
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    R = np.linalg.qr(X, mode="r")
    Vr = R @ V @ R.T
    ev, vecs = np.linalg.eigh((Vr + Vr.T) / 2.0)
    order = np.argsort(ev)[::-1]
    ev, vecs = ev[order], vecs[:, order]
    if ev[0] <= 0:
        return 1.0
    signs = np.sign(vecs[0])
    vecs = vecs * np.where(signs == 0, 1.0, signs)

    k = max(0, int(np.floor(rank)))
    nu = abs(rank - k)
    k1 = k + 1 if nu > 0 else k
    r_est = int(np.sum(ev > ev[0] * _EIG_TOL))
    if r_est < k1:
        k = k1 = r_est
        nu, rank = 0.0, float(r_est)
    vec = vecs[:, : max(k1, 1)].copy()
    if nu > 0 and k > 0:
        if k > 1:
            vec[:, : k - 1] /= np.sqrt(ev[: k - 1])
        b12 = np.sqrt(max(0.0, 0.5 * nu * (1.0 - nu)))
        scale = np.diag(ev[k - 1 : k1] ** -0.5)
        B = scale @ np.array([[1.0, b12], [b12, nu]]) @ scale
        w, U = np.linalg.eigh(B)
        rB = U @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ U.T
        vec1 = vec.copy()
        vec1[:, k - 1 : k1] = (rB @ np.diag([-1.0, 1.0]) @ vec[:, k - 1 : k1].T).T
        vec[:, k - 1 : k1] = (rB @ vec[:, k - 1 : k1].T).T
    else:
        vec = vec / np.sqrt(ev[: vec.shape[1]])
        vec1 = vec
        if k <= 1:
            rank = 1.0
    Rb = R @ beta
    d = float(np.sum((vec.T @ Rb) ** 2))
    d1 = float(np.sum((vec1.T @ Rb) ** 2))
    rank1 = rank
    pval = 2.0
    if nu > 0:
        if k1 == 1:
            rank1, val = 1.0, np.ones(1)
        else:
            val = np.ones(k1)
            rp = nu + 1.0
            val[k - 1] = (rp + np.sqrt(rp * (2.0 - rp))) / 2.0
            val[k1 - 1] = rp - val[k - 1]
        if res_df is None:
            pval = (mixture_chi2_sf(d, val) + mixture_chi2_sf(d1, val)) / 2.0
        else:
            pval = (mixture_f_sf(d, val, res_df) + mixture_f_sf(d1, val, res_df)) / 2.0
    if pval > 0.5:
        if res_df is None:
            pval = (stats.chi2.sf(d, rank1) + stats.chi2.sf(d1, rank1)) / 2.0
        else:
            pval = (stats.f.sf(d / rank1, rank1, res_df) + stats.f.sf(d1 / rank1, rank1, res_df)) / 2.0
    # an underflowed tail is reported as the smallest positive double so that
    # stored p-values stay valid input for the combiners
    return float(min(1.0, max(_P_FLOOR, pval)))
