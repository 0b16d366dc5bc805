import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone

from metagam import GAM, fit_gam, predict, predict_term, predict_terms
from metagam.exceptions import EmptyInput, MissingColumn, NonFiniteInput, RankDeficientDesign, SingleGroup, UnknownTerm
from metagam.gam import build_design, fit_random_intercept, fit_summary, r_squared_adjusted
from metagam.solver import Penalty

from conftest import make_cohort
from oracles import normal_equations

FORMULA = "y ~ s(x, k=8) + s(z, k=5)"


@pytest.fixture(scope="module")
def model():
    return fit_gam(make_cohort(np.random.default_rng(1), n=400), FORMULA)


def test_fixed_lambda_matches_normal_equations():
    data = make_cohort(np.random.default_rng(2), n=250)
    m = fit_gam(data, FORMULA, lambdas={"s(x)": 0.3, "s(z)": 2.0})
    X, blocks, _ = build_design(m.formula, m.smooths, m.factor_levels, data)
    pens = [Penalty(b.slice, _penalty(m, b.label)) for b in blocks if b.kind == "smooth"]
    beta, A = normal_equations(X, data.y.to_numpy(), pens, [0.3, 2.0])
    np.testing.assert_allclose(m.coefficients, beta, rtol=1e-9, atol=1e-12)
    resid = data.y.to_numpy() - X @ beta
    edf = np.trace(np.linalg.solve(A, X.T @ X))
    assert m.scale == pytest.approx(resid @ resid / (len(data) - edf), rel=1e-9)
    np.testing.assert_allclose(m.covariance, m.scale * np.linalg.inv(A), rtol=1e-7, atol=1e-14)


def _penalty(model, label):
    from metagam.basis import penalty_matrix

    return penalty_matrix(model.smooth(label))


def test_predict_reproduces_fitted(model):
    data = make_cohort(np.random.default_rng(1), n=400)
    np.testing.assert_allclose(predict(model, data), model.fitted_values, atol=1e-12)


def test_terms_add_up(model, rng):
    grid = pd.DataFrame({"x": rng.uniform(0, 1, 30), "z": rng.uniform(0, 1, 30)})
    tx = predict_term(model, "s(x)", grid)
    tz = predict_term(model, "s(z)", grid)
    total = predict_terms(model, ["s(x)", "s(z)"], grid, include_intercept=True)
    np.testing.assert_allclose(tx.fit + tz.fit + model.intercept, total.fit, atol=1e-12)
    np.testing.assert_allclose(total.fit, predict(model, grid), atol=1e-12)


def test_se_is_quadratic_form(model):
    grid = pd.DataFrame({"x": np.linspace(0, 1, 11)})
    pr = predict_term(model, "s(x)", grid, include_intercept=True)
    from metagam.gam import _smooth_design

    rows = np.zeros((11, len(model.coefficients)))
    rows[:, 0] = 1
    rows[:, model.block("s(x)").slice] = _smooth_design(model.smooth("s(x)"), grid)
    np.testing.assert_allclose(pr.se, np.sqrt(np.diag(rows @ model.covariance @ rows.T)), rtol=1e-10)


def test_sum_to_zero_over_data(model):
    data = make_cohort(np.random.default_rng(1), n=400)
    assert abs(predict_term(model, "s(x)", data).fit.sum()) < 1e-9


def test_recovers_signal():
    rng = np.random.default_rng(5)
    data = make_cohort(rng, n=2000, sigma=0.1)
    m = fit_gam(data, FORMULA)
    grid = pd.DataFrame({"x": np.linspace(0.05, 0.95, 50)})
    truth = np.sin(2 * np.pi * grid.x)
    truth -= np.mean(np.sin(2 * np.pi * data.x))
    assert np.max(np.abs(predict_term(m, "s(x)", grid).fit - truth)) < 0.05
    assert m.term_pvalues["s(x)"] < 1e-10
    assert 0.9 < r_squared_adjusted(m) < 1.0


def test_linear_truth_gets_linear_fit(rng):
    x = rng.uniform(0, 1, 500)
    data = pd.DataFrame({"x": x, "y": 2 * x + rng.normal(0, 0.5, 500)})
    m = fit_gam(data, "y ~ s(x, k=10)")
    assert m.edf["s(x)"] < 2.5


def test_in_range_flags(model):
    grid = pd.DataFrame({"x": [-0.5, 0.5, 1.5]})
    assert predict_term(model, "s(x)", grid).in_range.tolist() == [False, True, False]


def test_factor_and_by_terms(rng):
    n = 600
    age = rng.uniform(0, 10, n)
    g = rng.integers(0, 2, n).astype(float)
    sex = rng.choice(["F", "M"], n)
    y = np.sin(age) + g * 0.1 * age + (sex == "M") * 0.5 + rng.normal(0, 0.2, n)
    data = pd.DataFrame({"age": age, "g": g, "sex": sex, "y": y})
    m = fit_gam(data, "y ~ s(age, k=8) + s(age, by=g, k=8) + g + sex")
    assert m.factor_levels == {"sex": ("F", "M")}
    assert m.coefficients[m.block("sex").slice][0] == pytest.approx(0.5, abs=0.1)
    assert "s(age):g" in m.term_pvalues
    pred = predict_term(m, "sex", pd.DataFrame({"sex": ["F", "M"]}))
    np.testing.assert_allclose(pred.fit, [0.0, m.coefficients[m.block("sex").slice][0]])


def test_random_intercept(rng):
    subj = np.repeat(np.arange(30), 10)
    x = rng.uniform(0, 1, 300)
    u = rng.normal(0, 1, 30)[subj]
    data = pd.DataFrame({"x": x, "s": subj.astype(str), "y": np.sin(3 * x) + u + rng.normal(0, .2, 300)})
    m = fit_random_intercept(data, "y ~ s(x, k=6) + (1|s)")
    assert m.n_subjects == 30
    assert m.block("(1|s)").kind == "random"
    with pytest.raises(SingleGroup):
        fit_random_intercept(data.assign(s="a"), "y ~ s(x, k=6) + (1|s)")


def test_rank_deficient_with_common_knots(rng):
    data = make_cohort(rng, lo=0.0, hi=0.3)
    with pytest.raises(RankDeficientDesign) as exc:
        fit_gam(data, "y ~ s(x, k=8)", knots={"x": np.linspace(0, 1, 6)})
    assert "s(x)" in str(exc.value)


@pytest.mark.parametrize("mutate,error", [
    (lambda d: d.drop(columns="z"), MissingColumn),
    (lambda d: d.assign(x=np.where(d.index == 3, np.nan, d.x)), NonFiniteInput),
    (lambda d: d.iloc[:5], EmptyInput),
])
def test_input_errors(mutate, error):
    data = make_cohort(np.random.default_rng(0), n=50)
    with pytest.raises(error):
        fit_gam(mutate(data), FORMULA)


def test_unknown_term(model):
    with pytest.raises(UnknownTerm):
        predict_term(model, "s(w)", pd.DataFrame({"w": [1.0]}))


def test_estimator_protocol():
    data = make_cohort(np.random.default_rng(4), n=300)
    est = GAM(FORMULA, sweeps=1)
    assert clone(est).get_params() == est.get_params()
    est.fit(data[["x", "z"]], data.y)
    direct = fit_gam(data, FORMULA, sweeps=1)
    np.testing.assert_allclose(est.coef_, direct.coefficients)
    np.testing.assert_allclose(est.predict(data), direct.fitted_values, atol=1e-12)
    assert est.score(data[["x", "z"]], data.y) > 0.5
    assert est.summary()["n"] == 300
    assert est.strip().n == 300


def test_summary_keys(model):
    assert set(fit_summary(model)) == {"cohort", "formula", "n", "scale", "edf_total", "edf",
                                       "lambdas", "term_pvalues"}


def _lambda_vector(m):
    return np.array([m.lambdas[b.label] for b in m.blocks if b.kind in ("smooth", "random")])


def test_noiseless_line():
    x = np.linspace(0, 1, 200)
    m = fit_gam(pd.DataFrame({"x": x, "y": 2 + 3 * x}), "y ~ s(x, k=10)")
    assert np.max(np.abs(m.fitted_values - (2 + 3 * x))) < 1e-6
    assert m.edf["s(x)"] <= 2.05


def test_infinite_smoothing_is_linear_ols(rng):
    data = make_cohort(rng, n=300)
    m = fit_gam(data, FORMULA, lambdas=[1e12, 1e12])
    X = np.column_stack([np.ones(300), data.x, data.z])
    ols = X @ np.linalg.lstsq(X, data.y, rcond=None)[0]
    assert np.max(np.abs(m.fitted_values - ols)) < 1e-4


def test_stationarity_and_covariance(rng):
    data = make_cohort(rng, n=250)
    m = fit_gam(data, FORMULA)
    X, blocks, _ = build_design(m.formula, m.smooths, m.factor_levels, data)
    Sl = np.zeros((X.shape[1], X.shape[1]))
    for b in blocks:
        if b.kind == "smooth":
            Sl[b.slice, b.slice] += m.lambdas[b.label] * _penalty(m, b.label)
    beta = np.asarray(m.coefficients)
    np.testing.assert_allclose(X.T @ (data.y.to_numpy() - X @ beta), Sl @ beta, atol=1e-6)
    V = m.scale * np.linalg.inv(X.T @ X + Sl)
    np.testing.assert_allclose(m.covariance, V, atol=1e-8 * np.abs(V).max())
    assert np.linalg.eigvalsh(m.covariance).min() > -1e-12
    assert 1 <= m.edf_total <= X.shape[1]


def test_shift_invariance(rng):
    data = make_cohort(rng, n=250)
    a = fit_gam(data, FORMULA)
    b = fit_gam(data.assign(y=data.y + 7.5), FORMULA, lambdas=a.lambdas)
    assert b.coefficients[0] - a.coefficients[0] == pytest.approx(7.5, abs=1e-9)
    np.testing.assert_allclose(b.coefficients[1:], a.coefficients[1:], atol=1e-9)


def test_pure_noise_smooths_heavily():
    edfs = []
    for seed in range(15):
        r = np.random.default_rng(seed)
        data = pd.DataFrame({"x": r.uniform(0, 1, 300), "y": r.normal(size=300)})
        edfs.append(fit_gam(data, "y ~ s(x, k=10)").edf["s(x)"])
    assert np.mean(np.array(edfs) <= 3) > 0.5


def test_strong_signal_is_wiggly(rng):
    x = rng.uniform(0, 1, 1000)
    data = pd.DataFrame({"x": x, "y": np.sin(4 * np.pi * x) + rng.normal(0, 0.05, 1000)})
    m = fit_gam(data, "y ~ s(x, k=15)")
    assert m.edf["s(x)"] >= 6


def test_point_constraint_prediction_zero(rng):
    data = make_cohort(rng, n=300)
    m = fit_gam(data, "y ~ s(x, k=8, pc=0.4) + s(z, k=5)")
    pr = predict_term(m, "s(x)", pd.DataFrame({"x": [0.4]}))
    assert abs(pr.fit[0]) < 1e-10


def test_pvalue_zero_fit_is_one(model):
    from dataclasses import replace

    from metagam.gam import term_pvalue

    coef = np.array(model.coefficients)
    coef[model.block("s(z)").slice] = 0.0
    assert term_pvalue(replace(model, coefficients=coef), "s(z)") == 1.0


def test_pvalue_smaller_for_stronger_signal():
    weak, strong = [], []
    for seed in range(10):
        r = np.random.default_rng(seed)
        x = r.uniform(0, 1, 200)
        noise = r.normal(0, 1, 200)
        for amp, out in ((0.2, weak), (0.5, strong)):
            data = pd.DataFrame({"x": x, "y": amp * np.sin(2 * np.pi * x) + noise})
            out.append(fit_gam(data, "y ~ s(x, k=8)").term_pvalues["s(x)"])
    assert np.mean(np.log(strong)) < np.mean(np.log(weak))
    assert all(s <= w for s, w in zip(strong, weak))


def test_random_intercept_limits(rng):
    x = rng.uniform(0, 1, 120)
    y = np.sin(3 * x) + rng.normal(0, 0.2, 120)
    single = pd.DataFrame({"x": x, "s": [f"g{i}" for i in range(120)], "y": y})
    m_ri = fit_random_intercept(single, "y ~ s(x, k=6) + (1|s)", lambdas=[1.0, 1e12])
    m = fit_gam(single, "y ~ s(x, k=6)", lambdas=[1.0])
    assert np.max(np.abs(predict(m_ri, single) - predict(m, single))) < 1e-4

    g = np.repeat(["a", "b"], 60)
    offset = pd.DataFrame({"x": x, "s": g, "y": np.sin(3 * x) + np.where(g == "b", 2.0, 0.0)})
    m2 = fit_random_intercept(offset, "y ~ s(x, k=6) + (1|s)", lambdas=[1.0, 5.0])
    u = m2.coefficients[m2.block("(1|s)").slice]
    shrink = (u[1] - u[0]) / 2.0
    assert 0 < shrink < 1


def test_random_intercept_dense_oracle(rng):
    subj = np.repeat(np.arange(12), 6)
    x = rng.uniform(0, 1, 72)
    data = pd.DataFrame({"x": x, "s": subj.astype(str),
                         "y": np.cos(2 * x) + rng.normal(0, 1, 12)[subj] + rng.normal(0, .3, 72)})
    m = fit_random_intercept(data, "y ~ s(x, k=6) + (1|s)", lambdas=[0.5, 3.0])
    X, blocks, _ = build_design(m.formula, m.smooths, m.factor_levels, data, m.groups)
    pens = [Penalty(blocks[1].slice, _penalty(m, "s(x)")), Penalty(blocks[2].slice, np.eye(12))]
    beta, _ = normal_equations(X, data.y.to_numpy(), pens, [0.5, 3.0])
    np.testing.assert_allclose(m.coefficients, beta, rtol=1e-8, atol=1e-10)
