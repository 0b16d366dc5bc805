import numpy as np
import pandas as pd
import pytest

from metagam import fit_gam, strip_rawdata


def make_cohort(rng, n=300, lo=0.0, hi=1.0, sigma=0.3):
    x = rng.uniform(lo, hi, n)
    z = rng.uniform(0.0, 1.0, n)
    y = np.sin(2 * np.pi * x) + 0.5 * z + rng.normal(0.0, sigma, n)
    return pd.DataFrame({"x": x, "z": z, "y": y})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cohort_models():
    """Three fitted cohorts sharing a formula, with overlapping covariate ranges."""
    rng = np.random.default_rng(7)
    ranges = [(0.0, 0.7), (0.2, 0.9), (0.3, 1.0)]
    data = [make_cohort(rng, lo=lo, hi=hi) for lo, hi in ranges]
    models = [fit_gam(d, "y ~ s(x, k=8) + s(z, k=5)", cohort_label=f"c{i}")
              for i, d in enumerate(data)]
    return data, models


@pytest.fixture(scope="session")
def stripped_models(cohort_models):
    return [strip_rawdata(m) for m in cohort_models[1]]


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
