import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metagam.exceptions import ReplicationError
from metagam.sim import (
    EstimationScenario,
    PowerScenario,
    group_effect,
    lifespan_trajectory,
    load_scenario,
    make_true_functions,
    run_replications,
    run_scenario,
    scenario_from_dict,
    scenario_to_dict,
    thread_count,
)
from metagam.sim.estimation import simulate_dataset
from metagam.sim.functions import CENTERING_GRID
from metagam.sim.splits import check_partition, equal_split, range_split, scaled_sizes, sized_split

SMALL_EST = EstimationScenario(n_total=600, sigma=(1.0,), replications=2, basis_dims=(8, 6, 10, 5),
                               grid_size=51, seed=3)
SMALL_POW = PowerScenario(n_total=(600,), sigma=(3500.0,), effect="group_interaction",
                          replications=3, basis_dim=6, seed=4)


def test_true_functions_centered():
    for f in make_true_functions().values():
        assert abs(f(CENTERING_GRID).mean()) < 1e-12


def test_signal_variance_matches_r2():
    funcs = make_true_functions()
    var = sum(np.var(f(CENTERING_GRID)) for f in funcs.values())
    # R^2 = var / (var + sigma^2) at sigma 1 and 1.6
    assert var / (var + 1.0) == pytest.approx(0.40, abs=0.02)
    assert var / (var + 1.6**2) == pytest.approx(0.207, abs=0.02)


def test_trajectory_shape():
    age = np.linspace(4, 94, 181)
    y = lifespan_trajectory(age)
    assert y[0] == pytest.approx(95000.0)
    assert 30 <= age[np.argmax(y)] <= 40
    assert np.all(group_effect(age[age <= 40], 2000) == 0)
    assert group_effect(94.0, 2000) == pytest.approx(2000.0)


def test_scaled_sizes():
    assert scaled_sizes(4000) == [300, 500, 800, 1000, 1400]
    assert sum(scaled_sizes(999)) == 999


@settings(max_examples=30, deadline=None)
@given(st.integers(60, 2000), st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_splits_partition(n, k, seed):
    rng = np.random.default_rng(seed)
    check_partition(equal_split(n, k, rng), n)
    check_partition(sized_split(n, scaled_sizes(n), rng), n)


def test_range_split_restricts():
    rng = np.random.default_rng(0)
    data = simulate_dataset(EstimationScenario(), 1.0, rng)
    parts = range_split(data, scaled_sizes(len(data)), rng)
    check_partition(parts, len(data))
    assert data.x2.iloc[parts[0]].max() < 0.5 and data.x2.iloc[parts[1]].min() >= 0.5
    assert data.x1.iloc[parts[2]].max() < 0.5 and data.x1.iloc[parts[3]].min() >= 0.5


def test_check_partition_rejects():
    with pytest.raises(AssertionError):
        check_partition([np.array([0, 1]), np.array([1, 2])], 3)


def test_scenario_roundtrip(tmp_path):
    for sc in (SMALL_EST, SMALL_POW):
        d = scenario_to_dict(sc)
        assert scenario_from_dict(json.loads(json.dumps(d))) == sc
        path = tmp_path / "c.json"
        path.write_text(json.dumps(d))
        assert load_scenario(path) == sc


@pytest.mark.parametrize("bad", [{"kind": "other"}, {"kind": "power", "foo": 1},
                                 {"kind": "power", "effect": "x"},
                                 {"kind": "estimation", "schemes": ["nope"]}])
def test_scenario_errors(bad):
    with pytest.raises(ValueError):
        scenario_from_dict(bad)


def _draw(scenario, r, rng):
    return (r, float(rng.uniform()))


def _fail_on_two(scenario, r, rng):
    if r >= 2:
        raise RuntimeError("boom")
    return r


def test_replications_deterministic_across_threads():
    serial = run_replications(_draw, None, 6, seed=5, threads=1)
    parallel = run_replications(_draw, None, 6, seed=5, threads=2)
    assert serial == parallel
    assert [r for r, _ in serial] == list(range(6))


def test_replication_error_names_lowest():
    with pytest.raises(ReplicationError) as exc:
        run_replications(_fail_on_two, None, 5, seed=0, threads=1)
    assert exc.value.replication == 2
    assert "boom" in str(exc.value)


def test_thread_env(monkeypatch):
    monkeypatch.setenv("METAGAM_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("METAGAM_THREADS", "zero")
    with pytest.raises(ValueError):
        thread_count()


def test_estimation_small_run_deterministic(tmp_path):
    a = run_scenario(SMALL_EST, threads=1)
    b = run_scenario(SMALL_EST, threads=1)
    assert a == b
    summary = a.tables["summary"]
    assert set(summary.scheme) == set(SMALL_EST.schemes)
    assert len(summary) == 4 * 4
    assert (summary.coverage_mean.between(0, 1)).all()
    written = {p.name for p in a.write(tmp_path)}
    assert {"estimation_summary.csv", "estimation_fits.svg", "estimation_config.json"} <= written
    first = (tmp_path / "estimation_summary.csv").read_bytes()
    b.write(tmp_path)
    assert (tmp_path / "estimation_summary.csv").read_bytes() == first


def test_power_small_run():
    rep = run_scenario(SMALL_POW, threads=1)
    rej = rep.tables["rejection"]
    assert set(rej.method) >= {"mega", "single", "stouffer", "tippett"}
    pv = rep.tables["pvalues"]
    assert len(pv) == 3
    assert ((pv.drop(columns=["n_total", "sigma", "replication"]) > 0).all()).all()
    assert "<svg" in rep.figures()["power_qq.svg"]


def test_estimation_failure_raises():
    bad = EstimationScenario(n_total=50, replications=1, schemes=("unequal",))
    with pytest.raises(ReplicationError) as exc:
        run_scenario(bad, threads=1)
    assert exc.value.replication == 0


def test_two_peaks_has_two_interior_maxima():
    f = make_true_functions()["f2"](CENTERING_GRID)
    interior = np.flatnonzero((f[1:-1] > f[:-2]) & (f[1:-1] > f[2:])) + 1
    assert len(interior) == 2


def test_noiseless_mega_recovers_truth():
    sc = EstimationScenario(n_total=4000, sigma=(0.0,), replications=1, schemes=("mega",), seed=5)
    summary = run_scenario(sc, threads=1).tables["summary"]
    assert summary.rmse_mean.max() < 0.01


def test_adjusted_r2_range():
    sc = EstimationScenario(n_total=4000, sigma=(1.0,), replications=2, schemes=("mega",), seed=6)
    r2 = run_scenario(sc, threads=1).tables["r2"].r2_adj_mean.iloc[0]
    assert 0.30 <= r2 <= 0.50


@pytest.mark.slow
def test_estimation_smoke_runtime():
    import time

    sc = EstimationScenario(n_total=4000, sigma=(1.0,), replications=5, seed=7)
    start = time.perf_counter()
    summary = run_scenario(sc).tables["summary"]
    assert time.perf_counter() - start < 60
    assert np.isfinite(summary.rmse_mean).all()
