import csv
import io
import os

import numpy as np
import pytest

from rescue_ipw.estimators import estimate_balanced
from rescue_ipw.simulate import SCENARIOS, generate_scenario, true_values, true_values_quadrature
from rescue_ipw.study import (
    PARAMS,
    STUDY_COLUMNS,
    cached_true_values,
    parse_rho_grid,
    run_mc_study,
    sensitivity_sweep,
    write_plot_data,
    write_study_csv,
)

S1 = SCENARIOS[1]
TRUTH1 = true_values_quadrature(S1)


def test_single_replicate_has_no_se():
    res = run_mc_study(S1, 300, 1, 0.9, seed=3, truth=TRUTH1)
    assert res.reps_completed + res.reps_failed == 1
    for name in PARAMS:
        p = res.params[name]
        assert p.se is None
        assert p.bias == p.mean - p.truth
    assert res.params["mu"].mean == res.estimates[0, 0]


def test_study_is_independent_of_worker_count():
    a = run_mc_study(S1, 300, 12, 0.9, seed=8, truth=TRUTH1)
    b = run_mc_study(S1, 300, 12, 0.9, seed=8, truth=TRUTH1, jobs=3)
    assert np.array_equal(a.estimates, b.estimates)
    assert a.params == b.params
    assert a.reps_completed + a.reps_failed == 12
    ta, tb = io.StringIO(), io.StringIO()
    write_study_csv([a], ta)
    write_study_csv([b], tb)
    assert ta.getvalue() == tb.getvalue()


def test_replicate_matches_direct_estimate():
    from rescue_ipw.rng import stream

    res = run_mc_study(S1, 400, 3, 0.9, seed=2, truth=TRUTH1)
    data = generate_scenario(S1, 400, stream(2, 1))
    assert res.estimates[1, 0] == estimate_balanced(data, 0.9).mu


def test_study_csv_layout():
    res = run_mc_study(S1, 300, 1, 0.9, seed=4, truth=TRUTH1, scenario=1)
    out = io.StringIO()
    write_study_csv([res], out)
    rows = list(csv.reader(io.StringIO(out.getvalue())))
    assert tuple(rows[0]) == STUDY_COLUMNS
    assert [r[4] for r in rows[1:]] == list(PARAMS)
    assert all(r[6] == "" for r in rows[1:])
    assert rows[1][:4] == ["1", "300", "1", "0.90000000000000002"]


def test_plot_data_has_one_row_per_estimate(tmp_path):
    res = run_mc_study(S1, 300, 4, 0.9, seed=4, truth=TRUTH1)
    path = tmp_path / "plot.csv"
    write_plot_data([res], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "scenario,rho,replicate,param,estimate,truth"
    assert len(lines) == 1 + 4 * len(PARAMS)


def test_truth_cache_round_trip(tmp_path, monkeypatch):
    monkeypatch.setenv("RESCUE_IPW_CACHE", str(tmp_path))
    first = cached_true_values(S1, n_mc=5000, seed=1)
    assert first == true_values(S1, n_mc=5000, seed=1)
    files = os.listdir(tmp_path)
    assert len(files) == 1 and files[0].startswith("truth-")
    assert cached_true_values(S1, n_mc=5000, seed=1) == first
    cached_true_values(S1, n_mc=5000, seed=2)
    assert len(os.listdir(tmp_path)) == 2


def test_singleton_sweep_equals_single_estimate(scenario1_data):
    (only,) = sensitivity_sweep(scenario1_data, [0.9])
    ref = estimate_balanced(scenario1_data, 0.9)
    assert (only.mu, only.mu1, only.mu0) == (ref.mu, ref.mu1, ref.mu0)


def test_sweep_order_does_not_matter():
    d = generate_scenario(SCENARIOS[3], 1000, 17)
    grid = [0.8, 0.85, 0.9, 0.95, 1.0]
    fwd = sensitivity_sweep(d, grid)
    rev = sensitivity_sweep(d, grid[::-1])[::-1]
    for a, b in zip(fwd, rev):
        assert a.options["rho"] == b.options["rho"]
        assert a.mu == pytest.approx(b.mu, abs=1e-10)


def test_sweep_rejects_bad_grids(scenario1_data):
    with pytest.raises(ValueError):
        sensitivity_sweep(scenario1_data, [])
    with pytest.raises(ValueError):
        sensitivity_sweep(scenario1_data, [0.9, 1.2])


@pytest.mark.parametrize("text,expected", [
    ("0.8:1.0:0.1", [0.8, 0.9, 1.0]),
    ("0:0.3:0.1", [0.0, 0.1, 0.2, 0.3]),
    ("0.9:0.9:0.05", [0.9]),
    ("0.8:1.0:0.15", [0.8, 0.95]),
])
def test_parse_rho_grid(text, expected):
    assert parse_rho_grid(text) == expected


@pytest.mark.parametrize("text", ["0.8:1.0", "a:b:c", "1:0:0.1", "0:1:0"])
def test_parse_rho_grid_errors(text):
    with pytest.raises(ValueError):
        parse_rho_grid(text)


@pytest.mark.slow
@pytest.mark.parametrize("scenario", [2, 3])
def test_balanced_estimator_is_noisier_than_policy(scenario):
    cfg = SCENARIOS[scenario]
    res = run_mc_study(cfg, 1000, 1000, 0.9, seed=20261016, jobs=os.cpu_count() or 1,
                       truth=true_values_quadrature(cfg))
    ratio = (res.params["mu"].se / res.params["policy_mu"].se) ** 2
    assert 2.0 <= ratio <= 8.0
