from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ensemble_oc.optimize import (
    SolveOptions,
    projected_gradient_norm,
    read_solve_json,
    solve,
    solve_problem,
    solve_result_document,
    sweep_problem,
    write_solve_json,
    write_sweep_csv,
)
from ensemble_oc.integrate import ControlGrid

from conftest import single_atom, toy_linear_problem


def test_toy_reaches_lower_bound(toy):
    res = solve_problem(toy, 3, SolveOptions(N=20))
    assert res.converged
    assert res.cost == pytest.approx(-2.0, abs=1e-12)
    assert np.all(res.control.values == -1.0)


def test_history_is_monotone(fishing):
    res = solve_problem(fishing, 4, SolveOptions(N=50, seed=1, max_iters=200))
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 0.0)


def test_iterates_stay_feasible(bryson_ho):
    res = solve_problem(bryson_ho, 3, SolveOptions(N=40, seed=2, max_iters=100))
    sys = bryson_ho.system
    assert np.all(res.control.values >= sys.u_min) and np.all(res.control.values <= sys.u_max)


def test_solve_is_deterministic(fishing):
    opts = SolveOptions(N=40, seed=5, max_iters=100)
    a = solve_problem(fishing, 5, opts)
    b = solve_problem(fishing, 5, opts)
    assert a.cost == b.cost and np.array_equal(a.control.values, b.control.values)
    assert a.iterations == b.iterations


def test_converged_solution_satisfies_tolerance(fishing, fishing_solution):
    r = fishing_solution
    assert r.converged and r.projected_gradient_norm <= 1e-6
    sys = fishing.system
    assert projected_gradient_norm(r.control.values, r.gradient, sys.u_min, sys.u_max) == r.projected_gradient_norm


def test_maximization_sign(fishing_solution):
    assert fishing_solution.sign == -1.0
    assert fishing_solution.objective == -fishing_solution.cost > 0


def test_single_atom_sweep_is_flat(fishing):
    atom = [d.analytic_mean() for d in fishing.distribution.components]
    res = sweep_problem(single_atom(fishing, atom), 4, SolveOptions(N=30, max_iters=300))
    for rec in res.records[1:]:
        assert rec.rel_cost == 0.0 and rec.rel_control == 0.0


def test_sweep_csv_blank_at_k1(tmp_path, toy):
    res = sweep_problem(toy, 3, SolveOptions(N=10))
    write_sweep_csv(tmp_path / "s.csv", res)
    rows = list(csv.reader((tmp_path / "s.csv").open()))
    assert rows[0] == ["k", "cost", "rel_cost", "rel_control", "rel_control_1"]
    assert rows[1][2:] == ["", "", ""]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert float(rows[2][2]) == 0.0


def test_nested_sweep_uses_prefixes(fishing):
    opts = SolveOptions(N=20, max_iters=50, seed=3)
    res = sweep_problem(fishing, 3, opts)
    assert [r.k for r in res.records] == [1, 2, 3]
    assert res.complete


@pytest.mark.parametrize(
    "kw",
    [dict(max_iters=0), dict(armijo_c=1.0), dict(backtrack_factor=0.0), dict(initial_step=0.0),
     dict(tol_pg=0.0), dict(N=0)],
)
def test_invalid_options(kw):
    with pytest.raises(ValueError):
        SolveOptions(**kw)


def test_invalid_k(toy):
    with pytest.raises(ValueError):
        solve_problem(toy, 0)
    with pytest.raises(ValueError):
        sweep_problem(toy, 1)


def test_warm_start_shape_checked(toy):
    with pytest.raises(ValueError):
        solve_problem(toy, 1, SolveOptions(N=10), warm_start=ControlGrid.midpoint(toy.system, 5))


def test_solve_json_round_trip(tmp_path, toy):
    res = solve_problem(toy, 2, SolveOptions(N=5))
    doc = solve_result_document(res, "toy", {"k": 2})
    write_solve_json(tmp_path / "s.json", doc)
    back = read_solve_json(tmp_path / "s.json")
    assert back["control"] == res.control.values.tolist()
    assert back["samples"] == res.samples.samples.tolist()
    assert set(back) == {"problem", "config", "cost", "internal_cost", "iterations", "converged",
                         "projected_gradient_norm", "samples", "control", "diagnostics"}


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(0.5, 4.0))
def test_toy_optimum_property(N, T):
    res = solve(*(lambda p: (p.system, p.distribution, p.initial))(toy_linear_problem(T)), 2,
                SolveOptions(N=N))
    assert res.cost == pytest.approx(-T, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_projected_gradient_norm_properties(u, g):
    u = np.clip(np.array(u).reshape(4, 1), -1, 1)
    g = np.array(g).reshape(4, 1)
    v = projected_gradient_norm(u, g, -1.0, 1.0)
    assert v >= 0.0
    assert v <= np.linalg.norm(g) / 2.0 + 1e-12
