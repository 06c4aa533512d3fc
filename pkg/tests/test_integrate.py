from __future__ import annotations

import csv

import numpy as np
import pytest

from ensemble_oc.checks import gradient_check, logistic_system, rk4_order
from ensemble_oc.dynamics import ControlAffineSystem, VectorField, growth_constants
from ensemble_oc.integrate import (
    ControlGrid,
    GridMismatch,
    IntegrationError,
    TimeGrid,
    cost_gradient,
    ensemble_cost,
    integrate_adjoint,
    integrate_forward,
    write_costates_csv,
    write_trajectories_csv,
)
from ensemble_oc.params import Constant, sample_parameters
from ensemble_oc.problems import get_problem

import oracles
from conftest import toy_linear_problem


def scalar_system(f, df, cost=None, grad=None, T=1.0):
    zero = VectorField(lambda x, w: np.zeros_like(x), lambda x, w: np.zeros(x.shape + (1,)))
    return ControlAffineSystem(
        n=1, m=1,
        fields=(VectorField(f, df), zero),
        cost=cost or (lambda x, w: x[..., 0].copy()),
        cost_grad=grad or (lambda x, w: np.ones_like(x)),
        u_min=[-1.0], u_max=[1.0], T=T,
    )


def run(sys, x0, N, k=1, control=0.0):
    grid = TimeGrid.for_system(sys, N)
    traj = integrate_forward(sys, Constant(x0), np.zeros((k, 1)), ControlGrid.constant(sys, N, control), grid)
    return traj, integrate_adjoint(sys, traj)


def test_time_grid():
    g = TimeGrid(0.0, 2.0, 4)
    assert g.dt == 0.5 and np.array_equal(g.nodes, [0.0, 0.5, 1.0, 1.5, 2.0])
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)


def test_zero_field_keeps_initial_state():
    sys = scalar_system(lambda x, w: np.zeros_like(x), lambda x, w: np.zeros(x.shape + (1,)))
    traj, _ = run(sys, [3.5], 10)
    assert np.all(traj.states == 3.5)


def test_logistic_closed_form():
    traj, _ = run(logistic_system(T=1.0), [70.0], 100)
    assert traj.terminal[0, 0] == pytest.approx(oracles.logistic(1.0), rel=1e-6)


def test_rk4_error_ratios():
    # x0 = 10 over T = 10 keeps the errors far above rounding for N up to 200
    _, errs = rk4_order(Ns=(25, 50, 100, 200), x0=10.0, T=10.0)
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert min(ratios) >= 13.0, ratios


def test_rk4_order_estimate():
    order, _ = rk4_order()
    assert order >= 3.8


def test_constant_derivative_exact(toy):
    # dt = 0.25 is exact in binary, so every RK4 stage is exact
    traj, _ = run(toy.system, [0.0], 8, control=-1.0)
    assert traj.terminal[0, 0] == -2.0
    traj, _ = run(toy.system, [0.0], 7, control=-1.0)
    assert traj.terminal[0, 0] == pytest.approx(-2.0, abs=1e-14)


def test_linear_adjoint_closed_form():
    a, T = 0.8, 1.5
    sys = scalar_system(lambda x, w: a * x, lambda x, w: np.full(x.shape + (1,), a), T=T)
    traj, cost = run(sys, [1.0], 200)
    p = cost.costates[:, 0, 0]
    assert np.allclose(p, oracles.linear_costate(traj.grid.nodes, a, T), rtol=1e-6)


def test_terminal_condition_exact(fishing):
    s = sample_parameters(fishing.distribution, 4, 0)
    sys = fishing.system
    grid = TimeGrid.for_system(sys, 30)
    traj = integrate_forward(sys, fishing.initial, s, ControlGrid.midpoint(sys, 30), grid)
    cost = integrate_adjoint(sys, traj)
    assert np.array_equal(-cost.costates[-1], sys.cost_grad(traj.terminal, traj.omega))


def test_zero_cost_gradient_gives_zero_costate():
    sys = scalar_system(lambda x, w: x, lambda x, w: np.ones(x.shape + (1,)),
                        cost=lambda x, w: np.zeros(x.shape[:-1]), grad=lambda x, w: np.zeros_like(x))
    traj, cost = run(sys, [1.0], 10)
    assert np.all(cost.costates == 0.0)
    assert np.all(cost_gradient(sys, traj, cost) == 0.0)


def test_state_independent_drift_gives_constant_costate(toy):
    traj, cost = run(toy.system, [0.0], 10, control=0.3)
    assert np.all(cost.costates == -1.0)


def test_ensemble_cost_is_fixed_order_mean():
    sys = scalar_system(lambda x, w: np.zeros_like(x), lambda x, w: np.zeros(x.shape + (1,)))
    grid = TimeGrid.for_system(sys, 2)
    init = lambda w: w.copy()  # noqa: E731
    traj = integrate_forward(sys, init, np.array([[1.0], [3.0]]), ControlGrid.constant(sys, 2, 0.0), grid)
    assert ensemble_cost(sys, traj) == 2.0
    const = scalar_system(lambda x, w: x, lambda x, w: np.ones(x.shape + (1,)),
                          cost=lambda x, w: np.full(x.shape[:-1], 4.25))
    traj, _ = run(const, [1.0], 3, k=5)
    assert ensemble_cost(const, traj) == 4.25


def test_fishing_without_harvest_has_no_revenue(fishing):
    means = np.array([[d.analytic_mean() for d in fishing.distribution.components]])
    sys = fishing.system
    grid = TimeGrid.for_system(sys, 50)
    traj = integrate_forward(sys, fishing.initial, means, ControlGrid.constant(sys, 50, 0.0), grid)
    assert ensemble_cost(sys, traj) == 0.0


def test_toy_gradient_is_dt(toy):
    traj, cost = run(toy.system, [0.0], 8, control=0.2)
    G = cost_gradient(toy.system, traj, cost)
    assert np.allclose(G, traj.grid.dt, rtol=1e-15)


@pytest.mark.parametrize("name", ["fishing", "bryson_ho"])
def test_gradient_matches_finite_differences(name):
    p = get_problem(name)
    samples = sample_parameters(p.distribution, 3, 1)
    err, _, _ = gradient_check(p.system, p.initial, samples, 20)
    assert err <= 1e-4


def test_toy_gradient_matches_finite_differences():
    p = toy_linear_problem()
    err, ad, fd = gradient_check(p.system, p.initial, np.zeros((2, 1)), 10)
    assert err <= 1e-4


def test_compiled_and_numpy_paths_agree(fishing):
    sys = fishing.system
    s = sample_parameters(fishing.distribution, 5, 2)
    grid = TimeGrid.for_system(sys, 40)
    ctrl = ControlGrid(np.linspace(0, 1, 40)[:, None], sys.u_min, sys.u_max)
    a = integrate_forward(sys, fishing.initial, s, ctrl, grid, compiled=True)
    b = integrate_forward(sys, fishing.initial, s, ctrl, grid, compiled=False)
    assert np.allclose(a.states, b.states, rtol=1e-13, atol=0)
    pa = integrate_adjoint(sys, a, compiled=True)
    pb = integrate_adjoint(sys, b, compiled=False)
    assert np.allclose(pa.costates, pb.costates, rtol=1e-12, atol=1e-14)
    assert np.allclose(cost_gradient(sys, a, pa), cost_gradient(sys, b, pb), rtol=1e-12, atol=1e-15)


def test_cost_is_bitwise_deterministic(fishing):
    sys = fishing.system
    s = sample_parameters(fishing.distribution, 6, 8)
    grid = TimeGrid.for_system(sys, 30)
    ctrl = ControlGrid.midpoint(sys, 30)
    vals = {ensemble_cost(sys, integrate_forward(sys, fishing.initial, s, ctrl, grid)) for _ in range(3)}
    assert len(vals) == 1


def test_blow_up_names_sample_and_time():
    sys = scalar_system(lambda x, w: x**2, lambda x, w: (2 * x)[..., None], T=1.0)
    grid = TimeGrid.for_system(sys, 100)
    init = lambda w: w.copy()  # noqa: E731
    with pytest.raises(IntegrationError) as exc:
        integrate_forward(sys, init, np.array([[0.1], [2.0]]), ControlGrid.constant(sys, 100, 0.0), grid)
    assert exc.value.sample_index == 1
    assert 0.4 <= exc.value.time <= 1.0


def test_fishing_domain_guard():
    p = get_problem("fishing", {"U_max": 200.0})
    sys = p.system
    grid = TimeGrid.for_system(sys, 100)
    s = sample_parameters(p.distribution, 3, 0)
    with pytest.raises(IntegrationError, match="stock"):
        integrate_forward(sys, p.initial, s, ControlGrid.constant(sys, 100, 1.0), grid)


def test_grid_mismatch(toy):
    grid = TimeGrid.for_system(toy.system, 10)
    with pytest.raises(GridMismatch):
        integrate_forward(toy.system, toy.initial, np.zeros((1, 1)), ControlGrid.constant(toy.system, 5, 0.0), grid)


@pytest.mark.parametrize("name", ["fishing", "bryson_ho"])
def test_gronwall_bound(name):
    p = get_problem(name)
    sys = p.system
    rng = np.random.default_rng(4)
    N = 100
    s = sample_parameters(p.distribution, 8, 4)
    grid = TimeGrid.for_system(sys, N)
    ctrl = ControlGrid(rng.uniform(sys.u_min, sys.u_max, size=(N, sys.m)), sys.u_min, sys.u_max)
    traj = integrate_forward(sys, p.initial, s, ctrl, grid)
    pts = traj.states.reshape(-1, sys.n)
    w = np.broadcast_to(traj.omega, traj.states.shape[:2] + traj.omega.shape[1:]).reshape(len(pts), -1)
    c = growth_constants(sys, pts, w)
    C = c[0] + np.max(np.abs(ctrl.values)) * c[1:].sum()
    t = grid.nodes[:, None]
    bound = (np.linalg.norm(traj.states[0], axis=-1)[None] + C * t) * np.exp(C * t)
    assert np.all(np.linalg.norm(traj.states, axis=-1) <= bound * (1 + 1e-12))


@pytest.mark.parametrize("name", ["fishing", "bryson_ho"])
def test_control_perturbation_lipschitz(name):
    p = get_problem(name)
    sys = p.system
    N = 50
    s = sample_parameters(p.distribution, 4, 6)
    grid = TimeGrid.for_system(sys, N)
    rng = np.random.default_rng(1)
    lo, hi = sys.u_min, sys.u_max
    base = lo + (hi - lo) * rng.uniform(0.3, 0.7, size=(N, sys.m))
    direction = rng.uniform(-1, 1, size=(N, sys.m))
    direction /= np.max(np.abs(direction))
    x0 = integrate_forward(sys, p.initial, s, ControlGrid(base, lo, hi), grid).states
    eps = np.array([1e-4, 1e-3, 1e-2, 1e-1]) * np.min(hi - lo)
    ratios = []
    for e in eps:
        x1 = integrate_forward(sys, p.initial, s, ControlGrid(base + e * direction, lo, hi), grid).states
        ratios.append(np.max(np.abs(x1 - x0)) / e)
    ratios = np.array(ratios)
    slope = np.polyfit(np.log(eps), np.log(ratios * eps), 1)[0]
    assert abs(slope - 1.0) < 0.1
    assert ratios.max() <= 2.0 * ratios.min()


def test_csv_exports(tmp_path, bryson_ho):
    sys = bryson_ho.system
    s = sample_parameters(bryson_ho.distribution, 3, 0)
    grid = TimeGrid.for_system(sys, 4)
    traj = integrate_forward(sys, bryson_ho.initial, s, ControlGrid.midpoint(sys, 4), grid)
    write_trajectories_csv(tmp_path / "x.csv", traj)
    write_costates_csv(tmp_path / "p.csv", integrate_adjoint(sys, traj))
    rows = list(csv.reader((tmp_path / "x.csv").open()))
    assert rows[0] == ["t", "sample_index", "x_0", "x_1", "x_2"]
    assert len(rows) == 1 + 5 * 3
    assert float(rows[1][2]) == s.samples[0, 0]
    assert next(csv.reader((tmp_path / "p.csv").open())) == ["t", "sample_index", "p_0", "p_1", "p_2"]
