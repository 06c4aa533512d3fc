"""Invariant suite behind ``eoc check``.

Each check takes a :class:`~ensemble_oc.problems.ProblemSpec` and returns
a list of :class:`CheckResult`.  Points are taken from a short ensemble
trajectory under the midpoint control, so they lie in the region the
solver actually visits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .dynamics import (
    ControlAffineSystem,
    VectorField,
    gradient_error,
    hessian_errors,
    jacobian_errors,
    lie_bracket,
    nested_bracket,
)
from .integrate import (
    ControlGrid,
    TimeGrid,
    cost_gradient,
    ensemble_cost,
    integrate_adjoint,
    integrate_forward,
)
from .params import Constant, sample_parameters

JAC_RTOL = 1e-5
GRAD_RTOL = 1e-4
ROUNDING_RTOL = 1e-12
MIN_ORDER = 3.8


@dataclass
class CheckResult:
    check: str
    target: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.check:<10} {self.target:<10} {self.detail}"


def sample_points(problem, k: int = 4, N: int = 20, seed: int = 7):
    """States and parameters along a midpoint-control ensemble trajectory."""
    sys = problem.system
    samples = sample_parameters(problem.distribution, k, seed)
    grid = TimeGrid.for_system(sys, N)
    traj = integrate_forward(sys, problem.initial, samples, ControlGrid.midpoint(sys, N), grid)
    x = traj.states.reshape(-1, sys.n)
    w = np.broadcast_to(traj.omega, traj.states.shape[:2] + traj.omega.shape[1:]).reshape(
        -1, traj.omega.shape[1]
    )
    return x, np.ascontiguousarray(w)


def check_jacobians(problem) -> list[CheckResult]:
    x, w = sample_points(problem)
    out = []
    for i, err in enumerate(jacobian_errors(problem.system, x, w)):
        out.append(
            CheckResult("jacobians", problem.name, err <= JAC_RTOL,
                        f"field f{i}: Jacobian rel err {err:.2e} (tol {JAC_RTOL:g})")
        )
    for i, err in enumerate(hessian_errors(problem.system, x, w)):
        if err is not None:
            out.append(
                CheckResult("jacobians", problem.name, err <= JAC_RTOL,
                            f"field f{i}: Hessian rel err {err:.2e} (tol {JAC_RTOL:g})")
            )
    err = gradient_error(problem.system, x[-len(w) // 5:], w[-len(w) // 5:])
    out.append(
        CheckResult("jacobians", problem.name, err <= JAC_RTOL,
                    f"cost gradient rel err {err:.2e} (tol {JAC_RTOL:g})")
    )
    return out


def fd_cost_gradient(sys, initial, samples, control: ControlGrid, grid, entries):
    """Central differences of J_k at the given (j, i) control entries."""
    out = []
    for j, i in entries:
        h = 1e-6 * max(1.0, abs(control.values[j, i]))
        vals = []
        for s in (1.0, -1.0):
            v = control.values.copy()
            v[j, i] += s * h
            c = ControlGrid(v, sys.u_min, sys.u_max)
            vals.append(ensemble_cost(sys, integrate_forward(sys, initial, samples, c, grid)))
        out.append((vals[0] - vals[1]) / (2.0 * h))
    return np.array(out)


def gradient_check(sys, initial, samples, N: int, seed: int = 3) -> tuple[float, np.ndarray, np.ndarray]:
    """Max relative error of the adjoint gradient against central differences.

    Uses an interior random control so the finite differences stay feasible.
    """
    rng = np.random.default_rng(seed)
    lo, hi = sys.u_min, sys.u_max
    vals = lo + (hi - lo) * rng.uniform(0.25, 0.75, size=(N, sys.m))
    control = ControlGrid(vals, lo, hi)
    grid = TimeGrid.for_system(sys, N)
    traj = integrate_forward(sys, initial, samples, control, grid)
    G = cost_gradient(sys, traj, integrate_adjoint(sys, traj))
    entries = [(j, i) for j in range(N) for i in range(sys.m)]
    fd = fd_cost_gradient(sys, initial, samples, control, grid, entries)
    ad = np.array([G[j, i] for j, i in entries])
    scale = max(np.max(np.abs(fd)), 1e-300)
    err = float(np.max(np.abs(ad - fd) / np.maximum(np.abs(fd), 1e-3 * scale)))
    return err, ad, fd


def check_gradient(problem) -> list[CheckResult]:
    samples = sample_parameters(problem.distribution, 3, 11)
    err, _, _ = gradient_check(problem.system, problem.initial, samples, 20)
    return [
        CheckResult("gradient", problem.name, err <= GRAD_RTOL,
                    f"adjoint vs central differences, k=3 N=20: rel err {err:.2e} (tol {GRAD_RTOL:g})")
    ]


def _combo(a: float, f: VectorField, b: float, g: VectorField) -> VectorField:
    return VectorField(
        lambda x, w: a * f.value(x, w) + b * g.value(x, w),
        lambda x, w: a * f.jacobian(x, w) + b * g.jacobian(x, w),
        tag=f"{a:g}{f.tag}+{b:g}{g.tag}",
    )


def check_brackets(problem, n_points: int = 100, seed: int = 5) -> list[CheckResult]:
    sys = problem.system
    x, w = sample_points(problem)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(x), size=n_points)
    x, w = x[idx], w[idx]
    F = sys.fields
    out = []
    worst_anti = worst_self = lin_diff = lin_scale = 0.0
    for a in range(len(F)):
        worst_self = max(worst_self, float(np.max(np.abs(lie_bracket(F[a], F[a], x, w)))))
        for b in range(len(F)):
            fab = lie_bracket(F[a], F[b], x, w)
            worst_anti = max(worst_anti, float(np.max(np.abs(fab + lie_bracket(F[b], F[a], x, w)))))
            for c in range(len(F)):
                s, t = rng.uniform(-2, 2, size=2)
                lhs = lie_bracket(_combo(s, F[a], t, F[b]), F[c], x, w)
                rhs = s * lie_bracket(F[a], F[c], x, w) + t * lie_bracket(F[b], F[c], x, w)
                lin_diff = max(lin_diff, float(np.max(np.abs(lhs - rhs))))
                lin_scale = max(lin_scale, float(np.max(np.abs(lhs) + np.abs(rhs))))
    worst_lin = lin_diff / lin_scale if lin_scale > 0 else lin_diff
    out.append(CheckResult("brackets", problem.name, worst_anti == 0.0,
                           f"[f,g] + [g,f] = 0: max |.| {worst_anti:.1e}"))
    out.append(CheckResult("brackets", problem.name, worst_self == 0.0,
                           f"[f,f] = 0: max |.| {worst_self:.1e}"))
    out.append(CheckResult("brackets", problem.name, worst_lin <= ROUNDING_RTOL,
                           f"bilinearity: rel err {worst_lin:.1e} (tol {ROUNDING_RTOL:g})"))
    if sys.m > 1:
        comm = mixed = 0.0
        for i in range(1, sys.m + 1):
            for j in range(1, sys.m + 1):
                if i != j:
                    comm = max(comm, float(np.max(np.abs(lie_bracket(F[i], F[j], x, w)))))
                    mixed = max(mixed, float(np.max(np.abs(nested_bracket(sys, i, j, x, w)))))
        out.append(CheckResult("brackets", problem.name, comm == 0.0,
                               f"control fields commute: max |[fi,fj]| {comm:.1e}"))
        out.append(CheckResult("brackets", problem.name, mixed == 0.0,
                               f"mixed nested brackets vanish: max |[fi,[f0,fj]]| {mixed:.1e}"))
    return out


# --- RK4 order on the logistic equation -------------------------------------


def logistic_system(r: float = 0.71, K: float = 80.5, T: float = 1.0) -> ControlAffineSystem:
    """x' = r x (1 - x/K) with a control field that is identically zero."""

    def f0(x, w):
        return r * x * (1.0 - x / K)

    def J0(x, w):
        return (r * (1.0 - 2.0 * x / K))[..., None]

    def f1(x, w):
        return np.zeros_like(x)

    def J1(x, w):
        return np.zeros(x.shape + (1,))

    return ControlAffineSystem(
        n=1, m=1,
        fields=(VectorField(f0, J0, tag="f0"), VectorField(f1, J1, tag="f1")),
        cost=lambda x, w: x[..., 0],
        cost_grad=lambda x, w: np.ones_like(x),
        u_min=[-1.0], u_max=[1.0], T=T,
    )


def logistic_exact(t, r: float = 0.71, K: float = 80.5, x0: float = 70.0):
    e = np.exp(r * np.asarray(t))
    return K * x0 * e / (K + x0 * (e - 1.0))


def rk4_order(Ns: Iterable[int] = (10, 20, 40), x0: float = 10.0, T: float = 10.0) -> tuple[float, list]:
    """Least-squares slope of log error against log step on the logistic equation."""
    sys = logistic_system(T=T)
    errs, hs = [], []
    for N in Ns:
        grid = TimeGrid(0.0, T, N)
        traj = integrate_forward(
            sys, Constant([x0]), np.zeros((1, 1)), ControlGrid.constant(sys, N, 0.0), grid
        )
        errs.append(abs(traj.terminal[0, 0] - logistic_exact(T, x0=x0)))
        hs.append(grid.dt)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return float(slope), errs


def check_rk4(problem=None) -> list[CheckResult]:
    order, errs = rk4_order()
    return [
        CheckResult("rk4", "logistic", order >= MIN_ORDER,
                    f"observed order {order:.3f} (min {MIN_ORDER}); errors {', '.join(f'{e:.1e}' for e in errs)}")
    ]


CHECKS: dict[str, Callable] = {
    "jacobians": check_jacobians,
    "gradient": check_gradient,
    "brackets": check_brackets,
    "rk4": check_rk4,
}


def run_checks(problems: Iterable, only: Optional[Iterable[str]] = None) -> list[CheckResult]:
    """Run the selected checks (all by default) on every problem.

    The RK4 check does not depend on the problem and runs once.
    """
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s) {unknown}; choose from {list(CHECKS)}")
    problems = list(problems)
    out: list[CheckResult] = []
    for name in names:
        if name == "rk4":
            out.extend(check_rk4())
            continue
        for p in problems:
            try:
                out.extend(CHECKS[name](p))
            except Exception as exc:  # a crashing check is a failed check
                out.append(CheckResult(name, p.name, False, f"error: {exc}"))
    return out
