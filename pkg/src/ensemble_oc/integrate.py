"""Ensemble forward/backward integration on a uniform grid.

The control is piecewise constant, one value per grid interval, and the
state of every sample is advanced by classical RK4 with that value held
fixed.  The costate is the exact reverse-mode adjoint of those RK4 steps,
so ``cost_gradient`` is the gradient of the discretized averaged cost to
rounding error, and ``p(t_j)`` is a fourth-order approximation of the
continuous costate at the nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .dynamics import ControlAffineSystem
from .params import InitialConditionSpec, SampleSet, initial_condition_map


class IntegrationError(RuntimeError):
    """Non-finite or out-of-domain state; names the sample and the time."""

    def __init__(self, message: str, sample_index: int, time: float):
        super().__init__(f"{message} (sample {sample_index}, t = {time:.6g})")
        self.sample_index = sample_index
        self.time = time


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    N: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError(f"need T > t0, got [{self.t0}, {self.T}]")
        if int(self.N) < 1:
            raise ValueError(f"need N >= 1 intervals, got {self.N}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.N

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.N + 1)

    @classmethod
    def for_system(cls, sys: ControlAffineSystem, N: int) -> "TimeGrid":
        return cls(sys.t0, sys.T, N)


@dataclass
class ControlGrid:
    """Piecewise-constant control; row j acts on [t_j, t_{j+1})."""

    values: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.u_min = np.asarray(self.u_min, dtype=float)
        self.u_max = np.asarray(self.u_max, dtype=float)
        if self.values.shape[1] != self.u_min.size:
            raise ValueError(
                f"control has {self.values.shape[1]} components, bounds have {self.u_min.size}"
            )

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def project(self) -> "ControlGrid":
        return ControlGrid(np.clip(self.values, self.u_min, self.u_max), self.u_min, self.u_max)

    def is_feasible(self) -> bool:
        return bool(np.all(self.values >= self.u_min) and np.all(self.values <= self.u_max))

    def at_nodes(self) -> np.ndarray:
        """Control seen at each node; the last node repeats the last interval."""
        return np.vstack([self.values, self.values[-1:]])

    @classmethod
    def constant(cls, sys: ControlAffineSystem, N: int, value) -> "ControlGrid":
        vals = np.broadcast_to(np.asarray(value, dtype=float), (N, sys.m)).copy()
        return cls(vals, sys.u_min, sys.u_max)

    @classmethod
    def midpoint(cls, sys: ControlAffineSystem, N: int) -> "ControlGrid":
        return cls.constant(sys, N, 0.5 * (sys.u_min + sys.u_max))


@dataclass
class TrajectoryBundle:
    """x(t_j, w_i) for all nodes and samples, shape (N+1, k, n)."""

    states: np.ndarray
    grid: TimeGrid
    omega: np.ndarray
    control: ControlGrid
    # RK4 stage states y2, y3, y4 per interval, shape (N, 3, k, n)
    stages: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.states.shape[1]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class CostateBundle:
    """p(t_j, w_i), shape (N+1, k, n), with -p(T) = grad g(x(T))."""

    costates: np.ndarray
    grid: TimeGrid
    # per-sample derivative of g(x(T, w_i), w_i) w.r.t. each interval value, (N, k, m)
    control_sensitivity: np.ndarray = field(repr=False)


def _as_omega(samples) -> np.ndarray:
    if isinstance(samples, SampleSet):
        return samples.samples
    return np.atleast_2d(np.asarray(samples, dtype=float))


def _check_history(sys, states, stages, omega, nodes, h):
    """Raise at the earliest invalid node or stage state.

    Integration runs to the end with NaNs allowed, then this scan reports
    the first offending (time, sample) pair.
    """
    N, k, n = stages.shape[0], states.shape[1], states.shape[2]
    # time-ordered: node j, stages of interval j (y2/y3 at t_j + h/2, y4 at t_{j+1})
    hist = np.concatenate([states[:-1, None], stages], axis=1).reshape(-1, n)
    w = np.tile(omega, (N * 4, 1))
    bad = sys.check_domain(hist, w)
    end = sys.check_domain(states[-1], omega)
    if bad is None and end is None:
        return
    offsets = np.array([0.0, 0.5, 0.5, 1.0]) * h
    if bad is not None:
        flat = int(np.flatnonzero(bad)[0])
        row, i = divmod(flat, k)
        j, s = divmod(row, 4)
        t, y = nodes[j] + offsets[s], hist[flat]
    else:
        i = int(np.flatnonzero(end)[0])
        t, y = nodes[-1], states[-1, i]
    msg = "non-finite state" if not np.all(np.isfinite(y)) else sys.domain_message
    raise IntegrationError(msg, i, t)


def integrate_forward(
    sys: ControlAffineSystem,
    initial: InitialConditionSpec,
    samples,
    control: ControlGrid,
    grid: TimeGrid,
    compiled: Optional[bool] = None,
) -> TrajectoryBundle:
    """RK4 for every sample at once, control held constant per interval.

    ``compiled`` selects the system's numba kernels when it has them
    (default) or forces the pure numpy path with ``False``.
    """
    if control.N != grid.N:
        raise GridMismatch(f"control has {control.N} intervals, grid has {grid.N}")
    omega = _as_omega(samples)
    k = omega.shape[0]
    x = initial_condition_map(initial, omega, sys.n)
    h = grid.dt
    nodes = grid.nodes
    kern = sys.kernels if compiled in (None, True) else None
    if compiled and kern is None:
        raise ValueError("system has no compiled kernels")
    if kern is not None:
        states, stages = _kernels.rk4_forward(
            np.ascontiguousarray(x), np.ascontiguousarray(control.values),
            np.ascontiguousarray(omega), kern.consts, h, kern.rhs,
        )
        _check_history(sys, states, stages, omega, nodes, h)
        return TrajectoryBundle(states, grid, omega, control, stages)
    states = np.empty((grid.N + 1, k, sys.n))
    stages = np.empty((grid.N, 3, k, sys.n))
    states[0] = x
    with np.errstate(all="ignore"):
        for j in range(grid.N):
            u = np.broadcast_to(control.values[j], (k, sys.m))
            k1 = sys.rhs(x, u, omega)
            y2 = x + 0.5 * h * k1
            k2 = sys.rhs(y2, u, omega)
            y3 = x + 0.5 * h * k2
            k3 = sys.rhs(y3, u, omega)
            y4 = x + h * k3
            k4 = sys.rhs(y4, u, omega)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            stages[j, 0], stages[j, 1], stages[j, 2] = y2, y3, y4
            states[j + 1] = x
    _check_history(sys, states, stages, omega, nodes, h)
    return TrajectoryBundle(states, grid, omega, control, stages)


def integrate_adjoint(
    sys: ControlAffineSystem,
    traj: TrajectoryBundle,
    control: Optional[ControlGrid] = None,
    compiled: Optional[bool] = None,
) -> CostateBundle:
    """Reverse sweep through the RK4 steps of ``traj``.

    Carries lam_j = d g(x_N) / d x_j per sample; the costate is p = -lam.
    The same sweep yields the per-sample sensitivity to every interval
    value of the control.
    """
    control = traj.control if control is None else control
    grid = traj.grid
    if control.N != grid.N or control.m != sys.m:
        raise GridMismatch(
            f"control has shape {control.values.shape}, trajectory grid has {grid.N} intervals"
        )
    omega = traj.omega
    k, n, h = traj.k, sys.n, grid.dt
    lam = sys.cost_grad(traj.terminal, omega).astype(float)
    kern = sys.kernels if compiled in (None, True) else None
    if compiled and kern is None:
        raise ValueError("system has no compiled kernels")
    if kern is not None:
        costates, sens = _kernels.rk4_adjoint(
            traj.states, traj.stages, np.ascontiguousarray(control.values),
            np.ascontiguousarray(omega), kern.consts, h, np.ascontiguousarray(lam),
            kern.jac, kern.ctrl,
        )
        return CostateBundle(costates, grid, sens)
    costates = np.empty((grid.N + 1, k, n))
    costates[-1] = -lam
    sens = np.empty((grid.N, k, sys.m))

    def vjp(A, v):
        return np.einsum("kab,ka->kb", A, v)

    for j in range(grid.N - 1, -1, -1):
        u = np.broadcast_to(control.values[j], (k, sys.m))
        y1 = traj.states[j]
        y2, y3, y4 = traj.stages[j]
        kb4 = (h / 6.0) * lam
        kb3 = (h / 3.0) * lam
        kb2 = (h / 3.0) * lam
        kb1 = (h / 6.0) * lam
        xb = lam.copy()
        ub = np.zeros((k, sys.m))

        yb = vjp(sys.rhs_jacobian(y4, u, omega), kb4)
        xb += yb
        kb3 = kb3 + h * yb
        ub += np.einsum("kin,kn->ki", sys.control_fields(y4, omega), kb4)

        yb = vjp(sys.rhs_jacobian(y3, u, omega), kb3)
        xb += yb
        kb2 = kb2 + 0.5 * h * yb
        ub += np.einsum("kin,kn->ki", sys.control_fields(y3, omega), kb3)

        yb = vjp(sys.rhs_jacobian(y2, u, omega), kb2)
        xb += yb
        kb1 = kb1 + 0.5 * h * yb
        ub += np.einsum("kin,kn->ki", sys.control_fields(y2, omega), kb2)

        xb += vjp(sys.rhs_jacobian(y1, u, omega), kb1)
        ub += np.einsum("kin,kn->ki", sys.control_fields(y1, omega), kb1)

        lam = xb
        costates[j] = -lam
        sens[j] = ub
    return CostateBundle(costates, grid, sens)


def ensemble_cost(sys: ControlAffineSystem, traj: TrajectoryBundle) -> float:
    """J_k = (1/k) sum_i g(x(T, w_i), w_i), summed in sample order."""
    vals = np.asarray(sys.cost(traj.terminal, traj.omega), dtype=float)
    total = 0.0
    for v in vals:
        total += float(v)
    J = total / vals.size
    if not np.isfinite(J):
        raise IntegrationError("non-finite cost", int(np.flatnonzero(~np.isfinite(vals))[0]), traj.grid.T)
    return J


def cost_gradient(
    sys: ControlAffineSystem,
    traj: TrajectoryBundle,
    costate: CostateBundle,
    grid: Optional[TimeGrid] = None,
) -> np.ndarray:
    """dJ_k / du[j, i] as an (N, m) array."""
    grid = traj.grid if grid is None else grid
    if costate.grid != grid or traj.grid != grid:
        raise GridMismatch("trajectory, costate and grid disagree")
    s = costate.control_sensitivity
    # fixed-order mean over samples
    total = np.zeros(s.shape[0::2])
    for i in range(s.shape[1]):
        total += s[:, i, :]
    return total / s.shape[1]


def _write_bundle_csv(path, grid, arr, prefix):
    path = Path(path)
    N1, k, n = arr.shape
    t = grid.nodes
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "sample_index"] + [f"{prefix}_{a}" for a in range(n)])
        for j in range(N1):
            for i in range(k):
                w.writerow([repr(float(t[j])), i] + [repr(float(v)) for v in arr[j, i]])


def write_trajectories_csv(path, traj: TrajectoryBundle) -> None:
    _write_bundle_csv(path, traj.grid, traj.states, "x")


def write_costates_csv(path, costate: CostateBundle) -> None:
    _write_bundle_csv(path, costate.grid, costate.costates, "p")
