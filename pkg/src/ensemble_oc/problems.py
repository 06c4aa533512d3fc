"""Built-in benchmark problems.

Both are stated in Mayer form: the running quantity is carried in an
extra state ``z`` and the cost only reads the terminal state.

fishing
    Harvesting an uncertain fish stock.  State ``(x, z)`` with stock ``x``
    and accumulated revenue ``z``; parameters ``w = (x0, r, K)``.  Revenue is
    maximized, so internally ``g = -z(T)``.

bryson_ho
    Two commuting constant control fields driving ``x' = y^2 + u1``,
    ``y' = -u2`` with ``z' = x^2 / 2``; ``x(0) = y(0) = w``.  Cost ``z(T)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numba import njit

from ._kernels import Kernels
from .dynamics import ControlAffineSystem, VectorField
from .params import (
    INITIAL_CONDITIONS,
    InitialConditionSpec,
    ParameterDistribution,
    Product,
    TruncatedNormal,
    Uniform,
    distribution_from_config,
)


class UnknownProblem(KeyError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    system: ControlAffineSystem
    distribution: ParameterDistribution
    initial: InitialConditionSpec
    sense: str  # "minimize" or "maximize"
    description: str = ""
    parameters: Mapping = field(default_factory=dict)

    @property
    def sign(self) -> float:
        """Factor turning the internal (minimized) cost into the reported one."""
        return -1.0 if self.sense == "maximize" else 1.0


def _z(x):
    return np.zeros(x.shape[:-1])


def _const_field(vec, tag):
    vec = np.asarray(vec, dtype=float)
    n = vec.size

    def value(x, w):
        return np.broadcast_to(vec, x.shape).copy()

    def jacobian(x, w):
        return np.zeros(x.shape + (n,))

    def hessian(x, w):
        return np.zeros(x.shape + (n, n))

    return VectorField(value, jacobian, hessian, tag)


def _as_tn(value, name) -> TruncatedNormal:
    if isinstance(value, TruncatedNormal):
        return value
    if isinstance(value, Mapping):
        cfg = {"type": "truncated_normal", **value}
        dist = distribution_from_config(cfg)
        return dist
    raise ValueError(f"override {name!r} must be a truncated-normal spec, got {value!r}")


@njit(cache=True, error_model="numpy")
def _fishing_rhs(x, u, w, C, out):
    s, r, K, U = x[0], w[1], w[2], C[2]
    out[0] = r * s * (1.0 - s / K) + (-U) * u[0]
    out[1] = 0.0 + ((C[0] - C[1] / s) * U) * u[0]


@njit(cache=True, error_model="numpy")
def _fishing_jac(x, u, w, C, out):
    s, r, K = x[0], w[1], w[2]
    out[0, 0] = r * (1.0 - 2.0 * s / K)
    out[0, 1] = 0.0
    out[1, 0] = (C[1] * C[2] / s**2) * u[0]
    out[1, 1] = 0.0


@njit(cache=True, error_model="numpy")
def _fishing_ctrl(x, w, C, out):
    out[0, 0] = -C[2]
    out[0, 1] = (C[0] - C[1] / x[0]) * C[2]


@njit(cache=True, error_model="numpy")
def _bh_rhs(x, u, w, C, out):
    out[0] = x[1] ** 2 + u[0]
    out[1] = 0.0 + (-1.0) * u[1]
    out[2] = 0.5 * x[0] ** 2


@njit(cache=True, error_model="numpy")
def _bh_jac(x, u, w, C, out):
    out[:, :] = 0.0
    out[0, 1] = 2.0 * x[1]
    out[2, 0] = x[0]


@njit(cache=True, error_model="numpy")
def _bh_ctrl(x, w, C, out):
    out[:, :] = 0.0
    out[0, 0] = 1.0
    out[1, 1] = -1.0


FISHING_DEFAULTS = {
    "E": 1.0,
    "c": 17.5,
    "U_max": 20.0,
    "T": 10.0,
    "x0": TruncatedNormal(70.0, 5.0, 40.0, 90.0),
    "r": TruncatedNormal(0.71, 0.05, 0.1, 1.0),
    "K": TruncatedNormal(80.5, 10.0, 65.0, 95.0),
}

# the 1/x term in the revenue field is guarded well away from x = 0
FISHING_MIN_STOCK = 1.0


def fishing_problem(overrides: Mapping | None = None) -> ProblemSpec:
    p = dict(FISHING_DEFAULTS)
    for key, val in (overrides or {}).items():
        if key not in p:
            raise ValueError(f"fishing: cannot override {key!r}; allowed: {sorted(p)}")
        p[key] = _as_tn(val, key) if key in ("x0", "r", "K") else float(val)
    E, c, U, T = p["E"], p["c"], p["U_max"], p["T"]
    if not U > 0:
        raise ValueError(f"fishing: U_max must be > 0, got {U}")
    if not T > 0:
        raise ValueError(f"fishing: T must be > 0, got {T}")
    if c < 0:
        raise ValueError(f"fishing: c must be >= 0, got {c}")
    if not p["x0"].lower > FISHING_MIN_STOCK:
        raise ValueError(f"fishing: initial stock support must exceed {FISHING_MIN_STOCK}")
    if not p["r"].lower > 0 or not p["K"].lower > 0:
        raise ValueError("fishing: r and K must have positive support")

    def f0(x, w):
        s, r, K = x[..., 0], w[..., 1], w[..., 2]
        return np.stack([r * s * (1.0 - s / K), _z(x)], axis=-1)

    def J0(x, w):
        s, r, K = x[..., 0], w[..., 1], w[..., 2]
        J = np.zeros(x.shape + (2,))
        J[..., 0, 0] = r * (1.0 - 2.0 * s / K)
        return J

    def H0(x, w):
        r, K = w[..., 1], w[..., 2]
        H = np.zeros(x.shape + (2, 2))
        H[..., 0, 0, 0] = -2.0 * r / K
        return H

    def f1(x, w):
        s = x[..., 0]
        return np.stack([np.full_like(s, -U), (E - c / s) * U], axis=-1)

    def J1(x, w):
        s = x[..., 0]
        J = np.zeros(x.shape + (2,))
        J[..., 1, 0] = c * U / s**2
        return J

    def H1(x, w):
        s = x[..., 0]
        H = np.zeros(x.shape + (2, 2))
        H[..., 1, 0, 0] = -2.0 * c * U / s**3
        return H

    def g(x, w):
        return -x[..., 1]

    def grad_g(x, w):
        out = np.zeros_like(x)
        out[..., 1] = -1.0
        return out

    system = ControlAffineSystem(
        n=2,
        m=1,
        fields=(VectorField(f0, J0, H0, "f0"), VectorField(f1, J1, H1, "f1")),
        cost=g,
        cost_grad=grad_g,
        u_min=[0.0],
        u_max=[1.0],
        t0=0.0,
        T=T,
        domain=lambda x, w: x[..., 0] > FISHING_MIN_STOCK,
        domain_message=f"fish stock fell to {FISHING_MIN_STOCK} or below",
        kernels=Kernels(_fishing_rhs, _fishing_jac, _fishing_ctrl, np.array([E, c, U])),
    )
    return ProblemSpec(
        name="fishing",
        system=system,
        distribution=Product([p["x0"], p["r"], p["K"]]),
        initial=INITIAL_CONDITIONS["fishing"],
        sense="maximize",
        description=(
            "Average fishing revenue with uncertain initial stock, growth rate "
            "and carrying capacity (halibut model, Mayer form)."
        ),
        parameters=p,
    )


BRYSON_HO_DEFAULTS = {
    "T": 2.0,
    "omega": Uniform(0.95, 1.05),
}


def bryson_ho_problem(overrides: Mapping | None = None) -> ProblemSpec:
    p = dict(BRYSON_HO_DEFAULTS)
    for key, val in (overrides or {}).items():
        if key not in p:
            raise ValueError(f"bryson_ho: cannot override {key!r}; allowed: {sorted(p)}")
        if key == "omega":
            p[key] = val if isinstance(val, Uniform) else distribution_from_config(
                {"type": "uniform", **val}
            )
        else:
            p[key] = float(val)
    if not p["T"] > 0:
        raise ValueError(f"bryson_ho: T must be > 0, got {p['T']}")

    def f0(x, w):
        return np.stack([x[..., 1] ** 2, _z(x), 0.5 * x[..., 0] ** 2], axis=-1)

    def J0(x, w):
        J = np.zeros(x.shape + (3,))
        J[..., 0, 1] = 2.0 * x[..., 1]
        J[..., 2, 0] = x[..., 0]
        return J

    def H0(x, w):
        H = np.zeros(x.shape + (3, 3))
        H[..., 0, 1, 1] = 2.0
        H[..., 2, 0, 0] = 1.0
        return H

    def g(x, w):
        return x[..., 2].copy()

    def grad_g(x, w):
        out = np.zeros_like(x)
        out[..., 2] = 1.0
        return out

    system = ControlAffineSystem(
        n=3,
        m=2,
        fields=(
            VectorField(f0, J0, H0, "f0"),
            _const_field([1.0, 0.0, 0.0], "f1"),
            # the u2 field does not enter z' (dynamics matrix of the Mayer form)
            _const_field([0.0, -1.0, 0.0], "f2"),
        ),
        cost=g,
        cost_grad=grad_g,
        u_min=[-1.0, -1.0],
        u_max=[1.0, 1.0],
        t0=0.0,
        T=p["T"],
        kernels=Kernels(_bh_rhs, _bh_jac, _bh_ctrl, np.zeros(1)),
    )
    return ProblemSpec(
        name="bryson_ho",
        system=system,
        distribution=p["omega"],
        initial=INITIAL_CONDITIONS["bryson_ho"],
        sense="minimize",
        description=(
            "Bryson-Ho variant with two commuting control fields and uniformly "
            "distributed initial condition x(0) = y(0)."
        ),
        parameters=p,
    )


PROBLEMS: dict[str, Callable[..., ProblemSpec]] = {
    "fishing": fishing_problem,
    "bryson_ho": bryson_ho_problem,
}


def get_problem(name: str, overrides: Mapping | None = None) -> ProblemSpec:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise UnknownProblem(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(overrides)
