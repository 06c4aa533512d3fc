"""Control-affine vector fields and their Lie-bracket algebra.

Everything here is batched: a state argument ``x`` has shape ``(..., n)``
and a parameter argument ``w`` has shape ``(..., d)`` with matching
leading dimensions.  Jacobians have shape ``(..., n, n)`` with
``J[a, b] = d f_a / d x_b``; Hessians have shape ``(..., n, n, n)`` with
``H[a, b, c] = d^2 f_a / d x_b d x_c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray
FieldFn = Callable[[Array, Array], Array]

_EPS = np.finfo(float).eps
_FD_SCALE = _EPS ** (1.0 / 3.0)


class DerivativeUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class VectorField:
    """A parameterized vector field with its state Jacobian.

    ``hessian`` is optional; brackets that need second derivatives fall
    back to central differences when it is missing.  ``tag`` records how
    the field was built, e.g. ``"f1"`` or ``"[f0,[f0,f1]]"``.
    """

    value: FieldFn
    jacobian: FieldFn
    hessian: Optional[FieldFn] = None
    tag: str = "f"

    def __call__(self, x, w):
        return self.value(x, w)


def fd_step(x: Array) -> Array:
    """Central-difference step max(1, |x|) * eps**(1/3), one per batch entry."""
    return np.maximum(1.0, np.linalg.norm(x, axis=-1)) * _FD_SCALE


def fd_jacobian(fn: FieldFn, x: Array, w: Array) -> Array:
    x = np.asarray(x, dtype=float)
    h = fd_step(x)[..., None]
    n = x.shape[-1]
    cols = []
    for b in range(n):
        e = np.zeros(n)
        e[b] = 1.0
        d = fn(x + h * e, w) - fn(x - h * e, w)
        # h has the batch shape; pad it for outputs with extra trailing axes
        hh = h.reshape(h.shape[:-1] + (1,) * (d.ndim - h.ndim + 1))
        cols.append(d / (2.0 * hh))
    return np.stack(cols, axis=-1)


def _matvec(A: Array, v: Array) -> Array:
    return np.einsum("...ab,...b->...a", A, v)


def lie_bracket(f: VectorField, g: VectorField, x, w) -> Array:
    """[f, g](x) = g'(x) f(x) - f'(x) g(x)."""
    x = np.asarray(x, dtype=float)
    fx, gx = f.value(x, w), g.value(x, w)
    if fx.shape != gx.shape or fx.shape[-1] != x.shape[-1]:
        raise ValueError(
            f"dimension mismatch: f -> {fx.shape}, g -> {gx.shape}, x {x.shape}"
        )
    return _matvec(g.jacobian(x, w), fx) - _matvec(f.jacobian(x, w), gx)


def bracket(f: VectorField, g: VectorField, allow_fd: bool = True) -> VectorField:
    """The bracket [f, g] as a new field, including its Jacobian.

    With Hessians on both fields the Jacobian is exact:
    d[f,g]/dx = g''f + g'f' - f''g - f'g'.  Otherwise it is a central
    difference of the bracket itself, or an error if ``allow_fd`` is off.
    """

    def value(x, w):
        return lie_bracket(f, g, x, w)

    if f.hessian is not None and g.hessian is not None:

        def jacobian(x, w):
            fx, gx = f.value(x, w), g.value(x, w)
            Jf, Jg = f.jacobian(x, w), g.jacobian(x, w)
            return (
                np.einsum("...abc,...b->...ac", g.hessian(x, w), fx)
                + Jg @ Jf
                - np.einsum("...abc,...b->...ac", f.hessian(x, w), gx)
                - Jf @ Jg
            )

    elif allow_fd:

        def jacobian(x, w):
            return fd_jacobian(value, x, w)

    else:

        def jacobian(x, w):
            raise DerivativeUnavailable(
                f"Jacobian of [{f.tag},{g.tag}] needs Hessians of both fields"
            )

    return VectorField(value, jacobian, None, f"[{f.tag},{g.tag}]")


@dataclass(frozen=True)
class ControlAffineSystem:
    """x' = f_0(x, w) + sum_i f_i(x, w) u_i with terminal cost g(x(T), w)."""

    n: int
    m: int
    fields: tuple
    cost: FieldFn
    cost_grad: FieldFn
    u_min: Array
    u_max: Array
    t0: float = 0.0
    T: float = 1.0
    # optional validity predicate; False anywhere aborts integration
    domain: Optional[Callable[[Array, Array], Array]] = field(default=None, compare=False)
    domain_message: str = "state left the admissible domain"
    # optional compiled per-sample kernels (see _kernels.Kernels)
    kernels: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.fields) != self.m + 1:
            raise ValueError(f"need m+1 = {self.m + 1} fields, got {len(self.fields)}")
        umin = np.asarray(self.u_min, dtype=float).reshape(self.m)
        umax = np.asarray(self.u_max, dtype=float).reshape(self.m)
        if not np.all(umin < umax):
            raise ValueError(f"need u_min < u_max componentwise, got {umin}, {umax}")
        object.__setattr__(self, "u_min", umin)
        object.__setattr__(self, "u_max", umax)
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.T > self.t0:
            raise ValueError(f"need T > t0, got [{self.t0}, {self.T}]")

    @property
    def drift(self) -> VectorField:
        return self.fields[0]

    def controls(self) -> Sequence[VectorField]:
        return self.fields[1:]

    def rhs(self, x: Array, u: Array, w: Array) -> Array:
        out = self.fields[0].value(x, w)
        for i in range(self.m):
            out = out + self.fields[i + 1].value(x, w) * u[..., i : i + 1]
        return out

    def rhs_jacobian(self, x: Array, u: Array, w: Array) -> Array:
        out = self.fields[0].jacobian(x, w)
        for i in range(self.m):
            out = out + self.fields[i + 1].jacobian(x, w) * u[..., i, None, None]
        return out

    def control_fields(self, x: Array, w: Array) -> Array:
        """Stack of f_1..f_m at (x, w), shape (..., m, n)."""
        return np.stack([f.value(x, w) for f in self.fields[1:]], axis=-2)

    def check_domain(self, x: Array, w: Array) -> Optional[Array]:
        """Boolean mask of batch entries that are invalid, or None if all fine."""
        bad = ~np.all(np.isfinite(x), axis=-1)
        if self.domain is not None:
            with np.errstate(invalid="ignore"):
                bad |= ~self.domain(x, w)
        return bad if bad.any() else None


def dynamics_eval(sys: ControlAffineSystem, x, u, w) -> Array:
    """f_0(x, w) + sum_i f_i(x, w) u_i (no bound checking)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape[-1] != sys.n:
        raise ValueError(f"state has dimension {x.shape[-1]}, expected {sys.n}")
    if u.shape[-1:] != (sys.m,):
        raise ValueError(f"control has dimension {u.shape[-1:]}, expected ({sys.m},)")
    return sys.rhs(x, u, w)


def nested_bracket(
    sys: ControlAffineSystem, i: int, j: int, x, w, allow_fd: bool = True
) -> Array:
    """[f_i, [f_0, f_j]] evaluated at (x, w).  Index 0 is the drift."""
    inner = bracket(sys.fields[0], sys.fields[j], allow_fd=allow_fd)
    return lie_bracket(sys.fields[i], inner, x, w)


# --- derivative validation --------------------------------------------------


def _relerr(a: Array, b: Array) -> float:
    scale = np.maximum(np.abs(a), np.abs(b))
    scale = np.maximum(scale, np.max(scale) * 1e-8 + 1e-300)
    return float(np.max(np.abs(a - b) / np.maximum(scale, 1e-12)))


def jacobian_errors(sys: ControlAffineSystem, x, w) -> list[float]:
    """Max relative error of each supplied Jacobian against central differences."""
    return [
        _relerr(f.jacobian(x, w), fd_jacobian(f.value, x, w)) for f in sys.fields
    ]


def hessian_errors(sys: ControlAffineSystem, x, w) -> list[Optional[float]]:
    out = []
    for f in sys.fields:
        if f.hessian is None:
            out.append(None)
        else:
            out.append(_relerr(f.hessian(x, w), fd_jacobian(f.jacobian, x, w)))
    return out


def gradient_error(sys: ControlAffineSystem, x, w) -> float:
    def g_as_field(xx, ww):
        return np.asarray(sys.cost(xx, ww))[..., None]

    fd = fd_jacobian(g_as_field, x, w)[..., 0, :]
    return _relerr(sys.cost_grad(x, w), fd)


def growth_constants(sys: ControlAffineSystem, x, w) -> np.ndarray:
    """Empirical c_i = max |f_i(x, w)| / (1 + |x|) over the given points."""
    denom = 1.0 + np.linalg.norm(x, axis=-1)
    return np.array(
        [np.max(np.linalg.norm(f.value(x, w), axis=-1) / denom) for f in sys.fields]
    )
