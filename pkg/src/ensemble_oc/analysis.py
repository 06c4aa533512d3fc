"""Post-solve analysis of extremals.

Switching functions, bang/singular classification of every node, the
singular-control formulas built from nested brackets, and a first-order
certificate (Hamiltonian gap and costate residuals).  All ensemble
integrals are the same fixed-order sample means used by the cost.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .dynamics import ControlAffineSystem, bracket, lie_bracket
from .integrate import ControlGrid, CostateBundle, TrajectoryBundle

SINGULAR, MIN, MAX, SWITCH = "singular", "min", "max", "switch"


class DegenerateSingularFormula(ArithmeticError):
    def __init__(self, message: str, node: int):
        super().__init__(f"{message} at node {node}")
        self.node = node


class CommutativityViolation(ValueError):
    pass


def _sample_mean(a: np.ndarray) -> np.ndarray:
    """Mean over axis 1 (samples), accumulated in index order."""
    total = np.zeros(a.shape[:1] + a.shape[2:])
    for i in range(a.shape[1]):
        total += a[:, i]
    return total / a.shape[1]


def _pairing(costate: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Sample mean of p . v for arrays shaped (nodes, k, n)."""
    return _sample_mean(np.einsum("jkn,jkn->jk", costate, vec))


def _omega_like(traj: TrajectoryBundle, nodes) -> np.ndarray:
    return np.broadcast_to(traj.omega, (len(nodes),) + traj.omega.shape)


# --- switching functions and classification ---------------------------------


@dataclass
class SwitchingData:
    psi: np.ndarray  # (N+1, m)
    t: np.ndarray
    tol_psi: float = 0.02

    @property
    def m(self) -> int:
        return self.psi.shape[1]


def switching_function(
    traj: TrajectoryBundle, costate: CostateBundle, sys: ControlAffineSystem, tol_psi: float = 0.02
) -> SwitchingData:
    """Psi_i(t_j) = mean over samples of p(t_j, w) . f_i(x(t_j, w), w)."""
    if costate.costates.shape != traj.states.shape:
        raise ValueError("trajectory and costate bundles have different shapes")
    nodes = np.arange(traj.states.shape[0])
    F = sys.control_fields(traj.states, _omega_like(traj, nodes))  # (N+1, k, m, n)
    prod = np.einsum("jkin,jkn->jki", F, costate.costates)
    return SwitchingData(_sample_mean(prod), traj.grid.nodes, tol_psi)


@dataclass(frozen=True)
class ArcInterval:
    """Nodes ``start .. stop-1`` sharing the same index sets."""

    start: int
    stop: int
    singular: frozenset
    bang_min: frozenset
    bang_max: frozenset

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.start, self.stop)

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass
class ArcReport:
    """Per-node classes and index sets; indices are 0-based control components."""

    classes: np.ndarray  # (N+1, m) of "min"/"max"/"singular"/"switch"
    S: list
    B_min: list
    B_max: list
    intervals: list
    t: np.ndarray

    def singular_intervals(self) -> list:
        return [iv for iv in self.intervals if iv.singular]

    def is_partition(self) -> bool:
        m = self.classes.shape[1]
        full = set(range(m))
        for s, lo, hi in zip(self.S, self.B_min, self.B_max):
            if s & lo or s & hi or lo & hi or (s | lo | hi) != full:
                return False
        return True


def _runs(mask: np.ndarray):
    """(start, stop) of maximal True runs."""
    runs, start = [], None
    for j, v in enumerate(mask):
        if v and start is None:
            start = j
        elif not v and start is not None:
            runs.append((start, j))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def classify_arcs(
    sw: SwitchingData,
    control: ControlGrid,
    tol_psi: Optional[float] = None,
    min_arc_nodes: int = 3,
    interior_tol: Optional[float] = 1e-3,
    trim_junctions: bool = True,
) -> ArcReport:
    """Tag each node/component as bang (by the sign of Psi) or singular.

    A component is singular at a node when |Psi_i| <= tol_psi * max_j |Psi_i|
    and, unless ``interior_tol`` is None, its control lies farther than
    ``interior_tol`` (relative to the box width) from both bounds.  Near a
    bang/singular junction Psi is small but the control still sits on the
    bound, so the threshold alone would stretch singular arcs into the
    neighbouring bang arcs.

    Runs of singular nodes shorter than ``min_arc_nodes`` are zero crossings
    and are tagged "switch".  With ``trim_junctions`` the end node of a
    singular run that borders a bang node is tagged "switch" too: its
    control cell straddles the junction and holds a blend of both arcs.
    In the index sets "switch" counts as bang on the side where the
    control sits.
    """
    tol = sw.tol_psi if tol_psi is None else tol_psi
    if not 0 < tol < 1:
        raise ValueError(f"tol_psi must lie in (0, 1), got {tol}")
    psi = sw.psi
    n_nodes, m = psi.shape
    u_nodes = control.at_nodes()
    mid = 0.5 * (control.u_min + control.u_max)
    classes = np.empty((n_nodes, m), dtype=object)
    span = control.u_max - control.u_min
    for i in range(m):
        scale = np.max(np.abs(psi[:, i]))
        small = np.abs(psi[:, i]) <= tol * scale
        if interior_tol is not None:
            margin = interior_tol * span[i]
            small &= (u_nodes[:, i] > control.u_min[i] + margin) & (
                u_nodes[:, i] < control.u_max[i] - margin
            )
        classes[:, i] = np.where(psi[:, i] > 0, MAX, MIN)
        for a, b in _runs(small):
            if b - a < min_arc_nodes:
                classes[a:b, i] = SWITCH
                continue
            classes[a:b, i] = SINGULAR
            if trim_junctions:
                if a > 0:
                    classes[a, i] = SWITCH
                if b < n_nodes:
                    classes[b - 1, i] = SWITCH

    S, Bmin, Bmax = [], [], []
    for j in range(n_nodes):
        s, lo, hi = set(), set(), set()
        for i in range(m):
            c = classes[j, i]
            if c == SINGULAR:
                s.add(i)
            elif c == MAX or (c == SWITCH and u_nodes[j, i] >= mid[i]):
                hi.add(i)
            else:
                lo.add(i)
        S.append(frozenset(s))
        Bmin.append(frozenset(lo))
        Bmax.append(frozenset(hi))

    intervals, start = [], 0
    for j in range(1, n_nodes + 1):
        if j == n_nodes or (S[j], Bmin[j], Bmax[j]) != (S[start], Bmin[start], Bmax[start]):
            intervals.append(ArcInterval(start, j, S[start], Bmin[start], Bmax[start]))
            start = j
    return ArcReport(classes, S, Bmin, Bmax, intervals, sw.t)


# --- singular controls ------------------------------------------------------


def _node_slice(interval) -> np.ndarray:
    if isinstance(interval, ArcInterval):
        return interval.nodes
    if isinstance(interval, slice):
        return np.arange(interval.start, interval.stop)
    if isinstance(interval, tuple) and len(interval) == 2:
        return np.arange(interval[0], interval[1])
    return np.asarray(interval, dtype=int)


def bracket_pairings(
    traj: TrajectoryBundle,
    costate: CostateBundle,
    sys: ControlAffineSystem,
    nodes,
    absolute: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble means at the given nodes.

    Returns ``drift`` with ``drift[:, i] = mean p.[f_0,[f_0,f_i]]`` and
    ``W`` with ``W[:, i, j] = mean p.[f_i,[f_0,f_j]]``, indices 0..m
    (index 0 is the drift), shape (len(nodes), m+1) and (len(nodes), m+1, m+1).
    With ``absolute`` the means are of |p.[...]| instead.
    """
    nodes = np.asarray(nodes, dtype=int)
    x = traj.states[nodes]
    p = costate.costates[nodes]
    w = _omega_like(traj, nodes)
    m = sys.m
    W = np.zeros((len(nodes), m + 1, m + 1))
    for j in range(m + 1):
        inner = bracket(sys.fields[0], sys.fields[j])
        for i in range(m + 1):
            prod = np.einsum("jkn,jkn->jk", p, lie_bracket(sys.fields[i], inner, x, w))
            W[:, i, j] = _sample_mean(np.abs(prod) if absolute else prod)
    return W[:, 0, :], W


def singular_control_scalar(
    traj: TrajectoryBundle,
    costate: CostateBundle,
    sys: ControlAffineSystem,
    interval,
    eps_den: float = 1e-3,
    on_degenerate: str = "raise",
) -> np.ndarray:
    """u = -mean p.[f0,[f0,f1]] / mean p.[f1,[f0,f1]] at each node of ``interval``.

    The denominator is degenerate when its sample mean is at most
    ``eps_den`` times the sample mean of its absolute values, i.e. when
    the ensemble average cancels down to noise.  With
    ``on_degenerate="nan"`` degenerate nodes give NaN instead of raising.
    """
    if sys.m != 1:
        raise ValueError(f"scalar singular formula needs m = 1, system has m = {sys.m}")
    nodes = _node_slice(interval)
    x = traj.states[nodes]
    p = costate.costates[nodes]
    w = _omega_like(traj, nodes)
    f0, f1 = sys.fields
    inner = bracket(f0, f1)
    b_num = lie_bracket(f0, inner, x, w)
    b_den = lie_bracket(f1, inner, x, w)
    num = _pairing(p, b_num)
    den = _pairing(p, b_den)
    den_scale = _sample_mean(np.abs(np.einsum("jkn,jkn->jk", p, b_den)))
    out = np.empty(len(nodes))
    for q, j in enumerate(nodes):
        if not abs(den[q]) > eps_den * den_scale[q]:
            if on_degenerate == "raise":
                raise DegenerateSingularFormula("singular formula degenerate", int(j))
            out[q] = np.nan
        else:
            out[q] = -num[q] / den[q]
    return out


@dataclass
class SingularSolution:
    nodes: np.ndarray
    indices: tuple  # singular components, 0-based
    values: np.ndarray  # (len(nodes), |S|)
    condition: np.ndarray  # per node
    W: np.ndarray = field(repr=False)  # (len(nodes), |S|, |S|)
    b: np.ndarray = field(repr=False)  # (len(nodes), |S|)
    degenerate: tuple = ()  # nodes left as NaN


def commutator_norms(traj: TrajectoryBundle, sys: ControlAffineSystem, nodes=None) -> np.ndarray:
    """max over samples of |[f_i, f_j]| per node, for every pair i < j."""
    nodes = np.arange(traj.states.shape[0]) if nodes is None else np.asarray(nodes)
    x = traj.states[nodes]
    w = _omega_like(traj, nodes)
    out = []
    for i in range(1, sys.m + 1):
        for j in range(i + 1, sys.m + 1):
            b = lie_bracket(sys.fields[i], sys.fields[j], x, w)
            out.append(np.max(np.linalg.norm(b, axis=-1), axis=-1))
    return np.array(out).reshape(-1, len(nodes))


def singular_control_vector(
    traj: TrajectoryBundle,
    costate: CostateBundle,
    sys: ControlAffineSystem,
    interval: ArcInterval,
    arc_report: Optional[ArcReport] = None,
    comm_tol: float = 1e-8,
    max_condition: float = 1e12,
    cancel_tol: float = 1e-3,
    on_degenerate: str = "raise",
) -> SingularSolution:
    """Solve W_S u_S = -b_S node by node on an interval of constant index sets.

    Row i of the system is the second time derivative of Psi_i,
    mean p.[f_0,[f_0,f_i]] + sum_j u_j mean p.[f_j,[f_0,f_i]] = 0, with the
    bang components fixed at their bounds.  Under commuting control
    fields the coefficient matrix is symmetric.

    Entries of W whose sample mean is at most ``cancel_tol`` times the
    mean of their absolute values are treated as zero before the
    condition check: such averages are cancellation noise.  With
    ``on_degenerate="nan"`` ill-conditioned nodes are left as NaN and
    listed in ``degenerate``.
    """
    if not isinstance(interval, ArcInterval):
        raise TypeError("singular_control_vector needs an ArcInterval from classify_arcs")
    if arc_report is not None:
        for j in interval.nodes:
            sets = (arc_report.S[j], arc_report.B_min[j], arc_report.B_max[j])
            if sets != (interval.singular, interval.bang_min, interval.bang_max):
                raise ValueError(f"index sets change inside the interval at node {j}")
    S = tuple(sorted(interval.singular))
    if not S:
        raise ValueError("interval has no singular components")
    nodes = interval.nodes
    if sys.m > 1:
        x = traj.states[nodes]
        w = _omega_like(traj, nodes)
        for i in range(1, sys.m + 1):
            for j in range(i + 1, sys.m + 1):
                b = np.linalg.norm(lie_bracket(sys.fields[i], sys.fields[j], x, w), axis=-1)
                Ji_fj = np.linalg.norm(
                    np.einsum("...ab,...b->...a", sys.fields[i].jacobian(x, w), sys.fields[j].value(x, w)),
                    axis=-1,
                )
                Jj_fi = np.linalg.norm(
                    np.einsum("...ab,...b->...a", sys.fields[j].jacobian(x, w), sys.fields[i].value(x, w)),
                    axis=-1,
                )
                if np.any(b > comm_tol * np.maximum(1.0, Ji_fj + Jj_fi)):
                    raise CommutativityViolation(
                        f"[f{i},f{j}] does not vanish on the interval (max {b.max():.3g})"
                    )
    drift, W = bracket_pairings(traj, costate, sys, nodes)
    _, W_abs = bracket_pairings(traj, costate, sys, nodes, absolute=True)
    W = np.where(np.abs(W) <= cancel_tol * W_abs, 0.0, W)
    # row i: d^2 Psi_i / dt^2 = drift[i] + sum_j u_j * W[j, i]
    M = np.swapaxes(W, 1, 2)[:, 1:, 1:]
    c = drift[:, 1:].copy()
    for j in interval.bang_min:
        c += M[:, :, j] * sys.u_min[j]
    for j in interval.bang_max:
        c += M[:, :, j] * sys.u_max[j]
    idx = np.array(S)
    W_S = M[:, idx][:, :, idx]
    b_S = c[:, idx]
    values = np.empty((len(nodes), len(S)))
    cond = np.empty(len(nodes))
    bad = []
    for q, j in enumerate(nodes):
        cond[q] = np.linalg.cond(W_S[q])
        if not np.isfinite(cond[q]) or cond[q] > max_condition:
            if on_degenerate == "raise":
                raise DegenerateSingularFormula(
                    f"singular system W_S is numerically singular (condition {cond[q]:.3g})", int(j)
                )
            values[q] = np.nan
            bad.append(int(j))
            continue
        values[q] = lu_solve(lu_factor(W_S[q]), -b_S[q])
    return SingularSolution(nodes, S, values, cond, W_S, b_S, tuple(bad))


def singular_values_table(
    traj: TrajectoryBundle,
    costate: CostateBundle,
    sys: ControlAffineSystem,
    report: ArcReport,
) -> np.ndarray:
    """(N+1, m) array of synthesized singular values.

    NaN off singular arcs and at nodes where the formula degenerates
    (for instance at T, where the costate of a Mayer problem is sparse).
    """
    out = np.full((traj.states.shape[0], sys.m), np.nan)
    for iv in report.singular_intervals():
        if sys.m == 1 and not iv.bang_min and not iv.bang_max:
            out[iv.nodes, 0] = singular_control_scalar(
                traj, costate, sys, iv, on_degenerate="nan"
            )
        else:
            sol = singular_control_vector(traj, costate, sys, iv, report, on_degenerate="nan")
            for col, i in enumerate(sol.indices):
                out[iv.nodes, i] = sol.values[:, col]
    return out


# --- certificate ------------------------------------------------------------


def bang_mismatch_fraction(report: ArcReport, control: ControlGrid, tol: float = 1e-3) -> float:
    """Share of bang-classified (node, component) pairs whose control is off that bound."""
    u = control.at_nodes()
    span = control.u_max - control.u_min
    bad = total = 0
    for i in range(report.classes.shape[1]):
        for j, c in enumerate(report.classes[:, i]):
            if c == MAX:
                total += 1
                bad += u[j, i] < control.u_max[i] - tol * span[i]
            elif c == MIN:
                total += 1
                bad += u[j, i] > control.u_min[i] + tol * span[i]
    return bad / total if total else 0.0


def pmp_certificate(
    traj: TrajectoryBundle,
    costate: CostateBundle,
    control: ControlGrid,
    sys: ControlAffineSystem,
    report: Optional[ArcReport] = None,
) -> dict:
    """First-order optimality diagnostics at the grid nodes.

    The Hamiltonian gap at t_j is max over the box of mean p.f(x, u) minus
    its value at the computed control; for an affine Hamiltonian the max
    picks u_max where Psi > 0 and u_min where Psi < 0.
    """
    sw = switching_function(traj, costate, sys)
    u = control.at_nodes()
    best = np.where(sw.psi > 0, sys.u_max, sys.u_min)
    gap = np.sum(sw.psi * (best - u), axis=1)

    P, X = costate.costates, traj.states
    h = traj.grid.dt
    nodes = np.arange(X.shape[0] - 1)
    A = sys.rhs_jacobian(
        X[:-1], np.broadcast_to(control.values[:, None, :], X[:-1].shape[:2] + (sys.m,)),
        _omega_like(traj, nodes),
    )
    resid = P[1:] - P[:-1] + h * np.einsum("jkab,jka->jkb", A, P[:-1])
    rnorm = np.linalg.norm(resid, axis=-1)
    term = np.linalg.norm(P[-1] + sys.cost_grad(X[-1], traj.omega), axis=-1)

    scale = float(np.max(np.abs(sw.psi)) * np.max(sys.u_max - sys.u_min))
    out = {
        "hamiltonian_gap_max": float(np.max(gap)),
        "hamiltonian_gap_mean": float(np.mean(gap)),
        "hamiltonian_gap_scale": scale,
        "adjoint_residual_max": float(np.max(rnorm)),
        "adjoint_residual_mean": float(np.mean(rnorm)),
        "terminal_residual_max": float(np.max(term)),
    }
    if report is not None:
        out["bang_mismatch_fraction"] = bang_mismatch_fraction(report, control)
        out["singular_nodes"] = int(sum(len(s) > 0 for s in report.S))
    return out


# --- persistence ------------------------------------------------------------


def write_switching_csv(path, sw: SwitchingData, report: ArcReport) -> None:
    m = sw.m
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"Psi_{i + 1}" for i in range(m)] + [f"class_{i + 1}" for i in range(m)])
        for j, t in enumerate(sw.t):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in sw.psi[j]] + list(report.classes[j]))


def write_singular_csv(path, t: np.ndarray, values: np.ndarray) -> None:
    """Columns t, u_singular_1..m; empty cells off singular arcs."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"u_singular_{i + 1}" for i in range(values.shape[1])])
        for j, tj in enumerate(t):
            w.writerow([repr(float(tj))] + ["" if np.isnan(v) else repr(float(v)) for v in values[j]])


def write_certificate_json(path, cert: dict) -> None:
    Path(path).write_text(json.dumps(cert, indent=2, sort_keys=True) + "\n")
