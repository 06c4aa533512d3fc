"""Projected-gradient solver for the sample-average problem and k-sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import ControlAffineSystem
from .integrate import (
    ControlGrid,
    CostateBundle,
    IntegrationError,
    TimeGrid,
    TrajectoryBundle,
    cost_gradient,
    ensemble_cost,
    integrate_adjoint,
    integrate_forward,
)
from .params import InitialConditionSpec, ParameterDistribution, SampleSet, sample_parameters

log = logging.getLogger(__name__)


class LineSearchError(RuntimeError):
    def __init__(self, iteration: int, step: float):
        super().__init__(f"line search failed at iteration {iteration} (step {step:.3g})")
        self.iteration = iteration


@dataclass
class SolveOptions:
    max_iters: int = 2000
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    tol_pg: float = 1e-6
    N: int = 200
    seed: int = 0
    nested: bool = True
    # round controls within snap_tol of a bound onto it after convergence
    snap: bool = False
    snap_tol: float = 1e-3
    min_step: float = 1e-14

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be > 0")
        if not self.tol_pg > 0:
            raise ValueError("tol_pg must be > 0")
        if int(self.N) < 1:
            raise ValueError("N must be >= 1")


@dataclass
class SolveResult:
    control: ControlGrid
    cost: float
    iterations: int
    projected_gradient_norm: float
    converged: bool
    trajectory: TrajectoryBundle = field(repr=False)
    costate: CostateBundle = field(repr=False)
    samples: SampleSet = field(repr=False)
    gradient: np.ndarray = field(repr=False)
    history: list = field(default_factory=list, repr=False)
    sign: float = 1.0

    @property
    def objective(self) -> float:
        """Cost with the user-facing sign (revenue for maximization problems)."""
        return self.sign * self.cost


def projected_gradient_norm(u: np.ndarray, grad: np.ndarray, lo, hi) -> float:
    step = u - np.clip(u - grad, lo, hi)
    return float(np.linalg.norm(step) / math.sqrt(step.size))


def _evaluate(sys, initial, samples, values, grid):
    ctrl = ControlGrid(values, sys.u_min, sys.u_max)
    traj = integrate_forward(sys, initial, samples, ctrl, grid)
    return traj, ensemble_cost(sys, traj)


def _derivatives(sys, traj):
    costate = integrate_adjoint(sys, traj)
    return costate, cost_gradient(sys, traj, costate)


def solve(
    sys: ControlAffineSystem,
    dist: ParameterDistribution,
    initial: InitialConditionSpec,
    k: int,
    options: Optional[SolveOptions] = None,
    *,
    samples: Optional[SampleSet] = None,
    warm_start: Optional[ControlGrid] = None,
    sign: float = 1.0,
) -> SolveResult:
    """Minimize J_k over piecewise-constant controls in the box.

    Iterates u <- clip(u - a * grad J_k) with Armijo backtracking on J_k.
    The trial step is the long Barzilai-Borwein step s.s / s.y of the
    previous iterate (``initial_step`` on the first iteration).  Trial controls whose
    trajectories leave the domain are treated as rejected steps.
    """
    opts = options or SolveOptions()
    if int(k) < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if samples is None:
        samples = sample_parameters(dist, k, opts.seed, nested=opts.nested)
    elif samples.k != k:
        raise ValueError(f"sample set has k = {samples.k}, expected {k}")
    grid = TimeGrid.for_system(sys, opts.N)
    lo, hi = sys.u_min, sys.u_max
    if warm_start is None:
        u = ControlGrid.midpoint(sys, opts.N).values
    else:
        if warm_start.values.shape != (opts.N, sys.m):
            raise ValueError(
                f"warm start has shape {warm_start.values.shape}, expected {(opts.N, sys.m)}"
            )
        u = np.clip(warm_start.values, lo, hi)

    traj, J = _evaluate(sys, initial, samples, u, grid)
    costate, G = _derivatives(sys, traj)
    history = [J]
    alpha = opts.initial_step
    pg = projected_gradient_norm(u, G, lo, hi)
    converged = pg <= opts.tol_pg
    it = 0
    while not converged and it < opts.max_iters:
        it += 1
        step = alpha
        while True:
            u_new = np.clip(u - step * G, lo, hi)
            d = u_new - u
            try:
                traj_new, J_new = _evaluate(sys, initial, samples, u_new, grid)
            except IntegrationError:
                J_new = math.inf
            if J_new <= J + opts.armijo_c * float(np.sum(G * d)):
                break
            step *= opts.backtrack_factor
            if step < opts.min_step:
                raise LineSearchError(it, step)
        costate_new, G_new = _derivatives(sys, traj_new)
        s = (u_new - u).ravel()
        y = (G_new - G).ravel()
        sy = float(s @ y)
        if sy > 0:
            alpha = float(s @ s) / sy
        else:
            alpha = max(step / opts.backtrack_factor, opts.initial_step)
        u, traj, J, costate, G = u_new, traj_new, J_new, costate_new, G_new
        history.append(J)
        pg = projected_gradient_norm(u, G, lo, hi)
        converged = pg <= opts.tol_pg

    if opts.snap:
        span = hi - lo
        u = np.where(u - lo <= opts.snap_tol * span, lo, u)
        u = np.where(hi - u <= opts.snap_tol * span, hi, u)
        traj, J = _evaluate(sys, initial, samples, u, grid)
        costate, G = _derivatives(sys, traj)

    log.debug("solve k=%d: J=%.10g iters=%d pg=%.3g converged=%s", k, J, it, pg, converged)
    return SolveResult(
        control=traj.control,
        cost=J,
        iterations=it,
        projected_gradient_norm=pg,
        converged=converged,
        trajectory=traj,
        costate=costate,
        samples=samples,
        gradient=G,
        history=history,
        sign=sign,
    )


def solve_problem(problem, k: int, options: Optional[SolveOptions] = None, **kw) -> SolveResult:
    """``solve`` with the system, distribution, initial map and sign of a ProblemSpec."""
    return solve(
        problem.system, problem.distribution, problem.initial, k, options,
        sign=problem.sign, **kw,
    )


# --- k-sweeps ---------------------------------------------------------------


@dataclass
class SweepRecord:
    k: int
    cost: float
    control: np.ndarray = field(repr=False)
    rel_cost: float = math.nan
    rel_control: float = math.nan
    rel_control_components: tuple = ()
    iterations: int = 0
    converged: bool = False


@dataclass
class SweepResult:
    records: list = field(default_factory=list)
    error: Optional[str] = None

    @property
    def complete(self) -> bool:
        return self.error is None

    def last(self) -> SweepRecord:
        return self.records[-1]


class SweepError(RuntimeError):
    def __init__(self, k: int, cause: Exception, partial: SweepResult):
        super().__init__(f"sweep failed at k = {k}: {cause}")
        self.k = k
        self.partial = partial


def _rel(prev, cur) -> float:
    num = float(np.linalg.norm(np.asarray(prev) - np.asarray(cur)))
    den = float(np.linalg.norm(prev))
    if num == 0.0:
        return 0.0
    return num / den if den > 0 else math.inf


def sweep(
    sys: ControlAffineSystem,
    dist: ParameterDistribution,
    initial: InitialConditionSpec,
    k_max: int,
    options: Optional[SolveOptions] = None,
    *,
    sign: float = 1.0,
    warm: bool = True,
) -> SweepResult:
    """Solve the sample-average problem for k = 1..k_max.

    Each k is warm-started from the previous solution.  Costs are stored
    with the user-facing sign; relative distances compare consecutive k.
    """
    opts = options or SolveOptions()
    if int(k_max) < 2:
        raise ValueError(f"k_max must be >= 2, got {k_max}")
    if opts.nested:
        full = sample_parameters(dist, k_max, opts.seed, nested=True)
    result = SweepResult()
    prev: Optional[SolveResult] = None
    for k in range(1, k_max + 1):
        if opts.nested:
            samples = SampleSet(full.samples[:k].copy(), opts.seed, k, True)
        else:
            samples = sample_parameters(dist, k, opts.seed, nested=False)
        try:
            res = solve(
                sys, dist, initial, k, opts, samples=samples, sign=sign,
                warm_start=prev.control if (warm and prev is not None) else None,
            )
        except Exception as exc:  # keep what was computed so far
            result.error = f"k={k}: {exc}"
            raise SweepError(k, exc, result) from exc
        rec = SweepRecord(
            k=k,
            cost=res.objective,
            control=res.control.values.copy(),
            iterations=res.iterations,
            converged=res.converged,
        )
        if prev is not None:
            rec.rel_cost = _rel(prev.objective, res.objective)
            rec.rel_control = _rel(prev.control.values, res.control.values)
            rec.rel_control_components = tuple(
                _rel(prev.control.values[:, i], res.control.values[:, i]) for i in range(sys.m)
            )
        result.records.append(rec)
        log.info("sweep k=%d cost=%.6g rel_cost=%.3g", k, rec.cost, rec.rel_cost)
        prev = res
    return result


def sweep_problem(problem, k_max: int, options: Optional[SolveOptions] = None, **kw) -> SweepResult:
    return sweep(
        problem.system, problem.distribution, problem.initial, k_max, options,
        sign=problem.sign, **kw,
    )


# --- persistence ------------------------------------------------------------

SWEEP_COLUMNS = ("k", "cost", "rel_cost", "rel_control")


def write_sweep_csv(path, result: SweepResult) -> None:
    """Columns k, cost, rel_cost, rel_control, then rel_control_1..m.

    Relative distances are empty for k = 1.
    """
    m = result.records[0].control.shape[1] if result.records else 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(SWEEP_COLUMNS) + [f"rel_control_{i + 1}" for i in range(m)])
        for r in result.records:
            rel = [] if r.k == 1 else [repr(r.rel_cost), repr(r.rel_control)]
            comps = [repr(v) for v in r.rel_control_components] if r.k > 1 else [""] * m
            w.writerow([r.k, repr(r.cost)] + (rel or ["", ""]) + comps)


def solve_result_document(result: SolveResult, problem: str, config: dict, diagnostics=None) -> dict:
    """JSON-ready summary of a solve; keys are fixed."""
    return {
        "problem": problem,
        "config": config,
        "cost": result.objective,
        "internal_cost": result.cost,
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "projected_gradient_norm": result.projected_gradient_norm,
        "samples": result.samples.samples.tolist(),
        "control": result.control.values.tolist(),
        "diagnostics": diagnostics or {},
    }


def write_solve_json(path, document: dict) -> None:
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")


def read_solve_json(path) -> dict:
    return json.loads(Path(path).read_text())
