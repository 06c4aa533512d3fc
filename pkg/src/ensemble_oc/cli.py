"""Command-line front end: ``eoc solve | sweep | analyze | check | problems``.

Settings come from an optional JSON config file (``--config``) and are
overridden by flags.  Exit codes: 0 success, 1 convergence or invariant
failure (outputs are still written), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    classify_arcs,
    pmp_certificate,
    singular_values_table,
    switching_function,
    write_certificate_json,
    write_singular_csv,
    write_switching_csv,
)
from .checks import run_checks
from .integrate import (
    ControlGrid,
    IntegrationError,
    TimeGrid,
    ensemble_cost,
    integrate_adjoint,
    integrate_forward,
    write_costates_csv,
    write_trajectories_csv,
)
from .optimize import (
    LineSearchError,
    SolveOptions,
    SweepError,
    read_solve_json,
    solve_problem,
    solve_result_document,
    sweep_problem,
    write_solve_json,
    write_sweep_csv,
)
from .params import RNG_NAME, SampleSet, distribution_to_config
from .problems import PROBLEMS, UnknownProblem, get_problem

log = logging.getLogger("ensemble_oc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    problem: str = "fishing"
    k: int = 20
    seed: int = 0
    steps: int = 200
    max_iters: int = 2000
    tol_pg: float = 1e-6
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    tol_psi: float = 0.02
    min_arc_nodes: int = 3
    k_max: int = 20
    nested: bool = True
    out: str = "out"
    overrides: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise UsageError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if int(self.k) < 1:
            raise UsageError(f"k must be ≥ 1 (got {self.k})")
        if int(self.k_max) < 2:
            raise UsageError(f"k-max must be ≥ 2 (got {self.k_max})")
        if int(self.steps) < 1:
            raise UsageError(f"steps must be ≥ 1 (got {self.steps})")
        if not 0 < float(self.tol_psi) < 1:
            raise UsageError(f"tol-psi must lie in (0, 1) (got {self.tol_psi})")
        if int(self.min_arc_nodes) < 1:
            raise UsageError(f"min_arc_nodes must be ≥ 1 (got {self.min_arc_nodes})")

    def solve_options(self) -> SolveOptions:
        try:
            return SolveOptions(
                max_iters=int(self.max_iters), armijo_c=float(self.armijo_c),
                backtrack_factor=float(self.backtrack_factor), initial_step=float(self.initial_step),
                tol_pg=float(self.tol_pg), N=int(self.steps), seed=int(self.seed), nested=bool(self.nested),
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def problem_spec(self):
        try:
            return get_problem(self.problem, self.overrides)
        except UnknownProblem as exc:
            raise UsageError(exc.args[0]) from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None


CONFIG_KEYS = {f.name for f in fields(RunConfig)}
# flag dest -> config key
FLAG_KEYS = {
    "problem": "problem", "k": "k", "seed": "seed", "steps": "steps", "out": "out",
    "k_max": "k_max", "nested": "nested", "tol_pg": "tol_pg", "max_iters": "max_iters",
    "tol_psi": "tol_psi",
}


def load_config(args) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(raw) - CONFIG_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys {unknown}; allowed: {sorted(CONFIG_KEYS)}")
        values.update(raw)
    for dest, key in FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[key] = v
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# --- output helpers ---------------------------------------------------------


def write_control_csv(path, control: ControlGrid, grid: TimeGrid) -> None:
    """Columns t, u_1..m; t is the left end of each interval."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"u_{i + 1}" for i in range(control.m)])
        for j, t in enumerate(grid.nodes[:-1]):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in control.values[j]])


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "dim") and hasattr(value, "from_uniform"):
        return distribution_to_config(value)
    if isinstance(value, np.generic):
        return value.item()
    return value


def analyze_extremal(problem, traj, costate, control, cfg: RunConfig, out: Path) -> dict:
    """Write switching.csv, singular.csv, certificate.json; return the certificate."""
    sys_ = problem.system
    sw = switching_function(traj, costate, sys_, tol_psi=cfg.tol_psi)
    report = classify_arcs(sw, control, min_arc_nodes=int(cfg.min_arc_nodes))
    table = singular_values_table(traj, costate, sys_, report)
    cert = pmp_certificate(traj, costate, control, sys_, report)
    cert["intervals"] = [
        {
            "t_start": float(sw.t[iv.start]),
            "t_end": float(sw.t[iv.stop - 1]),
            "singular": [i + 1 for i in sorted(iv.singular)],
            "bang_min": [i + 1 for i in sorted(iv.bang_min)],
            "bang_max": [i + 1 for i in sorted(iv.bang_max)],
        }
        for iv in report.intervals
    ]
    mask = ~np.isnan(table)
    u = control.at_nodes()
    cert["singular_formula_max_abs_diff"] = float(np.max(np.abs(table - u)[mask])) if mask.any() else None
    write_switching_csv(out / "switching.csv", sw, report)
    write_singular_csv(out / "singular.csv", sw.t, table)
    write_certificate_json(out / "certificate.json", cert)
    return cert


# --- commands ---------------------------------------------------------------


def cmd_solve(args) -> int:
    cfg = load_config(args)
    problem = cfg.problem_spec()
    opts = cfg.solve_options()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = solve_problem(problem, int(cfg.k), opts)
    except (IntegrationError, LineSearchError) as exc:
        print(f"error: solve failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    cert = analyze_extremal(problem, res.trajectory, res.costate, res.control, cfg, out)
    diagnostics = {
        "rng": RNG_NAME,
        "version": __version__,
        "sense": problem.sense,
        "hamiltonian_gap_max": cert["hamiltonian_gap_max"],
        "bang_mismatch_fraction": cert["bang_mismatch_fraction"],
    }
    doc = solve_result_document(res, problem.name, _jsonable(asdict(cfg)), diagnostics)
    write_solve_json(out / "solve.json", doc)
    write_trajectories_csv(out / "trajectories.csv", res.trajectory)
    write_costates_csv(out / "costates.csv", res.costate)
    write_control_csv(out / "control.csv", res.control, res.trajectory.grid)
    label = "revenue" if problem.sense == "maximize" else "cost"
    print(
        f"{problem.name}: k={cfg.k} N={cfg.steps} seed={cfg.seed} {label}={res.objective:.10g} "
        f"iterations={res.iterations} pg={res.projected_gradient_norm:.3g} "
        f"converged={str(res.converged).lower()}"
    )
    print(f"wrote {out}/solve.json and companions")
    if not res.converged:
        print(f"error: not converged after {res.iterations} iterations", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    problem = cfg.problem_spec()
    opts = cfg.solve_options()
    out = Path(cfg.out)
    (out / "controls").mkdir(parents=True, exist_ok=True)
    grid = TimeGrid.for_system(problem.system, opts.N)
    status = EXIT_OK
    try:
        result = sweep_problem(problem, int(cfg.k_max), opts)
    except SweepError as exc:
        print(f"error: {exc}; keeping {len(exc.partial.records)} completed rows", file=sys.stderr)
        result, status = exc.partial, EXIT_FAIL
    if result.records:
        write_sweep_csv(out / "sweep.csv", result)
    for rec in result.records:
        ctrl = ControlGrid(rec.control, problem.system.u_min, problem.system.u_max)
        write_control_csv(out / "controls" / f"control_k{rec.k:03d}.csv", ctrl, grid)
        print(f"k={rec.k:3d} cost={rec.cost:.10g} rel_cost={rec.rel_cost:.3g} rel_control={rec.rel_control:.3g}")
    unconverged = [r.k for r in result.records if not r.converged]
    if unconverged:
        print(f"error: not converged for k in {unconverged}", file=sys.stderr)
        status = EXIT_FAIL
    return status


def cmd_analyze(args) -> int:
    path = Path(args.solve_json)
    try:
        doc = read_solve_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    cfg = RunConfig(**doc["config"])
    if args.tol_psi is not None:
        cfg.tol_psi = args.tol_psi
    cfg.validate()
    problem = cfg.problem_spec()
    sys_ = problem.system
    omega = np.asarray(doc["samples"], dtype=float)
    samples = SampleSet(omega, int(cfg.seed), omega.shape[0], bool(cfg.nested))
    control = ControlGrid(np.asarray(doc["control"], dtype=float), sys_.u_min, sys_.u_max)
    grid = TimeGrid.for_system(sys_, control.N)
    traj = integrate_forward(sys_, problem.initial, samples, control, grid)
    costate = integrate_adjoint(sys_, traj)
    out = Path(args.out) if args.out else path.parent
    out.mkdir(parents=True, exist_ok=True)
    cert = analyze_extremal(problem, traj, costate, control, cfg, out)
    J = ensemble_cost(sys_, traj)
    print(f"{problem.name}: cost={problem.sign * J:.10g} (stored {doc['cost']:.10g})")
    for iv in cert["intervals"]:
        kinds = []
        if iv["singular"]:
            kinds.append(f"singular {iv['singular']}")
        if iv["bang_min"]:
            kinds.append(f"min {iv['bang_min']}")
        if iv["bang_max"]:
            kinds.append(f"max {iv['bang_max']}")
        print(f"  [{iv['t_start']:.4f}, {iv['t_end']:.4f}] " + ", ".join(kinds))
    print(
        f"hamiltonian gap max {cert['hamiltonian_gap_max']:.3g}, "
        f"terminal residual {cert['terminal_residual_max']:.3g}, "
        f"bang mismatch {cert['bang_mismatch_fraction']:.3%}"
    )
    return EXIT_OK


def cmd_check(args) -> int:
    names = [args.problem] if args.problem else sorted(PROBLEMS)
    try:
        problems = [get_problem(n) for n in names]
    except UnknownProblem as exc:
        raise UsageError(exc.args[0]) from None
    only = [s for item in (args.only or []) for s in item.split(",") if s]
    try:
        results = run_checks(problems, only or None)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_problems(args) -> int:
    for name in sorted(PROBLEMS):
        p = get_problem(name)
        s = p.system
        print(f"{name}: {p.description}")
        print(f"  n={s.n} m={s.m} T={s.T} sense={p.sense} u in [{s.u_min.tolist()}, {s.u_max.tolist()}]")
        for key, val in p.parameters.items():
            print(f"  {key} = {json.dumps(_jsonable(val))}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _common(p: argparse.ArgumentParser, sweep: bool = False) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--problem", help=f"one of {sorted(PROBLEMS)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="number of control intervals N")
    p.add_argument("--out", help="output directory")
    p.add_argument("--tol-pg", dest="tol_pg", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol-psi", dest="tol_psi", type=float)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--nested", dest="nested", action="store_const", const=True,
                      help="sample sets are prefixes of one stream (default)")
    mode.add_argument("--independent", dest="nested", action="store_const", const=False,
                      help="fresh sample stream for every k")
    if sweep:
        p.add_argument("--k-max", dest="k_max", type=int)
    else:
        p.add_argument("--k", type=int, help="number of samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eoc", description="Sample-average ensemble optimal control.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one sample-average problem")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="solve for k = 1..k_max and record relative distances")
    _common(p, sweep=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="switching functions, arcs and certificate for a solve.json")
    p.add_argument("solve_json")
    p.add_argument("--out", help="output directory (default: next to solve.json)")
    p.add_argument("--tol-psi", dest="tol_psi", type=float)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--problem", help="restrict to one problem")
    p.add_argument("--only", action="append", metavar="CHECKS",
                   help="comma-separated subset of: jacobians, gradient, brackets, rk4")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("problems", help="list built-in problems")
    p.set_defaults(func=cmd_problems)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"eoc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"eoc: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
