"""Command-line front end.

Subcommands: equilibrium | simulate | certify | verify-identities |
path-experiment. Structured results go to JSON files or stdout, trajectories
to CSV; every write is write-to-temp plus atomic rename so a failing run
never leaves a partial file. Exit codes: 0 success, 1 validation/parse
error, 2 solver failure or inconsistent inputs.

A positional CASE argument is either a path to a network description file
or the name of a packaged case (currently ``case3bus``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from .certify import certify as run_certify
from .certify import render_report
from .components import SupplyConvention
from .equilibrium import (
    EquilibriumError,
    EquilibriumProblem,
    InconsistentInput,
    solve_equilibrium,
    solve_setpoints,
)
from .netfile import CaseDefinition, NetworkFileError, load_case
from .network import NetworkError
from .potential import (
    enclosed_area,
    path_dependence_experiment,
    rectangle_contour_pair,
)
from .simulator import (
    Scenario,
    ScenarioError,
    SimulationError,
    SolverConfig,
    simulate,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2


def resolve_case_path(case: str) -> str:
    """A filesystem path wins; otherwise fall back to a packaged case name."""
    if os.path.exists(case):
        return case
    packaged = resources.files("phasorstab").joinpath("cases", f"{case}.json")
    if packaged.is_file():
        return str(packaged)
    raise NetworkFileError(
        f"{case!r} is neither a file nor a packaged case name"
    )


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _emit(text: str, out: str | None) -> None:
    if out:
        _atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _prepare(case: CaseDefinition, args) -> CaseDefinition:
    """Apply global overrides and back-solve missing setpoints."""
    solver = case.solver
    if getattr(args, "config", None):
        from .netfile import _parse_solver

        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise NetworkFileError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise NetworkFileError("config file must hold a solver object")
        merged = {
            "step_size": solver.step_size,
            "newton_tol": solver.newton_tol,
            "newton_max_iter": solver.newton_max_iter,
            "integrator": solver.integrator,
            "convention": solver.convention.value,
        }
        merged.update(overrides.get("solver", overrides))
        solver = _parse_solver(merged)
    if args.convention is not None:
        solver = SolverConfig(
            step_size=solver.step_size,
            newton_tol=solver.newton_tol,
            newton_max_iter=solver.newton_max_iter,
            integrator=solver.integrator,
            convention=SupplyConvention(args.convention),
        )
    if getattr(args, "h", None):
        solver = SolverConfig(
            step_size=float(args.h),
            newton_tol=solver.newton_tol,
            newton_max_iter=solver.newton_max_iter,
            integrator=solver.integrator,
            convention=solver.convention,
        )
    case.solver = solver
    missing = [cid for cid, c in case.components.items() if c.setpoints is None]
    if missing:
        if case.operating_point is None:
            raise InconsistentInput(
                f"components {missing} lack setpoints and the file has no operating_point"
            )
        v = [case.operating_point[b][0] for b in case.net.non_ground]
        th = [case.operating_point[b][1] for b in case.net.non_ground]
        sol = solve_setpoints(case.net, case.components, v, th)
        for cid in missing:
            case.components[cid] = case.components[cid].with_setpoints(
                sol.setpoints[cid]
            )
    return case


def _solve_case_equilibrium(case: CaseDefinition):
    guess_v = guess_t = None
    if case.operating_point is not None:
        guess_v = np.array([case.operating_point[b][0] for b in case.net.non_ground])
        guess_t = np.array([case.operating_point[b][1] for b in case.net.non_ground])
    problem = EquilibriumProblem(
        case.net,
        case.components,
        initial_V=guess_v,
        initial_theta=guess_t,
    )
    return solve_equilibrium(problem)


# -- subcommands ---------------------------------------------------------------


def cmd_equilibrium(args) -> int:
    case = _prepare(load_case(resolve_case_path(args.case)), args)
    sol = _solve_case_equilibrium(case)
    doc = {
        "case": case.name,
        "buses": {
            bus: {
                "V": float(sol.state.V[i]),
                "theta": float(sol.state.theta[i]),
            }
            for i, bus in enumerate(case.net.non_ground)
        },
        "components": {
            cid: {
                "state": list(map(float, sol.component_states[cid])),
                "P": float(sol.injections_P[cid]),
                "Q": float(sol.injections_Q[cid]),
            }
            for cid in sol.component_states
        },
        "residual_norm": sol.residual_norm,
        "iterations": sol.iterations,
        "pinned_reference": sol.pinned_reference,
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    case = _prepare(load_case(resolve_case_path(args.case)), args)
    scenario = case.scenario
    if scenario is None:
        raise ScenarioError(f"case {case.name!r} declares no scenario")
    if args.horizon is not None:
        scenario = Scenario(
            horizon=float(args.horizon),
            output_period=scenario.output_period,
            initial=scenario.initial,
            explicit_states=scenario.explicit_states,
            disturbances=[
                d for d in scenario.disturbances if d.at <= float(args.horizon)
            ],
        )
    traj = simulate(case.net, case.components, scenario, case.solver)
    traj.to_csv(args.out)
    manifest_path = args.manifest or (os.path.splitext(args.out)[0] + ".manifest.json")
    traj.write_manifest(manifest_path, source=case.source)
    sys.stdout.write(
        f"wrote {traj.n_samples} samples to {args.out} (manifest {manifest_path})\n"
    )
    return EXIT_OK


def cmd_certify(args) -> int:
    case = _prepare(load_case(resolve_case_path(args.case)), args)
    sol = _solve_case_equilibrium(case)
    traj = None
    if args.with_trajectory:
        if case.scenario is None:
            raise ScenarioError(
                f"case {case.name!r} declares no scenario for --with-trajectory"
            )
        traj = simulate(case.net, case.components, case.scenario, case.solver, sol)
    report = run_certify(
        case.net, case.components, sol, traj, tol=args.tol
    )
    if args.out:
        _atomic_write(args.out, report.to_json())
    sys.stdout.write(render_report(report))
    return EXIT_OK


def cmd_verify_identities(args) -> int:
    case = _prepare(load_case(resolve_case_path(args.case)), args)
    scenario = case.scenario
    if scenario is None:
        raise ScenarioError(f"case {case.name!r} declares no scenario")
    if scenario.network_events():
        raise ScenarioError(
            "identity verification requires a scenario without load or line events"
        )
    horizon = float(args.horizon) if args.horizon is not None else scenario.horizon
    steps = [float(s) for s in args.h_sweep.split(",")]
    if len(steps) < 2:
        raise ScenarioError("--h-sweep needs at least two step sizes")
    sol = _solve_case_equilibrium(case)
    from .certify import identity_residuals
    from .network import BusState, tellegen_sum

    rows = []
    for h in sorted(steps, reverse=True):
        solver = SolverConfig(
            step_size=h,
            newton_tol=case.solver.newton_tol,
            newton_max_iter=case.solver.newton_max_iter,
            integrator=case.solver.integrator,
            convention=case.solver.convention,
        )
        # snap the output period onto the integration grid of this sweep point
        period = h * max(1, round(max(h, scenario.output_period) / h))
        run_scenario = Scenario(
            horizon=horizon,
            output_period=period,
            initial=scenario.initial,
            explicit_states=scenario.explicit_states,
            disturbances=[d for d in scenario.disturbances if d.at <= horizon],
        )
        traj = simulate(case.net, case.components, run_scenario, solver, sol)
        potential_res, divergence_res = identity_residuals(traj)
        tellegen = 0.0
        for s in range(traj.n_samples):
            state = BusState(V=traj.V[s].copy(), theta=traj.theta[s].copy())
            inj = {
                cid: (traj.P[cid][s], traj.Q[cid][s])
                for cid in traj.component_ids()
            }
            tellegen = max(tellegen, abs(tellegen_sum(case.net, state, inj)))
        rows.append(
            {
                "h": h,
                "potential_identity_residual": potential_res,
                "divergence_identity_residual": divergence_res,
                "tellegen_max": tellegen,
            }
        )
    hs = [r["h"] for r in rows]

    def fitted_order(key: str) -> float | None:
        vals = [r[key] for r in rows]
        if any(v <= 0.0 for v in vals):
            return None
        slope, _ = np.polyfit(np.log(hs), np.log(vals), 1)
        return float(slope)

    contour_a, contour_b = rectangle_contour_pair(1.0, 1.0)
    lossless = path_dependence_experiment(0.0, -1.0, contour_a, contour_b)
    lossy = path_dependence_experiment(1.0, 0.0, contour_a, contour_b)
    doc = {
        "case": case.name,
        "horizon": horizon,
        "sweep": rows,
        "fitted_order": {
            "potential_identity": fitted_order("potential_identity_residual"),
            "divergence_identity": fitted_order("divergence_identity_residual"),
        },
        "path_experiment": {
            "lossless_im_diff": lossless.im_diff,
            "lossy_unit_area_im_diff": lossy.im_diff,
        },
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_path_experiment(args) -> int:
    if args.contours:
        with open(args.contours) as fh:
            raw = json.load(fh)
        contour_a = [complex(p[0], p[1]) for p in raw["a"]]
        contour_b = [complex(p[0], p[1]) for p in raw["b"]]
    else:
        contour_a, contour_b = rectangle_contour_pair(args.width, args.height)
    result = path_dependence_experiment(
        args.g, args.b, contour_a, contour_b, n=args.n
    )
    doc = {
        "g": args.g,
        "b": args.b,
        "enclosed_area": enclosed_area(contour_a, contour_b),
        "integral_a": [result.integral_a.real, result.integral_a.imag],
        "integral_b": [result.integral_b.real, result.integral_b.imag],
        "re_diff": result.re_diff,
        "im_diff": result.im_diff,
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phasorstab",
        description="Phasor-circuit stability analytics",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--config",
        default=None,
        help="JSON file of solver overrides (same schema as a case's solver section)",
    )
    parser.add_argument(
        "--tol",
        type=float,
        default=1e-6,
        help="criterion tolerance for certification checks",
    )
    parser.add_argument(
        "--convention",
        choices=["printed", "negated"],
        default=None,
        help="supply-rate sign convention override",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eq = sub.add_parser("equilibrium", help="solve the steady state")
    p_eq.add_argument("case")
    p_eq.add_argument("--out", default=None, help="write the solution JSON here")
    p_eq.set_defaults(func=cmd_equilibrium)

    p_sim = sub.add_parser("simulate", help="run the case scenario")
    p_sim.add_argument("case")
    p_sim.add_argument("--h", default=None, help="integration step override")
    p_sim.add_argument("--horizon", default=None, help="horizon override (s)")
    p_sim.add_argument("--out", default="trajectory.csv")
    p_sim.add_argument("--manifest", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_cert = sub.add_parser("certify", help="evaluate the stability certificates")
    p_cert.add_argument("case")
    p_cert.add_argument("--with-trajectory", action="store_true")
    p_cert.add_argument("--h", default=None, help="integration step override")
    p_cert.add_argument("--out", default=None, help="write the report JSON here")
    p_cert.set_defaults(func=cmd_certify)

    p_ver = sub.add_parser(
        "verify-identities", help="trajectory identity residuals over a step sweep"
    )
    p_ver.add_argument("case")
    p_ver.add_argument("--h-sweep", default="4e-3,2e-3,1e-3")
    p_ver.add_argument("--horizon", default=None)
    p_ver.add_argument("--out", default=None)
    p_ver.set_defaults(func=cmd_verify_identities)

    p_path = sub.add_parser(
        "path-experiment", help="contour comparison of the branch line integral"
    )
    p_path.add_argument("--g", type=float, default=0.0, help="conductance")
    p_path.add_argument("--b", type=float, default=-1.0, help="susceptance")
    p_path.add_argument("--width", type=float, default=1.0)
    p_path.add_argument("--height", type=float, default=1.0)
    p_path.add_argument("--n", type=int, default=512, help="points per segment")
    p_path.add_argument("--contours", default=None, help="JSON file with contours a/b")
    p_path.add_argument("--out", default=None)
    p_path.set_defaults(func=cmd_path_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NetworkFileError, NetworkError, ScenarioError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except (EquilibriumError, InconsistentInput, SimulationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
