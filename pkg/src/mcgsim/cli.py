"""Command-line interface: validate, gains, solve-ne, simulate, report.

Exit codes: 0 on success, 2 for schema/validation problems (including unknown
scenario paths), 3 for runtime failures (oracle non-convergence, diverging
integration). Set MCG_LOG=DEBUG|INFO|... to raise logging verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .dynamics import ClosedLoop, simulate
from .errors import NoConvergence, NonFiniteState, SchemaError, ValidationError
from .oracle import solve_ne
from .reporting import (
    StageTimer,
    build_run_report,
    certification_bundle,
    report_from_csv,
    scenario_hash,
    write_trajectory_csv,
)
from .scenario import (
    Scenario,
    bundled_scenario_names,
    bundled_scenario_path,
    parse_scenario,
    with_seed,
)

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcgsim",
        description=(
            "Design, certify, and simulate distributed Nash equilibrium seeking "
            "for multi-cluster games with high-order integrator players."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_arg(sp):
        sp.add_argument(
            "scenario",
            help="path to a scenario JSON file, or the name of a bundled scenario "
            f"({', '.join(bundled_scenario_names())})",
        )

    sp = sub.add_parser("validate", help="run all schema and semantic checks, no simulation")
    scenario_arg(sp)

    sp = sub.add_parser("gains", help="evaluate the gain bounds and report certification margins")
    scenario_arg(sp)

    sp = sub.add_parser("solve-ne", help="solve the reduced equilibrium system with the oracle")
    scenario_arg(sp)
    sp.add_argument("--method", choices=["damped-newton", "fixed-point"], default="damped-newton")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--restarts", type=int, default=5)
    sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    sp = sub.add_parser("simulate", help="integrate the closed loop and write CSV + report")
    scenario_arg(sp)
    sp.add_argument("--t-final", type=float, default=None)
    sp.add_argument("--dt", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sp.add_argument("--stop-tol", type=float, default=None)
    sp.add_argument("--record-every", type=int, default=None)
    sp.add_argument("--output-dir", type=Path, default=None)
    sp.add_argument(
        "--sweep",
        type=int,
        default=None,
        metavar="N",
        help="run N seeds (seed, seed+1, ...) into per-seed subdirectories",
    )

    sp = sub.add_parser("report", help="rebuild a run report from a trajectory CSV")
    scenario_arg(sp)
    sp.add_argument("csv", type=Path, help="trajectory CSV written by simulate")
    sp.add_argument("--output-dir", type=Path, default=None)

    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("MCG_LOG", "WARNING").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_scenario(ref: str) -> Scenario:
    path = Path(ref)
    if path.exists():
        return parse_scenario(path)
    if path.suffix == "" and not path.is_absolute():
        try:
            return parse_scenario(bundled_scenario_path(ref))
        except FileNotFoundError as exc:
            raise ValidationError([str(exc)]) from exc
    raise ValidationError([f"scenario file {ref!r} does not exist"])


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _apply_overrides(sc: Scenario, args) -> Scenario:
    updates = {}
    if args.t_final is not None:
        updates["t_final"] = args.t_final
    if args.dt is not None:
        updates["dt"] = args.dt
    if args.stop_tol is not None:
        updates["stop_tol"] = args.stop_tol
    if args.record_every is not None:
        updates["record_every"] = args.record_every
    if updates:
        sc = dataclasses.replace(sc, integrator=dataclasses.replace(sc.integrator, **updates))
        errs = sc.integrator.validation_errors()
        if errs:
            raise ValidationError(errs)
    if args.seed is not None:
        sc = with_seed(sc, args.seed)
    return sc


def _cmd_validate(args) -> int:
    sc = _load_scenario(args.scenario)
    cap = ClosedLoop(sc.game, sc.topology, sc.gains).dt_cap
    _emit(
        {
            "status": "ok",
            "name": sc.name,
            "config_hash": scenario_hash(sc),
            "clusters": sc.game.n_clusters,
            "players": sc.game.n_players,
            "decision_dim": sc.game.q,
            "order": sc.game.order,
            "dt": sc.integrator.dt,
            "dt_cap": cap,
        }
    )
    return 0


def _cmd_gains(args) -> int:
    sc = _load_scenario(args.scenario)
    bundle = certification_bundle(sc)
    bundle["name"] = sc.name
    bundle["config_hash"] = scenario_hash(sc)
    _emit(bundle)
    return 0


def _cmd_solve_ne(args) -> int:
    sc = _load_scenario(args.scenario)
    seed = sc.seed if args.seed is None else args.seed
    sol = solve_ne(
        sc.game,
        method=args.method,
        tol=args.tol,
        restarts=args.restarts,
        rng=np.random.default_rng([seed, 2]),
    )
    doc = sol.to_dict()
    doc["per_cluster"] = {
        f"cluster-{j}": [float(v) for v in np.asarray(sol.z).reshape(sc.game.n_clusters, sc.game.q)[j - 1]]
        for j in range(1, sc.game.n_clusters + 1)
    }
    doc["name"] = sc.name
    doc["seed"] = seed
    _emit(doc)
    return 0


def _run_one(sc: Scenario, out_dir: Path) -> dict:
    timer = StageTimer()
    certification = certification_bundle(sc)
    timer.mark("certify_s")
    ne_sol = solve_ne(sc.game, rng=np.random.default_rng([sc.seed, 2]))
    timer.mark("oracle_s")
    traj = simulate(sc.game, sc.topology, sc.gains, sc.integrator)
    timer.mark("simulate_s")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "trajectory.csv"
    write_trajectory_csv(csv_path, sc.game, traj)
    report = build_run_report(sc, traj, certification, ne_sol, timings=timer.timings)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    timer.mark("write_s")
    return {
        "seed": sc.seed,
        "output_dir": str(out_dir),
        "final_t": report.final["t"],
        "final_ne_residual": report.final["ne_residual"],
        "final_consensus_error": report.final["consensus_error"],
        "stopped_early": report.stopped_early,
        "certified": certification["certification"].get("certified", False),
    }


def _cmd_simulate(args) -> int:
    sc = _apply_overrides(_load_scenario(args.scenario), args)
    base = args.output_dir if args.output_dir is not None else Path("runs") / sc.name
    if args.sweep is not None:
        if args.sweep < 1:
            raise ValidationError([f"--sweep must be >= 1, got {args.sweep}"])
        results = []
        for offset in range(args.sweep):
            sc_run = with_seed(sc, sc.seed + offset)
            results.append(_run_one(sc_run, base / f"seed-{sc_run.seed}"))
        _emit({"runs": results})
    else:
        _emit(_run_one(sc, base))
    return 0


def _cmd_report(args) -> int:
    sc = _load_scenario(args.scenario)
    report = report_from_csv(sc, args.csv)
    if args.output_dir is not None:
        args.output_dir.mkdir(parents=True, exist_ok=True)
        (args.output_dir / "report.json").write_text(report.to_json() + "\n")
    _emit(report.to_dict())
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "gains": _cmd_gains,
    "solve-ne": _cmd_solve_ne,
    "simulate": _cmd_simulate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SchemaError, ValidationError) as exc:
        _emit({"status": "invalid", "problems": exc.problems})
        return 2
    except FileNotFoundError as exc:
        _emit({"status": "invalid", "problems": [str(exc)]})
        return 2
    except NoConvergence as exc:
        _emit({"status": "failed", "kind": "NoConvergence", "message": str(exc)})
        return 3
    except NonFiniteState as exc:
        _emit({"status": "failed", "kind": "NonFiniteState", "message": str(exc), "t": exc.t})
        return 3


if __name__ == "__main__":
    sys.exit(main())
