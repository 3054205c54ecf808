"""Trajectory CSV serialization and structured run reports.

The CSV layout is the plotting interface of the package: one row per recorded
sample, columns ``t``, the decision stack ``x[j.i]``, the derivative stacks
``xdot{l}[j.i]``, the consensus integrators ``y[j.i]``, then the metrics
``ne_residual``, ``consensus_err``, ``est_err``. Component indices become a
third label part (``x[j.i.c]``) when q > 1. Floats are written with repr(),
whose shortest-round-trip guarantee makes write/read/recompute cycles bitwise
stable. The estimate stack is deliberately not serialized (it is quadratic in
the player count); ``est_err`` carries its summary instead.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    RateFit,
    Trajectory,
    consensus_spread,
    fit_decay_rate,
    ne_residual,
)
from .errors import DegenerateWindow, NonPositiveBound, ValidationError
from .gains import certify, gain_bounds, lyapunov_data
from .game import GameSpec
from .oracle import NESolution, lift, solve_ne
from .scenario import Scenario, resolve_monotonicity, scenario_to_dict

METRIC_COLUMNS = ("ne_residual", "consensus_err", "est_err")


def column_names(game: GameSpec) -> list[str]:
    """CSV header for a game, matching the flat state layout order."""

    def block(prefix: str) -> list[str]:
        names = []
        for j in range(1, game.n_clusters + 1):
            for i in range(1, game.cluster_sizes[j - 1] + 1):
                if game.q == 1:
                    names.append(f"{prefix}[{j}.{i}]")
                else:
                    names.extend(f"{prefix}[{j}.{i}.{c}]" for c in range(1, game.q + 1))
        return names

    cols = ["t"] + block("x")
    for l in range(1, game.order):
        cols += block(f"xdot{l}")
    cols += block("y")
    cols += list(METRIC_COLUMNS)
    return cols


def write_trajectory_csv(path, game: GameSpec, traj: Trajectory) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(column_names(game))
        for m in range(len(traj)):
            row = [repr(float(traj.times[m]))]
            row += [repr(float(v)) for v in traj.x[m]]
            for l in range(game.order - 1):
                row += [repr(float(v)) for v in traj.derivs[m, l]]
            row += [repr(float(v)) for v in traj.y[m]]
            row += [
                repr(float(traj.ne_residual[m])),
                repr(float(traj.consensus_error[m])),
                repr(float(traj.estimate_error[m])),
            ]
            writer.writerow(row)


@dataclass
class TrajectoryTable:
    """A trajectory as read back from CSV (states and metrics, no estimates)."""

    times: np.ndarray
    x: np.ndarray
    derivs: np.ndarray
    y: np.ndarray
    ne_residual: np.ndarray
    consensus_error: np.ndarray
    estimate_error: np.ndarray


def read_trajectory_csv(path, game: GameSpec) -> TrajectoryTable:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = column_names(game)
        if header != expected:
            raise ValidationError(
                [f"CSV header does not match this game's column contract in {path.name}"]
            )
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValidationError([f"CSV {path.name} has no data rows"])
    data = np.asarray(rows, dtype=float)
    dim = game.dim
    nderiv = game.order - 1
    pos = 1
    x = data[:, pos : pos + dim]
    pos += dim
    derivs = data[:, pos : pos + nderiv * dim].reshape(len(rows), nderiv, dim)
    pos += nderiv * dim
    y = data[:, pos : pos + dim]
    pos += dim
    return TrajectoryTable(
        times=data[:, 0].copy(),
        x=x.copy(),
        derivs=derivs.copy(),
        y=y.copy(),
        ne_residual=data[:, pos].copy(),
        consensus_error=data[:, pos + 1].copy(),
        estimate_error=data[:, pos + 2].copy(),
    )


def scenario_hash(sc: Scenario) -> str:
    """Short digest of the canonical scenario document with the seed factored out."""
    doc = scenario_to_dict(sc)
    doc.pop("seed", None)
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def certification_bundle(sc: Scenario) -> dict:
    """Run the full gain-certification pipeline for a scenario.

    Returns a JSON-ready dict with the monotonicity constants used (and
    whether they were assumed or sampled), the Lyapunov solve residuals, the
    bounds, and the per-gain
    margin lines. Certification is advisory: a non-monotone sampled game is
    reported inside the bundle rather than raised.
    """
    est, source = resolve_monotonicity(sc)
    out = {
        "monotonicity": {
            "omega": est.omega,
            "theta": est.theta,
            "source": source,
            "samples": est.samples,
            "box": list(est.box),
            "monotone": est.monotone,
        }
    }
    lyap = lyapunov_data(sc.gains, sc.topology)
    out["lyapunov"] = {
        "a_bar1": lyap.a_bar1,
        "lambda_min_q": lyap.lam_min_q,
        "lambda_max_p2": lyap.lam_max_p2,
        "p1_residual": lyap.p1_residual,
        "p2_residual": lyap.p2_residual,
        "norm_block_laplacian": lyap.norm_block_laplacian,
    }
    try:
        bounds = gain_bounds(sc.gains, est.omega, est.theta, lyap)
    except NonPositiveBound as exc:
        out["certification"] = {"certified": False, "error": str(exc)}
        return out
    report = certify(sc.gains, bounds)
    out["bounds"] = {
        "epsilon_min": bounds.epsilon_min,
        "mu_min": bounds.mu_min,
        "kappa1_max": _finite_or_str(bounds.kappa1_max),
        "kappa2_min": bounds.kappa2_min,
        "kappa1_terms": [_finite_or_str(t) for t in bounds.kappa1_terms],
    }
    out["certification"] = report.to_dict()
    return out


def _finite_or_str(v: float):
    return float(v) if np.isfinite(v) else str(v)


@dataclass
class RunReport:
    """Everything about one run that a reader needs without the raw trajectory."""

    scenario_name: str
    config_hash: str
    seed: int
    certification: dict
    oracle: dict
    final: dict
    curve: dict
    rate: dict
    stopped_early: bool
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario_name": self.scenario_name,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "certification": self.certification,
            "oracle": self.oracle,
            "final": self.final,
            "curve": self.curve,
            "rate": self.rate,
            "stopped_early": self.stopped_early,
            "timings": self.timings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _report_core(
    sc: Scenario,
    times: np.ndarray,
    x: np.ndarray,
    ne: np.ndarray,
    ce: np.ndarray,
    ee: np.ndarray,
    ne_sol: NESolution,
) -> tuple[dict, dict, dict]:
    """final / curve / rate sections shared by live and CSV-rebuilt reports."""
    target = lift(sc.game, ne_sol.z)
    errors = np.sqrt(np.einsum("ij,ij->i", x - target[None, :], x - target[None, :]))
    final = {
        "t": float(times[-1]),
        "ne_residual": float(ne[-1]),
        "consensus_error": float(ce[-1]),
        "estimate_error": float(ee[-1]),
        "max_decision_error": float(np.max(np.abs(x[-1] - target))),
        "decisions": [float(v) for v in x[-1]],
    }
    curve = {
        "n_samples": int(times.size),
        "ne_first": float(ne[0]),
        "ne_last": float(ne[-1]),
        "ne_min": float(np.min(ne)),
    }
    t_end = float(times[-1])
    try:
        fit = fit_decay_rate(times, errors, t_end / 3.0, 2.0 * t_end / 3.0)
        rate = fit.to_dict()
    except DegenerateWindow as exc:
        rate = {"error": str(exc)}
    return final, curve, rate


def build_run_report(
    sc: Scenario,
    traj: Trajectory,
    certification: dict,
    ne_sol: NESolution,
    timings: dict | None = None,
) -> RunReport:
    final, curve, rate = _report_core(
        sc,
        traj.times,
        traj.x,
        traj.ne_residual,
        traj.consensus_error,
        traj.estimate_error,
        ne_sol,
    )
    return RunReport(
        scenario_name=sc.name,
        config_hash=scenario_hash(sc),
        seed=sc.seed,
        certification=certification,
        oracle=ne_sol.to_dict(),
        final=final,
        curve=curve,
        rate=rate,
        stopped_early=traj.stopped_early,
        timings=timings or {},
    )


def report_from_csv(sc: Scenario, csv_path) -> RunReport:
    """Rebuild a run report from a trajectory CSV.

    ne_residual and consensus_err are recomputed from the stored decision
    columns (and must agree with the file's own metric columns; repr round-trip
    makes this bitwise); est_err is carried from its column since the estimate
    stack is not serialized. The oracle and certification stages rerun from the
    scenario's seeded streams, so they reproduce the live report exactly.
    """
    table = read_trajectory_csv(csv_path, sc.game)
    ne = np.array([ne_residual(sc.game, row) for row in table.x])
    ce = np.array([consensus_spread(sc.game, row) for row in table.x])
    drift = max(
        float(np.max(np.abs(ne - table.ne_residual))),
        float(np.max(np.abs(ce - table.consensus_error))),
    )
    if drift > 1e-9:
        raise ValidationError(
            [f"stored metrics disagree with recomputation by {drift:g}; CSV corrupt?"]
        )
    certification = certification_bundle(sc)
    ne_sol = solve_ne(sc.game, rng=np.random.default_rng([sc.seed, 2]))
    final, curve, rate = _report_core(
        sc, table.times, table.x, ne, ce, table.estimate_error, ne_sol
    )
    return RunReport(
        scenario_name=sc.name,
        config_hash=scenario_hash(sc),
        seed=sc.seed,
        certification=certification,
        oracle=ne_sol.to_dict(),
        final=final,
        curve=curve,
        rate=rate,
        stopped_early=bool(ne[-1] < sc.integrator.stop_tol),
        timings={"rebuilt_from_csv": True},
    )


class StageTimer:
    """Tiny helper to collect wall-clock stage timings for reports."""

    def __init__(self):
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def mark(self, name: str) -> None:
        now = time.perf_counter()
        self.timings[name] = round(now - self._t0, 6)
        self._t0 = now
