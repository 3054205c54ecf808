"""End-to-end acceptance gate: nine criteria, one recorded pass/fail line each.

Each test prints (and collects for the terminal summary) a single
"[criterion N] ...: PASS/FAIL (details)" line before asserting, so a failing
criterion still reports its measured numbers. Criteria 1 and 2 evaluate the
bundled three-cluster configuration exactly as shipped; with its gain set
the slowest closed-loop modes settle on a thousands-of-seconds timescale, so
the convergence thresholds are not reachable by t = 60 (see
scripts/convergence_study.py for the spectrum) and those two lines are
expected to read FAIL.
"""

import dataclasses
import time

import numpy as np
import pytest

from conftest import (
    Z_STAR,
    record_criterion,
    random_quadratic_game,
    reduced_quadratic_system,
    single_cluster_reduction,
    singleton_clusters_reduction,
)
from mcgsim.dynamics import (
    equilibrium_residual,
    equilibrium_state,
    fit_decay_rate,
    simulate,
)
from mcgsim.game import eval_cost, grad_own
from mcgsim.gains import companion_matrix, is_hurwitz, solve_p1, solve_p2
from mcgsim.graphs import estimator_operator
from mcgsim.oracle import lift, solve_ne
from mcgsim.reporting import write_trajectory_csv
from mcgsim.scenario import with_seed

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def full_runs(bundled):
    """The bundled scenario integrated over its full horizon for three seeds."""
    runs = []
    for seed in SEEDS:
        sc = with_seed(bundled, seed)
        t0 = time.perf_counter()
        traj = simulate(sc.game, sc.topology, sc.gains, sc.integrator)
        runs.append((seed, traj, time.perf_counter() - t0))
    return runs


@pytest.fixture(scope="module")
def lifted_target(bundled, oracle_sol):
    return lift(bundled.game, oracle_sol.z)


def test_criterion_1_bundled_runs_reach_equilibrium(full_runs, lifted_target):
    ok = True
    rows = []
    for seed, traj, wall in full_runs:
        spread = float(traj.consensus_error[-1])
        ne = float(traj.ne_residual[-1])
        dec = float(np.max(np.abs(traj.x[-1] - lifted_target)))
        rows.append(
            f"seed {seed}: spread={spread:.3g} ne={ne:.3g} dec_err={dec:.3g} wall={wall:.1f}s"
        )
        ok = ok and spread <= 1e-3 and ne <= 1e-3 and dec <= 1e-2 and wall <= 60.0
    line = record_criterion(
        1, "three seeds settle at the equilibrium by t=60", ok, "; ".join(rows)
    )
    assert ok, line


def test_criterion_2_decay_is_exponential_on_mid_window(full_runs, lifted_target):
    ok = True
    rows = []
    for seed, traj, _ in full_runs:
        errors = np.linalg.norm(traj.x - lifted_target[None, :], axis=1)
        fit = fit_decay_rate(traj.times, errors, 20.0, 40.0)
        rows.append(f"seed {seed}: rate={fit.rate:.3g} r2={fit.r_squared:.3f}")
        ok = ok and fit.rate < 0.0 and fit.r_squared >= 0.95
    line = record_criterion(
        2, "distance to equilibrium decays exponentially on [20, 40]", ok, "; ".join(rows)
    )
    assert ok, line


def test_criterion_3_solver_methods_agree(bundled_game):
    newton = solve_ne(bundled_game, rng=np.random.default_rng([0, 2]))
    fixed = solve_ne(
        bundled_game, method="fixed-point", rng=np.random.default_rng([0, 2])
    )
    worst_methods = float(np.max(np.abs(newton.z - fixed.z)))
    worst_direct = 0.0
    rng = np.random.default_rng(318)
    for _ in range(10):
        game = random_quadratic_game(rng)
        n = solve_ne(game, rng=np.random.default_rng(1))
        f = solve_ne(game, method="fixed-point", rng=np.random.default_rng(1))
        m, r = reduced_quadratic_system(game)
        direct = np.linalg.solve(m, -r)
        worst_methods = max(worst_methods, float(np.max(np.abs(n.z - f.z))))
        worst_direct = max(worst_direct, float(np.max(np.abs(n.z - direct))))
    ok = worst_methods <= 1e-8 and worst_direct <= 1e-10
    line = record_criterion(
        3,
        "Newton and fixed-point oracles agree, and match direct solves on quadratics",
        ok,
        f"method gap {worst_methods:.3g} (tol 1e-8), direct gap {worst_direct:.3g} (tol 1e-10)",
    )
    assert ok, line


def test_criterion_4_every_bundled_gradient_matches_finite_differences(bundled_game):
    h = 1e-6
    rng = np.random.default_rng(41)
    rivals = {(2, 2): None, (1, 4): None, (3, 1): None, (2, 4): None}
    worst = 0.0
    checked = 0
    for j in range(1, bundled_game.n_clusters + 1):
        for i in range(1, bundled_game.cluster_sizes[j - 1] + 1):
            for _ in range(100):
                x = rng.uniform(-10.0, 10.0, size=1)
                others = {key: rng.uniform(-10.0, 10.0, size=1) for key in rivals}
                g = grad_own(bundled_game, j, i, x, others)
                e = np.array([h])
                fd = (
                    eval_cost(bundled_game, j, i, x + e, others)
                    - eval_cost(bundled_game, j, i, x - e, others)
                ) / (2.0 * h)
                worst = max(worst, float(np.max(np.abs(g - fd) / (1.0 + np.abs(g)))))
                checked += 1
    ok = worst <= 1e-6
    line = record_criterion(
        4,
        "analytic gradients of all twelve bundled costs match central differences",
        ok,
        f"{checked} points, worst relative deviation {worst:.3g} (tol 1e-6)",
    )
    assert ok, line


def test_criterion_5_lyapunov_solves_are_exact(bundled_gains, bundled_topo):
    def p1_residual(k):
        a = companion_matrix(k)
        p1 = solve_p1(a)
        return float(np.linalg.norm(p1 @ a + a.T @ p1 + np.eye(a.shape[0])))

    worst_p1 = p1_residual(bundled_gains.k)
    rng = np.random.default_rng(52)
    for _ in range(50):
        m = int(rng.integers(1, 6))  # damping vectors for orders 2..6
        roots = []
        while len(roots) < m:
            re = -float(rng.uniform(0.2, 5.0))
            if m - len(roots) >= 2 and rng.random() < 0.5:
                im = float(rng.uniform(0.1, 5.0))
                roots += [complex(re, im), complex(re, -im)]
            else:
                roots.append(complex(re, 0.0))
        coeffs = np.poly(np.array(roots)).real
        k = tuple(float(c) for c in coeffs[1:][::-1])
        assert is_hurwitz(companion_matrix(k))
        worst_p1 = max(worst_p1, p1_residual(k))

    s = estimator_operator(bundled_topo)
    p2, q = solve_p2(s)
    worst_p2 = float(np.linalg.norm(p2 @ s + s.T @ p2 - q))
    ok = worst_p1 <= 1e-8 and worst_p2 <= 1e-8
    line = record_criterion(
        5,
        "Lyapunov residuals vanish for 51 damping sets and the estimator operator",
        ok,
        f"worst P1 residual {worst_p1:.3g}, P2 residual {worst_p2:.3g} (tol 1e-8)",
    )
    assert ok, line


def test_criterion_6_constructed_equilibrium_is_invariant(bundled, oracle_sol):
    game, topo, gains = bundled.game, bundled.topology, bundled.gains
    state = equilibrium_state(game, topo, oracle_sol.z)
    res0 = equilibrium_residual(game, topo, gains, state)
    cfg = dataclasses.replace(bundled.integrator, t_final=10.0, stop_tol=1e-16)
    traj = simulate(game, topo, gains, cfg, initial_state=state)
    worst = float(np.max(traj.ne_residual))
    ok = res0 <= 1e-8 and worst <= 1e-8 and traj.times[-1] == 10.0
    line = record_criterion(
        6,
        "the constructed equilibrium state is an invariant point of the flow",
        ok,
        f"construction residual {res0:.3g}, max drift over 10s {worst:.3g} (tol 1e-8)",
    )
    assert ok, line


def test_criterion_7_consensus_integrators_stay_balanced(bundled, full_runs):
    starts = bundled.game.cluster_starts
    worst = 0.0
    for _, traj, _ in full_runs:
        sums = np.add.reduceat(traj.y, starts, axis=1)
        worst = max(worst, float(np.max(np.abs(sums))))
    ok = worst <= 1e-9
    line = record_criterion(
        7,
        "per-cluster sums of the consensus integrators stay at zero",
        ok,
        f"worst |sum| over three full runs {worst:.3g} (tol 1e-9)",
    )
    assert ok, line


def test_criterion_8_degenerate_games_recover_known_solutions():
    game, topo, gains, cfg, star = single_cluster_reduction()
    traj = simulate(game, topo, gains, cfg)
    err_team = float(np.max(np.abs(traj.x[-1] - star)))

    game2, topo2, gains2, cfg2, m, r = singleton_clusters_reduction()
    direct = np.linalg.solve(m, -r)
    traj2 = simulate(game2, topo2, gains2, cfg2)
    err_ne = float(np.max(np.abs(traj2.x[-1] - direct)))
    ok = err_team <= 1e-6 and err_ne <= 1e-6
    line = record_criterion(
        8,
        "single-cluster and singleton-cluster reductions hit their closed forms",
        ok,
        f"team optimum error {err_team:.3g}, linear-solve NE error {err_ne:.3g} (tol 1e-6)",
    )
    assert ok, line


def test_criterion_9_identical_configs_reproduce_byte_identical_csvs(
    bundled, full_runs, tmp_path
):
    seed, traj, _ = full_runs[0]
    sc = with_seed(bundled, seed)
    first = tmp_path / "first.csv"
    write_trajectory_csv(first, sc.game, traj)
    rerun = simulate(sc.game, sc.topology, sc.gains, sc.integrator)
    second = tmp_path / "second.csv"
    write_trajectory_csv(second, sc.game, rerun)
    ok = first.read_bytes() == second.read_bytes()
    line = record_criterion(
        9,
        "same configuration and seed write byte-identical trajectory CSVs",
        ok,
        f"{first.stat().st_size} bytes compared",
    )
    assert ok, line
