"""Closed-loop rhs, RK4 stepping, simulate, and the convergence metrics."""

import math

import numpy as np
import pytest
import scipy.linalg

from mcgsim import (
    ClosedLoop,
    DegenerateWindow,
    FeedbackGains,
    IntegratorConfig,
    NonFiniteState,
    SystemState,
    ValidationError,
    consensus_spread,
    equilibrium_residual,
    equilibrium_state,
    estimator_spectrum,
    fit_decay_rate,
    lift,
    ne_residual,
    simulate,
    solve_ne,
    step_rk4,
)
from mcgsim.dynamics import rhs
from mcgsim.game import as_decision_rows

from conftest import path_topology, quadratic_game, single_cluster_reduction

FIRST_ORDER = FeedbackGains(k=(), epsilon=1.0, mu=1.0, kappa1=0.5, kappa2=5.0)


def constant_cost_game(sizes, order=1):
    return quadratic_game([[(0.0, 0.0, 5.0)] * nj for nj in sizes], order=order)


def test_rhs_vanishes_at_equilibrium(bundled, oracle_sol):
    st = equilibrium_state(bundled.game, bundled.topology, oracle_sol.z)
    ds = rhs(bundled.game, bundled.topology, bundled.gains, st)
    assert np.all(ds.flat() == 0.0)


def test_rhs_gradient_flow_for_decoupled_players():
    # two decoupled singleton clusters with f = x^2: self-consistent estimates
    # and zero y reduce the first-order control to dx = -2x
    game = quadratic_game([[(1.0, 0.0)], [(1.0, 0.0)]], order=1)
    topo = path_topology([1, 1])
    x = np.array([[1.0], [-2.0]])
    st = SystemState(
        x=x.copy(),
        derivs=np.zeros((0, 2, 1)),
        y=np.zeros((2, 1)),
        estimates=np.broadcast_to(x[None, :, :], (2, 2, 1)).copy(),
    )
    ds = rhs(game, topo, FIRST_ORDER, st)
    assert np.allclose(ds.x, -2.0 * x, atol=1e-14)
    assert np.all(ds.estimates == 0.0)


def test_dy_cluster_sums_vanish(bundled):
    cl = ClosedLoop(bundled.game, bundled.topology, bundled.gains)
    rng = np.random.default_rng(21)
    dim, n = bundled.game.dim, bundled.game.order
    for _ in range(20):
        s = rng.normal(size=cl.size)
        ds = cl.rhs_flat(s)
        dy = ds[n * dim : (n + 1) * dim]
        for start in (0, 4, 8):
            assert abs(float(dy[start : start + 4].sum())) <= 1e-9


def test_step_rk4_zero_field_identity():
    s = np.array([1.0, -2.0, 3.0])
    out = step_rk4(s, 0.1, lambda v: np.zeros_like(v))
    assert np.array_equal(out, s)


def test_step_rk4_scalar_decay_worked_value():
    out = step_rk4(np.array([1.0]), 0.1, lambda v: -v)
    # 4th-order Taylor of e^{-0.1}: 1 - 0.1 + 0.005 - 1/6000 + 1/240000
    assert out[0] == pytest.approx(0.9048375, abs=1e-15)


def test_step_rk4_matches_matrix_exponential():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(4, 4))
    a /= np.linalg.norm(a, 2)
    x0 = rng.normal(size=4)
    dt = 0.02
    stepped = step_rk4(x0, dt, lambda v: a @ v)
    taylor = np.eye(4)
    for p in range(1, 5):
        taylor = taylor + np.linalg.matrix_power(dt * a, p) / math.factorial(p)
    assert np.allclose(stepped, taylor @ x0, rtol=1e-13, atol=1e-14)
    exact = scipy.linalg.expm(dt * a) @ x0
    assert np.linalg.norm(stepped - exact) <= 1e-9 * np.linalg.norm(x0)


@pytest.mark.filterwarnings("ignore:overflow")
def test_step_rk4_flags_divergence():
    with pytest.raises(NonFiniteState):
        step_rk4(np.array([1e200]), 1.0, lambda v: v * v)


def test_dt_cap_formula(bundled):
    cl = ClosedLoop(bundled.game, bundled.topology, bundled.gains)
    comp = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, -2.0, -1.0]])
    _, lam_max = estimator_spectrum(bundled.topology)
    want = 0.5 / (386.0 * lam_max + 3.71 * max(1.0, float(np.linalg.norm(comp, 2))) + 1.0)
    assert cl.dt_cap == pytest.approx(want, rel=1e-12)
    assert cl.dt_cap > 2e-4  # the bundled dt sits just inside the cap


def test_simulate_rejects_dt_above_cap(bundled):
    cfg = IntegratorConfig(dt=1e-2, t_final=1.0)
    with pytest.raises(ValidationError, match="stability cap"):
        simulate(bundled.game, bundled.topology, bundled.gains, cfg)


def test_closed_loop_shape_validation(bundled):
    with pytest.raises(ValidationError, match="cluster sizes"):
        ClosedLoop(bundled.game, path_topology([2, 2]), bundled.gains)
    with pytest.raises(ValidationError, match="order"):
        ClosedLoop(bundled.game, bundled.topology, FIRST_ORDER)


def test_integrator_config_validation():
    errs = IntegratorConfig(dt=-1.0, t_final=0.0, record_every=0, stop_window=0).validation_errors()
    assert len(errs) >= 4
    assert IntegratorConfig(dt=1e-3, t_final=1.0).validation_errors() == []


def test_consensus_spread_and_ne_residual_constructions(bundled_game):
    x = np.zeros(bundled_game.dim)
    assert consensus_spread(bundled_game, x) == 0.0
    assert ne_residual(bundled_game, x) == pytest.approx(238.0, abs=1e-12)

    flat = constant_cost_game([2])
    delta = 0.37
    assert ne_residual(flat, np.array([0.0, delta])) == delta
    spread_game = constant_cost_game([4])
    vals = np.array([0.0, delta, delta / 2, delta / 4])
    assert consensus_spread(spread_game, vals) == delta


def test_oracle_point_passes_residual_checks(bundled, oracle_sol):
    lifted = lift(bundled.game, oracle_sol.z)
    assert ne_residual(bundled.game, lifted) <= 1e-8
    st = equilibrium_state(bundled.game, bundled.topology, oracle_sol.z)
    assert equilibrium_residual(bundled.game, bundled.topology, bundled.gains, st) <= 1e-8


def test_equilibrium_residual_positive_away_from_fixed_point(bundled):
    rng = np.random.default_rng(40)
    st = SystemState.zeros(bundled.game)
    st.x = rng.normal(size=st.x.shape)
    assert equilibrium_residual(bundled.game, bundled.topology, bundled.gains, st) > 0.0


def test_equilibrium_residual_grows_with_estimate_perturbation(bundled, oracle_sol):
    game, topo, gains = bundled.game, bundled.topology, bundled.gains
    lam_min, _ = estimator_spectrum(topo)
    rng = np.random.default_rng(41)
    nb = game.n_players
    for delta in (1e-4, 1e-2, 1.0):
        st = equilibrium_state(game, topo, oracle_sol.z)
        v = rng.normal(size=st.estimates.shape)
        v *= delta / np.linalg.norm(v)
        st.estimates = st.estimates + v
        res = equilibrium_residual(game, topo, gains, st)
        # max-norm of the estimator defect S v dominates lam_min * |v|_2 / sqrt(slots)
        assert res >= lam_min * delta / nb * (1.0 - 1e-9)


def test_simulate_from_equilibrium_is_invariant(bundled, oracle_sol):
    st = equilibrium_state(bundled.game, bundled.topology, oracle_sol.z)
    cfg = IntegratorConfig(dt=2e-4, t_final=0.5, record_every=50)
    traj = simulate(bundled.game, bundled.topology, bundled.gains, cfg, initial_state=st)
    assert float(np.max(traj.ne_residual)) <= 1e-8


def test_estimator_tracking_rate(bundled):
    # pin the decisions and integrate only the estimator block: the estimate
    # error must decay at least as fast as kappa2 * lam_min(S)
    game, topo, gains = bundled.game, bundled.topology, bundled.gains
    cl = ClosedLoop(game, topo, gains)
    rng = np.random.default_rng(33)
    x = rng.uniform(-5.0, 5.0, size=game.dim)
    s = np.zeros(cl.size)
    s[0 : game.dim] = x
    frozen = (game.order + 1) * game.dim

    def pinned(v):
        dv = cl.rhs_flat(v)
        dv[:frozen] = 0.0
        return dv

    target = np.tile(x, game.n_players)
    dt = 2e-4
    times, errors = [], []
    for step in range(5001):
        if step % 10 == 0:
            times.append(step * dt)
            errors.append(float(np.linalg.norm(s[frozen:] - target)))
        s = step_rk4(s, dt, pinned)
    fit = fit_decay_rate(times, errors, 0.2, 0.9)
    lam_min, _ = estimator_spectrum(topo)
    assert fit.rate < 0.0
    assert -fit.rate >= gains.kappa2 * lam_min * 0.95
    assert fit.r_squared >= 0.99


def test_zero_gradient_game_freezes_decisions():
    game = constant_cost_game([1, 1, 1])
    topo = path_topology([1, 1, 1])
    lam_min, _ = estimator_spectrum(topo)
    t_final = 18.0 / (FIRST_ORDER.kappa2 * lam_min)
    cfg = IntegratorConfig(dt=0.01, t_final=t_final, record_every=10, seed=3, stop_window=10**6)
    traj = simulate(game, topo, FIRST_ORDER, cfg)
    assert np.array_equal(traj.x[-1], traj.x[0])
    assert np.all(traj.y == 0.0)
    target = np.tile(traj.x[0], 3)
    assert float(np.max(np.abs(traj.estimates[-1] - target))) <= 1e-6


def test_early_stop_on_ne_residual():
    game = constant_cost_game([1, 1])
    topo = path_topology([1, 1])
    cfg = IntegratorConfig(dt=0.01, t_final=10.0, record_every=2, stop_tol=1e-6, stop_window=3)
    traj = simulate(game, topo, FIRST_ORDER, cfg)
    assert traj.stopped_early
    assert traj.times[-1] == pytest.approx(0.06, abs=1e-12)


def test_explicit_x0_and_determinism():
    game = quadratic_game([[(1.0, -2.0), (1.0, 2.0)]], order=1)
    topo = path_topology([2])
    cfg = IntegratorConfig(dt=0.01, t_final=2.0, record_every=10, x0=(0.5, -0.5))
    a = simulate(game, topo, FIRST_ORDER, cfg)
    b = simulate(game, topo, FIRST_ORDER, cfg)
    assert np.array_equal(a.x[0], np.array([0.5, -0.5]))
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.estimates, b.estimates)
    assert np.array_equal(a.ne_residual, b.ne_residual)


def test_seeded_x0_depends_only_on_seed():
    game = quadratic_game([[(1.0, -2.0), (1.0, 2.0)]], order=1)
    topo = path_topology([2])
    a = simulate(game, topo, FIRST_ORDER, IntegratorConfig(dt=0.01, t_final=0.05, seed=7))
    b = simulate(game, topo, FIRST_ORDER, IntegratorConfig(dt=0.01, t_final=0.05, seed=7))
    c = simulate(game, topo, FIRST_ORDER, IntegratorConfig(dt=0.01, t_final=0.05, seed=8))
    assert np.array_equal(a.x[0], b.x[0])
    assert not np.array_equal(a.x[0], c.x[0])


def test_initial_y_manifold_policy():
    game = quadratic_game([[(1.0, -2.0), (1.0, 2.0)]], order=1)
    topo = path_topology([2])
    cfg = IntegratorConfig(dt=0.01, t_final=1.0)
    balanced = SystemState(
        x=np.zeros((2, 1)),
        derivs=np.zeros((0, 2, 1)),
        y=np.array([[0.3], [-0.3]]),
        estimates=np.zeros((2, 2, 1)),
    )
    traj = simulate(game, topo, FIRST_ORDER, cfg, initial_state=balanced)
    ysums = traj.y.sum(axis=1)
    assert float(np.max(np.abs(ysums))) <= 1e-9

    skewed = SystemState(
        x=np.zeros((2, 1)),
        derivs=np.zeros((0, 2, 1)),
        y=np.array([[0.3], [0.3]]),
        estimates=np.zeros((2, 2, 1)),
    )
    with pytest.raises(ValidationError, match="manifold"):
        simulate(game, topo, FIRST_ORDER, cfg, initial_state=skewed)


def test_single_cluster_converges_to_team_optimum():
    # one cluster of quadratics is a distributed optimization problem with a
    # closed-form optimum; the loop must find it
    game, topo, gains, cfg, star = single_cluster_reduction()
    traj = simulate(game, topo, gains, cfg)
    assert float(np.max(np.abs(traj.x[-1] - star))) <= 1e-6
    sol = solve_ne(game)
    assert sol.z[0] == pytest.approx(star, abs=1e-10)


def test_trajectory_state_access(bundled):
    game = quadratic_game([[(1.0, -2.0), (1.0, 2.0)]], order=1)
    topo = path_topology([2])
    cfg = IntegratorConfig(dt=0.01, t_final=0.1, record_every=5)
    traj = simulate(game, topo, FIRST_ORDER, cfg)
    assert len(traj) == len(traj.times)
    st = traj.state_at(game, 0)
    assert isinstance(st, SystemState)
    assert np.array_equal(st.x.ravel(), traj.x[0])
    fin = traj.final_state(game)
    assert np.array_equal(fin.x.ravel(), traj.x[-1])
    assert traj.meta["dt"] == 0.01


def test_fit_decay_rate_synthetic():
    t = np.linspace(0.0, 5.0, 200)
    fit = fit_decay_rate(t, np.exp(-2.0 * t), 0.5, 4.5)
    assert fit.rate == pytest.approx(-2.0, abs=1e-6)
    assert fit.r_squared > 0.9999

    const = fit_decay_rate(t, np.full_like(t, 3.7), 0.5, 4.5)
    assert const.rate == pytest.approx(0.0, abs=1e-12)
    assert const.r_squared == 0.0


def test_fit_decay_rate_degenerate_windows():
    t = np.linspace(0.0, 5.0, 50)
    with pytest.raises(DegenerateWindow):
        fit_decay_rate(t, np.exp(-t), 2.0, 2.05)
    with pytest.raises(DegenerateWindow):
        fit_decay_rate(t, np.full_like(t, 1e-14), 0.0, 5.0)
