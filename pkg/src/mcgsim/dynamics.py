"""Closed-loop dynamics: n-th order players, consensus integrators, and the estimator.

Each player is a chain of n integrators driven by

    u = -sum_l eps^{n-l} k_l x^{(l)} - y - grad f(x_own, estimates)

where y integrates kappa1 times the intra-cluster Laplacian of the decisions
(the consensus force) and the estimates relax under the global-graph consensus
operator at rate kappa2, anchored to measured neighbor decisions. Everything is
integrated with fixed-step RK4; dt must respect a stability cap derived from
the stiffest linear parts (the estimator operator and the damping chain).

Flat state layout: [x, xdot^(1..n-1), y, estimates], each block stacked
player-major, estimates observer-major.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWindow, NonFiniteState, ValidationError
from .game import GameSpec, as_decision_rows, cluster_sums, pseudo_gradient
from .gains import FeedbackGains, companion_matrix
from .graphs import TopologySpec, adjacency, block_cluster_laplacian, estimator_spectrum, laplacian
from .oracle import lift

log = logging.getLogger(__name__)


@dataclass
class SystemState:
    """One snapshot of the full closed loop.

    ``x`` and ``y`` are (n_players, q); ``derivs`` holds the n-1 derivative
    states as (order-1, n_players, q); ``estimates[o, t]`` is observer o's
    estimate of player t's decision.
    """

    x: np.ndarray
    derivs: np.ndarray
    y: np.ndarray
    estimates: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.x.ravel(), self.derivs.ravel(), self.y.ravel(), self.estimates.ravel()]
        )

    @classmethod
    def from_flat(cls, game: GameSpec, s: np.ndarray) -> "SystemState":
        nb, q, n = game.n_players, game.q, game.order
        dim = game.dim
        s = np.asarray(s, dtype=float)
        want = (n + 1) * dim + nb * dim
        if s.size != want:
            raise ValidationError(f"flat state has {s.size} entries, expected {want}")
        return cls(
            x=s[0:dim].reshape(nb, q).copy(),
            derivs=s[dim : n * dim].reshape(n - 1, nb, q).copy(),
            y=s[n * dim : (n + 1) * dim].reshape(nb, q).copy(),
            estimates=s[(n + 1) * dim :].reshape(nb, nb, q).copy(),
        )

    @classmethod
    def zeros(cls, game: GameSpec) -> "SystemState":
        nb, q, n = game.n_players, game.q, game.order
        return cls(
            x=np.zeros((nb, q)),
            derivs=np.zeros((n - 1, nb, q)),
            y=np.zeros((nb, q)),
            estimates=np.zeros((nb, nb, q)),
        )


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration settings.

    ``seed`` drives the random initial decisions (uniform in ``x0_box``) unless
    ``x0`` pins them explicitly; derivative states, consensus integrators, and
    estimates always start at zero. Integration stops early once ne_residual
    stays below ``stop_tol`` for ``stop_window`` consecutive recorded samples.
    """

    dt: float
    t_final: float
    record_every: int = 50
    seed: int = 0
    x0_box: tuple = (-5.0, 5.0)
    x0: tuple | None = None
    stop_tol: float = 1e-8
    stop_window: int = 100

    def validation_errors(self) -> list[str]:
        errs = []
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            errs.append(f"dt must be positive, got {self.dt}")
        if not (np.isfinite(self.t_final) and self.t_final > 0.0):
            errs.append(f"t_final must be positive, got {self.t_final}")
        if np.isfinite(self.dt) and np.isfinite(self.t_final) and 0.0 < self.t_final < self.dt:
            errs.append(f"t_final {self.t_final} is shorter than one step dt={self.dt}")
        if self.record_every < 1:
            errs.append(f"record_every must be >= 1, got {self.record_every}")
        if not (np.isfinite(self.stop_tol) and self.stop_tol > 0.0):
            errs.append(f"stop_tol must be positive, got {self.stop_tol}")
        if self.stop_window < 1:
            errs.append(f"stop_window must be >= 1, got {self.stop_window}")
        lo, hi = self.x0_box
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            errs.append(f"x0 box {self.x0_box} must be finite with lo < hi")
        return errs


@dataclass
class Trajectory:
    """Recorded samples of one simulation run plus the per-sample metrics."""

    times: np.ndarray
    x: np.ndarray            # (m, dim)
    derivs: np.ndarray       # (m, order-1, dim)
    y: np.ndarray            # (m, dim)
    estimates: np.ndarray    # (m, n_players * dim)
    ne_residual: np.ndarray
    consensus_error: np.ndarray
    estimate_error: np.ndarray
    stopped_early: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.times.size

    def state_at(self, game: GameSpec, idx: int) -> SystemState:
        nb, q = game.n_players, game.q
        return SystemState(
            x=self.x[idx].reshape(nb, q).copy(),
            derivs=self.derivs[idx].reshape(game.order - 1, nb, q).copy(),
            y=self.y[idx].reshape(nb, q).copy(),
            estimates=self.estimates[idx].reshape(nb, nb, q).copy(),
        )

    def final_state(self, game: GameSpec) -> SystemState:
        return self.state_at(game, len(self) - 1)


class ClosedLoop:
    """Precompiled right-hand side of the full closed loop for one scenario."""

    def __init__(self, game: GameSpec, topo: TopologySpec, gains: FeedbackGains):
        if topo.cluster_sizes != game.cluster_sizes:
            raise ValidationError(
                [
                    f"topology cluster sizes {topo.cluster_sizes} do not match the "
                    f"game's {game.cluster_sizes}"
                ]
            )
        if gains.order != game.order:
            raise ValidationError(
                [f"gains are for order {gains.order} but the game declares order {game.order}"]
            )
        self.game = game
        self.topo = topo
        self.gains = gains
        self.n = game.order
        self.dim = game.dim
        self.nb = game.n_players
        self.q = game.q
        self.size = (self.n + 1) * self.dim + self.nb * self.dim
        self.fb = gains.deriv_weights()
        self.lb = block_cluster_laplacian(topo)
        self.l0 = laplacian(topo.global_graph)
        self.a0 = adjacency(topo.global_graph)
        self.a0_3 = self.a0[:, :, None].copy()
        self.kappa1 = gains.kappa1
        self.kappa2 = gains.kappa2
        self._ar = game._arrays
        comp = companion_matrix(gains.k)
        comp_norm = float(np.linalg.norm(comp, 2)) if comp.size else 0.0
        _, lam_max = estimator_spectrum(topo)
        # stiffest linear parts: estimator relaxation and the damping chain
        self.dt_cap = 0.5 / (gains.kappa2 * lam_max + gains.epsilon * max(1.0, comp_norm) + 1.0)

    def rhs_flat(self, s: np.ndarray) -> np.ndarray:
        if self.q == 1:
            return self._rhs_q1(s)
        return self._rhs_general(s)

    def _rhs_q1(self, s: np.ndarray) -> np.ndarray:
        """Flat scalar-decision path; same math as _rhs_general without the q axis."""
        n, dim, nb = self.n, self.dim, self.nb
        x = s[0:dim]
        y = s[n * dim : (n + 1) * dim]
        est = s[(n + 1) * dim :].reshape(nb, nb)
        ar = self._ar
        if ar.coup_owner.size:
            cvals = est[ar.coup_owner, ar.coup_target]
        else:
            cvals = np.zeros(0)
        grad = ar.grad_flat_q1(x, cvals)
        if n > 1:
            derivs = s[dim : n * dim].reshape(n - 1, dim)
            u = -(self.fb @ derivs) - y - grad
        else:
            u = -y - grad
        ds = np.empty_like(s)
        if n > 1:
            ds[0 : (n - 1) * dim] = s[dim : n * dim]  # chain shift
            ds[(n - 1) * dim : n * dim] = u
        else:
            ds[0:dim] = u
        ds[n * dim : (n + 1) * dim] = self.kappa1 * (self.lb @ x)
        # row broadcast of x anchors each estimate to its target's measured decision
        de = self.l0 @ est
        de += self.a0 * (est - x)
        ds[(n + 1) * dim :] = (-self.kappa2 * de).ravel()
        return ds

    def _rhs_general(self, s: np.ndarray) -> np.ndarray:
        n, dim, nb, q = self.n, self.dim, self.nb, self.q
        x = s[0:dim].reshape(nb, q)
        y = s[n * dim : (n + 1) * dim].reshape(nb, q)
        est = s[(n + 1) * dim :].reshape(nb, nb, q)
        ar = self._ar
        if ar.coup_owner.size:
            cvals = est[ar.coup_owner, ar.coup_target]
        else:
            cvals = np.zeros((0, q))
        grad = ar.grad_rows(x, cvals)
        if n > 1:
            derivs = s[dim : n * dim].reshape(n - 1, nb, q)
            u = -np.tensordot(self.fb, derivs, axes=1) - y - grad
        else:
            u = -y - grad
        ds = np.empty_like(s)
        if n > 1:
            ds[0 : (n - 1) * dim] = s[dim : n * dim]  # chain shift: d/dt x^{(l)} = x^{(l+1)}
            ds[(n - 1) * dim : n * dim] = u.ravel()
        else:
            ds[0:dim] = u.ravel()
        ds[n * dim : (n + 1) * dim] = (self.kappa1 * (self.lb @ x)).ravel()
        diff = est - x[None, :, :]
        cons = (self.l0 @ est.reshape(nb, nb * q)).reshape(nb, nb, q)
        ds[(n + 1) * dim :] = (-self.kappa2 * (cons + self.a0_3 * diff)).ravel()
        return ds

    def rk4_step(self, s: np.ndarray, dt: float) -> np.ndarray:
        k1 = self.rhs_flat(s)
        k2 = self.rhs_flat(s + (0.5 * dt) * k1)
        k3 = self.rhs_flat(s + (0.5 * dt) * k2)
        k4 = self.rhs_flat(s + dt * k3)
        return s + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def rhs(game: GameSpec, topo: TopologySpec, gains: FeedbackGains, state: SystemState) -> SystemState:
    """Time derivative of a full system state (convenience wrapper around ClosedLoop)."""
    cl = ClosedLoop(game, topo, gains)
    return SystemState.from_flat(game, cl.rhs_flat(state.flat()))


def step_rk4(s: np.ndarray, dt: float, f) -> np.ndarray:
    """One classical Runge-Kutta step of ds/dt = f(s); raises on non-finite results."""
    s = np.asarray(s, dtype=float)
    k1 = np.asarray(f(s), dtype=float)
    k2 = np.asarray(f(s + (0.5 * dt) * k1), dtype=float)
    k3 = np.asarray(f(s + (0.5 * dt) * k2), dtype=float)
    k4 = np.asarray(f(s + dt * k3), dtype=float)
    out = s + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("RK4 step produced non-finite values")
    return out


def consensus_spread(game: GameSpec, x) -> float:
    """Largest intra-cluster pairwise decision distance, maximized over clusters."""
    rows = as_decision_rows(game, x)
    if game.q == 1:
        col = rows[:, 0]
        starts = game.cluster_starts
        hi = np.maximum.reduceat(col, starts)
        lo = np.minimum.reduceat(col, starts)
        return float(np.max(hi - lo))
    worst = 0.0
    for j in range(game.n_clusters):
        s = int(game.cluster_starts[j])
        block = rows[s : s + game.cluster_sizes[j]]
        for a in range(block.shape[0]):
            d = block[a + 1 :] - block[a]
            if d.size:
                worst = max(worst, float(np.max(np.sqrt(np.einsum("ij,ij->i", d, d)))))
    return worst


def ne_residual(game: GameSpec, x) -> float:
    """Distance-to-equilibrium proxy from true decisions only.

    Sum of the worst cluster gradient-sum norm (stationarity defect) and the
    worst intra-cluster spread (consensus defect); zero exactly at a consensus
    Nash equilibrium.
    """
    rows = as_decision_rows(game, x)
    sums = cluster_sums(game, pseudo_gradient(game, rows).reshape(game.n_players, game.q))
    grad_part = float(np.max(np.sqrt(np.einsum("ij,ij->i", sums, sums))))
    return grad_part + consensus_spread(game, rows)


def estimate_error(game: GameSpec, x, estimates) -> float:
    """Frobenius distance between the estimate stack and the broadcast true decisions."""
    rows = as_decision_rows(game, x)
    est = np.asarray(estimates, dtype=float).reshape(game.n_players, game.n_players, game.q)
    return float(np.linalg.norm((est - rows[None, :, :]).ravel()))


def equilibrium_residual(
    game: GameSpec, topo: TopologySpec, gains: FeedbackGains, state: SystemState
) -> float:
    """Max-norm defect of the algorithm's stationarity system at a candidate state.

    Checks all four fixed-point conditions: derivative states zero, control
    balance (damping + y + estimated gradient = 0), intra-cluster consensus,
    and the estimator fixed point.
    """
    cl = ClosedLoop(game, topo, gains)
    x, est = state.x, state.estimates
    ar = game._arrays
    cvals = est[ar.coup_owner, ar.coup_target] if ar.coup_owner.size else np.zeros((0, game.q))
    grad = ar.grad_rows(x, cvals)
    if game.order > 1:
        balance = np.tensordot(cl.fb, state.derivs, axes=1) + state.y + grad
        deriv_part = float(np.max(np.abs(state.derivs)))
    else:
        balance = state.y + grad
        deriv_part = 0.0
    cons = cl.lb @ x
    est_fix = (cl.l0 @ est.reshape(cl.nb, cl.nb * cl.q)).reshape(est.shape) + cl.a0_3 * (
        est - x[None, :, :]
    )
    return max(
        deriv_part,
        float(np.max(np.abs(balance))),
        float(np.max(np.abs(cons))) if cons.size else 0.0,
        float(np.max(np.abs(est_fix))),
    )


def equilibrium_state(game: GameSpec, topo: TopologySpec, z) -> SystemState:
    """Exact algorithm fixed point over a reduced equilibrium candidate z.

    Decisions take the lifted consensus values, derivative states vanish,
    estimates agree with the true decisions, and the consensus integrators
    carry y = -grad f so the control balance closes.
    """
    nb, q = game.n_players, game.q
    rows = as_decision_rows(game, lift(game, z))
    est = np.broadcast_to(rows[None, :, :], (nb, nb, q)).copy()
    y = -pseudo_gradient(game, rows).reshape(nb, q)
    return SystemState(
        x=rows.copy(),
        derivs=np.zeros((game.order - 1, nb, q)),
        y=y,
        estimates=est,
    )


def simulate(
    game: GameSpec,
    topo: TopologySpec,
    gains: FeedbackGains,
    config: IntegratorConfig,
    initial_state: SystemState | None = None,
) -> Trajectory:
    """Integrate the closed loop and record states plus convergence metrics.

    Initial decisions come from ``config`` (explicit or uniform random from the
    seeded stream); passing ``initial_state`` instead bypasses that but the
    per-cluster sums of its y block must vanish: they are conserved by the
    Laplacian integrator, and only states on that manifold can reach an
    equilibrium whose cluster gradient sums are zero.
    """
    errs = config.validation_errors()
    if errs:
        raise ValidationError(errs)
    cl = ClosedLoop(game, topo, gains)
    if config.dt > cl.dt_cap:
        raise ValidationError(
            [f"dt {config.dt:g} exceeds the stability cap {cl.dt_cap:g} for these gains"]
        )

    if initial_state is not None:
        st = initial_state
        ysums = cluster_sums(game, st.y)
        limit = 1e-8 * (1.0 + float(np.max(np.abs(st.y))) if st.y.size else 1.0)
        if ysums.size and float(np.max(np.abs(ysums))) > limit:
            raise ValidationError(
                [
                    "initial y is off the conserved manifold: per-cluster sums "
                    f"{ysums.ravel().tolist()} must be ~0"
                ]
            )
        s = st.flat().astype(float)
        if s.size != cl.size:
            raise ValidationError([f"initial state has {s.size} entries, expected {cl.size}"])
    else:
        st = SystemState.zeros(game)
        if config.x0 is not None:
            st.x = as_decision_rows(game, np.asarray(config.x0, dtype=float)).copy()
        else:
            rng = np.random.default_rng([config.seed, 0])
            lo, hi = config.x0_box
            st.x = rng.uniform(lo, hi, size=(game.n_players, game.q))
        s = st.flat()

    dt = float(config.dt)
    n_steps = max(1, int(round(config.t_final / dt)))
    n_rec_max = n_steps // config.record_every + 2
    dim, nb = game.dim, game.n_players
    times = np.zeros(n_rec_max)
    xs = np.zeros((n_rec_max, dim))
    ds = np.zeros((n_rec_max, game.order - 1, dim))
    ys = np.zeros((n_rec_max, dim))
    es = np.zeros((n_rec_max, nb * dim))
    ne = np.zeros(n_rec_max)
    ce = np.zeros(n_rec_max)
    ee = np.zeros(n_rec_max)

    def record(i: int, t: float, s: np.ndarray):
        times[i] = t
        xs[i] = s[0:dim]
        ds[i] = s[dim : game.order * dim].reshape(game.order - 1, dim)
        ys[i] = s[game.order * dim : (game.order + 1) * dim]
        es[i] = s[(game.order + 1) * dim :]
        ne[i] = ne_residual(game, xs[i])
        ce[i] = consensus_spread(game, xs[i])
        ee[i] = estimate_error(game, xs[i], es[i])

    record(0, 0.0, s)
    rec = 1
    consec = 0
    stopped = False
    for step in range(1, n_steps + 1):
        s = cl.rk4_step(s, dt)
        if step % config.record_every == 0 or step == n_steps:
            t = step * dt
            if not np.all(np.isfinite(s)):
                raise NonFiniteState(f"state diverged (non-finite values) at t={t:g}", t=t)
            record(rec, t, s)
            if ne[rec] < config.stop_tol:
                consec += 1
            else:
                consec = 0
            rec += 1
            if consec >= config.stop_window:
                stopped = True
                log.info("early stop at t=%g: ne_residual below %g for %d samples",
                         t, config.stop_tol, config.stop_window)
                break

    sl = slice(0, rec)
    return Trajectory(
        times=times[sl].copy(),
        x=xs[sl].copy(),
        derivs=ds[sl].copy(),
        y=ys[sl].copy(),
        estimates=es[sl].copy(),
        ne_residual=ne[sl].copy(),
        consensus_error=ce[sl].copy(),
        estimate_error=ee[sl].copy(),
        stopped_early=stopped,
        meta={
            "dt": dt,
            "t_final": config.t_final,
            "record_every": config.record_every,
            "seed": config.seed,
            "order": game.order,
            "n_players": nb,
            "q": game.q,
        },
    )


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of ln(value) over a time window."""

    rate: float
    r_squared: float
    n_samples: int
    window: tuple

    def to_dict(self) -> dict:
        return {
            "rate": float(self.rate),
            "r_squared": float(self.r_squared),
            "n_samples": int(self.n_samples),
            "window": [float(self.window[0]), float(self.window[1])],
        }


def fit_decay_rate(times, values, t_start: float, t_end: float) -> RateFit:
    """Fit ln(values) ~ a + rate * t on the window [t_start, t_end].

    Values are floored at 1e-300 before the log (the floor keeps the fit
    finite). A constant series has no explained variance and reports
    r_squared = 0 by convention. Windows with fewer than 3 samples, or whose
    values sit entirely below 1e-12 (the signal already converged; a slope
    through roundoff noise is meaningless), raise DegenerateWindow.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (times >= t_start) & (times <= t_end)
    m = int(np.count_nonzero(mask))
    if m < 3:
        raise DegenerateWindow(
            f"window [{t_start}, {t_end}] holds {m} samples; need at least 3"
        )
    t = times[mask]
    win = values[mask]
    if np.max(win) < 1e-12:
        raise DegenerateWindow(
            f"window [{t_start}, {t_end}] error already below 1e-12; nothing left to fit"
        )
    ln = np.log(np.maximum(win, 1e-300))
    slope, intercept = np.polyfit(t, ln, 1)
    pred = slope * t + intercept
    ss_res = float(np.sum((ln - pred) ** 2))
    ss_tot = float(np.sum((ln - ln.mean()) ** 2))
    r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RateFit(rate=float(slope), r_squared=float(r2), n_samples=m, window=(t_start, t_end))
