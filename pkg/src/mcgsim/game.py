"""Multi-cluster game model: parameterized costs and the stacked pseudo-gradient.

A game has N clusters; cluster j holds n_j players, each choosing a decision in
R^q. Within a cluster, players must agree on one decision (consensus); clusters
compete with each other. Player i of cluster j pays

    f(x) = a |x|^2 + b . x + c
           [+ (alpha/beta) |x|^2 / sqrt(gamma |x|^2 + delta)]   (ratio_sqrt)
           [+ (alpha/beta) |x|^2 / ln(gamma |x|^2 + delta)]     (ratio_log)
           [+ sum_k coeff_k * x . x_target_k]                   (couplings)

with x its own decision and every coupling target a player in a different
cluster. Clusters and players are indexed 1-based in the public API, matching
the usual superscript/subscript convention; ndarray internals are 0-based.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainViolation, MissingCouplingValue, ValidationError

log = logging.getLogger(__name__)

COST_FORMS = ("quadratic", "ratio_sqrt", "ratio_log", "composite")

# ln(gamma|x|^2 + delta) must stay bounded away from zero; with gamma >= 0 the
# argument is minimized at x = 0, so delta alone controls the margin.
LOG_DELTA_MIN = 1.0 + 1e-6


@dataclass(frozen=True)
class Coupling:
    """One bilinear inter-cluster term coeff * (x_own . x_target).

    ``cluster`` and ``player`` identify the target decision, 1-based.
    """

    cluster: int
    player: int
    coeff: float


@dataclass(frozen=True)
class CostFunction:
    """Cost of a single player; see the module docstring for the functional form.

    ``quadratic`` is (a, b, c) with b either a scalar (broadcast over the q
    components) or a length-q vector. ``sqrt_ratio`` / ``log_ratio`` are
    (alpha, beta, gamma, delta) tuples; which ones must be present is fixed by
    ``form``.
    """

    form: str
    quadratic: tuple = (0.0, 0.0, 0.0)
    sqrt_ratio: tuple | None = None
    log_ratio: tuple | None = None
    couplings: tuple[Coupling, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "quadratic", tuple(self.quadratic))
        if self.sqrt_ratio is not None:
            object.__setattr__(self, "sqrt_ratio", tuple(float(v) for v in self.sqrt_ratio))
        if self.log_ratio is not None:
            object.__setattr__(self, "log_ratio", tuple(float(v) for v in self.log_ratio))
        object.__setattr__(self, "couplings", tuple(self.couplings))

    def value(self, x, coupling_values=()) -> float:
        """Evaluate the cost at own decision ``x`` given coupling target values."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        vals = self._match_coupling_values(coupling_values)
        a, b, c = self.quadratic
        u = float(x @ x)
        total = float(a) * u + float(np.broadcast_to(np.asarray(b, dtype=float), x.shape) @ x)
        total += float(c)
        if self.sqrt_ratio is not None:
            al, be, ga, de = self.sqrt_ratio
            s = ga * u + de
            if s <= 0.0:
                raise DomainViolation(f"sqrt ratio argument {s} <= 0 at |x|^2 = {u}")
            total += (al / be) * u / math.sqrt(s)
        if self.log_ratio is not None:
            al, be, ga, de = self.log_ratio
            s = ga * u + de
            if s <= 1.0 + 1e-12:
                raise DomainViolation(f"log ratio argument {s} <= 1 at |x|^2 = {u}")
            total += (al / be) * u / math.log(s)
        for cp, v in zip(self.couplings, vals):
            total += cp.coeff * float(x @ v)
        return total

    def grad(self, x, coupling_values=()) -> np.ndarray:
        """Gradient of the cost with respect to the own decision."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        vals = self._match_coupling_values(coupling_values)
        a, b, _ = self.quadratic
        u = float(x @ x)
        g = 2.0 * float(a) * x + np.broadcast_to(np.asarray(b, dtype=float), x.shape)
        if self.sqrt_ratio is not None:
            al, be, ga, de = self.sqrt_ratio
            s = ga * u + de
            if s <= 0.0:
                raise DomainViolation(f"sqrt ratio argument {s} <= 0 at |x|^2 = {u}")
            g = g + x * (2.0 * (al / be) * (0.5 * ga * u + de) / (s * math.sqrt(s)))
        if self.log_ratio is not None:
            al, be, ga, de = self.log_ratio
            s = ga * u + de
            if s <= 1.0 + 1e-12:
                raise DomainViolation(f"log ratio argument {s} <= 1 at |x|^2 = {u}")
            ln = math.log(s)
            g = g + x * (2.0 * (al / be) * (ln - ga * u / s) / (ln * ln))
        for cp, v in zip(self.couplings, vals):
            g = g + cp.coeff * v
        return g

    def _match_coupling_values(self, coupling_values) -> list[np.ndarray]:
        vals = [np.atleast_1d(np.asarray(v, dtype=float)) for v in coupling_values]
        if len(vals) != len(self.couplings):
            raise MissingCouplingValue(
                f"cost has {len(self.couplings)} coupling terms "
                f"but received {len(vals)} target values"
            )
        return vals

    def problems(self, q: int, n_clusters: int, cluster_sizes, own_cluster: int) -> list[str]:
        """Collect every validation failure of this cost function (empty if sound)."""
        where = f"cluster {own_cluster}"
        errs = []
        if self.form not in COST_FORMS:
            errs.append(f"{where}: unknown cost form {self.form!r}")
            return errs
        want_sqrt = self.form in ("ratio_sqrt", "composite")
        want_log = self.form in ("ratio_log", "composite")
        if want_sqrt != (self.sqrt_ratio is not None):
            errs.append(f"{where}: form {self.form!r} and sqrt_ratio presence disagree")
        if want_log != (self.log_ratio is not None):
            errs.append(f"{where}: form {self.form!r} and log_ratio presence disagree")
        if len(self.quadratic) != 3:
            errs.append(f"{where}: quadratic must be (a, b, c)")
        else:
            a, b, c = self.quadratic
            b_arr = np.asarray(b, dtype=float)
            if b_arr.ndim not in (0, 1) or (b_arr.ndim == 1 and b_arr.size != q):
                errs.append(f"{where}: quadratic b must be scalar or length q={q}")
            if not (np.isfinite(float(a)) and np.all(np.isfinite(b_arr)) and np.isfinite(float(c))):
                errs.append(f"{where}: quadratic coefficients must be finite")
        for name, params in (("sqrt_ratio", self.sqrt_ratio), ("log_ratio", self.log_ratio)):
            if params is None:
                continue
            if len(params) != 4:
                errs.append(f"{where}: {name} must be (alpha, beta, gamma, delta)")
                continue
            al, be, ga, de = params
            if not all(np.isfinite(v) for v in params):
                errs.append(f"{where}: {name} parameters must be finite")
            if be <= 0.0:
                errs.append(f"{where}: {name} beta must be positive, got {be}")
            if ga < 0.0:
                errs.append(f"{where}: {name} gamma must be non-negative, got {ga}")
            if name == "sqrt_ratio" and de <= 0.0:
                errs.append(f"{where}: sqrt_ratio delta must be positive, got {de}")
            if name == "log_ratio" and de < LOG_DELTA_MIN:
                errs.append(f"{where}: log_ratio delta must be >= {LOG_DELTA_MIN}, got {de}")
        seen = set()
        for cp in self.couplings:
            if not 1 <= cp.cluster <= n_clusters:
                errs.append(f"{where}: coupling targets unknown cluster {cp.cluster}")
                continue
            if cp.cluster == own_cluster:
                errs.append(f"{where}: coupling may not target the own cluster")
            if not 1 <= cp.player <= cluster_sizes[cp.cluster - 1]:
                errs.append(
                    f"{where}: coupling targets unknown player {cp.player} "
                    f"of cluster {cp.cluster}"
                )
            if not np.isfinite(cp.coeff):
                errs.append(f"{where}: coupling coefficient must be finite")
            key = (cp.cluster, cp.player)
            if key in seen:
                errs.append(f"{where}: duplicate coupling target {key}")
            seen.add(key)
        return errs


@dataclass
class ClusterSpec:
    players: tuple[CostFunction, ...]
    label: str = ""

    def __post_init__(self):
        self.players = tuple(self.players)


@dataclass
class GameSpec:
    """A complete multi-cluster game.

    ``order`` is the integrator order n of the player dynamics (n >= 1); it
    lives here because the equilibrium notion and the dynamics share it.
    ``operating_box`` bounds the region used for sampling-based estimates.
    """

    clusters: tuple[ClusterSpec, ...]
    q: int = 1
    order: int = 1
    operating_box: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        self.clusters = tuple(self.clusters)
        self.operating_box = (float(self.operating_box[0]), float(self.operating_box[1]))

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def cluster_sizes(self) -> tuple[int, ...]:
        return tuple(len(c.players) for c in self.clusters)

    @property
    def n_players(self) -> int:
        return sum(self.cluster_sizes)

    @property
    def dim(self) -> int:
        """Dimension of the stacked decision vector (n_players * q)."""
        return self.n_players * self.q

    @cached_property
    def cluster_starts(self) -> np.ndarray:
        """0-based global row offset of each cluster's first player."""
        return np.concatenate([[0], np.cumsum(self.cluster_sizes)[:-1]]).astype(np.intp)

    def global_index(self, cluster: int, player: int) -> int:
        """0-based global row of player ``player`` in cluster ``cluster`` (both 1-based)."""
        if not 1 <= cluster <= self.n_clusters:
            raise ValueError(f"cluster index {cluster} out of range 1..{self.n_clusters}")
        if not 1 <= player <= self.cluster_sizes[cluster - 1]:
            raise ValueError(
                f"player index {player} out of range 1..{self.cluster_sizes[cluster - 1]} "
                f"in cluster {cluster}"
            )
        return int(self.cluster_starts[cluster - 1]) + player - 1

    def player_cost(self, cluster: int, player: int) -> CostFunction:
        self.global_index(cluster, player)  # range check
        return self.clusters[cluster - 1].players[player - 1]

    def validation_errors(self) -> list[str]:
        errs = []
        if self.q < 1:
            errs.append(f"decision dimension q must be >= 1, got {self.q}")
        if self.order < 1:
            errs.append(f"integrator order must be >= 1, got {self.order}")
        if self.n_clusters < 1:
            errs.append("game needs at least one cluster")
        if any(s < 1 for s in self.cluster_sizes):
            errs.append("every cluster needs at least one player")
        lo, hi = self.operating_box
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            errs.append(f"operating box {self.operating_box} must be finite with lo < hi")
        sizes = self.cluster_sizes
        for j, cl in enumerate(self.clusters, start=1):
            for i, cf in enumerate(cl.players, start=1):
                for msg in cf.problems(self.q, self.n_clusters, sizes, j):
                    errs.append(msg.replace(f"cluster {j}", f"player {i} of cluster {j}", 1))
        return errs

    def validate(self) -> None:
        errs = self.validation_errors()
        if errs:
            raise ValidationError(errs)

    @cached_property
    def _arrays(self):
        return _Compiled(self)


class _Compiled:
    """Game coefficients gathered into flat arrays for vectorized evaluation."""

    def __init__(self, game: GameSpec):
        nb, q = game.n_players, game.q
        self.n_players = nb
        self.q = q
        self.starts = game.cluster_starts.copy()
        self.sizes = np.asarray(game.cluster_sizes, dtype=np.intp)
        self.a = np.zeros(nb)
        self.b = np.zeros((nb, q))
        sq_rows, sq_par, lg_rows, lg_par = [], [], [], []
        own, tgt, cof = [], [], []
        r = 0
        for j, cl in enumerate(game.clusters, start=1):
            for cf in cl.players:
                a, b, _ = cf.quadratic
                self.a[r] = float(a)
                self.b[r] = np.broadcast_to(np.asarray(b, dtype=float), (q,))
                if cf.sqrt_ratio is not None:
                    sq_rows.append(r)
                    sq_par.append(cf.sqrt_ratio)
                if cf.log_ratio is not None:
                    lg_rows.append(r)
                    lg_par.append(cf.log_ratio)
                for cp in cf.couplings:
                    own.append(r)
                    tgt.append(game.global_index(cp.cluster, cp.player))
                    cof.append(float(cp.coeff))
                r += 1
        self.sq_rows = np.asarray(sq_rows, dtype=np.intp)
        self.lg_rows = np.asarray(lg_rows, dtype=np.intp)
        sq = np.asarray(sq_par, dtype=float).reshape(-1, 4)
        lg = np.asarray(lg_par, dtype=float).reshape(-1, 4)
        self.sq_ab, self.sq_ga, self.sq_de = sq[:, 0] / sq[:, 1], sq[:, 2], sq[:, 3]
        self.lg_ab, self.lg_ga, self.lg_de = lg[:, 0] / lg[:, 1], lg[:, 2], lg[:, 3]
        # with gamma >= 0 and delta above its floor the ratio arguments cannot
        # leave their domain, so the hot path may skip the runtime checks
        self.sq_safe = bool(np.all(self.sq_ga >= 0.0) and np.all(self.sq_de > 0.0))
        self.lg_safe = bool(np.all(self.lg_ga >= 0.0) and np.all(self.lg_de >= 1.0 + 1e-6))
        self.sq_c2, self.sq_hg = 2.0 * self.sq_ab, 0.5 * self.sq_ga
        self.lg_c2 = 2.0 * self.lg_ab
        self.b1 = self.b[:, 0].copy() if q == 1 else None
        self.coup_owner = np.asarray(own, dtype=np.intp)
        self.coup_target = np.asarray(tgt, dtype=np.intp)
        self.coup_coeff = np.asarray(cof, dtype=float)
        # owners unique -> plain fancy-index accumulate is safe and faster
        self.coup_unique = len(set(own)) == len(own)

    def grad_rows(self, x_rows: np.ndarray, coupling_vals: np.ndarray) -> np.ndarray:
        """Per-player gradient stack; ``coupling_vals`` has one row per coupling term."""
        g = 2.0 * self.a[:, None] * x_rows + self.b
        if self.sq_rows.size:
            xs = x_rows[self.sq_rows]
            u = np.einsum("ij,ij->i", xs, xs)
            s = self.sq_ga * u + self.sq_de
            if not self.sq_safe and np.any(s <= 0.0):
                raise DomainViolation("sqrt ratio argument <= 0 in stacked gradient")
            g[self.sq_rows] += xs * (
                self.sq_c2 * (self.sq_hg * u + self.sq_de) / (s * np.sqrt(s))
            )[:, None]
        if self.lg_rows.size:
            xl = x_rows[self.lg_rows]
            u = np.einsum("ij,ij->i", xl, xl)
            s = self.lg_ga * u + self.lg_de
            if not self.lg_safe and np.any(s <= 1.0 + 1e-12):
                raise DomainViolation("log ratio argument <= 1 in stacked gradient")
            ln = np.log(s)
            g[self.lg_rows] += xl * (
                self.lg_c2 * (ln - self.lg_ga * u / s) / (ln * ln)
            )[:, None]
        if self.coup_owner.size:
            add = self.coup_coeff[:, None] * coupling_vals
            if self.coup_unique:
                g[self.coup_owner] += add
            else:
                np.add.at(g, self.coup_owner, add)
        return g

    def grad_flat_q1(self, x: np.ndarray, coupling_vals: np.ndarray) -> np.ndarray:
        """Scalar-decision (q = 1) twin of grad_rows on flat (n_players,) vectors.

        Same coefficient arrays and per-element operation order, so results
        match grad_rows bitwise; exists because the simulator calls this once
        per RK4 stage and the row-shaped path costs measurably more.
        """
        g = 2.0 * self.a * x + self.b1
        if self.sq_rows.size:
            xs = x[self.sq_rows]
            u = xs * xs
            s = self.sq_ga * u + self.sq_de
            if not self.sq_safe and np.any(s <= 0.0):
                raise DomainViolation("sqrt ratio argument <= 0 in stacked gradient")
            g[self.sq_rows] += xs * (self.sq_c2 * (self.sq_hg * u + self.sq_de) / (s * np.sqrt(s)))
        if self.lg_rows.size:
            xl = x[self.lg_rows]
            u = xl * xl
            s = self.lg_ga * u + self.lg_de
            if not self.lg_safe and np.any(s <= 1.0 + 1e-12):
                raise DomainViolation("log ratio argument <= 1 in stacked gradient")
            ln = np.log(s)
            g[self.lg_rows] += xl * (self.lg_c2 * (ln - self.lg_ga * u / s) / (ln * ln))
        if self.coup_owner.size:
            add = self.coup_coeff * coupling_vals
            if self.coup_unique:
                g[self.coup_owner] += add
            else:
                np.add.at(g, self.coup_owner, add)
        return g


def as_decision_rows(game: GameSpec, x) -> np.ndarray:
    """Reshape a stacked decision (flat or per-player rows) to (n_players, q)."""
    arr = np.asarray(x, dtype=float)
    if arr.size != game.dim:
        raise ValidationError(
            f"decision stack has {arr.size} entries, expected {game.dim}"
        )
    return arr.reshape(game.n_players, game.q)


def as_estimate_array(game: GameSpec, estimates) -> np.ndarray:
    """Reshape an estimate stack to (observer, target, component).

    ``estimates[o, t]`` is observer o's estimate of player t's decision, both
    0-based global rows; the flat layout is observer-major.
    """
    arr = np.asarray(estimates, dtype=float)
    nb = game.n_players
    if arr.size != nb * game.dim:
        raise ValidationError(
            f"estimate stack has {arr.size} entries, expected {nb * game.dim}"
        )
    return arr.reshape(nb, nb, game.q)


def cluster_sums(game: GameSpec, rows: np.ndarray) -> np.ndarray:
    """Sum per-player rows (n_players, q) within each cluster, giving (n_clusters, q)."""
    return np.add.reduceat(np.asarray(rows, dtype=float), game.cluster_starts, axis=0)


def stack_decisions(game: GameSpec, per_cluster) -> np.ndarray:
    """Flatten per-cluster, per-player decisions into the global stacked vector."""
    if len(per_cluster) != game.n_clusters:
        raise ValidationError(
            f"expected {game.n_clusters} clusters of decisions, got {len(per_cluster)}"
        )
    rows = np.zeros((game.n_players, game.q))
    r = 0
    for j, cluster_vals in enumerate(per_cluster, start=1):
        if len(cluster_vals) != game.cluster_sizes[j - 1]:
            raise ValidationError(
                f"cluster {j} expects {game.cluster_sizes[j - 1]} decisions, "
                f"got {len(cluster_vals)}"
            )
        for v in cluster_vals:
            vec = np.atleast_1d(np.asarray(v, dtype=float))
            if vec.shape != (game.q,):
                raise ValidationError(
                    f"cluster {j} decision has shape {vec.shape}, expected ({game.q},)"
                )
            rows[r] = vec
            r += 1
    return rows.ravel()


def unstack_decisions(game: GameSpec, x) -> list[list[np.ndarray]]:
    """Inverse of stack_decisions: global stacked vector to per-cluster lists."""
    rows = as_decision_rows(game, x)
    out = []
    for j in range(game.n_clusters):
        s = int(game.cluster_starts[j])
        out.append([rows[s + i].copy() for i in range(game.cluster_sizes[j])])
    return out


def _coupling_values(cf: CostFunction, cluster: int, player: int, others) -> list:
    vals = []
    for cp in cf.couplings:
        key = (cp.cluster, cp.player)
        if others is None or key not in others:
            raise MissingCouplingValue(
                f"player {player} of cluster {cluster} needs the decision of "
                f"player {cp.player} in cluster {cp.cluster}"
            )
        vals.append(others[key])
    return vals


def eval_cost(game: GameSpec, cluster: int, player: int, x_own, others: Mapping | None = None) -> float:
    """Cost of one player (1-based indices); ``others`` maps (cluster, player) to decisions."""
    cf = game.player_cost(cluster, player)
    return cf.value(_own_vec(game, x_own), _coupling_values(cf, cluster, player, others))


def grad_own(game: GameSpec, cluster: int, player: int, x_own, others: Mapping | None = None) -> np.ndarray:
    """Gradient of one player's cost with respect to its own decision."""
    cf = game.player_cost(cluster, player)
    return cf.grad(_own_vec(game, x_own), _coupling_values(cf, cluster, player, others))


def _own_vec(game: GameSpec, x) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(x, dtype=float))
    if vec.shape != (game.q,):
        raise ValidationError(f"own decision has shape {vec.shape}, expected ({game.q},)")
    return vec


def pseudo_gradient(game: GameSpec, x) -> np.ndarray:
    """Stacked gradient of every player's cost, each taken at the true decisions."""
    ar = game._arrays
    rows = as_decision_rows(game, x)
    vals = rows[ar.coup_target] if ar.coup_owner.size else np.zeros((0, game.q))
    return ar.grad_rows(rows, vals).ravel()


def pseudo_gradient_estimated(game: GameSpec, x, estimates) -> np.ndarray:
    """Stacked gradient where each player substitutes its own estimates of opponents.

    When every estimate row equals the true decisions this reproduces
    pseudo_gradient(x) bitwise, since both paths feed identical coupling values
    through the same compiled kernel.
    """
    ar = game._arrays
    rows = as_decision_rows(game, x)
    est = as_estimate_array(game, estimates)
    if ar.coup_owner.size:
        vals = est[ar.coup_owner, ar.coup_target]
    else:
        vals = np.zeros((0, game.q))
    return ar.grad_rows(rows, vals).ravel()


@dataclass(frozen=True)
class MonotonicityEstimate:
    """Sampled strong-monotonicity (omega) and Lipschitz (theta) constants."""

    omega: float
    theta: float
    samples: int
    box: tuple[float, float]
    seed: int | None = None

    @property
    def monotone(self) -> bool:
        return self.omega > 0.0


def pairwise_secant_bounds(fun, lo: float, hi: float, dim: int, samples: int, rng) -> tuple[float, float]:
    """Min/max secant bounds of a vector field over random point pairs in a box.

    Returns (omega, theta): the smallest <dx, dF>/|dx|^2 and the largest
    |dF|/|dx| over all pairs of sampled points.
    """
    pts = rng.uniform(lo, hi, size=(samples, dim))
    vals = np.asarray([fun(p) for p in pts], dtype=float)
    ii, jj = np.triu_indices(samples, k=1)
    dx = pts[ii] - pts[jj]
    df = vals[ii] - vals[jj]
    den = np.einsum("ij,ij->i", dx, dx)
    keep = den > 0.0
    dx, df, den = dx[keep], df[keep], den[keep]
    omega = float(np.min(np.einsum("ij,ij->i", dx, df) / den))
    theta = float(np.sqrt(np.max(np.einsum("ij,ij->i", df, df) / den)))
    return omega, theta


def estimate_monotonicity_lipschitz(
    game: GameSpec,
    box: tuple[float, float] | None = None,
    samples: int = 200,
    seed: int = 0,
    rng=None,
) -> MonotonicityEstimate:
    """Sample secants of the pseudo-gradient to bound its monotonicity and Lipschitz constants.

    These are lower/upper sample bounds, not certificates: omega can only
    overestimate the true modulus and theta underestimate the true constant.
    A non-positive omega is reported (and logged), not raised, since the
    downstream gain bounds treat certification as advisory.
    """
    if samples < 2:
        raise ValidationError("monotonicity sampling needs at least 2 points")
    lo, hi = box if box is not None else game.operating_box
    if rng is None:
        rng = np.random.default_rng(seed)
    omega, theta = pairwise_secant_bounds(
        lambda p: pseudo_gradient(game, p), lo, hi, game.dim, samples, rng
    )
    if omega <= 0.0:
        log.warning("sampled pseudo-gradient is not monotone on the box: omega=%g", omega)
    return MonotonicityEstimate(omega=omega, theta=theta, samples=samples, box=(lo, hi), seed=seed)
