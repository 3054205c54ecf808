"""Independent equilibrium oracle for the reduced cluster game.

At a Nash equilibrium with intra-cluster consensus, every cluster plays one
decision z_j and the sum of its members' own-gradients vanishes. The oracle
solves that reduced N*q dimensional root problem directly, via damped Newton
with a finite-difference Jacobian (fixed-point fallback on singular Jacobians),
from several seeded restarts. It deliberately shares no code path with the
simulator: gradients are accumulated per player through the scalar API, so the
two routes cross-check each other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, SingularJacobian
from .game import GameSpec, grad_own, pairwise_secant_bounds

log = logging.getLogger(__name__)


def lift(game: GameSpec, z) -> np.ndarray:
    """Expand per-cluster decisions (n_clusters * q) to the stacked per-player vector."""
    zr = np.asarray(z, dtype=float).reshape(game.n_clusters, game.q)
    return np.repeat(zr, game.cluster_sizes, axis=0).ravel()


def reduced_gradient(game: GameSpec, z) -> np.ndarray:
    """Per-cluster sum of member own-gradients, all evaluated at consensus decisions.

    Zero exactly at the reduced Nash equilibria. Accumulated player by player
    through the scalar gradient API on purpose (route independence from the
    vectorized simulator path).
    """
    zr = np.asarray(z, dtype=float).reshape(game.n_clusters, game.q)
    others = {}
    for m in range(1, game.n_clusters + 1):
        for p in range(1, game.cluster_sizes[m - 1] + 1):
            others[(m, p)] = zr[m - 1]
    out = np.zeros((game.n_clusters, game.q))
    for j in range(1, game.n_clusters + 1):
        for i in range(1, game.cluster_sizes[j - 1] + 1):
            out[j - 1] += grad_own(game, j, i, zr[j - 1], others)
    return out.ravel()


def fd_jacobian(fun, z: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector field."""
    z = np.asarray(z, dtype=float)
    m = z.size
    jac = np.zeros((m, m))
    for c in range(m):
        step = np.zeros(m)
        step[c] = h
        jac[:, c] = (fun(z + step) - fun(z - step)) / (2.0 * h)
    return jac


@dataclass(frozen=True)
class NESolution:
    """Reduced equilibrium, its residual, and the agreement spread across restarts."""

    z: np.ndarray
    residual: float
    iterations: int
    method: str
    converged: bool
    restarts: int
    restart_spread: float

    def to_dict(self) -> dict:
        return {
            "z": [float(v) for v in self.z],
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "method": self.method,
            "converged": bool(self.converged),
            "restarts": int(self.restarts),
            "restart_spread": float(self.restart_spread),
        }


def _damped_newton(game, z0, tol, max_iter):
    z = z0.copy()
    g = reduced_gradient(game, z)
    ng = float(np.linalg.norm(g))
    for it in range(1, max_iter + 1):
        if ng <= tol:
            return z, ng, it - 1, True
        jac = fd_jacobian(lambda p: reduced_gradient(game, p), z)
        try:
            direction = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"Jacobian singular at iteration {it}") from exc
        if not np.all(np.isfinite(direction)):
            raise SingularJacobian(f"Jacobian solve produced non-finite step at iteration {it}")
        # backtrack on the residual norm until we get sufficient decrease
        alpha = 1.0
        while alpha >= 1e-12:
            z_new = z + alpha * direction
            g_new = reduced_gradient(game, z_new)
            ng_new = float(np.linalg.norm(g_new))
            if ng_new < (1.0 - 1e-4 * alpha) * ng:
                z, g, ng = z_new, g_new, ng_new
                break
            alpha *= 0.5
        else:
            return z, ng, it, False  # stalled: no step length gives decrease
    return z, ng, max_iter, ng <= tol


def _fixed_point(game, z0, tol, max_iter, gamma):
    z = z0.copy()
    best_z, best_ng = z, np.inf
    for it in range(1, max_iter + 1):
        g = reduced_gradient(game, z)
        ng = float(np.linalg.norm(g))
        if ng < best_ng:
            best_z, best_ng = z.copy(), ng
        if ng <= tol:
            return z, ng, it - 1, True
        z = z - gamma * g
        if not np.all(np.isfinite(z)):
            return best_z, best_ng, it, False
    return best_z, best_ng, max_iter, best_ng <= tol


def solve_ne(
    game: GameSpec,
    z0=None,
    method: str = "damped-newton",
    tol: float = 1e-10,
    max_iter: int | None = None,
    restarts: int = 5,
    seed: int = 0,
    rng=None,
    fp_gamma: float | None = None,
) -> NESolution:
    """Solve the reduced equilibrium system from several restarts and cross-check them.

    ``method`` is "damped-newton" (finite-difference Jacobian, residual
    backtracking; falls back to fixed-point if the Jacobian goes singular) or
    "fixed-point" (gradient relaxation with step 1/theta, theta sampled from
    the operating box when ``fp_gamma`` is not given). The first start is ``z0``
    (or zero); the remaining restarts are drawn uniformly from the operating
    box. Raises NoConvergence when no start meets the tolerance; otherwise
    returns the best solution plus the max pairwise spread of the converged
    ones, which for a strongly monotone game should sit at solver precision.
    """
    if method not in ("damped-newton", "fixed-point"):
        raise ValueError(f"unknown method {method!r}")
    if rng is None:
        rng = np.random.default_rng(seed)
    dim = game.n_clusters * game.q
    lo, hi = game.operating_box
    starts = [np.zeros(dim) if z0 is None else np.asarray(z0, dtype=float).reshape(dim).copy()]
    for _ in range(max(0, restarts - 1)):
        starts.append(rng.uniform(lo, hi, size=dim))

    if method == "fixed-point" or fp_gamma is None:
        # step 1/theta keeps the relaxation a contraction for monotone fields
        _, theta = pairwise_secant_bounds(
            lambda p: reduced_gradient(game, p), lo, hi, dim, samples=64, rng=rng
        )
        gamma = fp_gamma if fp_gamma is not None else 1.0 / max(theta, 1e-12)
    else:
        gamma = fp_gamma

    newton_iters = 100 if max_iter is None else max_iter
    fp_iters = 10_000 if max_iter is None else max_iter

    solutions = []
    best = None
    for z_start in starts:
        used = method
        if method == "damped-newton":
            try:
                z, ng, iters, ok = _damped_newton(game, z_start, tol, newton_iters)
            except SingularJacobian:
                log.warning("Newton Jacobian singular; falling back to fixed-point")
                used = "damped-newton+fixed-point"
                z, ng, iters, ok = _fixed_point(game, z_start, tol, fp_iters, gamma)
        else:
            z, ng, iters, ok = _fixed_point(game, z_start, tol, fp_iters, gamma)
        if best is None or ng < best[1]:
            best = (z, ng, iters, used)
        if ok:
            solutions.append((z, ng, iters, used))

    if not solutions:
        raise NoConvergence(
            f"no restart reached tolerance {tol:g}; best residual {best[1]:g}",
            best=best[0],
            residual=best[1],
        )
    spread = 0.0
    for i in range(len(solutions)):
        for j in range(i + 1, len(solutions)):
            spread = max(spread, float(np.linalg.norm(solutions[i][0] - solutions[j][0])))
    z, ng, iters, used = min(solutions, key=lambda s: s[1])
    return NESolution(
        z=z,
        residual=ng,
        iterations=iters,
        method=used,
        converged=True,
        restarts=len(starts),
        restart_spread=spread,
    )
