"""Feedback-gain design data: companion matrix, Lyapunov solves, and gain bounds.

The controller damps the n-1 derivative states of each n-th order player with
coefficients k = (k_1, ..., k_{n-1}) scaled by powers of a timescale parameter
epsilon. Sufficient-condition bounds on (epsilon, mu, kappa1, kappa2) come out
of a Lyapunov argument; they are advisory: certification failures are reported
alongside simulation results, never assumed to hold and never fatal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveBound, NotHurwitz, ValidationError
from .graphs import TopologySpec, block_cluster_laplacian, estimator_operator, estimator_spectrum


@dataclass(frozen=True)
class FeedbackGains:
    """Controller parameters; ``order`` = len(k) + 1 is the player integrator order."""

    k: tuple
    epsilon: float
    mu: float
    kappa1: float
    kappa2: float

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))

    @property
    def order(self) -> int:
        return len(self.k) + 1

    @property
    def k1(self) -> float:
        """First damping coefficient; 0 by convention for first-order players."""
        return self.k[0] if self.k else 0.0

    @property
    def k_max(self) -> float:
        """max(1, k_2, ..., k_{n-1}), as used by the kappa1 bound."""
        return max([1.0, *self.k[1:]])

    def deriv_weights(self) -> np.ndarray:
        """Coefficients (eps^{n-1} k_1, ..., eps^1 k_{n-1}) applied to the derivative states."""
        n = self.order
        return np.array([self.epsilon ** (n - l) * self.k[l - 1] for l in range(1, n)])

    def validation_errors(self) -> list[str]:
        errs = []
        for name in ("epsilon", "mu", "kappa1", "kappa2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                errs.append(f"gain {name} must be positive and finite, got {v}")
        if not all(np.isfinite(v) for v in self.k):
            errs.append(f"damping coefficients must be finite, got {self.k}")
        elif self.k and not is_hurwitz(companion_matrix(self.k)):
            errs.append(
                f"damping coefficients {self.k} are not Hurwitz "
                "(companion matrix has an eigenvalue with non-negative real part)"
            )
        return errs

    def validate(self) -> None:
        errs = self.validation_errors()
        if errs:
            raise ValidationError(errs)


def companion_matrix(k) -> np.ndarray:
    """Companion matrix of s^{n-1} + k_{n-1} s^{n-2} + ... + k_1.

    Shape (n-1, n-1): shifted identity on the superdiagonal, last row
    (-k_1, ..., -k_{n-1}). Empty for n = 1.
    """
    k = tuple(float(v) for v in k)
    m = len(k)
    a = np.zeros((m, m))
    if m == 0:
        return a
    a[:-1, 1:] = np.eye(m - 1)
    a[-1, :] = [-v for v in k]
    return a


def is_hurwitz(a: np.ndarray, tol: float = 1e-10) -> bool:
    """True when every eigenvalue has real part < -tol (vacuously true if empty)."""
    if a.size == 0:
        return True
    return bool(np.max(np.linalg.eigvals(a).real) < -tol)


def solve_p1(a: np.ndarray) -> np.ndarray:
    """Solve P A + A^T P = -I for symmetric PD P via the vectorized linear system.

    Row-major vec identities: vec(PA) = (I (x) A^T) vec(P) and
    vec(A^T P) = (A^T (x) I) vec(P). Raises NotHurwitz when A is not Hurwitz
    (the equation then has no PD solution).
    """
    m = a.shape[0]
    if a.size == 0:
        return np.zeros((0, 0))
    if not is_hurwitz(a):
        raise NotHurwitz("companion matrix has an eigenvalue with non-negative real part")
    eye = np.eye(m)
    lhs = np.kron(eye, a.T) + np.kron(a.T, eye)
    p = np.linalg.solve(lhs, (-eye).ravel()).reshape(m, m)
    p = 0.5 * (p + p.T)
    residual = np.linalg.norm(p @ a + a.T @ p + eye)
    if residual > 1e-8:
        raise ValidationError(
            [f"Lyapunov solve residual {residual:g} exceeds 1e-8; matrix too ill-conditioned"]
        )
    return p


def solve_p2(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lyapunov pair for the estimator operator: P2 = I/2 gives Q = S exactly.

    S is symmetric PD, so P2 S + S^T P2 = S qualifies as the PD right-hand side
    with zero residual; no solve is needed.
    """
    return 0.5 * np.eye(s.shape[0]), s.copy()


def a_bar1(p1: np.ndarray, k) -> float:
    """Worst squared coupling coefficient between the Lyapunov block and the gradient path.

    max over {(2 p1[l, n-2] + k_{l+1})^2 : l = 0..n-3} and (2 p1[n-2, n-2] + 1)^2;
    0 by convention for first-order players (no derivative states).
    """
    k = tuple(float(v) for v in k)
    m = len(k)
    if m == 0:
        return 0.0
    terms = [(2.0 * p1[l, m - 1] + k[l + 1]) ** 2 for l in range(m - 1)]
    terms.append((2.0 * p1[m - 1, m - 1] + 1.0) ** 2)
    return float(max(terms))


@dataclass(frozen=True)
class LyapunovData:
    """Everything the gain bounds need from the companion/estimator Lyapunov solves."""

    a: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    q_mat: np.ndarray
    a_bar1: float
    lam_min_q: float
    lam_max_p2: float
    p1_residual: float
    p2_residual: float
    norm_block_laplacian: float


def lyapunov_data(gains: FeedbackGains, topo: TopologySpec) -> LyapunovData:
    """Run the certification pipeline's linear-algebra stage for one scenario."""
    a = companion_matrix(gains.k)
    p1 = solve_p1(a)
    s = estimator_operator(topo)
    p2, q = solve_p2(s)
    lam_min_q, _ = estimator_spectrum(topo)
    lb = block_cluster_laplacian(topo)
    p1_res = float(np.linalg.norm(p1 @ a + a.T @ p1 + np.eye(a.shape[0]))) if a.size else 0.0
    p2_res = float(np.linalg.norm(p2 @ s + s.T @ p2 - q))
    return LyapunovData(
        a=a,
        p1=p1,
        p2=p2,
        q_mat=q,
        a_bar1=a_bar1(p1, gains.k),
        lam_min_q=float(lam_min_q),
        lam_max_p2=0.5,
        p1_residual=p1_res,
        p2_residual=p2_res,
        norm_block_laplacian=float(np.linalg.norm(lb, 2)) if lb.size else 0.0,
    )


@dataclass(frozen=True)
class GainBounds:
    """Sufficient-condition thresholds; kappa1_terms records the three upper-bound branches."""

    epsilon_min: float
    mu_min: float
    kappa1_max: float
    kappa2_min: float
    kappa1_terms: tuple


def gain_bounds(gains: FeedbackGains, omega: float, theta: float, lyap: LyapunovData) -> GainBounds:
    """Evaluate the sufficient gain bounds for given monotonicity/Lipschitz constants.

    omega is the strong-monotonicity modulus and theta the Lipschitz constant of
    the pseudo-gradient; both must be positive (theta >= omega). The bounds use
    the *current* epsilon and mu where the original conditions do, so they are
    consistency checks of a candidate tuple, not a closed-form design.
    """
    if not (omega > 0.0 and np.isfinite(omega)):
        raise NonPositiveBound(f"monotonicity constant omega must be positive, got {omega}")
    if not (theta > 0.0 and np.isfinite(theta)):
        raise NonPositiveBound(f"Lipschitz constant theta must be positive, got {theta}")
    if theta < omega:
        raise NonPositiveBound(f"theta={theta} cannot be smaller than omega={omega}")
    if lyap.lam_min_q <= 0.0:
        raise NonPositiveBound(f"lambda_min(Q) must be positive, got {lyap.lam_min_q}")
    n = gains.order
    eps, mu = gains.epsilon, gains.mu
    k1 = gains.k1
    norm_l = lyap.norm_block_laplacian

    epsilon_min = (0.75 * (theta * lyap.a_bar1 + lyap.a_bar1)) ** (1.0 / n)
    mu_min = k1 / omega + (2.0 * n - 1.0) / 4.0
    kappa2_min = (
        12.0 * omega * eps**n * lyap.lam_max_p2**2
        + theta**2 * k1
        + 2.0 * omega * mu**2 * theta**2
        + omega * theta * (n - 1.0)
    ) / (2.0 * omega * eps ** (n - 1) * lyap.lam_min_q)

    t1 = omega * k1 / (2.0 * eps ** (n - 2) * (3.0 * n + eps * mu**2 + 2.0 * eps * mu * k1 * norm_l - 3.0))
    if norm_l > 0.0:
        t2 = 1.0 / (norm_l**2 * mu**2 * gains.k_max**2)
        t3 = (4.0 * omega * mu + 2.0 * omega * n + 4.0 * k1 - omega) / (
            2.0 * omega * norm_l**2 * mu**2 * eps ** (n - 1)
        )
    else:
        # single-player clusters: no consensus coupling, the Laplacian branches are vacuous
        t2 = math.inf
        t3 = math.inf
    return GainBounds(
        epsilon_min=float(epsilon_min),
        mu_min=float(mu_min),
        kappa1_max=float(min(t1, t2, t3)),
        kappa2_min=float(kappa2_min),
        kappa1_terms=(float(t1), float(t2), float(t3)),
    )


@dataclass(frozen=True)
class CertLine:
    """One checked inequality; margin > 0 means satisfied with room to spare."""

    name: str
    value: float
    bound: float
    kind: str  # "lower": value must exceed bound; "upper": value must stay below it
    satisfied: bool
    margin: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": _jsonable(self.value),
            "bound": _jsonable(self.bound),
            "kind": self.kind,
            "satisfied": self.satisfied,
            "margin": _jsonable(self.margin),
        }


@dataclass(frozen=True)
class CertificationReport:
    lines: tuple
    certified: bool

    def to_dict(self) -> dict:
        return {"certified": self.certified, "lines": [ln.to_dict() for ln in self.lines]}

    def line(self, name: str) -> CertLine:
        for ln in self.lines:
            if ln.name == name:
                return ln
        raise KeyError(name)


def _jsonable(v: float):
    return float(v) if np.isfinite(v) else str(v)


def certify(gains: FeedbackGains, bounds: GainBounds) -> CertificationReport:
    """Compare each gain against its sufficient bound and report margins.

    A failed line does not abort anything downstream; the bounds are sufficient
    only, so simulations routinely converge outside them.
    """

    def lower(name, value, bound):
        return CertLine(name, value, bound, "lower", value > bound, value - bound)

    def upper(name, value, bound):
        return CertLine(name, value, bound, "upper", value < bound, bound - value)

    lines = (
        lower("epsilon", gains.epsilon, bounds.epsilon_min),
        lower("mu", gains.mu, bounds.mu_min),
        lower("kappa1_positive", gains.kappa1, 0.0),
        upper("kappa1", gains.kappa1, bounds.kappa1_max),
        lower("kappa2", gains.kappa2, bounds.kappa2_min),
    )
    return CertificationReport(lines=lines, certified=all(ln.satisfied for ln in lines))
