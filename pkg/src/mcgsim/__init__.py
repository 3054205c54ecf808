"""Distributed Nash equilibrium seeking for multi-cluster games.

Library + CLI for designing, certifying, and simulating a consensus-based
equilibrium-seeking controller for games whose players are n-th order
integrators grouped into clusters, verified against an independent reduced
equilibrium oracle.
"""

from .dynamics import (
    ClosedLoop,
    IntegratorConfig,
    RateFit,
    SystemState,
    Trajectory,
    consensus_spread,
    equilibrium_residual,
    equilibrium_state,
    estimate_error,
    fit_decay_rate,
    ne_residual,
    rhs,
    simulate,
    step_rk4,
)
from .errors import (
    DegenerateWindow,
    DomainViolation,
    McgError,
    MissingCouplingValue,
    NoConvergence,
    NonFiniteState,
    NonPositiveBound,
    NotHurwitz,
    SchemaError,
    SingularJacobian,
    SingularOperator,
    TooFewVertices,
    ValidationError,
)
from .gains import (
    CertificationReport,
    FeedbackGains,
    GainBounds,
    LyapunovData,
    a_bar1,
    certify,
    companion_matrix,
    gain_bounds,
    is_hurwitz,
    lyapunov_data,
    solve_p1,
    solve_p2,
)
from .game import (
    ClusterSpec,
    CostFunction,
    Coupling,
    GameSpec,
    MonotonicityEstimate,
    cluster_sums,
    estimate_monotonicity_lipschitz,
    eval_cost,
    grad_own,
    pseudo_gradient,
    pseudo_gradient_estimated,
    stack_decisions,
    unstack_decisions,
)
from .graphs import (
    TopologySpec,
    UndirectedGraph,
    adjacency,
    algebraic_connectivity,
    block_cluster_laplacian,
    estimator_operator,
    estimator_spectrum,
    is_connected,
    laplacian,
)
from .oracle import NESolution, lift, reduced_gradient, solve_ne
from .reporting import (
    RunReport,
    build_run_report,
    certification_bundle,
    column_names,
    read_trajectory_csv,
    report_from_csv,
    scenario_hash,
    write_trajectory_csv,
)
from .scenario import (
    MonotonicityConfig,
    Scenario,
    bundled_scenario_names,
    load_bundled_scenario,
    parse_scenario,
    parse_scenario_dict,
    resolve_monotonicity,
    scenario_to_dict,
    with_seed,
)

__version__ = "0.1.0"
