"""Scenario files: JSON schema, parsing, semantic validation, and bundled examples.

A scenario bundles everything one run needs: the game, the communication
topology, the controller gains, the integrator settings, and how to obtain the
monotonicity/Lipschitz constants for gain certification. Structural problems
raise SchemaError (with one "path: message" line per violation); structurally
valid files then go through semantic checks that are collected into a single
ValidationError so all problems surface at once.

All randomness in a run flows from the single scenario-level ``seed`` through
fixed substreams: 0 for initial decisions, 1 for monotonicity sampling, 2 for
oracle restarts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .dynamics import ClosedLoop, IntegratorConfig
from .errors import SchemaError, ValidationError
from .game import (
    COST_FORMS,
    ClusterSpec,
    CostFunction,
    Coupling,
    GameSpec,
    MonotonicityEstimate,
    estimate_monotonicity_lipschitz,
)
from .gains import FeedbackGains
from .graphs import TopologySpec, UndirectedGraph

_NUM = {"type": "number"}
_BOX = {"type": "array", "minItems": 2, "maxItems": 2, "items": _NUM}
_EDGE = {
    "type": "array",
    "minItems": 3,
    "maxItems": 3,
    "prefixItems": [
        {"type": "integer", "minimum": 1},
        {"type": "integer", "minimum": 1},
        {"type": "number"},
    ],
}
_COUPLING = {
    "type": "object",
    "required": ["cluster", "player", "coeff"],
    "additionalProperties": False,
    "properties": {
        "cluster": {"type": "integer", "minimum": 1},
        "player": {"type": "integer", "minimum": 1},
        "coeff": _NUM,
    },
}
_RATIO = {"type": "array", "minItems": 4, "maxItems": 4, "items": _NUM}
_PLAYER = {
    "type": "object",
    "required": ["form", "quadratic"],
    "additionalProperties": False,
    "properties": {
        "form": {"enum": list(COST_FORMS)},
        "quadratic": {
            "type": "array",
            "minItems": 3,
            "maxItems": 3,
            "prefixItems": [
                _NUM,
                {"oneOf": [_NUM, {"type": "array", "minItems": 1, "items": _NUM}]},
                _NUM,
            ],
        },
        "sqrt_ratio": _RATIO,
        "log_ratio": _RATIO,
        "couplings": {"type": "array", "items": _COUPLING},
    },
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "game", "topology", "gains", "integrator"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "game": {
            "type": "object",
            "required": ["q", "order", "clusters"],
            "additionalProperties": False,
            "properties": {
                "q": {"type": "integer", "minimum": 1},
                "order": {"type": "integer", "minimum": 1},
                "operating_box": _BOX,
                "clusters": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["players"],
                        "additionalProperties": False,
                        "properties": {
                            "label": {"type": "string"},
                            "players": {"type": "array", "minItems": 1, "items": _PLAYER},
                        },
                    },
                },
            },
        },
        "topology": {
            "type": "object",
            "required": ["global_edges", "cluster_edges"],
            "additionalProperties": False,
            "properties": {
                "global_edges": {"type": "array", "items": _EDGE},
                "cluster_edges": {
                    "type": "array",
                    "items": {"type": "array", "items": _EDGE},
                },
            },
        },
        "gains": {
            "type": "object",
            "required": ["k", "epsilon", "mu", "kappa1", "kappa2"],
            "additionalProperties": False,
            "properties": {
                "k": {"type": "array", "items": _NUM},
                "epsilon": _NUM,
                "mu": _NUM,
                "kappa1": _NUM,
                "kappa2": _NUM,
            },
        },
        "monotonicity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "omega": {"type": ["number", "null"]},
                "theta": {"type": ["number", "null"]},
                "box": _BOX,
                "samples": {"type": "integer", "minimum": 2},
            },
        },
        "integrator": {
            "type": "object",
            "required": ["dt", "t_final"],
            "additionalProperties": False,
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_final": {"type": "number", "exclusiveMinimum": 0},
                "record_every": {"type": "integer", "minimum": 1},
                "stop_tol": {"type": "number", "exclusiveMinimum": 0},
                "stop_window": {"type": "integer", "minimum": 1},
                "x0": {
                    "type": "object",
                    "required": ["policy"],
                    "additionalProperties": False,
                    "properties": {
                        "policy": {"enum": ["uniform", "explicit"]},
                        "box": _BOX,
                        "values": {"type": "array", "minItems": 1, "items": _NUM},
                    },
                },
                "y0": {"const": "zero"},
            },
        },
    },
}


@dataclass(frozen=True)
class MonotonicityConfig:
    """Either assumed constants (both set) or sampling settings for estimating them."""

    omega: float | None = None
    theta: float | None = None
    box: tuple | None = None
    samples: int = 200

    @property
    def assumed(self) -> bool:
        return self.omega is not None and self.theta is not None


@dataclass
class Scenario:
    name: str
    game: GameSpec
    topology: TopologySpec
    gains: FeedbackGains
    integrator: IntegratorConfig
    monotonicity: MonotonicityConfig = MonotonicityConfig()
    seed: int = 0
    description: str = ""


def _schema_errors(data) -> list[str]:
    validator = Draft202012Validator(SCENARIO_SCHEMA)
    msgs = []
    for err in sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path)):
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        msgs.append(f"{path}: {err.message}")
    return msgs


def parse_scenario_dict(data: dict) -> Scenario:
    """Build a validated Scenario from a parsed JSON document."""
    msgs = _schema_errors(data)
    if msgs:
        raise SchemaError(msgs)

    gd = data["game"]
    clusters = []
    for cd in gd["clusters"]:
        players = []
        for pd in cd["players"]:
            a, b, c = pd["quadratic"]
            players.append(
                CostFunction(
                    form=pd["form"],
                    quadratic=(float(a), tuple(b) if isinstance(b, list) else float(b), float(c)),
                    sqrt_ratio=pd.get("sqrt_ratio"),
                    log_ratio=pd.get("log_ratio"),
                    couplings=tuple(
                        Coupling(cp["cluster"], cp["player"], float(cp["coeff"]))
                        for cp in pd.get("couplings", ())
                    ),
                )
            )
        clusters.append(ClusterSpec(players=tuple(players), label=cd.get("label", "")))
    game = GameSpec(
        clusters=tuple(clusters),
        q=gd["q"],
        order=gd["order"],
        operating_box=tuple(gd.get("operating_box", (-10.0, 10.0))),
    )

    problems = game.validation_errors()

    td = data["topology"]
    sizes = game.cluster_sizes
    if len(td["cluster_edges"]) != game.n_clusters:
        problems.append(
            f"topology lists {len(td['cluster_edges'])} cluster edge sets for "
            f"{game.n_clusters} clusters"
        )
        raise ValidationError(problems)
    try:
        topo = TopologySpec(
            global_graph=UndirectedGraph(n=game.n_players, edges=tuple(map(tuple, td["global_edges"]))),
            cluster_graphs=tuple(
                UndirectedGraph(n=sizes[j], edges=tuple(map(tuple, td["cluster_edges"][j])))
                for j in range(game.n_clusters)
            ),
        )
    except ValidationError as exc:
        raise ValidationError(problems + exc.problems) from exc
    problems += topo.validation_errors()

    gn = data["gains"]
    gains = FeedbackGains(
        k=tuple(gn["k"]),
        epsilon=float(gn["epsilon"]),
        mu=float(gn["mu"]),
        kappa1=float(gn["kappa1"]),
        kappa2=float(gn["kappa2"]),
    )
    problems += gains.validation_errors()
    if gains.order != game.order:
        problems.append(
            f"gains define {len(gains.k)} damping coefficients, which means order "
            f"{gains.order}, but the game declares order {game.order}"
        )

    seed = int(data.get("seed", 0))
    idata = data["integrator"]
    x0d = idata.get("x0", {"policy": "uniform"})
    x0_vals = None
    x0_box = (-5.0, 5.0)
    if x0d["policy"] == "explicit":
        if "values" not in x0d:
            problems.append("integrator/x0: explicit policy needs 'values'")
        else:
            x0_vals = tuple(float(v) for v in x0d["values"])
            if len(x0_vals) != game.dim:
                problems.append(
                    f"integrator/x0: {len(x0_vals)} values for decision dimension {game.dim}"
                )
    else:
        if "values" in x0d:
            problems.append("integrator/x0: uniform policy does not take 'values'")
        x0_box = tuple(x0d.get("box", (-5.0, 5.0)))
    integrator = IntegratorConfig(
        dt=float(idata["dt"]),
        t_final=float(idata["t_final"]),
        record_every=int(idata.get("record_every", 50)),
        seed=seed,
        x0_box=x0_box,
        x0=x0_vals,
        stop_tol=float(idata.get("stop_tol", 1e-8)),
        stop_window=int(idata.get("stop_window", 100)),
    )
    problems += integrator.validation_errors()

    md = data.get("monotonicity", {})
    mono = MonotonicityConfig(
        omega=md.get("omega"),
        theta=md.get("theta"),
        box=tuple(md["box"]) if "box" in md else None,
        samples=int(md.get("samples", 200)),
    )
    if (mono.omega is None) != (mono.theta is None):
        problems.append("monotonicity: provide both omega and theta or neither")
    elif mono.assumed:
        if not (mono.omega > 0.0 and np.isfinite(mono.omega)):
            problems.append(f"monotonicity: omega must be positive, got {mono.omega}")
        if not (np.isfinite(mono.theta) and mono.theta >= mono.omega):
            problems.append(
                f"monotonicity: theta {mono.theta} must be finite and >= omega {mono.omega}"
            )

    if not problems:
        # dt cap needs consistent sizes/gains, so only check it on otherwise-clean input
        cap = ClosedLoop(game, topo, gains).dt_cap
        if integrator.dt > cap:
            problems.append(
                f"integrator/dt: {integrator.dt:g} exceeds the stability cap {cap:g} "
                "for these gains and topology"
            )
    if problems:
        raise ValidationError(problems)

    return Scenario(
        name=data["name"],
        game=game,
        topology=topo,
        gains=gains,
        integrator=integrator,
        monotonicity=mono,
        seed=seed,
        description=data.get("description", ""),
    )


def parse_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError([f"invalid JSON: {exc}"]) from exc
    if not isinstance(data, dict):
        raise SchemaError(["<root>: scenario must be a JSON object"])
    return parse_scenario_dict(data)


def scenario_to_dict(sc: Scenario) -> dict:
    """Canonical JSON-ready form of a scenario (inverse of parse_scenario_dict)."""
    clusters = []
    for cl in sc.game.clusters:
        players = []
        for cf in cl.players:
            a, b, c = cf.quadratic
            pd = {
                "form": cf.form,
                "quadratic": [a, list(b) if isinstance(b, tuple) else b, c],
            }
            if cf.sqrt_ratio is not None:
                pd["sqrt_ratio"] = list(cf.sqrt_ratio)
            if cf.log_ratio is not None:
                pd["log_ratio"] = list(cf.log_ratio)
            if cf.couplings:
                pd["couplings"] = [
                    {"cluster": cp.cluster, "player": cp.player, "coeff": cp.coeff}
                    for cp in cf.couplings
                ]
            players.append(pd)
        cd = {"players": players}
        if cl.label:
            cd["label"] = cl.label
        clusters.append(cd)
    x0d = (
        {"policy": "explicit", "values": list(sc.integrator.x0)}
        if sc.integrator.x0 is not None
        else {"policy": "uniform", "box": list(sc.integrator.x0_box)}
    )
    mono = {
        "omega": sc.monotonicity.omega,
        "theta": sc.monotonicity.theta,
        "samples": sc.monotonicity.samples,
    }
    if sc.monotonicity.box is not None:
        mono["box"] = list(sc.monotonicity.box)
    return {
        "name": sc.name,
        "description": sc.description,
        "seed": sc.seed,
        "game": {
            "q": sc.game.q,
            "order": sc.game.order,
            "operating_box": list(sc.game.operating_box),
            "clusters": clusters,
        },
        "topology": {
            "global_edges": [list(e) for e in sc.topology.global_graph.edges],
            "cluster_edges": [
                [list(e) for e in g.edges] for g in sc.topology.cluster_graphs
            ],
        },
        "gains": {
            "k": list(sc.gains.k),
            "epsilon": sc.gains.epsilon,
            "mu": sc.gains.mu,
            "kappa1": sc.gains.kappa1,
            "kappa2": sc.gains.kappa2,
        },
        "monotonicity": mono,
        "integrator": {
            "dt": sc.integrator.dt,
            "t_final": sc.integrator.t_final,
            "record_every": sc.integrator.record_every,
            "stop_tol": sc.integrator.stop_tol,
            "stop_window": sc.integrator.stop_window,
            "x0": x0d,
            "y0": "zero",
        },
    }


def with_seed(sc: Scenario, seed: int) -> Scenario:
    """Copy of a scenario with the top-level seed (and the derived streams) replaced."""
    return dataclasses.replace(
        sc,
        seed=seed,
        integrator=dataclasses.replace(sc.integrator, seed=seed),
    )


def resolve_monotonicity(sc: Scenario) -> tuple[MonotonicityEstimate, str]:
    """Constants for gain certification: assumed when pinned, sampled otherwise."""
    mc = sc.monotonicity
    if mc.assumed:
        box = mc.box if mc.box is not None else sc.game.operating_box
        return (
            MonotonicityEstimate(
                omega=float(mc.omega), theta=float(mc.theta), samples=0, box=box, seed=None
            ),
            "assumed",
        )
    est = estimate_monotonicity_lipschitz(
        sc.game,
        box=mc.box,
        samples=mc.samples,
        seed=sc.seed,
        rng=np.random.default_rng([sc.seed, 1]),
    )
    return est, "sampled"


_DATA_DIR = Path(__file__).parent / "data"


def bundled_scenario_names() -> list[str]:
    return sorted(p.stem for p in _DATA_DIR.glob("*.json"))


def bundled_scenario_path(name: str) -> Path:
    path = _DATA_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(
            f"no bundled scenario {name!r}; available: {', '.join(bundled_scenario_names())}"
        )
    return path


def load_bundled_scenario(name: str = "three-cluster-example") -> Scenario:
    return parse_scenario(bundled_scenario_path(name))
