"""Scenario files: JSON documents describing a network, demand, strategy,
and optional observations, with eager validation.

Every validation failure raises ScenarioError carrying a machine-readable
code and the path of the offending field.  parse -> serialize -> parse is
the identity on the validated model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig
from .dynamics import SimulationConfig
from .network import (
    AffineDelay,
    BPRDelay,
    CrossAffineDelay,
    Delay,
    Link,
    Network,
    ODUnit,
    QuadraticDelay,
    Route,
    WebsterDelay,
)
from .objective import PRESETS, FleetStrategy

__all__ = [
    "Scenario",
    "ScenarioError",
    "parse_scenario",
    "parse_scenario_dict",
    "scenario_to_dict",
    "fixture_path",
    "list_fixtures",
]

SCHEMA_VERSION = 1

FIXTURES_DIR = Path(__file__).parent / "fixtures"


def fixture_path(name: str) -> Path:
    """Path of a bundled scenario; name may omit the .json suffix."""
    if not name.endswith(".json"):
        name += ".json"
    path = FIXTURES_DIR / name
    if not path.exists():
        available = sorted(p.stem for p in FIXTURES_DIR.glob("*.json"))
        raise FileNotFoundError(f"no bundled scenario {name!r}; available: {available}")
    return path


def list_fixtures() -> list[str]:
    return sorted(p.stem for p in FIXTURES_DIR.glob("*.json"))


class ScenarioError(Exception):
    """Validation failure with a machine-readable code and field path."""

    def __init__(self, code: str, field_path: str, message: str):
        self.code = code
        self.field_path = field_path
        super().__init__(f"{code} at {field_path}: {message}")


@dataclass(frozen=True)
class Scenario:
    network: Network
    strategy: FleetStrategy
    strategy_name: str | None
    hdv_route_flows: np.ndarray | None
    fleet_route_flows: np.ndarray | None
    observed_route_flows: np.ndarray | None
    observed_link_flows: np.ndarray | None
    simulation: SimulationConfig
    config: SolverConfig
    tolerance_overrides: dict = field(default_factory=dict)
    simulation_given: bool = False


def _fail(code: str, path: str, message: str) -> None:
    raise ScenarioError(code, path, message)


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        _fail("missing-field", f"{path}.{key}", "required field is absent")
    return mapping[key]


def _number(value, path: str, minimum: float | None = None, strict: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail("bad-value", path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        _fail("bad-value", path, "number must be finite")
    if minimum is not None:
        if strict and value <= minimum:
            _fail("negative-flow" if minimum == 0 else "bad-value", path, f"must be > {minimum}")
        if not strict and value < minimum:
            _fail("negative-flow" if minimum == 0 else "bad-value", path, f"must be >= {minimum}")
    return value


def _parse_delay(spec, path: str) -> Delay:
    if not isinstance(spec, dict):
        _fail("malformed", path, "delay must be an object with a 'kind' field")
    kind = _require(spec, "kind", path)
    try:
        if kind == "bpr":
            return BPRDelay(
                t0=_number(_require(spec, "t0", path), f"{path}.t0"),
                d=_number(_require(spec, "d", path), f"{path}.d"),
                capacity=_number(_require(spec, "capacity", path), f"{path}.capacity"),
                power=_number(_require(spec, "power", path), f"{path}.power"),
            )
        if kind == "affine":
            return AffineDelay(
                intercept=_number(_require(spec, "intercept", path), f"{path}.intercept"),
                slope=_number(_require(spec, "slope", path), f"{path}.slope"),
            )
        if kind == "quadratic":
            return QuadraticDelay(
                intercept=_number(_require(spec, "intercept", path), f"{path}.intercept"),
                coefficient=_number(_require(spec, "coefficient", path), f"{path}.coefficient"),
            )
        if kind == "webster":
            return WebsterDelay(
                green_ratio=_number(_require(spec, "green_ratio", path), f"{path}.green_ratio"),
                saturation_flow=_number(
                    _require(spec, "saturation_flow", path), f"{path}.saturation_flow"
                ),
                cycle=_number(_require(spec, "cycle", path), f"{path}.cycle"),
            )
        if kind == "cross_affine":
            cross = spec.get("cross", {})
            if not isinstance(cross, dict):
                _fail("malformed", f"{path}.cross", "expected an object of link id to slope")
            return CrossAffineDelay(
                intercept=_number(_require(spec, "intercept", path), f"{path}.intercept"),
                own_slope=_number(_require(spec, "own_slope", path), f"{path}.own_slope"),
                cross={k: _number(v, f"{path}.cross.{k}") for k, v in cross.items()},
            )
    except ValueError as exc:
        _fail("bad-value", path, str(exc))
    _fail("unknown-delay", f"{path}.kind", f"unknown delay variant {kind!r}")


def _delay_to_dict(delay: Delay) -> dict:
    if isinstance(delay, BPRDelay):
        return {"kind": "bpr", "t0": delay.t0, "d": delay.d, "capacity": delay.capacity, "power": delay.power}
    if isinstance(delay, AffineDelay):
        return {"kind": "affine", "intercept": delay.intercept, "slope": delay.slope}
    if isinstance(delay, QuadraticDelay):
        return {"kind": "quadratic", "intercept": delay.intercept, "coefficient": delay.coefficient}
    if isinstance(delay, WebsterDelay):
        return {
            "kind": "webster",
            "green_ratio": delay.green_ratio,
            "saturation_flow": delay.saturation_flow,
            "cycle": delay.cycle,
        }
    if isinstance(delay, CrossAffineDelay):
        return {
            "kind": "cross_affine",
            "intercept": delay.intercept,
            "own_slope": delay.own_slope,
            "cross": dict(sorted(delay.cross.items())),
        }
    raise TypeError(f"unknown delay type {type(delay)!r}")


def _flow_vector(values, path: str, length: int, name: str) -> np.ndarray:
    if not isinstance(values, list):
        _fail("malformed", path, f"expected a list of {length} numbers")
    if len(values) != length:
        _fail("bad-value", path, f"expected {length} entries for {name}, got {len(values)}")
    return np.array([_number(v, f"{path}[{i}]", minimum=0.0) for i, v in enumerate(values)])


def parse_scenario_dict(doc: dict, source: str = "<memory>") -> Scenario:
    if not isinstance(doc, dict):
        _fail("malformed", "$", "scenario must be a JSON object")
    schema = doc.get("schema")
    if schema != SCHEMA_VERSION:
        _fail("bad-value", "$.schema", f"expected schema {SCHEMA_VERSION}, got {schema!r}")

    links_doc = _require(doc, "links", "$")
    if not isinstance(links_doc, list) or not links_doc:
        _fail("malformed", "$.links", "expected a non-empty list")
    links = []
    for i, item in enumerate(links_doc):
        path = f"$.links[{i}]"
        if not isinstance(item, dict):
            _fail("malformed", path, "expected an object")
        link_id = _require(item, "id", path)
        if not isinstance(link_id, str) or not link_id:
            _fail("bad-value", f"{path}.id", "link id must be a non-empty string")
        links.append(Link(id=link_id, delay=_parse_delay(_require(item, "delay", path), f"{path}.delay")))

    link_ids = {link.id for link in links}
    if len(link_ids) != len(links):
        _fail("bad-value", "$.links", "duplicate link ids")

    routes_doc = _require(doc, "routes", "$")
    if not isinstance(routes_doc, list) or not routes_doc:
        _fail("malformed", "$.routes", "expected a non-empty list")
    routes = []
    for i, item in enumerate(routes_doc):
        path = f"$.routes[{i}]"
        if not isinstance(item, dict):
            _fail("malformed", path, "expected an object")
        route_id = _require(item, "id", path)
        members = _require(item, "links", path)
        if not isinstance(members, list) or not members:
            _fail("malformed", f"{path}.links", "expected a non-empty list of link ids")
        for j, lid in enumerate(members):
            if lid not in link_ids:
                _fail("dangling-id", f"{path}.links[{j}]", f"route references missing link {lid!r}")
        routes.append(Route(id=route_id, link_ids=tuple(members)))
    route_ids = {r.id for r in routes}
    if len(route_ids) != len(routes):
        _fail("bad-value", "$.routes", "duplicate route ids")

    # cross-affine references must resolve too
    for i, link in enumerate(links):
        if isinstance(link.delay, CrossAffineDelay):
            for other in link.delay.cross:
                if other not in link_ids:
                    _fail(
                        "dangling-id",
                        f"$.links[{i}].delay.cross.{other}",
                        f"cross slope references missing link {other!r}",
                    )

    units_doc = _require(doc, "units", "$")
    if not isinstance(units_doc, list) or not units_doc:
        _fail("malformed", "$.units", "expected a non-empty list")
    units = []
    for i, item in enumerate(units_doc):
        path = f"$.units[{i}]"
        if not isinstance(item, dict):
            _fail("malformed", path, "expected an object")
        unit_routes = _require(item, "routes", path)
        if not isinstance(unit_routes, list) or not unit_routes:
            _fail("malformed", f"{path}.routes", "expected a non-empty list of route ids")
        for j, rid in enumerate(unit_routes):
            if rid not in route_ids:
                _fail("dangling-id", f"{path}.routes[{j}]", f"unit references missing route {rid!r}")
        units.append(
            ODUnit(
                origin=str(item.get("origin", f"O{i}")),
                destination=str(item.get("destination", f"D{i}")),
                q_hdv=_number(_require(item, "q_hdv", path), f"{path}.q_hdv", minimum=0.0),
                q_crv=_number(_require(item, "q_crv", path), f"{path}.q_crv", minimum=0.0),
                route_ids=tuple(unit_routes),
            )
        )

    try:
        network = Network(links, routes, units=units)
    except ValueError as exc:
        _fail("bad-value", "$", str(exc))

    strategy_doc = _require(doc, "strategy", "$")
    strategy_name = None
    if isinstance(strategy_doc, str):
        if strategy_doc not in PRESETS:
            _fail("bad-value", "$.strategy", f"unknown preset {strategy_doc!r}")
        strategy_name = strategy_doc
        strategy = PRESETS[strategy_doc]
    elif isinstance(strategy_doc, dict):
        strategy = FleetStrategy(
            lam_hdv=_number(_require(strategy_doc, "lambda_hdv", "$.strategy"), "$.strategy.lambda_hdv"),
            lam_crv=_number(_require(strategy_doc, "lambda_crv", "$.strategy"), "$.strategy.lambda_crv"),
        )
    else:
        _fail("malformed", "$.strategy", "expected a preset name or a lambda pair")

    n_routes, n_links = network.n_routes, network.n_links
    hdv_flows = None
    if "hdv_route_flows" in doc:
        hdv_flows = _flow_vector(doc["hdv_route_flows"], "$.hdv_route_flows", n_routes, "routes")
    fleet_flows = None
    if "fleet_route_flows" in doc:
        fleet_flows = _flow_vector(doc["fleet_route_flows"], "$.fleet_route_flows", n_routes, "routes")

    observed_routes = observed_links = None
    if "observed" in doc:
        observed = doc["observed"]
        if not isinstance(observed, dict):
            _fail("malformed", "$.observed", "expected an object")
        has_route = "route_flows" in observed
        has_link = "link_flows" in observed
        if has_route == has_link:
            _fail(
                "bad-value",
                "$.observed",
                "exactly one of route_flows or link_flows must be present",
            )
        if has_route:
            observed_routes = _flow_vector(
                observed["route_flows"], "$.observed.route_flows", n_routes, "routes"
            )
        else:
            observed_links = _flow_vector(
                observed["link_flows"], "$.observed.link_flows", n_links, "links"
            )

    simulation_given = "simulation" in doc
    sim_doc = doc.get("simulation", {})
    if not isinstance(sim_doc, dict):
        _fail("malformed", "$.simulation", "expected an object")
    try:
        simulation = SimulationConfig(
            days=int(sim_doc.get("days", 100)),
            mu=float(sim_doc.get("mu", 0.2)),
            model=str(sim_doc.get("model", "smoothed")),
            theta=float(sim_doc.get("theta", 1.0)),
            seed=int(sim_doc.get("seed", 0)),
            strategy=strategy,
        )
    except (TypeError, ValueError) as exc:
        _fail("bad-value", "$.simulation", str(exc))

    overrides = doc.get("tolerances", {})
    if not isinstance(overrides, dict):
        _fail("malformed", "$.tolerances", "expected an object")
    try:
        config = DEFAULT_CONFIG.replace(**overrides)
    except (TypeError, ValueError) as exc:
        _fail("bad-value", "$.tolerances", str(exc))

    return Scenario(
        network=network,
        strategy=strategy,
        strategy_name=strategy_name,
        hdv_route_flows=hdv_flows,
        fleet_route_flows=fleet_flows,
        observed_route_flows=observed_routes,
        observed_link_flows=observed_links,
        simulation=simulation,
        config=config,
        tolerance_overrides=dict(overrides),
        simulation_given=simulation_given,
    )


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError("malformed", "$", f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("malformed", "$", f"invalid JSON: {exc}") from exc
    return parse_scenario_dict(doc, source=str(path))


def scenario_to_dict(scenario: Scenario) -> dict:
    """Canonical serialization; parsing it back yields an identical model."""
    net = scenario.network
    doc: dict = {
        "schema": SCHEMA_VERSION,
        "links": [
            {"id": link.id, "delay": _delay_to_dict(link.delay)} for link in net.links
        ],
        "routes": [
            {"id": route.id, "links": list(route.link_ids)} for route in net.routes
        ],
        "units": [
            {
                "origin": unit.origin,
                "destination": unit.destination,
                "q_hdv": unit.q_hdv,
                "q_crv": unit.q_crv,
                "routes": list(unit.route_ids),
            }
            for unit in net.units_or_raise()
        ],
    }
    if scenario.strategy_name is not None:
        doc["strategy"] = scenario.strategy_name
    else:
        doc["strategy"] = {
            "lambda_hdv": scenario.strategy.lam_hdv,
            "lambda_crv": scenario.strategy.lam_crv,
        }
    if scenario.hdv_route_flows is not None:
        doc["hdv_route_flows"] = list(map(float, scenario.hdv_route_flows))
    if scenario.fleet_route_flows is not None:
        doc["fleet_route_flows"] = list(map(float, scenario.fleet_route_flows))
    if scenario.observed_route_flows is not None:
        doc["observed"] = {"route_flows": list(map(float, scenario.observed_route_flows))}
    if scenario.observed_link_flows is not None:
        doc["observed"] = {"link_flows": list(map(float, scenario.observed_link_flows))}
    if scenario.simulation_given:
        sim = scenario.simulation
        doc["simulation"] = {
            "days": sim.days,
            "mu": sim.mu,
            "model": sim.model,
            "theta": sim.theta,
            "seed": sim.seed,
        }
    if scenario.tolerance_overrides:
        doc["tolerances"] = dict(scenario.tolerance_overrides)
    return doc
