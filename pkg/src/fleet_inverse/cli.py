"""Batch command-line interface: scenario in, CSV report out.

    fleet-inverse <subcommand> --scenario <path> --out <path> [--seed N] ...

Subcommands: forward, inverse, classify, certify, simulate, stackelberg,
lipschitz, fiber.  Reports are CSV (header row, comma delimiter, LF line
endings, full-precision numbers, certificates as 0/1) plus a short summary
on standard output.  Runs are deterministic given the scenario and seed.

Exit codes: 0 success, 2 parse, 3 infeasible, 4 nonconverged, 5 unsupported.
The environment variable FLEET_INVERSE_THREADS caps worker parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys

import numpy as np

from . import dynamics, inverse, stackelberg
from .errors import (
    ConvergenceError,
    DelayDomainError,
    FleetModelError,
    InfeasibleProblemError,
    NotRealisableError,
    UnsupportedDelayError,
)
from .forward import FeasibleSet, certify_local_min, fleet_assign
from .objective import classify_convexity
from .scenario import Scenario, ScenarioError, parse_scenario

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_NONCONVERGED = 4
EXIT_UNSUPPORTED = 5

SUBCOMMANDS = (
    "forward",
    "inverse",
    "classify",
    "certify",
    "simulate",
    "stackelberg",
    "lipschitz",
    "fiber",
)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_csv(out_path: str, columns: list[str], rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    text = "\n".join(lines) + "\n"
    if out_path == "-":
        sys.stdout.write(text)
    else:
        with open(out_path, "w", newline="") as handle:
            handle.write(text)


def _need(scenario: Scenario, attr: str, what: str):
    value = getattr(scenario, attr)
    if value is None:
        raise ScenarioError("missing-field", f"$.{attr}", f"{what} is required by this subcommand")
    return value


class NonConverged(ConvergenceError):
    pass


# -- subcommand handlers ----------------------------------------------------------


def _run_forward(scenario: Scenario, args) -> tuple[list[str], list[dict], list[str]]:
    net = scenario.network
    h = _need(scenario, "hdv_route_flows", "hdv_route_flows")
    result = fleet_assign(scenario.strategy, h, net, seed=args.seed, config=scenario.config)
    if not result.trace.converged:
        raise NonConverged("forward solver hit its iteration cap")
    times = net.route_times(h + result.f)
    columns = [
        "route",
        "hdv_flow",
        "fleet_flow",
        "total_flow",
        "route_time",
        "objective",
        "is_local_min",
        "min_directional_derivative",
        "n_minimizers",
    ]
    rows = [
        {
            "route": net.routes[r].id,
            "hdv_flow": float(h[r]),
            "fleet_flow": float(result.f[r]),
            "total_flow": float(h[r] + result.f[r]),
            "route_time": float(times[r]),
            "objective": result.objective,
            "is_local_min": result.certificate.is_local_min,
            "min_directional_derivative": result.certificate.min_directional_derivative,
            "n_minimizers": len(result.minimizer_set),
        }
        for r in range(net.n_routes)
    ]
    summary = [
        f"forward assignment ({result.trace.method}): objective {result.objective:.6g}",
        "fleet flow: " + ", ".join(f"{net.routes[r].id}={result.f[r]:.6g}" for r in range(net.n_routes)),
        f"local minimum certificate: {'pass' if result.certificate.is_local_min else 'FAIL'}",
    ]
    if len(result.minimizer_set) > 1:
        summary.append(f"{len(result.minimizer_set)} tied minimizers found")
    return columns, rows, summary


def _run_inverse(scenario: Scenario, args) -> tuple[list[str], list[dict], list[str]]:
    net = scenario.network
    if scenario.observed_link_flows is not None:
        result = inverse.inverse_link_flows(
            scenario.strategy, scenario.observed_link_flows, net,
            config=scenario.config, seed=args.seed,
        )
        names = [link.id for link in net.links]
        observed = scenario.observed_link_flows
        id_col = "link"
    else:
        observed = _need(scenario, "observed_route_flows", "observed flows")
        result = inverse.solve_inverse(
            scenario.strategy, observed, net, config=scenario.config, seed=args.seed
        )
        names = [route.id for route in net.routes]
        id_col = "route"
    if not result.converged:
        raise NonConverged("inverse solver did not reach its residual target")
    columns = [
        id_col,
        "observed_flow",
        "fleet_flow_hat",
        "hdv_flow_hat",
        "residual",
        "theorem_applies",
        "min_rayleigh",
        "margin",
        "n_solutions",
        "fiber_dimension",
    ]
    fiber_dim = result.fiber.dimension if result.fiber is not None else 0
    rows = [
        {
            id_col: names[i],
            "observed_flow": float(observed[i]),
            "fleet_flow_hat": float(result.f_hat[i]),
            "hdv_flow_hat": float(result.h_hat[i]),
            "residual": result.residual,
            "theorem_applies": result.certificate.theorem_applies,
            "min_rayleigh": result.certificate.min_rayleigh,
            "margin": result.certificate.margin,
            "n_solutions": len(result.solutions),
            "fiber_dimension": fiber_dim,
        }
        for i in range(len(names))
    ]
    summary = [
        f"inverse ({result.level} level): residual {result.residual:.3g}",
        "fleet flow estimate: "
        + ", ".join(f"{names[i]}={result.f_hat[i]:.6g}" for i in range(len(names))),
        f"uniqueness certificate: {'applies' if result.certificate.theorem_applies else 'DOES NOT APPLY'}"
        f" ({result.certificate.reason})",
    ]
    if len(result.solutions) > 1:
        summary.append(f"{len(result.solutions)} distinct solutions exhibited")
    return columns, rows, summary


def _run_classify(scenario: Scenario, args) -> tuple[list[str], list[dict], list[str]]:
    result = classify_convexity(scenario.strategy, scenario.network)
    columns = ["lambda_hdv", "lambda_crv", "classification"]
    rows = [
        {
            "lambda_hdv": scenario.strategy.lam_hdv,
            "lambda_crv": scenario.strategy.lam_crv,
            "classification": result.label,
        }
    ]
    return columns, rows, [f"objective classification: {result.label}"]


def _run_certify(scenario: Scenario, args) -> tuple[list[str], list[dict], list[str]]:
    net = scenario.network
    h = _need(scenario, "hdv_route_flows", "hdv_route_flows")
    f = _need(scenario, "fleet_route_flows", "fleet_route_flows")
    feasible = FeasibleSet.from_network(net)
    cert = certify_local_min(
        scenario.strategy, h, f, net, feasible, scenario.config, seed=args.seed
    )
    q = np.asarray(h) + np.asarray(f)
    pd = net.feasible_direction_pd(q, scenario.config.pd_rtol)
    independence = net.routes_linearly_independent(scenario.config.rank_rtol)
    columns = [
        "is_local_min",
        "min_directional_derivative",
        "pd_passes",
        "min_rayleigh",
        "margin",
        "routes_independent",
        "fiber_dimension",
    ]
    rows = [
        {
            "is_local_min": cert.is_local_min,
            "min_directional_derivative": cert.min_directional_derivative,
            "pd_passes": pd.passes,
            "min_rayleigh": pd.min_rayleigh,
            "margin": scenario.strategy.margin,
            "routes_independent": independence.independent,
            "fiber_dimension": independence.fiber_dimension,
        }
    ]
    summary = [
        f"local minimum certificate: {'pass' if cert.is_local_min else 'FAIL'} "
        f"(min directional derivative {cert.min_directional_derivative:.3g})",
        f"feasible-direction PD: {'pass' if pd.passes else 'FAIL'} "
        f"(min pair-swap eigenvalue {pd.min_rayleigh:.3g})",
        f"routes linearly independent: {independence.independent}",
    ]
    return columns, rows, summary


def _run_simulate(scenario: Scenario, args) -> tuple[list[str], list[dict], list[str]]:
    net = scenario.network
    h0 = _need(scenario, "hdv_route_flows", "hdv_route_flows")
    sim = scenario.simulation
    sim = dataclasses.replace(
        sim,
        days=args.days if args.days is not None else sim.days,
        mu=args.mu if args.mu is not None else sim.mu,
        seed=args.seed if args.seed is not None else sim.seed,
    )
    states = dynamics.simulate(sim, h0, net, scenario.config)
    columns = ["day", "route", "hdv_flow", "fleet_flow", "route_time", "t_hdv", "t_crv"]
    rows = []
    for state in states:
        for r in range(net.n_routes):
            rows.append(
                {
                    "day": state.day,
                    "route": net.routes[r].id,
                    "hdv_flow": float(state.h[r]),
                    "fleet_flow": float(state.f[r]),
                    "route_time": float(state.route_times[r]),
                    "t_hdv": state.t_hdv,
                    "t_crv": state.t_crv,
                }
            )
    mean_hdv = float(np.mean([s.t_hdv for s in states]))
    summary = [
        f"simulated {sim.days} days (mu={sim.mu}, model={sim.model}, seed={sim.seed})",
        f"mean HDV travel time {mean_hdv:.6g}; final day HDV flows: "
        + ", ".join(f"{net.routes[r].id}={states[-1].h[r]:.6g}" for r in range(net.n_routes)),
    ]
    return columns, rows, summary


def _run_stackelberg(scenario: Scenario, args) -> tuple[list[str], list[dict], list[str]]:
    net = scenario.network
    sim = scenario.simulation
    days = args.days if args.days is not None else sim.days
    mu = args.mu if args.mu is not None else sim.mu
    seed = args.seed if args.seed is not None else sim.seed
    comparison = stackelberg.compare_routings(
        net, days=days, mu=mu, seed=seed, config=scenario.config
    )
    support = stackelberg.verify_corner_support(
        net, resolution=args.resolution, config=scenario.config
    )
    columns = [
        "p_best",
        "stackelberg_objective",
        "stackelberg_hdv_time",
        "myopic_mean_hdv_time",
        "nash_exists",
        "n_optima",
        "worst_corner_margin",
        "days",
        "burn_in",
    ]
    rows = [
        {
            "p_best": comparison.stackelberg.p_best,
            "stackelberg_objective": comparison.stackelberg.objective_best,
            "stackelberg_hdv_time": comparison.stackelberg_hdv_time,
            "myopic_mean_hdv_time": comparison.myopic_mean_hdv_time,
            "nash_exists": comparison.nash_exists,
            "n_optima": len(comparison.stackelberg.optima),
            "worst_corner_margin": support.worst_margin,
            "days": comparison.myopic_days,
            "burn_in": comparison.burn_in,
        }
    ]
    summary = [
        f"optimal corner mixture p = {comparison.stackelberg.p_best:.6g} "
        f"(optima: {', '.join(f'{p:.6g}' for p in comparison.stackelberg.optima)})",
        f"expected HDV time: Stackelberg {comparison.stackelberg_hdv_time:.6g} vs "
        f"myopic time-average {comparison.myopic_mean_hdv_time:.6g}",
        f"pure-strategy Nash point exists: {comparison.nash_exists}",
        f"corner support worst margin {support.worst_margin:.3g} "
        f"over {support.mixtures_checked} mixtures",
    ]
    return columns, rows, summary


def _run_lipschitz(scenario: Scenario, args) -> tuple[list[str], list[dict], list[str]]:
    seed = args.seed if args.seed is not None else scenario.simulation.seed
    bound = inverse.lipschitz_bound(
        scenario.strategy,
        scenario.network,
        samples=args.samples,
        seed=seed,
        config=scenario.config,
    )
    columns = ["constant", "rho", "margin", "grad_norm", "hess_norm", "bound", "defined", "samples"]
    rows = [
        {
            "constant": bound.constant,
            "rho": bound.rho,
            "margin": bound.margin,
            "grad_norm": bound.grad_norm,
            "hess_norm": bound.hess_norm,
            "bound": bound.bound if math.isfinite(bound.bound) else math.inf,
            "defined": bound.defined,
            "samples": bound.samples,
        }
    ]
    summary = [
        f"stability bound {bound.bound:.6g} (K={bound.constant:.6g}, rho={bound.rho:.6g}, "
        f"margin={bound.margin:.6g}, {bound.samples} samples)"
    ]
    if not bound.defined:
        summary.append("bound undefined: needs positive margin and positive rho")
    return columns, rows, summary


def _run_fiber(scenario: Scenario, args) -> tuple[list[str], list[dict], list[str]]:
    net = scenario.network
    if scenario.observed_route_flows is not None:
        q = scenario.observed_route_flows
        link_result = inverse.inverse_link_flows(
            scenario.strategy, net.route_to_link(q), net,
            config=scenario.config, seed=args.seed,
        )
        phi = link_result.f_hat
        fiber = inverse.route_fiber(net, phi, upper=q, config=scenario.config)
        origin = "fleet link flow recovered from observed route flows"
    elif scenario.observed_link_flows is not None:
        phi = scenario.observed_link_flows
        fiber = inverse.route_fiber(net, phi, config=scenario.config)
        origin = "fleet link flow taken from observed.link_flows"
    else:
        raise ScenarioError("missing-field", "$.observed", "fiber needs observed flows")
    columns = [
        "route",
        "representative",
        "fiber_dimension",
        "residual",
        "basis_0",
        "interval_low_0",
        "interval_high_0",
    ]
    dim = fiber.dimension
    rows = []
    for r in range(net.n_routes):
        rows.append(
            {
                "route": net.routes[r].id,
                "representative": float(fiber.representative[r]),
                "fiber_dimension": dim,
                "residual": fiber.residual,
                "basis_0": float(fiber.basis[r, 0]) if dim >= 1 else 0.0,
                "interval_low_0": fiber.intervals[0][0] if dim >= 1 else 0.0,
                "interval_high_0": fiber.intervals[0][1] if dim >= 1 else 0.0,
            }
        )
    summary = [
        origin,
        "fleet link flow: " + ", ".join(f"{net.links[i].id}={phi[i]:.6g}" for i in range(net.n_links)),
        f"fiber dimension {dim}; representative: "
        + ", ".join(f"{net.routes[r].id}={fiber.representative[r]:.6g}" for r in range(net.n_routes)),
    ]
    if dim >= 1:
        widths = [hi - lo for lo, hi in fiber.intervals]
        summary.append(f"admissible interval widths: {', '.join(f'{w:.6g}' for w in widths)}")
    return columns, rows, summary


HANDLERS = {
    "forward": _run_forward,
    "inverse": _run_inverse,
    "classify": _run_classify,
    "certify": _run_certify,
    "simulate": _run_simulate,
    "stackelberg": _run_stackelberg,
    "lipschitz": _run_lipschitz,
    "fiber": _run_fiber,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fleet-inverse",
        description="forward and inverse fleet route assignment, batch reports",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="path to the scenario JSON file")
        p.add_argument("--out", default="-", help="CSV output path ('-' for stdout)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--days", type=int, default=None, help="override simulation days")
        p.add_argument("--mu", type=float, default=None, help="override HDV adaptation rate")
        p.add_argument("--samples", type=int, default=200, help="stability bound sample count")
        p.add_argument(
            "--resolution", type=float, default=0.1, help="corner-support grid resolution"
        )
    return parser


def run(subcommand: str, scenario: Scenario, out_path: str, args) -> int:
    columns, rows, summary = HANDLERS[subcommand](scenario, args)
    _write_csv(out_path, columns, rows)
    for line in summary:
        print(line)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        scenario = parse_scenario(args.scenario)
        return run(args.subcommand, scenario, args.out, args)
    except ScenarioError as exc:
        print(f"error[parse]: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (NotRealisableError, InfeasibleProblemError, DelayDomainError) as exc:
        print(f"error[infeasible]: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"error[nonconverged]: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (UnsupportedDelayError, FleetModelError) as exc:
        print(f"error[unsupported]: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED


if __name__ == "__main__":
    sys.exit(main())
