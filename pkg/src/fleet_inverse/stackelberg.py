"""Two-route Stackelberg analysis for a fleet committing to a mixed strategy.

The fleet announces a probability mixture over assignments (alpha*Q_c on
route 1, the rest on route 2); HDVs equilibrate their *expected* costs
knowing the commitment.  For the malicious objective (maximize expected
total HDV travel time) the optimum is supported on the two corner
assignments, which this module verifies by brute force, and the optimal
mixing probability is found by golden-section search plus a verification
grid.  A best-response cycle check shows when no pure-HDV Nash point
exists, and a day-to-day simulation supplies the myopic comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig
from .dynamics import SimulationConfig, simulate
from .errors import FleetModelError
from .forward import FeasibleSet, solve_concave
from .network import Network
from .objective import FleetStrategy, eval_objective
from .parallel import ordered_map

__all__ = [
    "MixedCornerStrategy",
    "GeneralMixture",
    "induced_ue",
    "expected_fleet_objective",
    "expected_hdv_time",
    "optimize_corner_mixture",
    "verify_corner_support",
    "compare_routings",
    "MixtureOptimum",
    "CornerSupportReport",
    "RoutingComparison",
]

MALICIOUS = FleetStrategy(-1.0, 0.0)


@dataclass(frozen=True)
class MixedCornerStrategy:
    """Play (q_crv, 0) with probability p, (0, q_crv) otherwise."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def as_mixture(self) -> "GeneralMixture":
        return GeneralMixture(points=((1.0, self.p), (0.0, 1.0 - self.p)))


@dataclass(frozen=True)
class GeneralMixture:
    """Finite mixture over split fractions: play (alpha*q_crv, (1-alpha)*q_crv)
    with the given weight."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        weights = np.array([w for _, w in self.points])
        if np.any(weights < 0) or abs(float(np.sum(weights)) - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to one")
        for alpha, _ in self.points:
            if not 0.0 <= alpha <= 1.0:
                raise ValueError("split fractions must lie in [0, 1]")


def _require_two_routes(network: Network) -> None:
    if network.n_routes != 2:
        raise FleetModelError(
            f"Stackelberg analysis covers two-route networks, got {network.n_routes}"
        )


def _demands(network: Network, q_hdv, q_crv) -> tuple[float, float]:
    if q_hdv is None or q_crv is None:
        unit = network.units_or_raise()[0]
        q_hdv = unit.q_hdv if q_hdv is None else q_hdv
        q_crv = unit.q_crv if q_crv is None else q_crv
    return float(q_hdv), float(q_crv)


def _expected_costs(
    mixture: GeneralMixture, h1: float, q_hdv: float, q_crv: float, network: Network
) -> tuple[float, float]:
    c1 = c2 = 0.0
    h2 = q_hdv - h1
    for alpha, w in mixture.points:
        if w == 0.0:
            continue
        q = np.array([h1 + alpha * q_crv, h2 + (1.0 - alpha) * q_crv])
        t = network.route_times(q)
        c1 += w * t[0]
        c2 += w * t[1]
    return c1, c2


def induced_ue(
    mixture: GeneralMixture,
    q_hdv: float | None = None,
    q_crv: float | None = None,
    network: Network | None = None,
    config: SolverConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """HDV flows equilibrating expected costs under the announced mixture.

    Bisection on h1: the expected cost difference is strictly increasing in
    h1 for increasing delays, so either a one-sided corner applies or the
    interior root is bracketed.
    """
    _require_two_routes(network)
    q_hdv, q_crv = _demands(network, q_hdv, q_crv)

    def diff(h1: float) -> float:
        c1, c2 = _expected_costs(mixture, h1, q_hdv, q_crv, network)
        return c1 - c2

    if q_hdv == 0.0:
        return np.zeros(2)
    a, b = 0.0, q_hdv
    fa = diff(a)
    if fa >= 0.0:
        return np.array([0.0, q_hdv])
    fb = diff(b)
    if fb <= 0.0:
        return np.array([q_hdv, 0.0])

    # Illinois false position: superlinear on the smooth increasing diff,
    # lands exactly on symmetric roots
    x = 0.5 * (a + b)
    side = 0
    for _ in range(200):
        if fb != fa:
            x = (a * fb - b * fa) / (fb - fa)
        if not math.isfinite(x) or not a <= x <= b:
            x = 0.5 * (a + b)
        fx = diff(x)
        if abs(fx) <= config.ue_tol or (b - a) <= 1e-15 * q_hdv:
            break
        if fx < 0.0:
            a, fa = x, fx
            if side == -1:
                fb *= 0.5
            side = -1
        else:
            b, fb = x, fx
            if side == 1:
                fa *= 0.5
            side = 1
    return np.array([x, q_hdv - x])


def _fleet_assignment(alpha: float, q_crv: float) -> np.ndarray:
    return np.array([alpha * q_crv, (1.0 - alpha) * q_crv])


def expected_fleet_objective(
    strategy: FleetStrategy,
    mixture: GeneralMixture,
    h,
    network: Network,
    q_crv: float | None = None,
) -> float:
    """Expectation of the fleet objective over the mixture support, at the
    induced HDV flows h."""
    _require_two_routes(network)
    _, q_crv = _demands(network, 0.0, q_crv)
    h = np.asarray(h, dtype=float)
    total = 0.0
    for alpha, w in mixture.points:
        if w == 0.0:
            continue
        total += w * eval_objective(strategy, h, _fleet_assignment(alpha, q_crv), network)
    return total


def expected_hdv_time(
    mixture: GeneralMixture,
    h,
    network: Network,
    q_crv: float | None = None,
) -> float:
    """Expected total HDV travel time under the mixture; the malicious
    fleet maximizes this quantity."""
    return -expected_fleet_objective(MALICIOUS, mixture, h, network, q_crv=q_crv)


@dataclass(frozen=True)
class MixtureOptimum:
    p_best: float
    objective_best: float
    optima: tuple[float, ...]    # all global optima found on the verification grid
    degenerate: bool             # objective independent of p (no fleet mass)


def _corner_value(
    strategy: FleetStrategy,
    p: float,
    q_hdv: float,
    q_crv: float,
    network: Network,
    config: SolverConfig,
) -> float:
    mixture = MixedCornerStrategy(p).as_mixture()
    h = induced_ue(mixture, q_hdv, q_crv, network, config)
    return expected_fleet_objective(strategy, mixture, h, network, q_crv=q_crv)


def _golden_section(fun, lo: float, hi: float, tol: float) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def optimize_corner_mixture(
    strategy: FleetStrategy,
    network: Network,
    q_hdv: float | None = None,
    q_crv: float | None = None,
    config: SolverConfig = DEFAULT_CONFIG,
) -> MixtureOptimum:
    """Best corner mixture for the fleet: minimize the expected objective
    over the mixing probability p.

    Golden-section search refines the best grid cell; all global optima on
    the verification grid are reported, which exposes symmetric pairs
    {p, 1-p} when they occur.
    """
    _require_two_routes(network)
    q_hdv, q_crv = _demands(network, q_hdv, q_crv)

    def value(p: float) -> float:
        return _corner_value(strategy, p, q_hdv, q_crv, network, config)

    if q_crv == 0.0:
        v = value(0.5)
        return MixtureOptimum(p_best=0.5, objective_best=v, optima=(0.5,), degenerate=True)

    grid = np.linspace(0.0, 1.0, config.mixture_grid)
    values = np.array([value(p) for p in grid])
    v_min = float(np.min(values))
    window = 1e-9 * (1.0 + abs(v_min))
    near = values <= v_min + window

    # refine each contiguous run of near-optimal grid points
    optima: list[float] = []
    i = 0
    n = len(grid)
    while i < n:
        if not near[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and near[j + 1]:
            j += 1
        lo = grid[max(0, i - 1)]
        hi = grid[min(n - 1, j + 1)]
        optima.append(_golden_section(value, lo, hi, config.tol_p))
        i = j + 1

    refined = [(p, value(p)) for p in optima]
    best_p, best_v = min(refined, key=lambda pv: pv[1])
    keep = tuple(
        round(p, 12) for p, v in refined if v <= best_v + 1e-9 * (1.0 + abs(best_v))
    )
    return MixtureOptimum(p_best=best_p, objective_best=best_v, optima=keep, degenerate=False)


@dataclass(frozen=True)
class CornerSupportReport:
    worst_margin: float
    worst_mixture: tuple[float, float, float]   # (alpha1, alpha2, weight)
    best_corner_value: float
    mixtures_checked: int


def verify_corner_support(
    network: Network,
    q_hdv: float | None = None,
    q_crv: float | None = None,
    resolution: float = 0.05,
    config: SolverConfig = DEFAULT_CONFIG,
) -> CornerSupportReport:
    """Brute-force check that some corner mixture weakly dominates every
    two-point mixture for expected HDV travel time.

    Sweeps (alpha1, alpha2, weight) on a grid, computes each mixture's
    induced equilibrium and expected HDV time and compares against the best
    corner mixture; the worst margin should never be materially negative.
    """
    _require_two_routes(network)
    q_hdv, q_crv = _demands(network, q_hdv, q_crv)

    def corner_hdv_time(p: float) -> float:
        mixture = MixedCornerStrategy(p).as_mixture()
        h = induced_ue(mixture, q_hdv, q_crv, network, config)
        return expected_hdv_time(mixture, h, network, q_crv=q_crv)

    ps = np.linspace(0.0, 1.0, config.mixture_grid)
    best_corner = max(corner_hdv_time(p) for p in ps)

    grid = np.arange(0.0, 1.0 + resolution / 2.0, resolution)
    cells = [
        (float(a1), float(a2), float(w)) for a1 in grid for a2 in grid for w in grid
    ]

    def evaluate(cell):
        a1, a2, w = cell
        mixture = GeneralMixture(points=((a1, w), (a2, 1.0 - w)))
        h = induced_ue(mixture, q_hdv, q_crv, network, config)
        return expected_hdv_time(mixture, h, network, q_crv=q_crv)

    # grid cells are independent; the reduction below is ordered by index
    values = ordered_map(evaluate, cells, config.max_threads)
    worst = math.inf
    worst_at = (0.0, 0.0, 0.0)
    for cell, value in zip(cells, values):
        margin = best_corner - value
        if margin < worst:
            worst = margin
            worst_at = cell
    return CornerSupportReport(
        worst_margin=worst,
        worst_mixture=worst_at,
        best_corner_value=best_corner,
        mixtures_checked=len(cells),
    )


@dataclass(frozen=True)
class RoutingComparison:
    stackelberg: MixtureOptimum
    stackelberg_hdv_time: float
    myopic_mean_hdv_time: float
    myopic_days: int
    burn_in: int
    nash_exists: bool
    nash_cycle: tuple[int, ...]   # fleet corner indices along the detected cycle
    trivial: bool                 # no fleet mass, both routings coincide


def _fleet_corner_best_response(
    h: np.ndarray, q_crv: float, network: Network, config: SolverConfig
) -> int:
    """Index of the corner assignment minimizing the malicious objective."""
    feasible = FeasibleSet.from_network(network, totals=[q_crv])
    result = solve_concave(MALICIOUS, h, network, feasible, config, certify=False)
    return int(np.argmax(result.f))


def _nash_cycle(
    q_hdv: float, q_crv: float, network: Network, config: SolverConfig
) -> tuple[bool, tuple[int, ...]]:
    """Iterate fleet corner -> HDV equilibrium -> fleet corner; a repeated
    state with period > 1 rules out a pure-strategy Nash point."""
    for start in (0, 1):
        corner = start
        seen: dict[int, int] = {}
        path: list[int] = []
        for step in range(32):
            if corner in seen:
                period = step - seen[corner]
                cycle = tuple(path[seen[corner]:])
                if period == 1:
                    return True, cycle
                return False, cycle
            seen[corner] = step
            path.append(corner)
            alpha = 1.0 if corner == 0 else 0.0
            mixture = GeneralMixture(points=((alpha, 1.0),))
            h = induced_ue(mixture, q_hdv, q_crv, network, config)
            corner = _fleet_corner_best_response(h, q_crv, network, config)
    return False, tuple(path)


def compare_routings(
    network: Network,
    q_hdv: float | None = None,
    q_crv: float | None = None,
    days: int = 200,
    mu: float = 0.2,
    seed: int = 0,
    burn_in: int | None = None,
    config: SolverConfig = DEFAULT_CONFIG,
) -> RoutingComparison:
    """Stackelberg corner mixture versus myopic day-to-day routing for the
    malicious objective, plus pure-strategy Nash existence.

    Reports both objectives side by side; which routing is better on
    average is left to the reader of the report.
    """
    _require_two_routes(network)
    q_hdv, q_crv = _demands(network, q_hdv, q_crv)
    burn_in = days // 4 if burn_in is None else burn_in

    optimum = optimize_corner_mixture(MALICIOUS, network, q_hdv, q_crv, config)
    stack_time = -optimum.objective_best

    if q_crv == 0.0:
        sim_config = SimulationConfig(days=days, mu=mu, seed=seed, strategy=MALICIOUS)
        states = simulate(sim_config, np.array([q_hdv, 0.0]), network, config)
        mean_time = float(np.mean([s.t_hdv for s in states[burn_in:]]))
        return RoutingComparison(
            stackelberg=optimum,
            stackelberg_hdv_time=stack_time,
            myopic_mean_hdv_time=mean_time,
            myopic_days=days,
            burn_in=burn_in,
            nash_exists=True,
            nash_cycle=(),
            trivial=True,
        )

    sim_config = SimulationConfig(days=days, mu=mu, seed=seed, strategy=MALICIOUS)
    initial = np.array([0.6 * q_hdv, 0.4 * q_hdv])
    states = simulate(sim_config, initial, network, config)
    mean_time = float(np.mean([s.t_hdv for s in states[burn_in:]]))

    nash_exists, cycle = _nash_cycle(q_hdv, q_crv, network, config)
    return RoutingComparison(
        stackelberg=optimum,
        stackelberg_hdv_time=stack_time,
        myopic_mean_hdv_time=mean_time,
        myopic_days=days,
        burn_in=burn_in,
        nash_exists=nash_exists,
        nash_cycle=cycle,
        trivial=False,
    )
