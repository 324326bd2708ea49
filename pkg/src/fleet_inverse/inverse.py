"""Inverse fleet assignment: recover fleet flows from observed totals.

Given the observed total route flow q, the strategy weights, and the fleet
size, a fleet flow f consistent with the observation is exactly a solution
of the variational inequality

    A(f*) . (f - f*) >= 0  for all feasible f,
    A(f) = lam_crv * t(q) + grad_t(q)^T (lam_hdv * q + L * f),

over {0 <= f <= q, per-unit sums = fleet sizes}, with L = lam_crv -
lam_hdv.  The operator is affine in f because q is fixed by the
observation.  For L > 0 and a travel-time gradient positive definite on
feasible directions the VI is strictly monotone, hence has at most one
solution: that is the uniqueness certificate reported alongside every
result.  The solver is the extragradient method plus an active-set polish
that removes the remaining iteration error.

Residuals are reported as VI gap per vehicle of fleet mass,
max_x A(f).(f - x) / max(1, fleet mass), in time units.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig
from .errors import (
    DimensionMismatchError,
    InfeasibleProblemError,
    NotRealisableError,
)
from .forward import FeasibleSet, fleet_assign
from .network import Network
from .objective import FleetStrategy
from .parallel import ordered_map

__all__ = [
    "UniquenessCertificate",
    "InverseResult",
    "FiberResult",
    "LipschitzBound",
    "DiscreteRecovery",
    "stationarity_map",
    "solve_inverse",
    "inverse_link_flows",
    "route_fiber",
    "lipschitz_bound",
    "discrete_recover",
]

MARGIN_EPS = 1e-12  # |L| below this counts as the degenerate L = 0 case


# -- result types ---------------------------------------------------------------


@dataclass(frozen=True)
class UniquenessCertificate:
    theorem_applies: bool
    reason: str
    min_rayleigh: float
    margin: float


@dataclass(frozen=True)
class FiberResult:
    """Solution set of route flows producing one fleet link flow.

    The set is (representative + span(basis)) intersected with the flow
    bounds; intervals[j] is the admissible coefficient range along basis
    column j with the other coefficients held at zero.
    """

    representative: np.ndarray
    basis: np.ndarray
    intervals: tuple[tuple[float, float], ...]
    residual: float

    @property
    def dimension(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class InverseResult:
    f_hat: np.ndarray
    h_hat: np.ndarray
    residual: float
    certificate: UniquenessCertificate
    solutions: tuple[np.ndarray, ...]
    converged: bool
    level: str  # "route" or "link"
    fiber: FiberResult | None = None


@dataclass(frozen=True)
class LipschitzBound:
    constant: float      # K in the stability estimate
    rho: float           # min feasible-direction eigenvalue over samples
    margin: float        # L
    grad_norm: float     # sup spectral norm of the travel-time gradient
    hess_norm: float     # sup bound on the gradient's Lipschitz modulus
    bound: float         # K / (L * rho)
    defined: bool
    samples: int


@dataclass(frozen=True)
class DiscreteRecovery:
    inverse: InverseResult
    h_star: np.ndarray
    q_city: np.ndarray
    image_distance: float
    lipschitz_inverse: float
    closeness_bound: float
    integer_candidates: tuple[np.ndarray, ...]


# -- operator and gap ------------------------------------------------------------


def _affine_operator(
    strategy: FleetStrategy, q: np.ndarray, network: Network
) -> tuple[np.ndarray, np.ndarray]:
    """A(f) = a0 + B f in route space at the observed total flow q."""
    t = network.route_times(q)
    grad = network.route_gradient(q)
    a0 = strategy.lam_crv * t + grad.T @ (strategy.lam_hdv * q)
    b = strategy.margin * grad.T
    return a0, b


def stationarity_map(strategy: FleetStrategy, q, f, network: Network) -> np.ndarray:
    """The VI operator at candidate f; contracting with a direction g gives
    the directional derivative of the fleet objective at f with HDV flows
    q - f held fixed."""
    q = np.asarray(q, dtype=float)
    f = np.asarray(f, dtype=float)
    if q.shape != f.shape or q.shape != (network.n_routes,):
        raise DimensionMismatchError("q and f must both be route vectors")
    a0, b = _affine_operator(strategy, q, network)
    return a0 + b @ f


def _linear_minimum(c: np.ndarray, feasible: FeasibleSet) -> tuple[np.ndarray, float]:
    """Exact minimizer of c . x over the box-capped product simplex
    (greedy fill of the cheapest routes; ties broken by route index)."""
    x = np.zeros(feasible.n_routes)
    for block, total in zip(feasible.blocks, feasible.totals):
        remaining = float(total)
        order = sorted(range(len(block)), key=lambda i: (c[block[i]], i))
        for i in order:
            r = block[i]
            cap = remaining if feasible.upper is None else min(remaining, float(feasible.upper[r]))
            x[r] = cap
            remaining -= cap
            if remaining <= 0:
                break
    return x, float(c @ x)


def _vi_gap(a0: np.ndarray, b: np.ndarray, f: np.ndarray, feasible: FeasibleSet) -> float:
    """max_x A(f).(f - x) over the feasible set; zero exactly at solutions."""
    c = a0 + b @ f
    _, best = _linear_minimum(c, feasible)
    return float(c @ f) - best


def _residual_scale(feasible: FeasibleSet) -> float:
    return max(1.0, feasible.total_mass)


# -- extragradient + polish -------------------------------------------------------


def _extragradient(
    a0: np.ndarray,
    b: np.ndarray,
    feasible: FeasibleSet,
    f0: np.ndarray,
    tol_gap: float,
    config: SolverConfig,
) -> tuple[np.ndarray, int, bool]:
    f = feasible.project(f0)
    b_norm = float(np.linalg.norm(b, 2))
    if b_norm <= 1e-300:
        x, _ = _linear_minimum(a0, feasible)
        return x, 0, True
    step = config.extragradient_safety / b_norm
    for k in range(1, config.max_vi_iter + 1):
        af = a0 + b @ f
        if float(af @ f) - _linear_minimum(af, feasible)[1] <= tol_gap:
            return f, k - 1, True
        y = feasible.project(f - step * af)
        f = feasible.project(f - step * (a0 + b @ y))
    return f, config.max_vi_iter, False


def _polish_active_set(
    a0: np.ndarray,
    b: np.ndarray,
    feasible: FeasibleSet,
    f: np.ndarray,
) -> np.ndarray | None:
    """Solve the KKT system on the active set guessed from f.

    Free coordinates satisfy A(f)_r = mu_s inside their unit; coordinates
    pinned at a bound must respect the complementary inequality.  Returns
    the exact solution, or None when the guess fails validation.
    """
    n = feasible.n_routes
    scale = 1.0 + feasible.total_mass
    tol_active = 1e-6 * scale

    lower_active = f <= tol_active
    upper_active = (
        np.zeros(n, dtype=bool)
        if feasible.upper is None
        else (f >= feasible.upper - tol_active) & ~lower_active
    )
    free = ~(lower_active | upper_active)

    fixed = np.where(lower_active, 0.0, f)
    if feasible.upper is not None:
        fixed = np.where(upper_active, feasible.upper, fixed)

    free_idx = np.where(free)[0]
    blocks_with_free = [
        s for s, block in enumerate(feasible.blocks) if np.any(free[block])
    ]
    m = len(free_idx) + len(blocks_with_free)
    if m == 0:
        candidate = fixed
    else:
        col_of = {r: i for i, r in enumerate(free_idx)}
        mu_of = {s: len(free_idx) + j for j, s in enumerate(blocks_with_free)}
        lhs = np.zeros((m, m))
        rhs = np.zeros(m)
        block_of_route = {}
        for s, block in enumerate(feasible.blocks):
            for r in block:
                block_of_route[r] = s
        for i, r in enumerate(free_idx):
            lhs[i, : len(free_idx)] = b[r, free_idx]
            lhs[i, mu_of[block_of_route[r]]] = -1.0
            rhs[i] = -a0[r] - float(b[r] @ (fixed * ~free))
        for j, s in enumerate(blocks_with_free):
            block = feasible.blocks[s]
            row = len(free_idx) + j
            for r in block:
                if free[r]:
                    lhs[row, col_of[r]] = 1.0
            rhs[row] = float(feasible.totals[s]) - float(np.sum(fixed[block][~free[block]]))
        solution, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        if not np.all(np.isfinite(solution)):
            return None
        candidate = fixed.copy()
        candidate[free_idx] = solution[: len(free_idx)]

    # validate primal feasibility
    tol_feas = 1e-9 * scale
    if np.any(candidate < -tol_feas):
        return None
    if feasible.upper is not None and np.any(candidate > feasible.upper + tol_feas):
        return None
    candidate = np.clip(candidate, 0.0, None if feasible.upper is None else feasible.upper)
    for block, total in zip(feasible.blocks, feasible.totals):
        if abs(float(np.sum(candidate[block])) - float(total)) > 1e-7 * scale:
            return None

    # validate dual feasibility
    a_val = a0 + b @ candidate
    tol_kkt = 1e-6 * (1.0 + float(np.max(np.abs(a_val))))
    for s, block in enumerate(feasible.blocks):
        free_b = [r for r in block if free[r]]
        lo_b = [r for r in block if lower_active[r] and not free[r]]
        hi_b = [r for r in block if upper_active[r] and not lower_active[r] and not free[r]]
        if free_b:
            mu = float(np.mean(a_val[free_b]))
            if np.max(np.abs(a_val[free_b] - mu)) > tol_kkt:
                return None
        else:
            lo_min = min((a_val[r] for r in lo_b), default=math.inf)
            hi_max = max((a_val[r] for r in hi_b), default=-math.inf)
            if hi_max > lo_min + tol_kkt:
                return None
            mu = min(lo_min, max(hi_max, 0.0))
        if any(a_val[r] < mu - tol_kkt for r in lo_b):
            return None
        if any(a_val[r] > mu + tol_kkt for r in hi_b):
            return None
    return candidate


def _solve_affine_vi(
    a0: np.ndarray,
    b: np.ndarray,
    feasible: FeasibleSet,
    f0: np.ndarray,
    tol_gap: float,
    config: SolverConfig,
) -> tuple[np.ndarray, float, bool]:
    f, _, converged = _extragradient(a0, b, feasible, f0, tol_gap, config)
    gap = _vi_gap(a0, b, f, feasible)
    polished = _polish_active_set(a0, b, feasible, f)
    if polished is not None:
        gap_polished = _vi_gap(a0, b, polished, feasible)
        if gap_polished <= max(gap, 1e-12):
            f, gap = polished, gap_polished
    return f, gap, converged or gap <= tol_gap


# -- route-level inverse -----------------------------------------------------------


def _uniform_start(feasible: FeasibleSet) -> np.ndarray:
    f = np.zeros(feasible.n_routes)
    for block, total in zip(feasible.blocks, feasible.totals):
        f[block] = total / len(block)
    return feasible.project(f)


def _distinct(solutions: list[np.ndarray], scale: float, tol: float) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for f in solutions:
        if not any(float(np.max(np.abs(f - g))) <= tol * scale for g in out):
            out.append(f)
    return out


def _certificate(
    strategy: FleetStrategy, q: np.ndarray, network: Network, config: SolverConfig
) -> UniquenessCertificate:
    margin = strategy.margin
    pd = network.feasible_direction_pd(q, config.pd_rtol)
    if margin <= MARGIN_EPS:
        reason = (
            "margin lam_crv - lam_hdv is not positive; the assignment operator "
            "is not invertible for this strategy"
        )
        applies = False
    elif not pd.passes:
        reason = (
            "travel-time gradient is not positive definite on feasible "
            f"directions (min pair-swap eigenvalue {pd.min_rayleigh:.3g})"
        )
        applies = False
    else:
        reason = "margin positive and travel-time gradient positive definite on feasible directions"
        applies = True
    return UniquenessCertificate(
        theorem_applies=applies,
        reason=reason,
        min_rayleigh=pd.min_rayleigh,
        margin=margin,
    )


def _nonuniqueness_search_fixed_point(
    strategy: FleetStrategy,
    q: np.ndarray,
    network: Network,
    feasible: FeasibleSet,
    a0: np.ndarray,
    b: np.ndarray,
    config: SolverConfig,
    seed: int,
) -> list[np.ndarray]:
    """Look for several stationary flows by iterating the forward best
    response f <- G(q - f); used when the uniqueness theorem does not apply."""
    rng = np.random.default_rng(seed)
    forward_set = FeasibleSet(
        blocks=feasible.blocks, totals=feasible.totals, n_routes=feasible.n_routes
    )
    try:
        starts = feasible.vertices(min(64, config.vertex_cap))
    except Exception:
        starts = []
    starts += [feasible.random_point(rng) for _ in range(8)]
    scale = _residual_scale(feasible)
    tol_gap = 1e-6 * scale
    found: list[np.ndarray] = []
    for f0 in starts:
        f = feasible.project(f0)
        for _ in range(40):
            h = np.maximum(q - f, 0.0)
            result = fleet_assign(
                strategy, h, network, feasible=forward_set, config=config, certify=False
            )
            f_next = feasible.project(result.f)
            if float(np.max(np.abs(f_next - f))) <= 1e-9 * scale:
                f = f_next
                break
            f = f_next
        if _vi_gap(a0, b, f, feasible) <= tol_gap:
            found.append(f)
    return _distinct(found, scale, config.tol_distinct)


def solve_inverse(
    strategy: FleetStrategy,
    q,
    network: Network,
    sizes=None,
    config: SolverConfig = DEFAULT_CONFIG,
    seed: int | None = None,
) -> InverseResult:
    """Recover the fleet route flow from the observed total flow q.

    Solves the stationarity VI over {0 <= f <= q, per-unit sums = sizes}.
    When the uniqueness certificate fails the solve still runs, but the
    result is marked and a multistart search tries to exhibit additional
    distinct solutions.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (network.n_routes,):
        raise DimensionMismatchError("observed flow must be a route vector")
    if np.any(q < 0):
        raise InfeasibleProblemError("observed flows must be non-negative")
    blocks = network.unit_blocks()
    sizes = network.fleet_sizes() if sizes is None else np.asarray(sizes, dtype=float)
    for s, block in enumerate(blocks):
        if float(np.sum(q[block])) < sizes[s] - 1e-9 * (1.0 + sizes[s]):
            raise InfeasibleProblemError(
                f"unit {s}: fleet size {sizes[s]} exceeds the observed total "
                f"{float(np.sum(q[block]))} on its routes"
            )
    feasible = FeasibleSet(blocks=blocks, totals=sizes, n_routes=network.n_routes, upper=q)
    seed = config.seed if seed is None else seed

    certificate = _certificate(strategy, q, network, config)
    a0, b = _affine_operator(strategy, q, network)
    scale = _residual_scale(feasible)
    t_norm = float(np.linalg.norm(network.route_times(q)))
    tol_gap = config.tol_vi * (1.0 + t_norm) * scale

    dependence = network.routes_linearly_independent(config.rank_rtol)

    if feasible.total_mass == 0.0:
        f_hat = np.zeros(network.n_routes)
        return InverseResult(
            f_hat=f_hat,
            h_hat=q.copy(),
            residual=0.0,
            certificate=certificate,
            solutions=(f_hat,),
            converged=True,
            level="route",
        )

    margin = strategy.margin
    solutions: list[np.ndarray]
    if abs(margin) <= MARGIN_EPS:
        # the operator is constant in f: every minimizer of the linear map
        # a0 . f over the feasible set solves the VI
        x_fwd, _ = _linear_minimum(a0, feasible)
        x_rev = _linear_minimum_reversed(a0, feasible)
        f_hat, gap, converged = x_fwd, 0.0, True
        solutions = _distinct([x_fwd, x_rev], scale, config.tol_distinct)
    else:
        f_hat, gap, converged = _solve_affine_vi(
            a0, b, feasible, _uniform_start(feasible), tol_gap, config
        )
        solutions = [f_hat]
        if not certificate.theorem_applies:
            if margin < 0:
                extra = _nonuniqueness_search_fixed_point(
                    strategy, q, network, feasible, a0, b, config, seed
                )
            else:
                extra = _multistart_vi(a0, b, feasible, tol_gap, config, seed)
            solutions = _distinct(solutions + extra, scale, config.tol_distinct)

    fiber = None
    if not dependence.independent:
        try:
            fiber = route_fiber(
                network,
                network.route_to_link(f_hat),
                totals=sizes,
                upper=q,
                config=config,
            )
        except NotRealisableError:
            fiber = None

    return InverseResult(
        f_hat=f_hat,
        h_hat=q - f_hat,
        residual=gap / scale,
        certificate=certificate,
        solutions=tuple(solutions),
        converged=converged,
        level="route",
        fiber=fiber,
    )


def _linear_minimum_reversed(c: np.ndarray, feasible: FeasibleSet) -> np.ndarray:
    """Greedy LP minimizer with reversed tie-breaking; differs from the
    forward greedy exactly when the minimum is non-unique."""
    x = np.zeros(feasible.n_routes)
    for block, total in zip(feasible.blocks, feasible.totals):
        remaining = float(total)
        order = sorted(range(len(block)), key=lambda i: (c[block[i]], -i))
        for i in order:
            r = block[i]
            cap = remaining if feasible.upper is None else min(remaining, float(feasible.upper[r]))
            x[r] = cap
            remaining -= cap
            if remaining <= 0:
                break
    return x


def _multistart_vi(
    a0: np.ndarray,
    b: np.ndarray,
    feasible: FeasibleSet,
    tol_gap: float,
    config: SolverConfig,
    seed: int,
) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    try:
        starts = feasible.vertices(min(64, config.vertex_cap))
    except Exception:
        starts = []
    starts += [feasible.random_point(rng) for _ in range(8)]
    out = []
    for f0 in starts:
        f, gap, _ = _solve_affine_vi(a0, b, feasible, f0, tol_gap, config)
        if gap <= max(tol_gap, 1e-6 * _residual_scale(feasible)):
            out.append(f)
    return _distinct(out, _residual_scale(feasible), config.tol_distinct)


# -- link-level inverse -------------------------------------------------------------


def _link_feasible_basis(network: Network) -> np.ndarray:
    """Orthonormal basis of link-space directions reachable as images of
    feasible route directions."""
    route_basis = network.feasible_direction_basis()
    if route_basis.shape[1] == 0:
        return np.zeros((network.n_links, 0))
    image = network.incidence.T @ route_basis
    u, s, _ = np.linalg.svd(image, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * (s[0] if s.size else 1.0)))
    return u[:, :rank]


def _realisability_check(
    network: Network,
    a: np.ndarray,
    route_totals: np.ndarray,
    config: SolverConfig,
) -> None:
    """Verify some feasible route flow reproduces the observed link flow."""
    fiber = route_fiber(
        network,
        a,
        totals=route_totals,
        upper=None,
        config=config,
        _allow_any=True,
    )
    tol = 1e-6 * (1.0 + float(np.max(np.abs(a))))
    if fiber.residual > tol:
        raise NotRealisableError(
            f"no feasible route flow reproduces the observed link flow "
            f"(best residual {fiber.residual:.3g})"
        )


def inverse_link_flows(
    strategy: FleetStrategy,
    a,
    network: Network,
    sizes=None,
    config: SolverConfig = DEFAULT_CONFIG,
    seed: int | None = None,
) -> InverseResult:
    """Recover the fleet link flow from an observed total link flow.

    The link-space VI is solved through route variables (fleet link flows
    are exactly the images of feasible route flows, a convex set); the
    returned link flow is unique whenever the margin is positive and the
    link-time jacobian is positive definite on realisable directions, even
    if several route flows realize it.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (network.n_links,):
        raise DimensionMismatchError("observed flow must be a link vector")
    if np.any(a < 0):
        raise InfeasibleProblemError("observed link flows must be non-negative")
    units = network.units_or_raise()
    sizes = network.fleet_sizes() if sizes is None else np.asarray(sizes, dtype=float)
    route_totals = np.array([u.q_hdv + u.q_crv for u in units])
    _realisability_check(network, a, route_totals, config)

    blocks = network.unit_blocks()
    feasible = FeasibleSet(blocks=blocks, totals=sizes, n_routes=network.n_routes)

    tau = network.link_travel_times(a)
    jac = network.link_time_jacobian(a)
    margin = strategy.margin
    incidence = network.incidence
    a0 = incidence @ (strategy.lam_crv * tau + jac.T @ (strategy.lam_hdv * a))
    b = margin * incidence @ jac.T @ incidence.T

    scale = _residual_scale(feasible)
    tol_gap = config.tol_vi * (1.0 + float(np.linalg.norm(tau))) * scale

    if feasible.total_mass == 0.0:
        phi = np.zeros(network.n_links)
        cert = _link_certificate(margin, jac, network, config)
        return InverseResult(
            f_hat=phi,
            h_hat=a.copy(),
            residual=0.0,
            certificate=cert,
            solutions=(phi,),
            converged=True,
            level="link",
        )

    f_param, gap, converged = _solve_affine_vi(
        a0, b, feasible, _uniform_start(feasible), tol_gap, config
    )
    phi = network.route_to_link(f_param)
    cert = _link_certificate(margin, jac, network, config)

    solutions = [phi]
    if not cert.theorem_applies:
        extra = _multistart_vi(a0, b, feasible, tol_gap, config, config.seed if seed is None else seed)
        solutions = _distinct(
            [phi] + [network.route_to_link(f) for f in extra], scale, config.tol_distinct
        )

    return InverseResult(
        f_hat=phi,
        h_hat=a - phi,
        residual=gap / scale,
        certificate=cert,
        solutions=tuple(solutions),
        converged=converged,
        level="link",
    )


def _link_certificate(
    margin: float, jac: np.ndarray, network: Network, config: SolverConfig
) -> UniquenessCertificate:
    basis = _link_feasible_basis(network)
    if basis.shape[1] == 0:
        min_rayleigh = math.inf
        pd_ok = True
    else:
        sym = 0.5 * (jac + jac.T)
        min_rayleigh = 2.0 * float(np.linalg.eigvalsh(basis.T @ sym @ basis)[0])
        threshold = config.pd_rtol * abs(np.trace(sym)) / max(1, network.n_links)
        pd_ok = min_rayleigh > threshold
    if margin <= MARGIN_EPS:
        applies, reason = False, "margin lam_crv - lam_hdv is not positive"
    elif not pd_ok:
        applies, reason = False, (
            "link-time jacobian is not positive definite on realisable directions"
        )
    else:
        applies, reason = True, (
            "margin positive and link-time jacobian positive definite on realisable directions"
        )
    return UniquenessCertificate(
        theorem_applies=applies,
        reason=reason,
        min_rayleigh=min_rayleigh,
        margin=margin,
    )


# -- route fiber ----------------------------------------------------------------------


def _dykstra_min_norm(
    e: np.ndarray,
    rhs: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray | None,
    iterations: int = 4000,
) -> np.ndarray:
    """Projection of the origin onto {x : e x = rhs} intersect the box,
    by Dykstra's alternating projections."""
    pinv = np.linalg.pinv(e)

    def proj_affine(x):
        return x - pinv @ (e @ x - rhs)

    def proj_box(x):
        y = np.maximum(x, lower)
        if upper is not None:
            y = np.minimum(y, upper)
        return y

    x = proj_affine(np.zeros(e.shape[1]))
    p = np.zeros_like(x)
    qc = np.zeros_like(x)
    for _ in range(iterations):
        y = proj_box(x + p)
        p = x + p - y
        x_new = proj_affine(y + qc)
        qc = y + qc - x_new
        if float(np.max(np.abs(x_new - x))) < 1e-13 * (1.0 + float(np.max(np.abs(x_new)))):
            x = x_new
            break
        x = x_new
    return x


def route_fiber(
    network: Network,
    phi,
    totals=None,
    upper=None,
    config: SolverConfig = DEFAULT_CONFIG,
    _allow_any: bool = False,
) -> FiberResult:
    """All feasible route flows mapping to the link flow phi.

    Returns the minimum-norm representative, an orthonormal basis of the
    fiber directions (null directions of the conversion that also preserve
    per-unit sums), and the admissible coefficient interval along each
    basis direction.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (network.n_links,):
        raise DimensionMismatchError("phi must be a link vector")
    blocks = network.unit_blocks()
    if totals is None:
        totals = network.fleet_sizes()
    totals = np.asarray(totals, dtype=float)
    upper_arr = None if upper is None else np.asarray(upper, dtype=float)

    rows = [network.incidence.T]
    rhs = [phi]
    indicator = np.zeros((len(blocks), network.n_routes))
    for s, block in enumerate(blocks):
        indicator[s, block] = 1.0
    rows.append(indicator)
    rhs.append(totals)
    e = np.vstack(rows)
    target = np.concatenate(rhs)

    f_p, *_ = np.linalg.lstsq(e, target, rcond=None)
    tol = 1e-7 * (1.0 + float(np.linalg.norm(target)))

    _, s_vals, vt = np.linalg.svd(e)
    rank = int(np.sum(s_vals > config.rank_rtol * (s_vals[0] if s_vals.size else 1.0)))
    basis = vt[rank:].T  # (R, k) orthonormal

    lower = np.zeros(network.n_routes)
    k = basis.shape[1]
    if k == 0:
        rep = f_p
    elif k == 1:
        v = basis[:, 0]
        t_lo, t_hi = _step_interval(f_p, v, lower, upper_arr)
        if t_lo > t_hi:
            t_lo = t_hi = 0.5 * (t_lo + t_hi)
        t_star = float(np.clip(-(f_p @ v), t_lo, t_hi))
        rep = f_p + t_star * v
    else:
        rep = _dykstra_min_norm(e, target, lower, upper_arr)

    # clip into the box so the residual measures constrained realisability
    rep = np.maximum(rep, lower)
    if upper_arr is not None:
        rep = np.minimum(rep, upper_arr)
    rep = np.where(np.abs(rep) < 1e-11 * (1.0 + float(np.max(np.abs(rep)))), 0.0, rep)
    residual = float(np.linalg.norm(e @ rep - target))
    if residual > tol and not _allow_any:
        raise NotRealisableError(
            f"link flow is not realisable by any feasible route flow "
            f"(best residual {residual:.3g})"
        )

    intervals = tuple(
        _step_interval(rep, basis[:, j], lower, upper_arr) for j in range(k)
    )
    return FiberResult(
        representative=rep,
        basis=basis,
        intervals=intervals,
        residual=residual,
    )


def _step_interval(
    point: np.ndarray,
    direction: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray | None,
) -> tuple[float, float]:
    """Admissible coefficient range t with point + t*direction inside the box."""
    t_lo, t_hi = -math.inf, math.inf
    for r in range(len(point)):
        v = direction[r]
        if v > 1e-14:
            t_lo = max(t_lo, (lower[r] - point[r]) / v)
            if upper is not None and math.isfinite(upper[r]):
                t_hi = min(t_hi, (upper[r] - point[r]) / v)
        elif v < -1e-14:
            t_hi = min(t_hi, (lower[r] - point[r]) / v)
            if upper is not None and math.isfinite(upper[r]):
                t_lo = max(t_lo, (upper[r] - point[r]) / v)
    return (t_lo, t_hi)


# -- stability bound -------------------------------------------------------------------


def _hessian_norm_bound(network: Network, q: np.ndarray) -> float:
    """Upper bound on the spectral norm of the travel-time second-derivative
    tensor at q: sum over links of |tau''| * N^(3/2), N the number of routes
    through the link."""
    a = network.route_to_link(q)
    route_counts = np.sum(network.incidence, axis=0)
    total = 0.0
    for i, link in enumerate(network.links):
        if hasattr(link.delay, "second_derivative"):
            second = abs(link.delay.second_derivative(float(a[i])))
        else:
            second = 0.0  # cross-affine delays are linear in the flows
        total += second * route_counts[i] ** 1.5
    return total


def lipschitz_bound(
    strategy: FleetStrategy,
    network: Network,
    total_demand: float | None = None,
    samples: int = 200,
    seed: int = 0,
    config: SolverConfig = DEFAULT_CONFIG,
) -> LipschitzBound:
    """Stability constant of the inverse map on {|q| = total demand}.

    Samples the demand simplex with independent counter-based substreams,
    estimates the supremum norms of the travel-time gradient and of its
    Lipschitz modulus, the minimum feasible-direction eigenvalue rho, and
    assembles K / (L * rho) bounding |f* - f#| / |q* - q#|.
    """
    units = network.units_or_raise()
    blocks = network.unit_blocks()
    unit_totals = np.array([u.q_hdv + u.q_crv for u in units])
    if total_demand is not None:
        if len(units) != 1:
            raise ValueError("total_demand override needs a single-unit network")
        unit_totals = np.array([float(total_demand)])
    fleet_mass = float(np.sum(network.fleet_sizes()))
    demand_mass = float(np.sum(unit_totals))

    def sample_stats(i: int):
        # independent counter-based substream per sample
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        q = np.zeros(network.n_routes)
        for block, total in zip(blocks, unit_totals):
            q[block] = rng.dirichlet(np.ones(len(block))) * total
        grad = network.route_gradient(q)
        return (
            float(np.linalg.norm(grad, 2)),
            _hessian_norm_bound(network, q),
            network.restricted_min_eigenvalue(q),
        )

    stats = ordered_map(sample_stats, range(samples), config.max_threads)
    grad_norm = max((g for g, _, _ in stats), default=0.0)
    hess_norm = max((h for _, h, _ in stats), default=0.0)
    rho = min((r for _, _, r in stats), default=math.inf)

    margin = strategy.margin
    constant = (
        max(margin, 0.0) * fleet_mass + abs(strategy.lam_hdv) * demand_mass
    ) * hess_norm + (abs(strategy.lam_crv) + abs(strategy.lam_hdv)) * grad_norm
    defined = margin > 0 and rho > 0 and math.isfinite(rho)
    bound = constant / (margin * rho) if defined else math.inf
    return LipschitzBound(
        constant=constant,
        rho=rho,
        margin=margin,
        grad_norm=grad_norm,
        hess_norm=hess_norm,
        bound=bound,
        defined=defined,
        samples=samples,
    )


# -- discrete pipeline -------------------------------------------------------------------


def _integer_candidates(
    f_hat: np.ndarray, blocks, sizes: np.ndarray, radius: float
) -> tuple[np.ndarray, ...]:
    if not np.allclose(sizes, np.round(sizes)):
        return ()
    options = [(math.floor(v), math.ceil(v)) for v in f_hat]
    out = []
    for combo in itertools.product(*[sorted(set(o)) for o in options]):
        cand = np.asarray(combo, dtype=float)
        if np.any(cand < 0):
            continue
        ok = all(
            abs(float(np.sum(cand[block])) - sizes[s]) < 1e-9
            for s, block in enumerate(blocks)
        )
        # small cushion: f_hat itself carries solver noise
        if ok and float(np.linalg.norm(cand - f_hat)) <= radius * (1.0 + 1e-6) + 1e-6:
            out.append(cand)
    out.sort(key=lambda v: tuple(v))
    return tuple(out)


def discrete_recover(
    strategy: FleetStrategy,
    q,
    network: Network,
    sizes=None,
    config: SolverConfig = DEFAULT_CONFIG,
    seed: int | None = None,
) -> DiscreteRecovery:
    """Recover HDV flows from an integer observation.

    Finds the point of the forward operator's image closest to q (multistart
    projected search over HDV flows with fixed per-unit totals, the forward
    solver evaluated inside), then inverts that nearest image.  Reports the
    achieved distance and the theoretical closeness radius
    2 * Lip(inverse) * rounding radius.
    """
    q = np.asarray(q, dtype=float)
    if not np.allclose(q, np.round(q)):
        raise ValueError("observed flow must be integer-valued for discrete recovery")
    blocks = network.unit_blocks()
    sizes = network.fleet_sizes() if sizes is None else np.asarray(sizes, dtype=float)
    hdv_totals = np.array(
        [float(np.sum(q[block])) - sizes[s] for s, block in enumerate(blocks)]
    )
    if np.any(hdv_totals < -1e-9):
        raise InfeasibleProblemError("fleet sizes exceed the observed unit totals")
    hdv_totals = np.maximum(hdv_totals, 0.0)
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)

    h_set = FeasibleSet(blocks=blocks, totals=hdv_totals, n_routes=network.n_routes)
    forward_set = FeasibleSet(blocks=blocks, totals=sizes, n_routes=network.n_routes)

    def forward(h: np.ndarray) -> np.ndarray:
        return fleet_assign(
            strategy, h, network, feasible=forward_set, config=config, certify=False
        ).f

    norm_order = {"l2": 2, "l1": 1, "linf": np.inf}[config.image_distance_norm]

    def distance(h: np.ndarray) -> float:
        return float(np.linalg.norm(h + forward(h) - q, ord=norm_order))

    scale = max(1.0, float(np.sum(hdv_totals)))
    try:
        starts = h_set.vertices(min(64, config.vertex_cap))
    except Exception:
        starts = []
    starts += [h_set.random_point(rng) for _ in range(config.discrete_starts)]

    best_h, best_val = None, math.inf
    for h0 in starts:
        h = h_set.project(h0)
        val = distance(h)
        step = 1.0
        for _ in range(config.max_outer_iter):
            if val <= 1e-10 * scale:
                break
            # follow the image residual: it is per-unit zero-sum, so only the
            # non-negativity clip of the projection can bend it
            residual = q - (h + forward(h))
            improved = False
            trial = step
            while trial > 1e-12:
                h_new = h_set.project(h + trial * residual)
                val_new = distance(h_new)
                if val_new < val - 1e-14 * scale:
                    h, val, improved = h_new, val_new, True
                    step = min(2.0 * trial, 4.0)
                    break
                trial *= 0.5
            if not improved:
                break
        if val < best_val:
            best_h, best_val = h, val
        if best_val <= 1e-10 * scale:
            break

    h_star = best_h if best_h is not None else h_set.project(np.zeros(network.n_routes))
    q_city = h_star + forward(h_star)
    inverse = solve_inverse(strategy, q_city, network, sizes=sizes, config=config, seed=seed)

    lip = lipschitz_bound(
        strategy,
        network,
        samples=100,
        seed=seed,
        config=config,
    )
    lip_inverse = 1.0 + lip.bound if lip.defined else math.inf
    rounding_radius = math.sqrt(network.n_routes) / 2.0
    closeness = 2.0 * lip_inverse * rounding_radius

    candidates = _integer_candidates(inverse.f_hat, blocks, sizes, rounding_radius)
    return DiscreteRecovery(
        inverse=inverse,
        h_star=h_star,
        q_city=q_city,
        image_distance=best_val,
        lipschitz_inverse=lip_inverse,
        closeness_bound=closeness,
        integer_candidates=candidates,
    )
