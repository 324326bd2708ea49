"""Fleet objective: evaluation, gradient, and convexity classification.

The fleet minimizes F(h, f) = (lam_hdv * h + lam_crv * f) . t(h + f) over
its feasible assignments f, where h is the HDV route flow and t the route
travel-time vector.  The sign pattern of (lam_hdv, lam_crv) decides whether
F(h, .) is convex, concave, or neither, which in turn selects the forward
solver and gates inverse uniqueness.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, UnsupportedDelayError
from .network import (
    AffineDelay,
    BPRDelay,
    Network,
    QuadraticDelay,
)

__all__ = [
    "FleetStrategy",
    "ConvexityKind",
    "ConvexityClass",
    "LinkCurvature",
    "eval_objective",
    "eval_objective_link_form",
    "objective_gradient_in_f",
    "classify_convexity",
    "local_convexity_at",
    "link_curvature_sign",
]


@dataclass(frozen=True)
class FleetStrategy:
    """Weights on HDV and fleet total travel times in the one-day objective.

    Presets cover the named behaviours; arbitrary finite pairs are accepted
    for experiments.  L = lam_crv - lam_hdv is the margin that decides
    invertibility of the assignment (invertible when L > 0).
    """

    lam_hdv: float
    lam_crv: float

    def __post_init__(self):
        if not (math.isfinite(self.lam_hdv) and math.isfinite(self.lam_crv)):
            raise ValueError("strategy weights must be finite")

    @property
    def margin(self) -> float:
        return self.lam_crv - self.lam_hdv

    @classmethod
    def preset(cls, name: str) -> "FleetStrategy":
        try:
            return PRESETS[name]
        except KeyError:
            raise ValueError(
                f"unknown strategy preset {name!r}; choose from {sorted(PRESETS)}"
            ) from None


PRESETS = {
    "selfish": FleetStrategy(0.0, 1.0),
    "altruistic": FleetStrategy(1.0, 0.0),
    "malicious": FleetStrategy(-1.0, 0.0),
    "social": FleetStrategy(1.0, 1.0),
    "disruptive": FleetStrategy(-1.0, 1.0),
}


class ConvexityKind(enum.Enum):
    CONVEX_EVERYWHERE = "ConvexEverywhere"
    CONCAVE_EVERYWHERE = "ConcaveEverywhere"
    INDEFINITE = "Indefinite"


@dataclass(frozen=True)
class LinkCurvature:
    """Per-link curvature data for local convexity tests.

    For a power-family link with exponent gamma the second derivative of the
    link objective in the fleet flow phi has the sign of

        (2*lam_crv + (gamma - 1)*lam_hdv) * eta + lam_crv * (1 + gamma) * phi

    (eta the HDV link flow).  threshold is the coefficient c such that the
    sign is positive exactly when phi > c * eta; it is None when lam_crv <= 0
    and the threshold form is unavailable.
    """

    link_id: str
    gamma: float
    eta_coefficient: float
    phi_coefficient: float
    threshold: float | None


@dataclass(frozen=True)
class ConvexityClass:
    kind: ConvexityKind
    per_link: tuple[LinkCurvature, ...]

    @property
    def label(self) -> str:
        return self.kind.value


def _check_pair(h: np.ndarray, f: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    h = np.asarray(h, dtype=float)
    f = np.asarray(f, dtype=float)
    if h.shape != (n,) or f.shape != (n,):
        raise DimensionMismatchError(
            f"expected two route vectors of length {n}, got {h.shape} and {f.shape}"
        )
    return h, f


def eval_objective(strategy: FleetStrategy, h, f, network: Network) -> float:
    """Fleet objective in route form, (lam_hdv*h + lam_crv*f) . t(h + f)."""
    h, f = _check_pair(h, f, network.n_routes)
    t = network.route_times(h + f)
    return float((strategy.lam_hdv * h + strategy.lam_crv * f) @ t)


def eval_objective_link_form(strategy: FleetStrategy, h, f, network: Network) -> float:
    """Link-form evaluation; agrees with the route form on link-additive
    networks because the weights aggregate along the incidence matrix."""
    h, f = _check_pair(h, f, network.n_routes)
    eta = network.route_to_link(h)
    phi = network.route_to_link(f)
    tau = network.link_travel_times(eta + phi)
    return float((strategy.lam_hdv * eta + strategy.lam_crv * phi) @ tau)


def objective_gradient_in_f(strategy: FleetStrategy, h, f, network: Network) -> np.ndarray:
    """Gradient of F(h, .) at f: lam_crv*t(q) + grad_t(q)^T (lam_hdv*h + lam_crv*f)
    with q = h + f.  Contracting with a direction g gives the directional
    derivative of the objective."""
    h, f = _check_pair(h, f, network.n_routes)
    q = h + f
    t = network.route_times(q)
    grad = network.route_gradient(q)
    return strategy.lam_crv * t + grad.T @ (strategy.lam_hdv * h + strategy.lam_crv * f)


def _link_gamma(delay) -> float:
    """Power-family exponent of a link delay (1 affine, 2 quadratic)."""
    if isinstance(delay, BPRDelay):
        return float(delay.power)
    if isinstance(delay, AffineDelay):
        return 1.0
    if isinstance(delay, QuadraticDelay):
        return 2.0
    raise UnsupportedDelayError(
        f"convexity classification supports BPR/affine/quadratic links only, "
        f"got {type(delay).__name__}"
    )


def _curvature_data(strategy: FleetStrategy, network: Network) -> tuple[LinkCurvature, ...]:
    rows = []
    for link in network.links:
        gamma = _link_gamma(link.delay)
        if gamma < 1.0:
            raise UnsupportedDelayError(
                f"link {link.id!r} has exponent {gamma} < 1; the curvature "
                "formulas assume convex increasing delays"
            )
        eta_c = 2.0 * strategy.lam_crv + (gamma - 1.0) * strategy.lam_hdv
        phi_c = strategy.lam_crv * (1.0 + gamma)
        threshold = -eta_c / phi_c if strategy.lam_crv > 0 else None
        rows.append(
            LinkCurvature(
                link_id=link.id,
                gamma=gamma,
                eta_coefficient=eta_c,
                phi_coefficient=phi_c,
                threshold=threshold,
            )
        )
    return tuple(rows)


def classify_convexity(strategy: FleetStrategy, network: Network) -> ConvexityClass:
    """Classify F(h, .) over the whole non-negative orthant.

    Requires a link-additive network with independent power-family delays.
    Mixed-sign strategies are convex everywhere only when every link's
    exponent satisfies lam_crv > (1 - gamma)/2 * lam_hdv; the mirrored
    condition gives concavity.  Heterogeneous links take the most
    conservative outcome (every link must pass).
    """
    if not network.link_additive:
        raise UnsupportedDelayError(
            "convexity classification requires independent link delays"
        )
    per_link = _curvature_data(strategy, network)
    lh, lc = strategy.lam_hdv, strategy.lam_crv

    if lh >= 0 and lc >= 0 and lh + lc > 0:
        kind = ConvexityKind.CONVEX_EVERYWHERE
    elif lh <= 0 and lc <= 0 and lh + lc < 0:
        kind = ConvexityKind.CONCAVE_EVERYWHERE
    elif lh < 0 < lc and all(lc > (1.0 - row.gamma) / 2.0 * lh for row in per_link):
        kind = ConvexityKind.CONVEX_EVERYWHERE
    elif lc < 0 < lh and all(lc < (1.0 - row.gamma) / 2.0 * lh for row in per_link):
        kind = ConvexityKind.CONCAVE_EVERYWHERE
    else:
        kind = ConvexityKind.INDEFINITE
    return ConvexityClass(kind=kind, per_link=per_link)


def link_curvature_sign(row: LinkCurvature, eta: float, phi: float) -> int:
    """Sign of the per-link second derivative of the link objective in phi."""
    value = row.eta_coefficient * eta + row.phi_coefficient * phi
    if value > 0:
        return 1
    if value < 0:
        return -1
    return 0


@dataclass(frozen=True)
class LocalConvexity:
    link_id: str
    convex: bool
    strict: bool
    sign: int
    threshold: float


def local_convexity_at(strategy: FleetStrategy, eta, phi, network: Network) -> tuple[LocalConvexity, ...]:
    """Per-link local convexity flags at HDV link flows eta and fleet link
    flows phi.

    A link is flagged convex when its exact second-derivative sign is
    positive, equivalently phi > threshold * eta; boundary points with zero
    curvature are flagged non-strict.  Requires lam_crv > 0 (the threshold
    form divides by it) and exponents above 1.
    """
    if strategy.lam_crv <= 0:
        raise UnsupportedDelayError("local convexity thresholds require lam_crv > 0")
    eta = np.asarray(eta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if eta.shape != (network.n_links,) or phi.shape != (network.n_links,):
        raise DimensionMismatchError(
            f"expected two link vectors of length {network.n_links}"
        )
    per_link = _curvature_data(strategy, network)
    out = []
    for i, row in enumerate(per_link):
        if row.gamma <= 1.0:
            raise UnsupportedDelayError(
                f"link {row.link_id!r}: local convexity test needs exponent > 1"
            )
        sign = link_curvature_sign(row, float(eta[i]), float(phi[i]))
        out.append(
            LocalConvexity(
                link_id=row.link_id,
                convex=sign > 0,
                strict=sign != 0,
                sign=sign,
                threshold=row.threshold,
            )
        )
    return tuple(out)
