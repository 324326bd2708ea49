"""Shared instance builders for the test suite."""

import pytest

from fleet_inverse import (
    AffineDelay,
    BPRDelay,
    CrossAffineDelay,
    Link,
    Network,
    ODUnit,
    QuadraticDelay,
    Route,
    single_od_network,
)


def asymmetric_two_route(q_hdv=50.0, q_crv=50.0) -> Network:
    """Two independent routes, t1 = 5*(1+(x/50)^2), t2 = 15*(1+(x/80)^2)."""
    return single_od_network(
        [BPRDelay(5.0, 1.0, 50.0, 2.0), BPRDelay(15.0, 1.0, 80.0, 2.0)],
        q_hdv=q_hdv,
        q_crv=q_crv,
    )


def symmetric_quadratic(q_hdv=50.0, q_crv=50.0) -> Network:
    """Two identical routes with delay 1 + x^2."""
    return single_od_network(
        [QuadraticDelay(1.0, 1.0), QuadraticDelay(1.0, 1.0)], q_hdv=q_hdv, q_crv=q_crv
    )


def overlap_network(q_hdv=300.0, q_crv=100.0, slope_kind="bpr") -> Network:
    """Four routes over two upstream and two downstream links (every pairing),
    the smallest topology with linearly dependent routes."""
    if slope_kind == "bpr":
        delay = lambda: BPRDelay(1.0, 1.0, 100.0, 2.0)
    else:
        delay = lambda: AffineDelay(1.0, 1.0)
    links = [Link(x, delay()) for x in "abcd"]
    routes = [
        Route("r1", ("a", "c")),
        Route("r2", ("a", "d")),
        Route("r3", ("b", "c")),
        Route("r4", ("b", "d")),
    ]
    unit = ODUnit("O", "D", q_hdv=q_hdv, q_crv=q_crv, route_ids=("r1", "r2", "r3", "r4"))
    return Network(links, routes, units=[unit])


def cross_dependent_two_route(delta1: float, delta2: float, q_hdv=50.0, q_crv=20.0) -> Network:
    """Common entry/exit links c, d plus two middle links whose delays depend
    on each other's flows."""
    links = [
        Link("c", AffineDelay(1.0, 1.0)),
        Link("a", CrossAffineDelay(1.0, 1.0, {"b": delta1})),
        Link("b", CrossAffineDelay(1.0, 1.0, {"a": delta2})),
        Link("d", AffineDelay(1.0, 1.0)),
    ]
    routes = [Route("r1", ("c", "a", "d")), Route("r2", ("c", "b", "d"))]
    unit = ODUnit("O", "D", q_hdv=q_hdv, q_crv=q_crv, route_ids=("r1", "r2"))
    return Network(links, routes, units=[unit])


def two_od_overlap(q_hdv=30.0, q_crv=20.0) -> Network:
    """Overlap topology split into two OD units sharing the downstream links."""
    links = [Link(x, BPRDelay(1.0, 1.0, 50.0, 2.0)) for x in "abcd"]
    routes = [
        Route("r1", ("a", "c")),
        Route("r2", ("a", "d")),
        Route("r3", ("b", "c")),
        Route("r4", ("b", "d")),
    ]
    units = [
        ODUnit("O", "D1", q_hdv=q_hdv, q_crv=q_crv, route_ids=("r1", "r2")),
        ODUnit("O", "D2", q_hdv=q_hdv, q_crv=q_crv, route_ids=("r3", "r4")),
    ]
    return Network(links, routes, units=units)


def three_affine_routes(q_hdv=70.0, q_crv=30.0, slopes=(1.0, 1.0, 1.0)) -> Network:
    return single_od_network(
        [AffineDelay(1.0, s) for s in slopes], q_hdv=q_hdv, q_crv=q_crv
    )


@pytest.fixture
def fig_two_route():
    return asymmetric_two_route()


@pytest.fixture
def net_overlap():
    return overlap_network()
