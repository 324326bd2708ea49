"""Forward assignment: projection, the three solvers, dispatch, certificates."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleet_inverse import (
    AffineDelay,
    BPRDelay,
    FeasibleSet,
    FleetModelError,
    FleetStrategy,
    QuadraticDelay,
    certify_local_min,
    eval_objective,
    fleet_assign,
    project_to_feasible,
    single_od_network,
    solve_concave,
    solve_convex,
    solve_general,
)
from conftest import asymmetric_two_route, symmetric_quadratic, three_affine_routes, two_od_overlap

SELFISH = FleetStrategy.preset("selfish")
ALTRUISTIC = FleetStrategy.preset("altruistic")
MALICIOUS = FleetStrategy.preset("malicious")
SOCIAL = FleetStrategy.preset("social")
DISRUPTIVE = FleetStrategy.preset("disruptive")


def simple_set(total, n=2, upper=None):
    return FeasibleSet(
        blocks=(np.arange(n),),
        totals=np.array([float(total)]),
        n_routes=n,
        upper=None if upper is None else np.asarray(upper, dtype=float),
    )


def grid_project_oracle(v, total, step=0.01, upper=None):
    """Brute-force nearest feasible point on a 2d grid."""
    best, best_d = None, math.inf
    for x in np.arange(0.0, total + step / 2, step):
        y = total - x
        if upper is not None and (x > upper[0] or y > upper[1]):
            continue
        d = (x - v[0]) ** 2 + (y - v[1]) ** 2
        if d < best_d:
            best, best_d = np.array([x, y]), d
    return best


class TestProjection:
    def test_already_feasible(self):
        fset = simple_set(20.0)
        np.testing.assert_allclose(project_to_feasible([10.0, 10.0], fset), [10.0, 10.0])

    def test_clipped_corner(self):
        # plain simplex shift gives (25, -5); the feasible answer is the corner
        fset = simple_set(20.0)
        result = project_to_feasible([30.0, 0.0], fset)
        np.testing.assert_allclose(result, [20.0, 0.0], atol=1e-12)
        oracle = grid_project_oracle([30.0, 0.0], 20.0)
        np.testing.assert_allclose(result, oracle, atol=0.01)

    def test_symmetric_negative(self):
        fset = simple_set(10.0)
        np.testing.assert_allclose(project_to_feasible([-5.0, -5.0], fset), [5.0, 5.0])

    def test_capped_projection_against_grid(self):
        fset = simple_set(20.0, upper=[12.0, 15.0])
        rng = np.random.default_rng(2)
        for _ in range(20):
            v = rng.uniform(-10, 30, 2)
            result = project_to_feasible(v, fset)
            oracle = grid_project_oracle(v, 20.0, upper=[12.0, 15.0])
            np.testing.assert_allclose(result, oracle, atol=0.02)
            assert abs(result.sum() - 20.0) < 1e-9
            assert np.all(result <= np.array([12.0, 15.0]) + 1e-9)

    @given(v=st.lists(st.floats(-50, 50), min_size=3, max_size=3))
    @settings(max_examples=100, deadline=None)
    def test_idempotent(self, v):
        fset = FeasibleSet(blocks=(np.arange(3),), totals=np.array([30.0]), n_routes=3)
        once = project_to_feasible(np.asarray(v), fset)
        twice = project_to_feasible(once, fset)
        np.testing.assert_allclose(twice, once, atol=1e-9)
        assert abs(once.sum() - 30.0) < 1e-9 and np.all(once >= -1e-12)


class TestSolveConvex:
    def test_symmetric_split(self):
        net = single_od_network([AffineDelay(1, 1)] * 2, q_hdv=0.0, q_crv=10.0)
        result = solve_convex(SELFISH, np.zeros(2), net, FeasibleSet.from_network(net))
        np.testing.assert_allclose(result.f, [5.0, 5.0], atol=1e-7)
        assert result.certificate.is_local_min

    def test_matches_grid_oracle(self, fig_two_route):
        h = np.array([10.0, 40.0])
        fset = FeasibleSet.from_network(fig_two_route)
        result = solve_convex(SELFISH, h, fig_two_route, fset)
        grid = np.arange(0.0, 50.0005, 0.001)
        values = [
            eval_objective(SELFISH, h, np.array([f1, 50.0 - f1]), fig_two_route)
            for f1 in grid
        ]
        f1_star = grid[int(np.argmin(values))]
        assert result.f[0] == pytest.approx(f1_star, abs=0.01)

    def test_social_completes_system_optimum(self, fig_two_route):
        # with no HDVs the fleet problem is the total-time optimum; any HDV
        # split below it is topped up exactly to that optimum
        fset_all = FeasibleSet.from_network(fig_two_route, totals=[100.0])
        q_so = solve_convex(SOCIAL, np.zeros(2), fig_two_route, fset_all).f
        h = np.array([0.6, 0.4]) * 40.0
        assert np.all(h <= q_so)
        fset = FeasibleSet.from_network(fig_two_route, totals=[100.0 - h.sum()])
        result = solve_convex(SOCIAL, h, fig_two_route, fset)
        np.testing.assert_allclose(result.f, q_so - h, atol=1e-5)


class TestSolveConcave:
    def test_tie_set_on_symmetric_instance(self):
        net = symmetric_quadratic()
        fset = FeasibleSet.from_network(net)
        result = solve_concave(MALICIOUS, np.array([25.0, 25.0]), net, fset)
        assert len(result.minimizer_set) == 2
        np.testing.assert_allclose(result.minimizer_set[0], [50.0, 0.0])
        np.testing.assert_allclose(result.minimizer_set[1], [0.0, 50.0])

    def test_perturbation_breaks_tie(self):
        net = symmetric_quadratic()
        fset = FeasibleSet.from_network(net)
        result = solve_concave(MALICIOUS, np.array([25.1, 24.9]), net, fset)
        assert len(result.minimizer_set) == 1
        np.testing.assert_allclose(result.f, [50.0, 0.0])
        result = solve_concave(MALICIOUS, np.array([24.9, 25.1]), net, fset)
        np.testing.assert_allclose(result.f, [0.0, 50.0])

    def test_three_route_best_corner(self):
        # corner values frozen from direct evaluation with delay 1 + x^2:
        # route 1: -112070, route 2: -91070, route 3: -127070
        net = single_od_network([QuadraticDelay(1, 1)] * 3, q_hdv=70.0, q_crv=10.0)
        h = np.array([30.0, 0.0, 40.0])
        fset = FeasibleSet.from_network(net)
        result = solve_concave(MALICIOUS, h, net, fset)
        np.testing.assert_allclose(result.f, [0.0, 0.0, 10.0])
        assert result.objective == pytest.approx(-127070.0)

    def test_vertex_cap(self):
        net = single_od_network([AffineDelay(1, 1)] * 3, q_hdv=10.0, q_crv=6.0)
        fset = FeasibleSet.from_network(net)
        from fleet_inverse import DEFAULT_CONFIG

        with pytest.raises(FleetModelError):
            solve_concave(MALICIOUS, np.ones(3), net, fset, DEFAULT_CONFIG.replace(vertex_cap=2))


class TestSolveGeneral:
    def test_disruptive_matches_grid(self, fig_two_route):
        h = np.array([10.0, 40.0])
        fset = FeasibleSet.from_network(fig_two_route)
        result = solve_general(DISRUPTIVE, h, fig_two_route, fset, seed=0)
        grid = np.arange(0.0, 50.0005, 0.001)
        values = [
            eval_objective(DISRUPTIVE, h, np.array([f1, 50.0 - f1]), fig_two_route)
            for f1 in grid
        ]
        f1_star = grid[int(np.argmin(values))]
        assert result.f[0] == pytest.approx(f1_star, abs=0.01)

    def test_agrees_with_convex_path(self, fig_two_route):
        h = np.array([10.0, 40.0])
        fset = FeasibleSet.from_network(fig_two_route)
        convex = solve_convex(SELFISH, h, fig_two_route, fset)
        general = solve_general(SELFISH, h, fig_two_route, fset, seed=1)
        np.testing.assert_allclose(general.f, convex.f, atol=1e-5)

    def test_empty_fleet(self):
        net = asymmetric_two_route(q_crv=0.0)
        result = fleet_assign(SELFISH, np.array([10.0, 40.0]), net)
        np.testing.assert_array_equal(result.f, np.zeros(2))
        assert result.objective == pytest.approx(
            eval_objective(SELFISH, [10.0, 40.0], [0.0, 0.0], net)
        )


class TestFleetAssign:
    def test_altruistic_example(self):
        net = three_affine_routes()
        result = fleet_assign(ALTRUISTIC, np.array([30.0, 0.0, 40.0]), net)
        np.testing.assert_allclose(result.f, [0.0, 30.0, 0.0], atol=1e-9)
        assert result.certificate.is_local_min

    def test_malicious_targets_busier_route(self):
        net = symmetric_quadratic(q_hdv=50.0, q_crv=5.0)
        result = fleet_assign(MALICIOUS, np.array([0.0, 50.0]), net)
        np.testing.assert_allclose(result.f, [0.0, 5.0])

    def test_no_hdv_gives_system_optimum(self, fig_two_route):
        # pure-fleet problem: minimize f . t(f) regardless of lam_hdv weight
        for strategy in (SELFISH, SOCIAL, DISRUPTIVE):
            result = fleet_assign(strategy, np.zeros(2), fig_two_route)
            fset = FeasibleSet.from_network(fig_two_route)
            so = solve_convex(SOCIAL, np.zeros(2), fig_two_route, fset)
            np.testing.assert_allclose(result.f, so.f, atol=1e-4)

    def test_multi_unit_dispatch(self):
        net = two_od_overlap()
        h = np.array([20.0, 10.0, 15.0, 15.0])
        result = fleet_assign(SELFISH, h, net)
        blocks = net.unit_blocks()
        for block, unit in zip(blocks, net.units):
            assert float(result.f[block].sum()) == pytest.approx(unit.q_crv, abs=1e-9)


class TestCertify:
    def test_interior_stationary_point(self):
        net = single_od_network([AffineDelay(1, 1)] * 2, q_hdv=0.0, q_crv=10.0)
        fset = FeasibleSet.from_network(net)
        cert = certify_local_min(SELFISH, np.zeros(2), np.array([5.0, 5.0]), net, fset)
        assert cert.is_local_min
        assert cert.min_directional_derivative == pytest.approx(0.0, abs=1e-8)

    def test_corner_minimum_passes(self):
        net = symmetric_quadratic()
        fset = FeasibleSet.from_network(net)
        cert = certify_local_min(MALICIOUS, np.array([25.0, 25.0]), np.array([50.0, 0.0]), net, fset)
        assert cert.is_local_min

    def test_interior_maximum_fails(self):
        # first-order flat but strictly concave along the pair swap
        net = symmetric_quadratic()
        fset = FeasibleSet.from_network(net)
        cert = certify_local_min(MALICIOUS, np.array([25.0, 25.0]), np.array([25.0, 25.0]), net, fset)
        assert not cert.is_local_min


class TestInvariants:
    def test_output_always_feasible(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            n = int(rng.integers(2, 5))
            net = single_od_network(
                [BPRDelay(rng.uniform(1, 5), 1.0, rng.uniform(20, 60), float(rng.choice([2.0, 4.0]))) for _ in range(n)],
                q_hdv=40.0,
                q_crv=float(rng.uniform(0, 30)),
            )
            strategy = FleetStrategy(rng.uniform(-1, 1), rng.uniform(-1, 1))
            h = rng.uniform(0, 20, n)
            result = fleet_assign(strategy, h, net, seed=int(rng.integers(1000)))
            assert np.all(result.f >= -1e-12)
            assert result.f.sum() == pytest.approx(net.units[0].q_crv, abs=1e-9)

    def test_convex_unique_from_many_starts(self, fig_two_route):
        from fleet_inverse.forward import _projected_gradient
        from fleet_inverse import DEFAULT_CONFIG

        h = np.array([10.0, 40.0])
        fset = FeasibleSet.from_network(fig_two_route)
        rng = np.random.default_rng(9)
        solutions = []
        for _ in range(10):
            f0 = fset.random_point(rng)
            f, _, _ = _projected_gradient(SELFISH, h, fig_two_route, fset, f0, DEFAULT_CONFIG)
            solutions.append(f)
        for f in solutions[1:]:
            np.testing.assert_allclose(f, solutions[0], atol=1e-6)

    def test_convex_minimizer_moves_continuously(self, fig_two_route):
        h = np.array([10.0, 40.0])
        base = fleet_assign(SELFISH, h, fig_two_route).f
        delta = np.array([1e-3, -1e-3])
        moved = fleet_assign(SELFISH, h + delta, fig_two_route).f
        assert np.linalg.norm(moved - base) <= 10.0 * np.linalg.norm(delta)

    def test_concave_minimizers_are_vertices(self):
        net = symmetric_quadratic()
        fset = FeasibleSet.from_network(net)
        rng = np.random.default_rng(13)
        for _ in range(10):
            h = rng.uniform(0, 50, 2)
            result = solve_concave(MALICIOUS, h, net, fset)
            for f in result.minimizer_set:
                assert np.isclose(f, 0.0).sum() >= 1  # all mass on one route

    def test_link_assignment_single_valued_composition(self, fig_two_route):
        # when the route assignment is unique its link image is as well
        h = np.array([10.0, 40.0])
        r1 = fleet_assign(SELFISH, h, fig_two_route, seed=0)
        r2 = fleet_assign(SELFISH, h, fig_two_route, seed=99)
        assert len(r1.minimizer_set) == 1
        np.testing.assert_allclose(
            fig_two_route.route_to_link(r1.f), fig_two_route.route_to_link(r2.f), atol=1e-6
        )
