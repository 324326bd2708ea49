"""Two-route Stackelberg analysis: induced equilibria, corner mixtures,
support verification, and the myopic/Nash comparison."""

import numpy as np
import pytest

from fleet_inverse import (
    FleetModelError,
    FleetStrategy,
    GeneralMixture,
    MixedCornerStrategy,
    compare_routings,
    expected_fleet_objective,
    expected_hdv_time,
    induced_ue,
    optimize_corner_mixture,
    verify_corner_support,
)
from conftest import asymmetric_two_route, symmetric_quadratic, three_affine_routes

MALICIOUS = FleetStrategy.preset("malicious")


class TestInducedUE:
    def test_symmetric_even_mixture(self):
        net = symmetric_quadratic()
        h = induced_ue(MixedCornerStrategy(0.5).as_mixture(), network=net)
        np.testing.assert_array_equal(h, [25.0, 25.0])

    def test_symmetric_pure_corner(self):
        net = symmetric_quadratic()
        h = induced_ue(MixedCornerStrategy(1.0).as_mixture(), network=net)
        np.testing.assert_array_equal(h, [0.0, 50.0])

    def test_no_fleet_even_split(self):
        net = symmetric_quadratic(q_crv=0.0)
        h = induced_ue(GeneralMixture(points=((0.5, 1.0),)), network=net)
        np.testing.assert_allclose(h, [25.0, 25.0], atol=1e-9)

    def test_equilibrium_residual(self):
        net = asymmetric_two_route()
        for p in np.linspace(0.0, 1.0, 11):
            mixture = MixedCornerStrategy(float(p)).as_mixture()
            h = induced_ue(mixture, network=net)
            if 0.0 < h[0] < 50.0:
                c1 = c2 = 0.0
                for alpha, w in mixture.points:
                    q = np.array([h[0] + alpha * 50.0, h[1] + (1 - alpha) * 50.0])
                    t = net.route_times(q)
                    c1 += w * t[0]
                    c2 += w * t[1]
                assert abs(c1 - c2) <= 1e-8

    def test_monotone_in_p(self):
        net = symmetric_quadratic()
        previous = np.inf
        for p in np.linspace(0.0, 1.0, 21):
            h = induced_ue(MixedCornerStrategy(float(p)).as_mixture(), network=net)
            assert h[0] <= previous + 1e-9
            previous = h[0]

    def test_route_swap_symmetry(self):
        net = symmetric_quadratic()
        for p in (0.2, 0.35, 0.8):
            h = induced_ue(MixedCornerStrategy(p).as_mixture(), network=net)
            h_swapped = induced_ue(MixedCornerStrategy(1.0 - p).as_mixture(), network=net)
            np.testing.assert_allclose(h, h_swapped[::-1], atol=1e-9)

    def test_requires_two_routes(self):
        net = three_affine_routes()
        with pytest.raises(FleetModelError):
            induced_ue(MixedCornerStrategy(0.5).as_mixture(), network=net)


class TestExpectedObjective:
    def test_degenerate_mixture_is_plain_objective(self):
        from fleet_inverse import eval_objective

        net = symmetric_quadratic()
        mixture = GeneralMixture(points=((1.0, 1.0),))
        h = np.array([10.0, 40.0])
        value = expected_fleet_objective(MALICIOUS, mixture, h, net)
        direct = eval_objective(MALICIOUS, h, np.array([50.0, 0.0]), net)
        assert value == pytest.approx(direct, rel=1e-12)

    def test_symmetric_pair_equal(self):
        net = symmetric_quadratic()
        for p in (0.1, 0.3):
            m = MixedCornerStrategy(p).as_mixture()
            m_swap = MixedCornerStrategy(1.0 - p).as_mixture()
            h = induced_ue(m, network=net)
            h_swap = induced_ue(m_swap, network=net)
            v = expected_fleet_objective(MALICIOUS, m, h, net)
            v_swap = expected_fleet_objective(MALICIOUS, m_swap, h_swap, net)
            assert v == pytest.approx(v_swap, rel=1e-10)

    def test_even_mixture_beats_pure_corner(self):
        # frozen values: expected HDV time 156300 at p = 0.5 versus 125050 at
        # p = 1 on the symmetric instance with delay 1 + x^2
        net = symmetric_quadratic()
        m_even = MixedCornerStrategy(0.5).as_mixture()
        m_pure = MixedCornerStrategy(1.0).as_mixture()
        t_even = expected_hdv_time(m_even, induced_ue(m_even, network=net), net)
        t_pure = expected_hdv_time(m_pure, induced_ue(m_pure, network=net), net)
        assert t_even == pytest.approx(156300.0, rel=1e-12)
        assert t_pure == pytest.approx(125050.0, rel=1e-12)
        assert t_even > t_pure


class TestOptimizeCornerMixture:
    def test_symmetric_optimum_at_half(self):
        net = symmetric_quadratic()
        result = optimize_corner_mixture(MALICIOUS, net)
        assert result.p_best == pytest.approx(0.5, abs=1e-5)
        assert result.objective_best == pytest.approx(-156300.0, rel=1e-9)
        assert all(abs(p - 0.5) < 1e-5 or abs((1.0 - p) - 0.5) < 1e-5 for p in result.optima)

    def test_optimum_set_symmetric(self):
        net = symmetric_quadratic()
        result = optimize_corner_mixture(MALICIOUS, net)
        for p in result.optima:
            mirrored = 1.0 - p
            assert any(abs(mirrored - other) < 1e-4 for other in result.optima)

    def test_no_fleet_degenerate(self):
        net = symmetric_quadratic(q_crv=0.0)
        result = optimize_corner_mixture(MALICIOUS, net)
        assert result.degenerate

    def test_asymmetric_matches_grid(self):
        net = asymmetric_two_route()
        result = optimize_corner_mixture(MALICIOUS, net)
        grid = np.arange(0.0, 1.0005, 0.001)
        values = []
        for p in grid:
            m = MixedCornerStrategy(float(p)).as_mixture()
            h = induced_ue(m, network=net)
            values.append(expected_fleet_objective(MALICIOUS, m, h, net))
        p_star = grid[int(np.argmin(values))]
        assert result.p_best == pytest.approx(p_star, abs=0.005)


class TestCornerSupport:
    def test_interior_pure_strategy_dominated(self):
        net = symmetric_quadratic()
        m_mid = GeneralMixture(points=((0.5, 1.0),))
        h_mid = induced_ue(m_mid, network=net)
        t_mid = expected_hdv_time(m_mid, h_mid, net)
        m_even = MixedCornerStrategy(0.5).as_mixture()
        t_even = expected_hdv_time(m_even, induced_ue(m_even, network=net), net)
        assert t_even > t_mid + 1000.0

    def test_grid_margins_nonnegative(self):
        net = symmetric_quadratic()
        report = verify_corner_support(net, resolution=0.05)
        assert report.worst_margin >= -1e-9
        assert report.mixtures_checked == 21**3

    def test_corner_self_comparison_margin_zero(self):
        net = symmetric_quadratic()
        report = verify_corner_support(net, resolution=0.25)
        assert report.worst_margin == pytest.approx(0.0, abs=1e-9)


class TestCompareRoutings:
    def test_nash_cycle_detected(self):
        net = symmetric_quadratic()
        result = compare_routings(net, days=60, mu=0.2, seed=0)
        assert not result.nash_exists
        assert len(result.nash_cycle) == 2

    def test_no_fleet_trivial(self):
        net = symmetric_quadratic(q_crv=0.0)
        result = compare_routings(net, days=30, mu=0.2, seed=0)
        assert result.trivial and result.nash_exists

    def test_myopic_average_at_least_stackelberg(self):
        net = symmetric_quadratic()
        result = compare_routings(net, days=200, mu=0.2, seed=0, burn_in=50)
        assert result.myopic_mean_hdv_time >= result.stackelberg_hdv_time
