import math

import numpy as np
import pytest

from conftest import make_twobus, random_state
from gridenergy import energy as en
from gridenergy.energy import PFState
from gridenergy.errors import NoReactiveSolution, UnsupportedSign
from gridenergy.linalg import fd_gradient
from gridenergy.network import scale_injections
from gridenergy.reduced import (BetaCondition, beta_condition,
                                convex_reactive_solve, normalized,
                                reduced_energy, region_agreement, region_grid,
                                solve_reactive_newton, voltage_upper_bound)
from gridenergy.solver import solve_newton


def twobus_reactive_root(theta, q_cons, b=1.0):
    """High root of b(V^2 - V cos(theta)) + q_cons = 0."""
    disc = math.cos(theta) ** 2 - 4.0 * q_cons / b
    return 0.5 * (math.cos(theta) + math.sqrt(disc))


class TestReactiveNewton:
    def test_zero_q_flat(self):
        n = make_twobus(p=0.0, q=0.0)
        rho = solve_reactive_newton(n, np.zeros(2))
        assert np.max(np.abs(rho)) < 1e-12

    def test_two_bus_closed_form(self):
        n = make_twobus()
        rng = np.random.default_rng(61)
        for _ in range(20):
            theta = np.zeros(2)
            # keep cos^2(theta) > 4q so the quadratic has real roots
            theta[1] = rng.uniform(-0.75, 0.75)
            rho = solve_reactive_newton(n, theta)
            v = twobus_reactive_root(theta[1], 0.1)
            assert math.exp(rho[0]) == pytest.approx(v, abs=1e-10)

    def test_three_bus_matches_zeta_program(self, threebus):
        theta = np.zeros(3)
        rho = solve_reactive_newton(threebus, theta)
        st = convex_reactive_solve(threebus, theta)
        assert np.max(np.abs(st.voltages() - np.exp(rho))) < 1e-6

    def test_unsolvable_raises(self):
        n = make_twobus(q=-0.3)  # past the q = cos^2/4 reactive limit
        with pytest.raises(NoReactiveSolution):
            solve_reactive_newton(n, np.zeros(2))


class TestReducedEnergy:
    def test_zero_injections(self):
        n = make_twobus(p=0.0, q=0.0)
        assert reduced_energy(n, np.zeros(2)) == pytest.approx(0.0, abs=1e-14)

    def test_minimum_at_solution(self, threebus):
        sol = solve_newton(threebus).state
        e_sol = reduced_energy(threebus, sol.theta)
        rng = np.random.default_rng(62)
        for _ in range(25):
            th = sol.theta.copy()
            th[threebus.ns] += rng.uniform(-0.3, 0.3, 2)
            try:
                assert reduced_energy(threebus, th) >= e_sol - 1e-12
            except NoReactiveSolution:
                pass

    def test_envelope_gradient_vanishes_at_solution(self, threebus):
        sol = solve_newton(threebus).state

        def e_tilde(v):
            th = np.zeros(3)
            th[threebus.ns] = v
            return reduced_energy(threebus, th)

        g = fd_gradient(e_tilde, sol.theta[threebus.ns])
        assert np.max(np.abs(g)) < 1e-6

    def test_envelope_matches_full_gradient(self, threebus):
        # d/dtheta of the reduced energy equals the full theta-gradient at
        # the reactive solution (the rho-gradient vanishes there)
        theta = np.array([0.0, 0.12, -0.08])
        rho = solve_reactive_newton(threebus, theta)
        s = PFState(np.zeros(3), theta.copy())
        s.rho[threebus.pq] = rho

        def e_tilde(v):
            th = np.zeros(3)
            th[threebus.ns] = v
            return reduced_energy(threebus, th)

        g_red = fd_gradient(e_tilde, theta[threebus.ns])
        g_full = en.energy_gradient(threebus, s).grad_theta
        assert np.max(np.abs(g_red - g_full)) < 1e-5


class TestConvexReactive:
    def test_zero_q_gives_flat(self):
        n = make_twobus(p=0.0, q=0.0)
        st = convex_reactive_solve(n, np.zeros(2))
        assert st.zeta[0] == pytest.approx(1.0, abs=1e-9)

    def test_two_bus_high_root(self):
        n = make_twobus()
        theta = np.zeros(2)
        theta[1] = 0.2
        st = convex_reactive_solve(n, theta)
        v = twobus_reactive_root(0.2, 0.1)
        assert st.voltages()[0] == pytest.approx(v, abs=1e-9)

    def test_constraints_tight(self, threebus):
        from gridenergy.reduced import _ZetaProgram
        theta = np.array([0.0, 0.1, -0.05])
        st = convex_reactive_solve(threebus, theta)
        f, t = threebus.edges[:, 0], threebus.edges[:, 1]
        prog = _ZetaProgram(threebus, np.cos(theta[f] - theta[t]),
                            -threebus.q_inj[threebus.pq])
        assert np.max(np.abs(prog.constraints(st.zeta))) <= 1e-8

    def test_pareto_nondominated(self, threebus):
        theta = np.zeros(3)
        sols = [convex_reactive_solve(threebus, theta, c).zeta
                for c in ([1.0, 1.0], [10.0, 0.1], [0.1, 10.0])]
        for a in sols:
            for b in sols:
                if np.array_equal(a, b):
                    continue
                assert not (np.all(b >= a - 1e-10) and np.any(b > a + 1e-8))

    def test_dominated_by_upper_bound(self, threebus):
        v_bar = voltage_upper_bound(threebus).v_bar
        rng = np.random.default_rng(63)
        for _ in range(10):
            theta = np.zeros(3)
            theta[threebus.ns] = rng.uniform(-0.3, 0.3, 2)
            st = convex_reactive_solve(threebus, theta)
            assert np.all(st.voltages() <= v_bar + 1e-8)

    def test_reactive_injection_rejected(self):
        n = make_twobus(q=0.05)  # PQ bus injecting reactive power
        with pytest.raises(UnsupportedSign):
            convex_reactive_solve(n, np.zeros(2))

    def test_infeasible_raises(self):
        n = make_twobus(q=-0.4)
        with pytest.raises(NoReactiveSolution):
            convex_reactive_solve(n, np.zeros(2))


class TestVoltageUpperBound:
    def test_two_bus_closed_form(self):
        n = make_twobus(q=-0.1875)
        vb = voltage_upper_bound(n).v_bar
        assert vb[0] == pytest.approx(0.75, abs=1e-9)

    def test_small_q_limit(self):
        for q in (1e-3, 1e-5):
            n = make_twobus(q=-q)
            vb = voltage_upper_bound(n).v_bar
            assert vb[0] == pytest.approx(0.5 * (1 + math.sqrt(1 - 4 * q)),
                                          abs=1e-9)
            assert vb[0] > 0.99

    def test_three_bus_against_grid_oracle(self, threebus):
        vb = voltage_upper_bound(threebus).v_bar
        b12 = b13 = 26.88
        b23 = 16.67
        q2, q3 = 1.05, 1.24

        def scan(lo2, hi2, lo3, hi3, points):
            v2, v3 = np.meshgrid(np.linspace(lo2, hi2, points),
                                 np.linspace(lo3, hi3, points),
                                 indexing="ij")
            g2 = (b12 + b23) * v2 ** 2 - b12 * v2 - b23 * v2 * v3 + q2
            g3 = (b13 + b23) * v3 ** 2 - b13 * v3 - b23 * v2 * v3 + q3
            feas = (g2 <= 0) & (g3 <= 0)
            assert feas.any()
            return v2[feas], v3[feas]

        # coarse global pass, then refine around each coordinate maximum
        v2f, v3f = scan(0.05, 1.2, 0.05, 1.2, 1200)
        for idx, (vals, other) in enumerate(((v2f, v3f), (v3f, v2f))):
            k = int(np.argmax(vals))
            c, o = vals[k], other[k]
            w = 0.01
            if idx == 0:
                f2, f3 = scan(c - w, c + w, o - w, o + w, 900)
                best = f2.max()
            else:
                f2, f3 = scan(o - w, o + w, c - w, c + w, 900)
                best = f3.max()
            assert vb[idx] == pytest.approx(best, abs=1e-4)


class TestBetaCondition:
    def test_near_boundary_budget(self):
        # consumption tuned so v_bar^2 is close to the normalized demand:
        # the budget formula approaches its 90-degree end
        n = make_twobus(q=-0.2499)
        bc = beta_condition(n)
        assert bc.beta_min == pytest.approx(0.02, abs=2e-3)
        assert bc.angle_budget_deg > 80.0

    def test_ratio_two_closed_form(self):
        # q = 2/9 makes v_bar^2 / q_tilde exactly 2
        n = make_twobus(q=-2.0 / 9.0)
        bc = beta_condition(n)
        assert bc.beta_min == pytest.approx(1.0 / 3.0, abs=1e-9)
        assert bc.angle_budget_deg == pytest.approx(
            math.degrees(math.acos(math.sqrt(1.0 / 3.0))), abs=1e-6)

    def test_three_bus_budget_band(self, threebus):
        bc = beta_condition(threebus)
        assert 10.0 <= bc.angle_budget_deg <= 20.0

    def test_normalized_rows(self, threebus):
        norm = normalized(threebus)
        sums = norm.m_matrix.sum(axis=1)
        assert np.allclose(sums, 1.0)
        assert np.all(norm.q_tilde > 0)


class TestRegionGrid:
    def test_origin_cell(self, threebus):
        cells = region_grid(threebus, theta_min=-0.05, theta_max=0.05,
                            step_deg=2.0)
        center = min(cells, key=lambda c: abs(c.theta_a) + abs(c.theta_b))
        assert center.solvable and center.in_c
        assert center.reduced_min_eig > 0

    def test_coarse_agreement(self, threebus):
        cells = region_grid(threebus, step_deg=6.0)
        agree, comparable = region_agreement(cells)
        assert comparable > 50
        assert agree / comparable >= 0.97

    def test_tree_region_larger_than_mesh(self, threebus, threebus_tree):
        mesh = region_grid(threebus, step_deg=6.0)
        tree = region_grid(threebus_tree, step_deg=6.0)
        in_c_mesh = sum(1 for c in mesh if c.in_c)
        in_c_tree = sum(1 for c in tree if c.in_c)
        assert in_c_tree > in_c_mesh

    def test_overload_has_no_convex_cells(self, threebus):
        n6 = scale_injections(threebus, 6.0, 1.0)
        cells = region_grid(n6, theta_min=-0.3, theta_max=0.3, step_deg=6.0)
        assert sum(1 for c in cells if c.in_c) == 0

    def test_wrong_dimension_rejected(self, ieee14_model):
        with pytest.raises(ValueError):
            region_grid(ieee14_model)
