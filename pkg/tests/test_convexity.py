import math

import numpy as np
import pytest

from conftest import make_twobus, random_network, random_state
from gridenergy import energy as en
from gridenergy.convexity import (PhaseVoltageBox, convexity_matrix,
                                  in_domain_C, in_domain_D_sampled,
                                  lossy_in_domain, matrix_convexity_gap,
                                  max_phase_bound, strictly_interior)
from gridenergy.energy import PFState
from gridenergy.errors import DomainError, PhaseOutOfRange, UnsupportedTopology
from gridenergy.linalg import DEFAULT_PSD_TOL, sym_eigen
from gridenergy.network import Bus, BusKind, Line, Network


class TestConvexityMatrix:
    def test_flat_equals_weighted_laplacian(self, threebus):
        cm = convexity_matrix(threebus, PFState.flat(threebus)).entries
        expect = np.array([[43.55, -16.67], [-16.67, 43.55]])
        assert np.allclose(cm, expect, atol=1e-12)
        w, _ = sym_eigen(convexity_matrix(threebus, PFState.flat(threebus)))
        assert w[0] == pytest.approx(26.88)
        assert w[0] > 0

    def test_two_bus_closed_form(self):
        n = make_twobus()
        s = PFState.flat(n)
        s.rho[1] = -math.log(2.0)
        cm = convexity_matrix(n, s).entries
        assert cm.shape == (1, 1)
        assert cm[0, 0] == pytest.approx(0.0, abs=1e-14)

    def test_phase_out_of_range(self, threebus):
        s = PFState.flat(threebus)
        s.theta[1] = math.radians(100.0)
        with pytest.raises(PhaseOutOfRange):
            convexity_matrix(threebus, s)


class TestInDomainC:
    def test_flat_start_in_c(self, bundled_models):
        for n in bundled_models.values():
            cert = in_domain_C(n, PFState.flat(n))
            assert cert.in_c and cert.phase_ok

    def test_wide_phase_not_in_c(self, threebus):
        s = PFState.flat(threebus)
        s.theta[1] = math.radians(100.0)
        cert = in_domain_C(threebus, s)
        assert not cert.in_c and not cert.phase_ok

    def test_boundary_state(self):
        n = make_twobus()
        s = PFState.flat(n)
        s.rho[1] = math.log(0.5)
        cert = in_domain_C(n, s)
        assert cert.lmi_min_eig == pytest.approx(0.0, abs=1e-12)
        assert cert.in_c  # closed-set convention

    def test_certificate_invariant(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            n = random_network(rng)
            s = random_state(rng, n, rho_amp=0.5, theta_amp=1.0)
            cert = in_domain_C(n, s)
            assert cert.in_c == (cert.phase_ok
                                 and cert.lmi_min_eig >= -cert.tol_abs)


class TestInDomainDSampled:
    def test_flat_start(self, threebus):
        rep = in_domain_D_sampled(threebus, PFState.flat(threebus), samples=8)
        assert rep.in_d

    def test_tree_in_c_implies_in_d(self):
        rng = np.random.default_rng(32)
        done = 0
        while done < 25:
            n = random_network(rng, n_max=6, tree=True)
            s = random_state(rng, n, rho_amp=0.3, theta_amp=0.6)
            if not in_domain_C(n, s).in_c:
                continue
            assert in_domain_D_sampled(n, s, samples=16).in_d
            done += 1

    def test_just_outside_c_fails_at_endpoint(self):
        # two-bus boundary at e^{-rho}/cos(theta) = 2; push just past it
        n = make_twobus()
        s = PFState.flat(n)
        s.theta[1] = math.acos(0.5) + 0.02
        assert not in_domain_C(n, s).in_c
        rep = in_domain_D_sampled(n, s, samples=32)
        assert not rep.in_d
        assert rep.alphas[-1] == pytest.approx(1.0)  # failed only at the end


class TestLossyDomain:
    def test_kappa_zero_identical(self):
        n = make_twobus()
        rng = np.random.default_rng(33)
        for _ in range(10):
            s = random_state(rng, n)
            a = in_domain_C(n, s)
            b = lossy_in_domain(n, s)
            assert a == b

    def test_flat_in_c(self):
        n = make_twobus(g=0.3)
        assert lossy_in_domain(n, PFState.flat(n)).in_c

    def test_boundary_matches_closed_form(self):
        # domain is kappa-invariant: crossing at e^{-rho} = 2 cos(theta)
        n = make_twobus(g=0.3)
        rng = np.random.default_rng(34)
        for _ in range(20):
            theta = float(rng.uniform(-0.8, 0.8))
            rho_crit = -math.log(2.0 * math.cos(theta))
            for eps, expect in ((1e-4, True), (-1e-4, False)):
                s = PFState.flat(n)
                s.theta[1] = theta
                s.rho[1] = rho_crit + eps
                assert lossy_in_domain(n, s).in_c is expect

    def test_pv_rejected(self):
        n = Network([Bus(1, BusKind.SLACK), Bus(2, BusKind.PV), Bus(3, BusKind.PQ)],
                    [Line(1, 2, 1.0, 0.2), Line(2, 3, 1.0, 0.2)])
        with pytest.raises(UnsupportedTopology):
            lossy_in_domain(n, PFState.flat(n))


class TestMatrixConvexityGap:
    def test_endpoint_lambda(self):
        g = matrix_convexity_gap(0.5, 0.3, -0.7, -0.2, 0.0)
        assert np.allclose(g.entries, 0.0, atol=1e-14)

    def test_equal_points(self):
        g = matrix_convexity_gap(0.4, 0.8, 0.4, 0.8, 0.61)
        assert np.allclose(g.entries, 0.0, atol=1e-12)

    def test_gap_always_psd(self):
        rng = np.random.default_rng(35)
        lim = math.pi / 2 - 1e-3
        for _ in range(10000):
            x1, x2 = rng.uniform(-2, 2, 2)
            y1, y2 = rng.uniform(-lim, lim, 2)
            lam = float(rng.uniform(0, 1))
            w, _ = sym_eigen(matrix_convexity_gap(x1, y1, x2, y2, lam))
            assert w[0] >= -1e-9


class TestDomainProperties:
    def test_sufficiency_on_meshes(self):
        # in_C at a state implies the full Hessian is PSD there
        rng = np.random.default_rng(36)
        done = 0
        while done < 300:
            n = random_network(rng, n_max=8, tree=False)
            s = random_state(rng, n, rho_amp=0.4, theta_amp=0.8)
            if not in_domain_C(n, s).in_c:
                continue
            h = en.hessian(n, s)
            w, _ = sym_eigen(h)
            scale = 1.0 + np.max(np.abs(np.diag(h.entries)))
            assert w[0] >= -1e-8 * scale
            done += 1

    def test_tree_exactness(self):
        rng = np.random.default_rng(37)
        done = 0
        while done < 200:
            n = random_network(rng, n_max=8, tree=True)
            s = random_state(rng, n, rho_amp=0.4, theta_amp=0.8)
            f, t = n.edges[:, 0], n.edges[:, 1]
            te = s.theta[f] - s.theta[t]
            if np.max(np.abs(te)) > math.pi / 2 - 0.05:
                continue
            cert = in_domain_C(n, s)
            h = en.hessian(n, s)
            w, _ = sym_eigen(h)
            scale = 1.0 + np.max(np.abs(np.diag(h.entries)))
            if abs(cert.lmi_min_eig) < 1e-7 * (1 + abs(cert.lmi_min_eig)) or \
                    abs(w[0]) < 1e-7 * scale:
                continue
            assert cert.in_c == (w[0] > 0)
            done += 1

    def test_star_shaped(self):
        rng = np.random.default_rng(38)
        done = 0
        while done < 50:
            n = random_network(rng)
            s = random_state(rng, n, rho_amp=0.4, theta_amp=0.8)
            if not in_domain_C(n, s).in_c:
                continue
            for alpha in (0.25, 0.5, 0.75):
                sa = PFState(alpha * s.rho, alpha * s.theta)
                assert in_domain_C(n, sa).in_c
            done += 1

    def test_quadratic_form_concave_over_box(self):
        # u^T M(.) u evaluated at a segment midpoint dominates the average
        # of the endpoint values
        rng = np.random.default_rng(39)
        for _ in range(200):
            n = random_network(rng, n_max=6)
            if len(n.pq) == 0:
                continue
            s1 = random_state(rng, n, rho_amp=0.3, theta_amp=0.5)
            s2 = random_state(rng, n, rho_amp=0.3, theta_amp=0.5)
            mid = PFState(0.5 * (s1.rho + s2.rho), 0.5 * (s1.theta + s2.theta))
            u = rng.normal(size=len(n.pq))
            vals = [u @ convexity_matrix(n, s).entries @ u
                    for s in (s1, s2, mid)]
            assert vals[2] >= 0.5 * (vals[0] + vals[1]) - 1e-9 * (
                1 + max(abs(v) for v in vals))


class TestMaxPhaseBound:
    def test_two_bus_closed_form(self):
        n = make_twobus()
        for b_rho in (1.1, 1.2, 1.5, 1.9):
            res = max_phase_bound(n, b_rho)
            assert res.mode == "exact-vertices" and res.certified
            assert res.b_theta == pytest.approx(math.acos(b_rho / 2.0),
                                                abs=math.radians(0.15))

    def test_ratio_past_two_gives_zero(self):
        res = max_phase_bound(make_twobus(), 2.5)
        assert res.b_theta == 0.0

    def test_monotone_in_b_rho(self, ieee14_model):
        vals = [max_phase_bound(ieee14_model, r, samples=500, seed=7).b_theta
                for r in (1.0, 1.2, 1.5, 1.8)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_bad_ratio_rejected(self, twobus):
        with pytest.raises(DomainError):
            max_phase_bound(twobus, 0.9)

    def test_sampled_flagged(self, ieee14_model):
        res = max_phase_bound(ieee14_model, 1.5, samples=500)
        assert res.mode == "sampled" and not res.certified

    def test_deterministic_given_seed(self, ieee14_model):
        a = max_phase_bound(ieee14_model, 1.5, samples=400, seed=3)
        b = max_phase_bound(ieee14_model, 1.5, samples=400, seed=3)
        assert a.b_theta == b.b_theta

    def test_box_is_certified_inside_c_on_trees(self):
        # exact mode really certifies: random states inside the reported
        # box must pass in_domain_C
        rng = np.random.default_rng(40)
        checked = 0
        while checked < 10:
            n = random_network(rng, n_max=5, tree=True)
            res = max_phase_bound(n, 1.3)
            assert res.certified
            if res.b_theta == 0.0:
                continue
            for _ in range(100):
                # half-amplitude bus values keep every line difference in
                # the box for sure
                s = random_state(rng, n, rho_amp=0.5 * math.log(1.3),
                                 theta_amp=0.5 * res.b_theta)
                f, t = n.edges[:, 0], n.edges[:, 1]
                assert np.max(np.abs(s.rho[f] - s.rho[t])) <= math.log(1.3)
                assert np.max(np.abs(s.theta[f] - s.theta[t])) <= res.b_theta
                assert in_domain_C(n, s).in_c
            checked += 1


class TestPhaseVoltageBox:
    def test_validation(self):
        with pytest.raises(DomainError):
            PhaseVoltageBox(b_rho=0.8, b_theta=0.1)
        with pytest.raises(DomainError):
            PhaseVoltageBox(b_rho=1.2, b_theta=2.0)

    def test_strict_interior_helper(self, threebus):
        assert strictly_interior(threebus, PFState.flat(threebus))
        s = PFState.flat(threebus)
        s.rho[1] = math.log(0.5) - 0.2
        s.rho[2] = math.log(0.5) - 0.2
        assert not strictly_interior(threebus, s)
