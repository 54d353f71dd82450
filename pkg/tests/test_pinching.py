import math

import numpy as np
import pytest

from conftest import (flat_bounds, make_clifford, make_ellipsoid,
                      make_geodesic_sphere, make_graph_torus,
                      make_product_torus, make_sphere)
from mcflow.ambient import AmbientModel, CurvatureBounds
from mcflow.errors import InputError
from mcflow.extrinsic import (ExtrinsicState, GradientField,
                              ambient_curvature_adapted, extrinsic_field)
from mcflow import pinching as pin


def _transcribed_constants(n, d, K1, K2, L, a):
    """Independent transcription of the four constant displays (frees = 1).

    Written with a different algebraic arrangement than the library path to
    cross-check the implementation before freezing spot values.
    """
    q = a - 1.0 / n
    flat = (K1 + K2) == 0
    theta = 0.0 if flat else 1.0
    vartheta = 0.0 if flat else 1.0
    common = 4 * n * K1 + 2 * n * K2 + (2 * n * a * K1 + 2 * K2) / q
    bracket1 = n * (d - 1) + n * (d - 2) + 16.0 * (n - 1) * (d - 1) / 3.0
    bracket2 = n + 16.0 * (n - 1) / 3.0 + 8.0 * math.sqrt(n - 1) * (d - 2) / 3.0
    C1 = common + bracket1 * (K1 + K2) + theta
    C2 = common + bracket2 * (K1 + K2) + n * vartheta
    C3 = (2 * n * a * K1 + 2 * K2) / q
    C4 = 0.0 if flat else L * L / theta + 4 * L * L / vartheta
    if flat:
        b1 = 0.0
    else:
        b1 = max(C1 * q / (2 * a), C2 * n * q / 4,
                 n * q * (C3 + math.sqrt(C3 * C3 + 8 * C4 / (n * q))) / 4)
    return C1, C2, C3, C4, b1


class TestConstants:
    def test_coefficient_values(self):
        assert pin.pinching_coefficient(2) == pytest.approx(2 / 3)
        assert pin.pinching_coefficient(3) == pytest.approx(4 / 9)
        assert pin.pinching_coefficient(4) == pytest.approx(1 / 3)
        with pytest.raises(InputError):
            pin.pinching_coefficient(1)

    def test_cnd_spot_values(self):
        assert pin.cnd_constant(2, 1) == pytest.approx(1.6)
        assert pin.cnd_constant(2, 2) == pytest.approx(3.2)

    def test_flat_case_zeroes(self):
        c = pin.pinching_constants(2, 2, flat_bounds(), a=2 / 3)
        assert c.b1 == 0.0 and c.C4 == 0.0 and c.b0 == 0.0
        c3 = pin.pinching_constants(3, 4, flat_bounds(), a=4 / 9)
        assert c3.b1 == 0.0 and c3.b0 == 0.0

    def test_hand_evaluated_case(self):
        # n=2, d=2, K1=0, K2=1, L=0, a=2/3, free constants all 1.
        bounds = CurvatureBounds(0.0, 1.0, 0.0)
        params = pin.PinchingParams(a=2 / 3, eta=1 / 24)
        c = pin.pinching_constants(2, 2, bounds, a=2 / 3, params=params)
        assert c.C1 == pytest.approx(73 / 3)
        assert c.C2 == pytest.approx(76 / 3)
        assert c.C3 == pytest.approx(12.0)
        assert c.C4 == 0.0
        assert c.b1 == pytest.approx(73 / 24)
        assert c.b0 == pytest.approx(73 / 24)
        assert c.eps_nabla == pytest.approx(1 / 24)

    @pytest.mark.parametrize("n,d,K1,K2,L,a", [
        (2, 2, 0.0, 1.0, 0.0, 2 / 3),
        (2, 1, 0.5, 1.0, 0.3, 0.6),
        (3, 2, 1.0, 2.0, 0.5, 4 / 9),
        (4, 3, 0.2, 0.2, 0.1, 0.3),
    ])
    def test_dual_transcription(self, n, d, K1, K2, L, a):
        bounds = CurvatureBounds(K1, K2, L)
        params = pin.PinchingParams(a=a, eta=0.01)
        c = pin.pinching_constants(n, d, bounds, a=a, params=params)
        C1, C2, C3, C4, b1 = _transcribed_constants(n, d, K1, K2, L, a)
        assert c.C1 == pytest.approx(C1, rel=1e-12)
        assert c.C2 == pytest.approx(C2, rel=1e-12)
        assert c.C3 == pytest.approx(C3, rel=1e-12)
        assert c.C4 == pytest.approx(C4, rel=1e-12)
        assert c.b1 == pytest.approx(b1, rel=1e-12)
        assert c.b0 == pytest.approx(max(b1, 2 * K1), rel=1e-12)

    def test_b1_monotonicity(self):
        grid = np.linspace(0.0, 2.0, 5)
        params = pin.PinchingParams(a=2 / 3, eta=0.01)

        def b1(K1, K2, L):
            return pin.pinching_constants(
                2, 2, CurvatureBounds(K1, K2, L), a=2 / 3, params=params).b1

        for K1 in grid:
            for K2 in grid:
                for L in grid[:-1]:
                    base = b1(K1, K2, L)
                    eps = 0.5
                    assert b1(K1 + eps, K2, L) >= base - 1e-12
                    assert b1(K1, K2 + eps, L) >= base - 1e-12
                    assert b1(K1, K2, L + eps) >= base - 1e-12

    def test_eta_validation(self):
        with pytest.raises(InputError):
            pin.pinching_constants(2, 1, flat_bounds(), a=2 / 3,
                                   params=pin.PinchingParams(a=2 / 3, eta=1.0))
        with pytest.raises(InputError):
            pin.pinching_constants(2, 1, flat_bounds(), a=0.4)

    def test_params_validation(self):
        with pytest.raises(InputError):
            pin.PinchingParams(a=2 / 3, sigma=1.5)
        with pytest.raises(InputError):
            pin.PinchingParams(a=2 / 3, p=1)
        pin.PinchingParams(a=2 / 3).validate_preservation(2)
        with pytest.raises(InputError):
            pin.PinchingParams(a=0.7).validate_preservation(2)


def _sphere_state(n, r):
    h = np.zeros((1, n, n))
    np.fill_diagonal(h[0], -1.0 / r)
    H = np.array([-n / r])
    return ExtrinsicState(h=h, H=H, Hsq=n ** 2 / r ** 2,
                          Aring=np.zeros((1, n, n)), normsq_A=n / r ** 2,
                          normsq_Aring=0.0, decompH={"A2_H": n / r ** 2,
                                                     "A2_I": 0.0,
                                                     "Aring2_H": 0.0,
                                                     "Aring2_I": 0.0})


class TestQuantities:
    def test_sphere_Q_closed_form(self):
        const = pin.pinching_constants(2, 1, flat_bounds(), a=2 / 3)
        params = pin.PinchingParams(a=2 / 3, b=0.0)
        out = pin.pinching_quantities(_sphere_state(2, 1.0), const, params)
        assert out["Q"] == pytest.approx(2 - 8 / 3)
        assert out["f_sigma"] == pytest.approx(0.0, abs=1e-15)

    def test_umbilical_f_sigma_zero(self):
        const = pin.pinching_constants(2, 1, flat_bounds(), a=2 / 3)
        for sigma in (0.05, 0.3, 0.7):
            params = pin.PinchingParams(a=2 / 3, sigma=sigma)
            out = pin.pinching_quantities(_sphere_state(2, 0.7), const, params)
            assert out["f_sigma"] == pytest.approx(0.0, abs=1e-15)

    def test_ellipsoid_max_Q_negative(self):
        # Brute-force oracle: closed-form profile curvatures of the
        # spheroid with semi-axes (1.1, 1, 1) on a 256^2 parameter sample
        # (the rotational direction is redundant but sampled literally).
        a_ax, b_ax = 1.1, 1.0
        u = np.linspace(1e-4, math.pi - 1e-4, 256)
        u = np.repeat(u, 256)
        W = np.sqrt(a_ax ** 2 * np.sin(u) ** 2 + b_ax ** 2 * np.cos(u) ** 2)
        k_mer = a_ax * b_ax / W ** 3
        k_par = a_ax / (b_ax * W)
        A2 = k_mer ** 2 + k_par ** 2
        H2 = (k_mer + k_par) ** 2
        Q = A2 - (2 / 3) * H2
        oracle_max = float(np.max(Q))
        assert oracle_max < 0
        ef = extrinsic_field(make_ellipsoid((1.1, 1.0, 1.0), size=256))
        machine_max = float(np.max(ef.A2 - (2 / 3) * ef.Hsq))
        assert machine_max < 0
        assert machine_max == pytest.approx(oracle_max, abs=5e-3)

    def test_Q_scaling(self):
        rng = np.random.default_rng(2)
        params = pin.PinchingParams(a=2 / 3, b=0.0)
        const = pin.pinching_constants(2, 2, flat_bounds(), a=2 / 3)
        for _ in range(100):
            h = rng.standard_normal((2, 2, 2))
            h = 0.5 * (h + np.swapaxes(h, -1, -2))
            lam = rng.uniform(0.2, 3.0)
            def Q_of(hh):
                A2 = float(np.sum(hh * hh))
                Hc = np.einsum("aii->a", hh)
                return A2 - params.a * float(Hc @ Hc)
            assert Q_of(lam * h) == pytest.approx(lam ** 2 * Q_of(h),
                                                  rel=1e-12)

    def test_f_sigma_homogeneity(self):
        rng = np.random.default_rng(8)
        for sigma in (0.1, 0.25):
            for _ in range(20):
                aring2, h2 = rng.uniform(0.1, 5.0, size=2)
                psi = rng.uniform(0.5, 4.0)
                f = aring2 / h2 ** (1 - sigma)
                f_tilde = (aring2 / psi ** 2) / (h2 / psi ** 2) ** (1 - sigma)
                assert f_tilde == pytest.approx(psi ** (-2 * sigma) * f,
                                                rel=1e-12)

    def test_envelope_fit(self):
        assert pin.fit_envelope_constant([0.2, np.nan, 0.7, 0.3]) == 0.7
        with pytest.raises(InputError):
            pin.fit_envelope_constant([np.nan, np.nan])


class TestReactionTerms:
    def test_quadruple_loop_oracle(self):
        rng = np.random.default_rng(7)
        n = d = 2
        h = rng.standard_normal((d, n, n))
        h = 0.5 * (h + np.swapaxes(h, -1, -2))
        Hc = np.einsum("aii->a", h)
        R1a = sum(
            sum(h[al, i, j] * h[be, i, j] for i in range(n)
                for j in range(n)) ** 2
            for al in range(d) for be in range(d))
        R1b = sum(
            sum(h[al, i, p] * h[be, j, p] - h[al, j, p] * h[be, i, p]
                for p in range(n)) ** 2
            for i in range(n) for j in range(n)
            for al in range(d) for be in range(d))
        R2 = sum(
            sum(Hc[al] * h[al, i, j] for al in range(d)) ** 2
            for i in range(n) for j in range(n))
        Zlead = sum(
            Hc[al] * h[al, i, p] * h[be, p, j] * h[be, i, j]
            for i in range(n) for j in range(n) for p in range(n)
            for al in range(d) for be in range(d))
        raw = pin.reaction_arrays(h[None], Hc[None],
                                  np.zeros((1, 4, 4, 4, 4)))
        assert raw["R1"][0] == pytest.approx(R1a + R1b, abs=1e-12)
        assert raw["R2"][0] == pytest.approx(R2, abs=1e-12)
        assert raw["Z"][0] == pytest.approx(Zlead - (R1a + R1b), abs=1e-12)
        assert raw["R1"][0] >= 0 and raw["R2"][0] >= 0

    def test_euclidean_ambient_P_a_zero(self):
        imm = make_product_torus((1.0, 0.7), size=12)
        ef = extrinsic_field(imm)
        rbar = ambient_curvature_adapted(ef)
        st = ef.state_at(5)
        rt = pin.reaction_terms(st, rbar[5], a=2 / 3)
        assert rt.P_a == pytest.approx(0.0, abs=1e-12)
        assert rt.I == rt.III == rt.IV == 0.0

    def test_round_sphere_I_vanishes(self):
        imm = make_geodesic_sphere(0.8, size=32, c=1.0)
        ef = extrinsic_field(imm)
        rbar = ambient_curvature_adapted(ef)
        rt = pin.reaction_terms(ef.state_at(9), rbar[9], a=2 / 3)
        assert rt.I == pytest.approx(0.0, abs=1e-10)

    def test_splits_sum_to_totals(self):
        s4 = AmbientModel.sphere(1.0, 4)
        from mcflow.immersion import axisym_grid, build_immersion
        imm = build_immersion("round-sphere", axisym_grid(2, 32), s4,
                              params=(0.8,), derivative_source="analytic")
        ef = extrinsic_field(imm)
        rbar = ambient_curvature_adapted(ef)
        rt = pin.reaction_terms(ef.state_at(7), rbar[7], a=2 / 3)
        s = rt.splits
        assert s["II1"] + s["II2"] + s["II3"] == pytest.approx(rt.II,
                                                               abs=1e-10)
        assert s["III1"] + s["III2"] == pytest.approx(rt.III, abs=1e-10)


class TestAudits:
    def test_round_sphere_lemma31_trivial(self):
        imm = make_sphere(1.0, 32)
        rows = pin.inequality_audit(
            imm, flat_bounds(),
            pin.pinching_constants(2, 1, flat_bounds(), a=2 / 3),
            pin.PinchingParams(a=2 / 3))
        grad_rows = [r for r in rows if r.name == "lemma31_grad1"]
        assert grad_rows and all(r.passed for r in grad_rows)
        assert all(abs(r.lhs) < 1e-6 for r in grad_rows)

    def test_xu_gu_round_sphere_margin(self):
        imm = make_sphere(1.0, 32)
        rows = pin.inequality_audit(
            imm, flat_bounds(),
            pin.pinching_constants(2, 1, flat_bounds(), a=2 / 3),
            pin.PinchingParams(a=2 / 3))
        xg = [r for r in rows if r.name == "xu_gu"]
        for r in xg:
            # K = 1 and the bound is (0 + 4 - 2)/2 = 1: zero margin.
            assert r.lhs == pytest.approx(1.0, abs=1e-7)
            assert r.rhs == pytest.approx(1.0, abs=1e-7)
            assert r.passed

    def test_estimate_I_random_tensors(self):
        # 1000 seeded tensors against the eigenvalue-decomposition oracle in
        # the hyperbolic space form (K1 = 1): the display equals
        # -2 sum Rbar_{ipip} (lambda_i - lambda_p)^2 per normal direction.
        rng = np.random.default_rng(42)
        n, d, K1 = 2, 2, 1.0
        m = n + d
        eye = np.eye(m)
        rbar = -K1 * (np.einsum("ac,bd->abcd", eye, eye)
                      - np.einsum("ad,bc->abcd", eye, eye))
        passed = 0
        for _ in range(1000):
            h = rng.standard_normal((d, n, n))
            h = 0.5 * (h + np.swapaxes(h, -1, -2))
            Hc = np.einsum("aii->a", h)
            raw = pin.reaction_arrays(h[None], Hc[None], rbar[None])
            I = float(raw["I"][0])
            oracle = 0.0
            for al in range(d):
                lam = np.linalg.eigvalsh(h[al])
                for i in range(n):
                    for p in range(n):
                        oracle += -2.0 * (-K1) * (lam[i] - lam[p]) ** 2
            assert I == pytest.approx(oracle, abs=1e-10)
            aring2 = float(np.sum(h * h)) - float(Hc @ Hc) / n
            if I <= 4 * n * K1 * aring2 + 1e-10:
                passed += 1
        assert passed == 1000

    def test_zoo_audit_all_pass(self):
        cases = [
            (make_sphere(1.0, 32), flat_bounds()),
            (make_ellipsoid((1.2, 1.0, 1.0), size=48), flat_bounds()),
            (make_product_torus((1.0, 0.7), size=12), flat_bounds()),
            (make_clifford(size=12), CurvatureBounds(0, 1.0, 0)),
            (make_geodesic_sphere(0.7, 32), CurvatureBounds(0, 1.0, 0)),
            (make_geodesic_sphere(0.7, 32, kind="hyp"),
             CurvatureBounds(1.0, 0, 0)),
            (make_graph_torus(size=16), flat_bounds()),
        ]
        params = pin.PinchingParams(a=2 / 3)
        for imm, bounds in cases:
            const = pin.pinching_constants(imm.n, imm.d, bounds, a=2 / 3,
                                           params=params)
            rows = pin.inequality_audit(imm, bounds, const, params,
                                        n_planes=20)
            failed = [r for r in rows if r.passed is False]
            assert not failed, (imm.shape, failed[:3])

    def test_second_chain_across_zoo(self):
        for imm, bounds in ((make_sphere(1.0, 32), flat_bounds()),
                            (make_graph_torus(size=16), flat_bounds()),
                            (make_clifford(size=12),
                             CurvatureBounds(0, 1.0, 0))):
            gf = GradientField(imm)
            n = imm.n
            cnd = pin.cnd_constant(n, imm.d)
            lhs = gf.normsq_gradA - gf.normsq_gradH / n
            rhs = (n - 1) / (2 * n + 1) * gf.normsq_gradA \
                - cnd * (bounds.K1 + bounds.K2) ** 2
            tol = pin.default_audit_tol(imm)
            assert np.all(lhs - rhs >= -tol)

    def test_z_ratio_reported_without_flag(self):
        imm = make_ellipsoid(size=32)
        rows = pin.inequality_audit(
            imm, flat_bounds(),
            pin.pinching_constants(2, 1, flat_bounds(), a=2 / 3),
            pin.PinchingParams(a=2 / 3))
        z = [r for r in rows if r.name == "z_ratio"]
        assert z and all(r.passed is None for r in z)
        assert all(np.isfinite(r.margin) for r in z)

    def test_reaction_bound_q0_synthetic(self):
        # States manufactured so Q = 0: |H|^2 = (|Aring|^2 + b)/(a - 1/n).
        rng = np.random.default_rng(12)
        n, d, a, b = 2, 2, 2 / 3, 1.0
        q = a - 1 / n
        eye = np.eye(n)
        for _ in range(200):
            ring = rng.standard_normal((d, n, n)) * 0.3
            ring = 0.5 * (ring + np.swapaxes(ring, -1, -2))
            ring[0] -= np.trace(ring[0]) / n * eye
            ring[1] -= np.trace(ring[1]) / n * eye
            ring2 = float(np.sum(ring * ring))
            Hsq = (ring2 + b) / q
            Hnorm = math.sqrt(Hsq)
            h = ring.copy()
            h[0] += Hnorm / n * eye
            Hc = np.einsum("aii->a", h)
            raw = pin.reaction_arrays(h[None], Hc[None],
                                      np.zeros((1, n + d,) * 1 + (n + d,) * 3))
            lhs = 2 * raw["R1"][0] - 2 * a * raw["R2"][0]
            ring2_H = float(np.sum(ring[0] * ring[0]))
            ring2_I = float(np.sum(ring[1] * ring[1]))
            rhs = pin.reaction_bound_q0(ring2_H, ring2_I, a, b, n)
            assert lhs <= rhs + 1e-10


class TestBlowupODE:
    def test_riccati_closed_form(self):
        const = pin.PinchingConstants(C1=0, C2=0, C3=0, C4=0, b1=0, b0=0,
                                      eps_nabla=1.0, Cnd=1.6)
        res = pin.b_blowup_ode(1.0, const, a=2 / 3, n=2, dt_ode=1e-6)
        assert res.blowup
        assert res.t0 == pytest.approx(1 / 6, abs=1e-4)
        res2 = pin.b_blowup_ode(2.0, const, a=2 / 3, n=2, dt_ode=1e-6)
        assert res2.t0 == pytest.approx(1 / 12, abs=1e-4)

    def test_monotone_trajectory(self):
        const = pin.PinchingConstants(C1=0, C2=0, C3=1.0, C4=0.5, b1=0,
                                      b0=0, eps_nabla=1.0, Cnd=1.6)
        res = pin.b_blowup_ode(5.0, const, a=2 / 3, n=2, dt_ode=1e-5)
        assert res.blowup
        assert np.all(np.diff(res.b) > 0)

    def test_non_blowup_flag(self):
        # Large C3 makes the initial slope negative.
        const = pin.PinchingConstants(C1=0, C2=0, C3=100.0, C4=0.0, b1=0,
                                      b0=0, eps_nabla=1.0, Cnd=1.6)
        res = pin.b_blowup_ode(1.0, const, a=2 / 3, n=2, dt_ode=1e-4)
        assert not res.blowup and res.status == "non_blowup"
        assert res.t0 is None

    def test_input_validation(self):
        const = pin.PinchingConstants(C1=0, C2=0, C3=0, C4=0, b1=0, b0=0,
                                      eps_nabla=1.0, Cnd=1.6)
        with pytest.raises(InputError):
            pin.b_blowup_ode(1.0, const, a=0.4, n=2, dt_ode=1e-4)
        with pytest.raises(InputError):
            pin.b_blowup_ode(1.0, const, a=2 / 3, n=2, dt_ode=-1.0)


class TestGradientEstimate:
    def test_sphere_closed_form(self):
        n, r = 2, 1.3
        st = _sphere_state(n, r)
        grad = type("G", (), {"normsq_gradH": 0.0})()
        params = pin.PinchingParams(a=2 / 3, N1=1.0, N2=1.0, eta5=0.1)
        f = pin.gradient_estimate_functional(st, grad, params)
        assert f == pytest.approx(-0.1 * n ** 4 / r ** 4, rel=1e-12)

    def test_independent_assembly(self):
        imm = make_ellipsoid((1.2, 1.0, 1.0), size=48)
        ef = extrinsic_field(imm, order=3)
        gf = GradientField(imm, ef)
        params = pin.PinchingParams(a=2 / 3, N1=1.0, N2=1.0, eta5=0.1)
        field = pin.gradient_estimate_field(ef, gf, params)
        node = 17
        manual = (gf.normsq_gradH[node]
                  + (1.0 + 1.0 * ef.A2[node]) * ef.Aring2[node]
                  - 0.1 * ef.Hsq[node] ** 2)
        assert field[node] == pytest.approx(manual, abs=1e-12)

    def test_nonnegative_without_quartic(self):
        imm = make_graph_torus(size=16)
        ef = extrinsic_field(imm, order=3)
        gf = GradientField(imm, ef)
        params = pin.PinchingParams(a=2 / 3, N1=2.0, N2=3.0, eta5=1e-12)
        field = pin.gradient_estimate_field(ef, gf, params)
        assert np.all(field >= -1e-9)

    def test_construction_order_defaults(self):
        N1, N2 = pin.gradient_estimate_defaults(2, 0.1)
        assert N2 > 0 and N1 > 0
        # N1 is chosen after (and grows with) N2.
        N1b, N2b = pin.gradient_estimate_defaults(2, 1.0)
        assert N2b > N2 and N1b > N1


class TestSimonsReport:
    def test_both_sides_reported_without_flag(self):
        imm = make_ellipsoid((1.2, 1.0, 1.0), size=32)
        params = pin.PinchingParams(a=2 / 3, simons_C=1.0)
        const = pin.pinching_constants(2, 1, flat_bounds(), a=2 / 3,
                                       params=params)
        rows = pin.inequality_audit(imm, flat_bounds(), const, params,
                                    include_simons=True)
        sim = [r for r in rows if r.name == "simons_laplacian"]
        assert len(sim) == imm.num_nodes
        assert all(r.passed is None for r in sim)
        assert all(np.isfinite(r.lhs) and np.isfinite(r.rhs) for r in sim)
