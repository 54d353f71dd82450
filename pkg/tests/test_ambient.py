import numpy as np
import pytest

from mcflow.ambient import (AmbientModel, CurvatureBounds, curvature_tensor_at,
                            nabla_curvature_at, verify_geometry_bounds)
from mcflow.errors import ChartError, FrameError, InputError


def _fd_curvature_oracle(model, point, h=1e-3):
    """Curvature components from second-order differences of the metric.

    Fully independent route: Christoffels from differenced metric fields,
    their derivatives from differenced Christoffel fields.
    """
    dim = model.coord_dim

    def metric(x):
        return model.metric_coord(x)

    def christoffel(x):
        g = metric(x)
        ginv = np.linalg.inv(g)
        dg = np.zeros((dim, dim, dim))
        for e in range(dim):
            step = np.zeros(dim)
            step[e] = h
            dg[e] = (metric(x + step) - metric(x - step)) / (2 * h)
        # Gamma^m_ij = 1/2 g^{ml} (d_i g_jl + d_j g_il - d_l g_ij)
        bracket = (np.einsum("ijl->ijl", np.moveaxis(dg, 0, 0))
                   + np.einsum("jil->ijl", np.moveaxis(dg, 0, 0))
                   - np.einsum("lij->ijl", dg))
        return 0.5 * np.einsum("ml,ijl->mij", ginv, bracket)

    gam = christoffel(point)
    dgam = np.zeros((dim, dim, dim, dim))
    for e in range(dim):
        step = np.zeros(dim)
        step[e] = h
        dgam[e] = (christoffel(point + step) - christoffel(point - step)) \
            / (2 * h)
    rf = (np.einsum("bfac->fabc", dgam)
          - np.einsum("afbc->fabc", dgam)
          + np.einsum("eac,fbe->fabc", gam, gam)
          - np.einsum("ebc,fae->fabc", gam, gam))
    return np.einsum("fabc,fd->abcd", rf, metric(point))


class TestSpaceForms:
    def test_euclidean_curvature_zero(self, euclid3):
        p = np.array([0.3, -1.0, 2.0])
        fr = euclid3.orthonormal_frame(p)
        assert np.allclose(curvature_tensor_at(euclid3, p, fr), 0.0)

    def test_sphere_constant_components(self, sphere3):
        p = np.array([0.0, 1.0, 0.0, 0.0])
        fr = sphere3.orthonormal_frame(p)
        R = curvature_tensor_at(sphere3, p, fr)
        assert R[0, 1, 0, 1] == pytest.approx(1.0, abs=1e-12)
        assert R[0, 1, 0, 2] == pytest.approx(0.0, abs=1e-12)

    def test_space_form_nabla_zero(self, sphere3, euclid3):
        s2 = AmbientModel.sphere(2.0, 3)
        p = s2.project_chart(np.array([1.0, 0.2, -0.1, 0.4]))
        fr = s2.orthonormal_frame(p)
        assert np.allclose(nabla_curvature_at(s2, p, fr), 0.0)
        pe = np.zeros(3)
        assert np.allclose(nabla_curvature_at(
            euclid3, pe, euclid3.orthonormal_frame(pe)), 0.0)

    def test_sectional_equals_c_random_planes(self, hyperbolic3):
        rng = np.random.default_rng(3)
        p = hyperbolic3.project_chart(np.array([1.2, 0.3, -0.2, 0.15]))
        fr = hyperbolic3.orthonormal_frame(p)
        R = hyperbolic3.curvature_frame(p, fr, check=False)
        m = hyperbolic3.total_dim
        for _ in range(100):
            u = rng.standard_normal(m)
            u /= np.linalg.norm(u)
            v = rng.standard_normal(m)
            v -= (v @ u) * u
            v /= np.linalg.norm(v)
            K = np.einsum("abcd,a,b,c,d->", R, u, v, u, v)
            assert K == pytest.approx(-1.0, abs=1e-10)


class TestPerturbed:
    def setup_method(self):
        self.model = AmbientModel.perturbed(3, amplitude=0.01, wavenumber=1.0)

    def test_conformal_sectional_at_origin(self):
        # Closed form for the conformal factor exp(2 eps prod cos):
        # at the origin K(plane) = 2 eps k^2 exp(-2 eps).
        p = np.zeros(3)
        fr = self.model.orthonormal_frame(p)
        R = self.model.curvature_frame(p, fr, check=False)
        expected = 2 * 0.01 * np.exp(-2 * 0.01)
        assert R[0, 1, 0, 1] == pytest.approx(expected, rel=1e-12)

    def test_curvature_matches_fd_oracle(self):
        p = np.array([0.4, -0.9, 1.3])
        R = self.model.curvature_coord(p)
        oracle = _fd_curvature_oracle(self.model, p)
        assert np.max(np.abs(R - oracle)) < 1e-6

    def test_nabla_matches_fd_oracle(self):
        # Centered differences of curvature components plus the connection
        # correction terms.
        model = self.model
        p = np.array([0.2, 0.7, -0.4])
        dim = 3
        h = 1e-3
        nr = model.nabla_curvature_coord(p)
        gam = model.christoffel(p)
        R0 = model.curvature_coord(p)
        for e in range(dim):
            step = np.zeros(dim)
            step[e] = h
            dR = (model.curvature_coord(p + step)
                  - model.curvature_coord(p - step)) / (2 * h)
            corr = (np.einsum("fa,fbcd->abcd", gam[:, e, :], R0)
                    + np.einsum("fb,afcd->abcd", gam[:, e, :], R0)
                    + np.einsum("fc,abfd->abcd", gam[:, e, :], R0)
                    + np.einsum("fd,abcf->abcd", gam[:, e, :], R0))
            oracle = dR - corr
            assert np.max(np.abs(nr[e] - oracle)) < 1e-5
        assert np.max(np.abs(nr)) > 1e-4

    def test_bianchi_and_symmetries(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            p = rng.uniform(-1, 1, size=3)
            R = self.model.curvature_coord(p)
            assert np.max(np.abs(R + np.einsum("abcd->bacd", R))) < 1e-8
            assert np.max(np.abs(R + np.einsum("abcd->abdc", R))) < 1e-8
            assert np.max(np.abs(R - np.einsum("abcd->cdab", R))) < 1e-8
            first = R + np.einsum("abcd->acdb", R) + np.einsum("abcd->adbc", R)
            assert np.max(np.abs(first)) < 1e-8


class TestBounds:
    def test_sphere_report(self, sphere3):
        pts = [sphere3.project_chart(v) for v in
               np.random.default_rng(0).standard_normal((5, 4))]
        rep = verify_geometry_bounds(sphere3, pts, CurvatureBounds(0, 1, 0))
        assert rep.passed
        assert rep.berger_mixed_bound == pytest.approx(0.5)
        assert rep.berger_distinct_bound == pytest.approx(2.0 / 3.0)
        assert rep.berger_ok

    def test_euclidean_zero(self, euclid3):
        rep = verify_geometry_bounds(euclid3, [np.zeros(3)],
                                     CurvatureBounds(0, 0, 0))
        assert rep.passed
        assert rep.sec_min == rep.sec_max == 0.0
        assert rep.nabla_max == 0.0

    def test_perturbed_low_L_fails(self):
        model = AmbientModel.perturbed(3, amplitude=0.01)
        pts = [np.array([0.3, 0.1, -0.2]), np.array([1.0, 0.5, 0.2])]
        honest = verify_geometry_bounds(
            model, pts, CurvatureBounds(1.0, 1.0, 1.0))
        measured = honest.nabla_max
        assert measured > 0
        rep = verify_geometry_bounds(
            model, pts, CurvatureBounds(1.0, 1.0, measured / 2.0))
        assert not rep.passed
        assert rep.worst["nabla_point"] is not None

    def test_berger_with_exact_extrema(self):
        model = AmbientModel.perturbed(3, amplitude=0.02)
        pts = [np.array([0.1, 0.4, 0.9]), np.array([-0.6, 0.2, 0.3])]
        probe = verify_geometry_bounds(model, pts,
                                       CurvatureBounds(10.0, 10.0, 10.0))
        bounds = CurvatureBounds(max(0.0, -probe.sec_min), probe.sec_max,
                                 probe.nabla_max)
        rep = verify_geometry_bounds(model, pts, bounds)
        assert rep.passed and rep.berger_ok

    def test_empty_samples_error(self, euclid3):
        with pytest.raises(InputError):
            verify_geometry_bounds(euclid3, [], CurvatureBounds(0, 0, 0))


class TestValidation:
    def test_bad_frame_rejected(self, sphere3):
        p = np.array([0.0, 0.0, 0.0, 1.0])
        fr = sphere3.orthonormal_frame(p)
        with pytest.raises(FrameError):
            curvature_tensor_at(sphere3, p, 1.1 * fr)

    def test_chart_violation(self, sphere3):
        with pytest.raises(ChartError):
            sphere3.check_chart(np.array([[1.2, 0.0, 0.0, 0.0]]))

    def test_bounds_validation(self):
        with pytest.raises(InputError):
            CurvatureBounds(-1.0, 0.0, 0.0)
        with pytest.raises(InputError):
            CurvatureBounds(0.0, 0.0, 0.0, i_N=0.0)
