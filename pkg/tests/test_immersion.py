import math

import numpy as np
import pytest

from conftest import (make_clifford, make_ellipsoid, make_product_torus,
                      make_sphere, measured_order)
from mcflow.errors import InputError, ShapeError
from mcflow.extrinsic import extrinsic_field
from mcflow.immersion import (ParamGrid, adapted_frame, axisym_grid,
                              build_immersion, induced_metric,
                              min_physical_spacing, metric_all, torus_grid,
                              total_volume)


class TestVolume:
    def test_unit_sphere_area(self, euclid3):
        imm = make_sphere(1.0, size=128, source="fd")
        vol = total_volume(imm)
        assert vol == pytest.approx(4 * math.pi, rel=1e-4)

    def test_radius_two_sphere(self):
        imm = make_sphere(2.0, size=128, source="fd")
        assert total_volume(imm) == pytest.approx(16 * math.pi, rel=1e-3)

    def test_product_torus_volume_exact(self):
        imm = make_product_torus((1.3, 0.6), size=16)
        expected = (2 * math.pi * 1.3) * (2 * math.pi * 0.6)
        assert total_volume(imm) == pytest.approx(expected, abs=1e-6)

    def test_volume_refinement_order(self):
        vols = [total_volume(make_sphere(1.0, size=s, source="fd"))
                for s in (16, 32, 64, 128)]
        errs = [abs(v - 4 * math.pi) for v in vols]
        assert measured_order(errs) >= 1.8


class TestBuilders:
    def test_sphere_positive_metric(self):
        imm = make_sphere(1.0, size=128, source="fd")
        _, _, sdet = metric_all(imm)
        assert np.all(sdet > 0)

    def test_clifford_chart_constraint(self):
        imm = make_clifford(size=16)
        norms = np.linalg.norm(imm.positions, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-10

    def test_degenerate_ellipsoid_is_sphere(self):
        sph = make_sphere(1.0, size=64, source="fd")
        ell = make_ellipsoid((1.0, 1.0, 1.0), size=64, source="fd")
        efs = extrinsic_field(sph)
        efe = extrinsic_field(ell)
        assert np.max(np.abs(efs.A2 - efe.A2)) < 1e-10
        assert np.max(np.abs(efs.Hsq - efe.Hsq)) < 1e-10

    def test_incompatible_shapes_rejected(self, euclid3, sphere3):
        with pytest.raises(ShapeError):
            build_immersion("clifford-torus", torus_grid((16, 16)), euclid3)
        with pytest.raises(ShapeError):
            build_immersion("round-sphere", torus_grid((16, 16)), euclid3,
                            params=(1.0,))
        with pytest.raises(ShapeError):
            build_immersion("ellipsoid", axisym_grid(2, 32), euclid3,
                            params=(1.0, -1.0, 1.0))
        with pytest.raises(ShapeError):
            build_immersion("ellipsoid", axisym_grid(2, 32), euclid3,
                            params=(1.3, 1.0, 0.9))

    def test_grid_validation(self):
        with pytest.raises(InputError):
            ParamGrid(n=2, topology="axisym-profile", sizes=(4,),
                      spacings=(0.1,))
        with pytest.raises(InputError):
            ParamGrid(n=2, topology="weird", sizes=(16,), spacings=(0.1,))


class TestFrames:
    def test_sphere_equator_normal_radial(self):
        imm = make_sphere(1.0, size=64)
        node = 32
        fr = adapted_frame(imm, node)
        pos = imm.positions[node]
        radial = pos / np.linalg.norm(pos)
        assert abs(abs(fr.normal[0] @ radial) - 1.0) < 1e-9

    def test_clifford_normal_count(self):
        imm = make_clifford(size=16)
        fr = adapted_frame(imm, 3)
        assert fr.normal.shape[0] == imm.d == 1

    def test_product_torus_orthogonality(self):
        imm = make_product_torus((1.0, 1.0), size=16)
        fr = adapted_frame(imm, 10)
        assert fr.normal.shape[0] == 2
        for nu in fr.normal:
            for tv in fr.tangent:
                assert abs(nu @ tv) < 1e-9
            assert abs(nu @ nu - 1.0) < 1e-9

    def test_frame_determinism(self):
        a = adapted_frame(make_sphere(1.0, size=32, source="fd"), 7)
        b = adapted_frame(make_sphere(1.0, size=32, source="fd"), 7)
        assert np.array_equal(a.normal, b.normal)
        assert np.array_equal(a.tangent, b.tangent)


class TestMetric:
    def test_metric_inverse_identity(self):
        imm = make_ellipsoid((1.2, 1.0, 1.0), size=32)
        data = induced_metric(imm, 10)
        assert np.max(np.abs(data["g"] @ data["g_inv"] - np.eye(2))) < 1e-10
        eigs = np.linalg.eigvalsh(data["g"])
        assert np.all(eigs > 0)

    def test_min_physical_spacing(self):
        imm = make_sphere(1.0, size=64, source="fd")
        h = min_physical_spacing(imm)
        # Profile spacing: radius times parameter spacing.
        assert h == pytest.approx(math.pi / 64, rel=1e-3)


class TestDerivativeSources:
    def test_fd_matches_analytic_order(self):
        errs = []
        for size in (16, 32, 64):
            fd = make_ellipsoid((1.2, 1.0, 1.0), size=size, source="fd")
            an = make_ellipsoid((1.2, 1.0, 1.0), size=size, source="analytic")
            pf = fd.partials(order=2)
            pa = an.partials(order=2)
            errs.append(max(np.max(np.abs(pf.d1 - pa.d1)),
                            np.max(np.abs(pf.d2 - pa.d2))))
        assert measured_order(errs) >= 1.8

    def test_pole_regularity(self):
        # |A|^2 error at the node nearest the pole at most 5x interior error.
        imm = make_sphere(1.0, size=64, source="fd")
        ef = extrinsic_field(imm)
        err = np.abs(ef.A2 - 2.0)
        interior = np.max(err[16:48])
        assert err[0] <= 5 * max(interior, 1e-14)
        assert err[-1] <= 5 * max(interior, 1e-14)

    def test_analytic_requires_provider(self, euclid3):
        with pytest.raises(ShapeError):
            build_immersion("graph-torus", torus_grid((16, 16)), euclid3,
                            params=(2.0, 0.5, 0.1, 2, 1),
                            derivative_source="analytic")


class TestExport:
    def test_csv_columns(self, tmp_path):
        imm = make_sphere(1.0, size=32, source="fd")
        path = tmp_path / "imm.csv"
        imm.export_csv(path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "param0,x0,x1,x2"
        assert len(lines) == imm.num_nodes + 1
