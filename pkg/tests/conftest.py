import numpy as np
import pytest

from mcflow.ambient import AmbientModel, CurvatureBounds
from mcflow.immersion import axisym_grid, build_immersion, torus_grid


@pytest.fixture(scope="session")
def euclid3():
    return AmbientModel.euclidean(3)


@pytest.fixture(scope="session")
def euclid4():
    return AmbientModel.euclidean(4)


@pytest.fixture(scope="session")
def sphere3():
    return AmbientModel.sphere(1.0, 3)


@pytest.fixture(scope="session")
def hyperbolic3():
    return AmbientModel.hyperbolic(1.0, 3)


def make_sphere(radius=1.0, size=64, ambient=None, source="analytic", n=2):
    ambient = ambient or AmbientModel.euclidean(n + 1)
    return build_immersion("round-sphere", axisym_grid(n, size), ambient,
                           params=(radius,), derivative_source=source)


def make_ellipsoid(axes=(1.2, 1.0, 1.0), size=64, source="fd", ambient=None):
    n = len(axes) - 1
    ambient = ambient or AmbientModel.euclidean(n + 1)
    return build_immersion("ellipsoid", axisym_grid(n, size), ambient,
                           params=axes, derivative_source=source)


def make_product_torus(radii=(1.0, 1.0), size=24, source="analytic"):
    ambient = AmbientModel.euclidean(4)
    return build_immersion("product-torus", torus_grid((size, size)), ambient,
                           params=radii, derivative_source=source)


def make_clifford(size=16, source="analytic", c=1.0):
    ambient = AmbientModel.sphere(c, 3)
    return build_immersion("clifford-torus", torus_grid((size, size)),
                           ambient, derivative_source=source)


def make_graph_torus(size=24, params=(2.0, 0.5, 0.1, 2.0, 1.0)):
    ambient = AmbientModel.euclidean(3)
    return build_immersion("graph-torus", torus_grid((size, size)), ambient,
                           params=params, derivative_source="fd")


def make_geodesic_sphere(rho=0.7, size=48, kind="sphere", c=1.0, source="analytic"):
    if kind == "sphere":
        ambient = AmbientModel.sphere(c, 3)
    else:
        ambient = AmbientModel.hyperbolic(c, 3)
    return build_immersion("round-sphere", axisym_grid(2, size), ambient,
                           params=(rho,), derivative_source=source)


def flat_bounds():
    return CurvatureBounds(0.0, 0.0, 0.0)


def measured_order(values):
    """Least-squares convergence order from successive halvings."""
    vals = np.asarray(values, dtype=float)
    levels = np.arange(len(vals))
    slope = np.polyfit(levels, np.log2(vals), 1)[0]
    return -slope
