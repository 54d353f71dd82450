"""Model ambient spaces with exact curvature data.

Four model kinds are supported:

* ``euclidean``   -- flat R^m in Cartesian coordinates,
* ``sphere``      -- the round sphere of sectional curvature ``c > 0``,
  realized by its embedding coordinates in R^{m+1} with the constraint
  |y|^2 = 1/c,
* ``hyperbolic``  -- hyperbolic space of curvature ``-c``, realized on the
  hyperboloid <y, y>_L = -1/c (Minkowski signature -,+,...,+),
* ``perturbed``   -- a conformal metric e^{2 phi} delta over Cartesian R^m
  with phi = eps * prod_A cos(k x_A).  This is the only model with nonzero
  covariant derivative of the curvature tensor.

Curvature components follow the sign convention in which the sectional
curvature of an orthonormal pair (e_A, e_B) is the component R_{ABAB}; space
forms then satisfy R_{ABCD} = c (d_AC d_BD - d_AD d_BC).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ChartError, FrameError, InputError

_CHART_TOL = 1e-8
_FRAME_TOL = 1e-10

SPACE_FORM_KINDS = ("euclidean", "sphere", "hyperbolic")


@dataclass(frozen=True)
class CurvatureBounds:
    """Geometry bounds for the ambient space: -K1 <= K_N <= K2, |DR| <= L.

    ``i_N`` is the injectivity-radius lower bound.  It is carried for
    completeness but never consumed numerically.
    """

    K1: float
    K2: float
    L: float
    i_N: float = 1.0

    def __post_init__(self):
        if self.K1 < 0 or self.K2 < 0 or self.L < 0:
            raise InputError("curvature bounds K1, K2, L must be nonnegative")
        if self.i_N <= 0:
            raise InputError("injectivity radius bound i_N must be positive")


class AmbientModel:
    """A model Riemannian ambient space of dimension ``total_dim`` = n + d."""

    def __init__(self, kind, total_dim, c=0.0, perturb_amplitude=0.0,
                 perturb_wavenumber=1.0):
        if total_dim < 2:
            raise InputError("ambient total_dim must be >= 2")
        if kind not in ("euclidean", "sphere", "hyperbolic", "perturbed"):
            raise InputError(f"unknown ambient kind {kind!r}")
        if kind in ("sphere", "hyperbolic") and c <= 0:
            raise InputError(f"{kind} model requires curvature scale c > 0")
        if kind == "perturbed":
            if abs(perturb_amplitude) > 0.5:
                raise InputError("perturbation amplitude must satisfy |eps| <= 0.5")
            if perturb_wavenumber <= 0:
                raise InputError("perturbation wavenumber must be positive")
        self.kind = kind
        self.total_dim = int(total_dim)
        self.c = float(c)
        self.eps = float(perturb_amplitude)
        self.k = float(perturb_wavenumber)

    # -- constructors -----------------------------------------------------

    @classmethod
    def euclidean(cls, total_dim):
        return cls("euclidean", total_dim)

    @classmethod
    def sphere(cls, c, total_dim):
        return cls("sphere", total_dim, c=c)

    @classmethod
    def hyperbolic(cls, c, total_dim):
        return cls("hyperbolic", total_dim, c=c)

    @classmethod
    def perturbed(cls, total_dim, amplitude, wavenumber=1.0):
        return cls("perturbed", total_dim, perturb_amplitude=amplitude,
                   perturb_wavenumber=wavenumber)

    def __repr__(self):
        if self.kind in ("sphere", "hyperbolic"):
            return f"AmbientModel({self.kind}, c={self.c}, dim={self.total_dim})"
        if self.kind == "perturbed":
            return (f"AmbientModel(perturbed, eps={self.eps}, k={self.k}, "
                    f"dim={self.total_dim})")
        return f"AmbientModel(euclidean, dim={self.total_dim})"

    # -- basic structure ---------------------------------------------------

    @property
    def is_space_form(self):
        return self.kind in SPACE_FORM_KINDS

    @property
    def is_embedded(self):
        """True when points live on a constraint surface in a flat chart."""
        return self.kind in ("sphere", "hyperbolic")

    @property
    def coord_dim(self):
        return self.total_dim + 1 if self.is_embedded else self.total_dim

    @property
    def space_form_curvature(self):
        if self.kind == "euclidean":
            return 0.0
        if self.kind == "sphere":
            return self.c
        if self.kind == "hyperbolic":
            return -self.c
        raise InputError("perturbed model is not a space form")

    def _signature(self):
        """Diagonal of the flat chart metric (Minkowski for hyperbolic)."""
        s = np.ones(self.coord_dim)
        if self.kind == "hyperbolic":
            s[0] = -1.0
        return s

    def conformal_factor(self, points):
        """phi(x) for the perturbed model; zero for the others."""
        points = np.asarray(points, dtype=float)
        if self.kind != "perturbed":
            return np.zeros(points.shape[:-1])
        return self.eps * np.prod(np.cos(self.k * points), axis=-1)

    def phi_partial(self, points, counts):
        """Partial derivative of phi with given per-coordinate orders.

        d^c/dx^c cos(kx) = k^c cos(kx + c pi/2), so any multi-partial of the
        product of cosines stays in closed form.
        """
        points = np.asarray(points, dtype=float)
        if self.kind != "perturbed":
            return np.zeros(points.shape[:-1])
        counts = np.asarray(counts)
        shift = counts * (math.pi / 2.0)
        factors = np.cos(self.k * points + shift)
        scale = self.eps * float(np.prod(self.k ** counts))
        return scale * np.prod(factors, axis=-1)

    def _phi_grad(self, points):
        """All first partials phi_A, shape points.shape."""
        dim = self.coord_dim
        out = np.zeros(np.asarray(points, dtype=float).shape)
        for a in range(dim):
            counts = np.zeros(dim, dtype=int)
            counts[a] = 1
            out[..., a] = self.phi_partial(points, counts)
        return out

    def _phi_hess(self, points):
        dim = self.coord_dim
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1] + (dim, dim))
        for a in range(dim):
            for b in range(a, dim):
                counts = np.zeros(dim, dtype=int)
                counts[a] += 1
                counts[b] += 1
                val = self.phi_partial(pts, counts)
                out[..., a, b] = val
                out[..., b, a] = val
        return out

    def _phi_third(self, points):
        dim = self.coord_dim
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1] + (dim, dim, dim))
        for a in range(dim):
            for b in range(a, dim):
                for c in range(b, dim):
                    counts = np.zeros(dim, dtype=int)
                    counts[a] += 1
                    counts[b] += 1
                    counts[c] += 1
                    val = self.phi_partial(pts, counts)
                    for idx in {(a, b, c), (a, c, b), (b, a, c),
                                (b, c, a), (c, a, b), (c, b, a)}:
                        out[(...,) + idx] = val
        return out

    # -- chart handling ----------------------------------------------------

    def chart_residual(self, points):
        """Deviation from the chart constraint (zero for chart-free kinds)."""
        points = np.asarray(points, dtype=float)
        if not self.is_embedded:
            return np.zeros(points.shape[:-1])
        sig = self._signature()
        q = np.einsum("...a,a,...a->...", points, sig, points)
        target = 1.0 / self.c if self.kind == "sphere" else -1.0 / self.c
        return np.abs(q - target)

    def check_chart(self, points, tol=_CHART_TOL):
        res = self.chart_residual(points)
        if np.any(res > tol):
            raise ChartError(
                f"point violates {self.kind} chart constraint "
                f"(residual {float(np.max(res)):.3e} > {tol:.1e})")

    def project_chart(self, points):
        """Project points back onto the constraint surface (renormalize)."""
        points = np.asarray(points, dtype=float)
        if not self.is_embedded:
            return points
        sig = self._signature()
        q = np.einsum("...a,a,...a->...", points, sig, points)
        if self.kind == "sphere":
            scale = 1.0 / np.sqrt(self.c * q)
        else:
            if np.any(q >= 0):
                raise ChartError("point left the hyperboloid chart")
            scale = 1.0 / np.sqrt(-self.c * q)
        return points * scale[..., None]

    def chart_normal_projector(self, points):
        """Matrix projecting onto the model tangent space at each point.

        Identity for chart-free kinds.  For embedded kinds removes the
        component along the constraint normal (the position vector itself).
        """
        points = np.asarray(points, dtype=float)
        dim = self.coord_dim
        eye = np.eye(dim)
        if not self.is_embedded:
            return np.broadcast_to(eye, points.shape[:-1] + (dim, dim)).copy()
        sig = self._signature()
        q = np.einsum("...a,a,...a->...", points, sig, points)
        outer = points[..., :, None] * (sig * points)[..., None, :]
        return eye - outer / q[..., None, None]

    def tangent_project(self, points, vectors):
        """Remove the chart-normal component of ``vectors`` at ``points``."""
        if not self.is_embedded:
            return np.asarray(vectors, dtype=float)
        points = np.asarray(points, dtype=float)
        vectors = np.asarray(vectors, dtype=float)
        sig = self._signature()
        q = np.einsum("...a,a,...a->...", points, sig, points)
        coef = np.einsum("...a,a,...a->...", vectors, sig, points) / q
        return vectors - coef[..., None] * points

    # -- inner products ----------------------------------------------------

    def dot(self, points, u, v):
        """Model inner product of tangent vectors ``u``, ``v`` at ``points``.

        ``u`` and ``v`` may carry extra leading axes; ``points`` broadcasts.
        """
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        sig = self._signature()
        base = np.einsum("...a,a,...a->...", u, sig, v)
        if self.kind == "perturbed":
            base = base * np.exp(2.0 * self.conformal_factor(points))
        return base

    def metric_diag(self, points):
        """Diagonal of the chart metric at each point, shape (..., cdim).

        The chart metrics of all four kinds are diagonal, so inner products
        reduce to weighted coordinate sums with these weights.
        """
        pts = np.asarray(points, dtype=float)
        sig = self._signature()
        out = np.broadcast_to(sig, pts.shape[:-1] + (self.coord_dim,))
        if self.kind == "perturbed":
            out = out * np.exp(2.0 * self.conformal_factor(pts))[..., None]
        return np.ascontiguousarray(out)

    def norm(self, points, u):
        return np.sqrt(self.dot(points, u, u))

    # -- coordinate connection ----------------------------------------------

    @property
    def has_coordinate_connection(self):
        return self.kind == "perturbed"

    def christoffel(self, points):
        """Chart Christoffel symbols Gamma^C_{AB}, shape (..., C, A, B).

        Zero in the flat charts of the other kinds.
        """
        pts = np.asarray(points, dtype=float)
        dim = self.coord_dim
        if self.kind != "perturbed":
            return np.zeros(pts.shape[:-1] + (dim, dim, dim))
        grad = self._phi_grad(pts)
        eye = np.eye(dim)
        # Conformal metric e^{2 phi} delta:
        # Gamma^C_AB = d_CA phi_B + d_CB phi_A - d_AB phi_C
        g1 = np.einsum("ca,...b->...cab", eye, grad)
        g2 = np.einsum("cb,...a->...cab", eye, grad)
        g3 = np.einsum("ab,...c->...cab", eye, grad)
        return g1 + g2 - g3

    def christoffel_grad(self, points):
        """d_D Gamma^C_{AB}, shape (..., D, C, A, B)."""
        pts = np.asarray(points, dtype=float)
        dim = self.coord_dim
        if self.kind != "perturbed":
            return np.zeros(pts.shape[:-1] + (dim, dim, dim, dim))
        hess = self._phi_hess(pts)
        eye = np.eye(dim)
        g1 = np.einsum("ca,...db->...dcab", eye, hess)
        g2 = np.einsum("cb,...da->...dcab", eye, hess)
        g3 = np.einsum("ab,...dc->...dcab", eye, hess)
        return g1 + g2 - g3

    def _christoffel_hess(self, points):
        """d_E d_D Gamma^C_{AB}, shape (..., E, D, C, A, B)."""
        pts = np.asarray(points, dtype=float)
        dim = self.coord_dim
        third = self._phi_third(pts)
        eye = np.eye(dim)
        g1 = np.einsum("ca,...edb->...edcab", eye, third)
        g2 = np.einsum("cb,...eda->...edcab", eye, third)
        g3 = np.einsum("ab,...edc->...edcab", eye, third)
        return g1 + g2 - g3

    def gamma_apply(self, points, u, v):
        """Gamma(u, v)^C = Gamma^C_{AB} u^A v^B (zero unless perturbed)."""
        if not self.has_coordinate_connection:
            return np.zeros(np.broadcast(np.asarray(u), np.asarray(v)).shape)
        gam = self.christoffel(points)
        return np.einsum("...cab,...a,...b->...c", gam, u, v)

    # -- curvature -----------------------------------------------------------

    def metric_coord(self, points):
        """Chart metric g_{AB} at each point."""
        pts = np.asarray(points, dtype=float)
        dim = self.coord_dim
        sig = np.diag(self._signature())
        g = np.broadcast_to(sig, pts.shape[:-1] + (dim, dim)).copy()
        if self.kind == "perturbed":
            g = g * np.exp(2.0 * self.conformal_factor(pts))[..., None, None]
        return g

    def curvature_coord(self, points):
        """Coordinate curvature components R_{ABCD} of the chart metric.

        Only meaningful for chart-covered kinds (euclidean and perturbed);
        embedded space forms report their frame components directly.
        """
        pts = np.asarray(points, dtype=float)
        dim = self.coord_dim
        if self.kind == "euclidean":
            return np.zeros(pts.shape[:-1] + (dim,) * 4)
        if self.kind != "perturbed":
            raise InputError(
                "coordinate curvature is only defined for chart-covered kinds")
        gam = self.christoffel(pts)
        dgam = self.christoffel_grad(pts)
        # Coefficient of the curvature operator on coordinate fields:
        # R^F_{ABC} = d_B Gamma^F_{AC} - d_A Gamma^F_{BC}
        #             + Gamma^E_{AC} Gamma^F_{BE} - Gamma^E_{BC} Gamma^F_{AE}
        rf = (np.einsum("...bfac->...fabc", dgam)
              - np.einsum("...afbc->...fabc", dgam)
              + np.einsum("...eac,...fbe->...fabc", gam, gam)
              - np.einsum("...ebc,...fae->...fabc", gam, gam))
        g = self.metric_coord(pts)
        return np.einsum("...fabc,...fd->...abcd", rf, g)

    def nabla_curvature_coord(self, points):
        """Coordinate components (D_E R)_{ABCD}, shape (..., E, A, B, C, D)."""
        pts = np.asarray(points, dtype=float)
        dim = self.coord_dim
        if self.kind == "euclidean":
            return np.zeros(pts.shape[:-1] + (dim,) * 5)
        if self.kind != "perturbed":
            raise InputError(
                "coordinate curvature is only defined for chart-covered kinds")
        gam = self.christoffel(pts)
        dgam = self.christoffel_grad(pts)
        d2gam = self._christoffel_hess(pts)
        g = self.metric_coord(pts)
        grad = self._phi_grad(pts)
        # dg_{FD}/dx^E = 2 phi_E g_FD for the conformal metric.
        dg = 2.0 * np.einsum("...e,...fd->...efd", grad, g)

        rf = (np.einsum("...bfac->...fabc", dgam)
              - np.einsum("...afbc->...fabc", dgam)
              + np.einsum("...eac,...fbe->...fabc", gam, gam)
              - np.einsum("...ebc,...fae->...fabc", gam, gam))
        # Partial derivative of R^F_{ABC}.
        drf = (np.einsum("...ebfac->...efabc", d2gam)
               - np.einsum("...eafbc->...efabc", d2gam)
               + np.einsum("...egac,...fbg->...efabc", dgam, gam)
               + np.einsum("...gac,...efbg->...efabc", gam, dgam)
               - np.einsum("...egbc,...fag->...efabc", dgam, gam)
               - np.einsum("...gbc,...efag->...efabc", gam, dgam))
        dr_low = (np.einsum("...efabc,...fd->...eabcd", drf, g)
                  + np.einsum("...fabc,...efd->...eabcd", rf, dg))
        r_low = np.einsum("...fabc,...fd->...abcd", rf, g)
        corr = (np.einsum("...fea,...fbcd->...eabcd", gam, r_low)
                + np.einsum("...feb,...afcd->...eabcd", gam, r_low)
                + np.einsum("...fec,...abfd->...eabcd", gam, r_low)
                + np.einsum("...fed,...abcf->...eabcd", gam, r_low))
        return dr_low - corr

    def _space_form_frame_tensor(self, m):
        eye = np.eye(m)
        c = self.space_form_curvature
        return c * (np.einsum("ac,bd->abcd", eye, eye)
                    - np.einsum("ad,bc->abcd", eye, eye))

    def check_frame(self, point, frame, tol=_FRAME_TOL):
        """Validate an (n+d)-frame as orthonormal at ``point``."""
        frame = np.asarray(frame, dtype=float)
        if frame.shape != (self.total_dim, self.coord_dim):
            raise FrameError(
                f"frame must have shape ({self.total_dim}, {self.coord_dim})")
        gram = self.dot(point, frame[:, None, :], frame[None, :, :])
        if not np.allclose(gram, np.eye(self.total_dim), atol=tol, rtol=0.0):
            raise FrameError("frame is not orthonormal at the given point")
        if self.is_embedded:
            sig = self._signature()
            inner = np.einsum("ia,a,a->i", frame, sig, np.asarray(point, float))
            if np.any(np.abs(inner) > 1e-8):
                raise FrameError("frame is not tangent to the model chart")

    def curvature_frame(self, point, frame=None, check=True):
        """Curvature components in an orthonormal frame, shape (m, m, m, m).

        Space forms do not depend on the frame; the perturbed model contracts
        its coordinate tensor with the supplied frame vectors.
        """
        m = self.total_dim
        if self.is_space_form:
            if frame is not None and check:
                self.check_frame(point, frame)
            return self._space_form_frame_tensor(m)
        if frame is None:
            raise FrameError("perturbed model requires an explicit frame")
        if check:
            self.check_chart(np.asarray(point, dtype=float)[None, :]) \
                if self.is_embedded else None
            self.check_frame(point, frame)
        rc = self.curvature_coord(point)
        f = np.asarray(frame, dtype=float)
        return np.einsum("ABCD,aA,bB,cC,dD->abcd", rc, f, f, f, f)

    def nabla_curvature_frame(self, point, frame=None, check=True):
        """(D R) components in an orthonormal frame, shape (m,)*5."""
        m = self.total_dim
        if self.is_space_form:
            if frame is not None and check:
                self.check_frame(point, frame)
            return np.zeros((m,) * 5)
        if frame is None:
            raise FrameError("perturbed model requires an explicit frame")
        if check:
            self.check_frame(point, frame)
        nr = self.nabla_curvature_coord(point)
        f = np.asarray(frame, dtype=float)
        return np.einsum("EABCD,eE,aA,bB,cC,dD->eabcd", nr, f, f, f, f, f)

    def orthonormal_frame(self, point, rotation=None):
        """A deterministic orthonormal tangent frame at ``point``.

        Gram-Schmidt over the coordinate basis (projected to the model tangent
        space for embedded kinds).  ``rotation`` optionally remixes the frame
        by an orthogonal (m x m) matrix.
        """
        point = np.asarray(point, dtype=float)
        dim = self.coord_dim
        m = self.total_dim
        frame = []
        for a in range(dim):
            v = np.zeros(dim)
            v[a] = 1.0
            v = self.tangent_project(point, v)
            for e in frame:
                v = v - self.dot(point, v, e) * e
            nrm = self.dot(point, v, v)
            if nrm <= 1e-12:
                continue
            frame.append(v / math.sqrt(nrm))
            if len(frame) == m:
                break
        if len(frame) < m:
            raise FrameError("failed to complete an orthonormal frame")
        frame = np.asarray(frame)
        if rotation is not None:
            frame = np.asarray(rotation, dtype=float) @ frame
        return frame

    def min_sectional(self, point, frame=None, n_random=100, seed=0):
        """Minimum ambient sectional curvature at ``point``.

        Exact for space forms; sampled over coordinate-pair planes plus
        random planes for the perturbed model.
        """
        if self.is_space_form:
            return self.space_form_curvature
        if frame is None:
            frame = self.orthonormal_frame(point)
        rf = self.curvature_frame(point, frame, check=False)
        return float(np.min(_plane_sectionals(rf, n_random=n_random, seed=seed)))


def _plane_sectionals(r_frame, n_random=100, seed=0):
    """Sectional curvatures over coordinate pairs plus random 2-planes."""
    m = r_frame.shape[0]
    vals = [r_frame[a, b, a, b] for a in range(m) for b in range(a + 1, m)]
    if n_random > 0:
        rng = np.random.default_rng(seed)
        for _ in range(n_random):
            u = rng.standard_normal(m)
            u /= np.linalg.norm(u)
            v = rng.standard_normal(m)
            v -= (v @ u) * u
            v /= np.linalg.norm(v)
            vals.append(np.einsum("abcd,a,b,c,d->", r_frame, u, v, u, v))
    return np.asarray(vals)


def curvature_tensor_at(model, point, frame):
    """Ambient curvature components in the given orthonormal frame."""
    model.check_frame(point, frame)
    return model.curvature_frame(point, frame, check=False)


def nabla_curvature_at(model, point, frame):
    """Frame components of the first covariant derivative of the curvature."""
    model.check_frame(point, frame)
    return model.nabla_curvature_frame(point, frame, check=False)


@dataclass
class BoundReport:
    """Outcome of a geometry-bounds audit over a sample of ambient points."""

    sec_min: float
    sec_max: float
    nabla_max: float
    berger_mixed: float
    berger_distinct: float
    berger_mixed_bound: float
    berger_distinct_bound: float
    berger_ok: bool
    passed: bool
    worst: dict


def verify_geometry_bounds(model, sample_points, bounds, n_random=100, seed=0,
                           slack=1e-10):
    """Check -K1 <= K <= K2 and |DR| <= L over ``sample_points``.

    Berger's component bounds |R_ACBC| <= (K1+K2)/2 (A != B) and
    |R_ABCD| <= 2(K1+K2)/3 (all indices distinct) are evaluated and reported
    alongside.
    """
    pts = [np.asarray(p, dtype=float) for p in sample_points]
    if len(pts) == 0:
        raise InputError("verify_geometry_bounds needs at least one sample point")
    sec_min = math.inf
    sec_max = -math.inf
    nabla_max = 0.0
    berger_mixed = 0.0
    berger_distinct = 0.0
    worst = {"sec_min_point": None, "sec_max_point": None, "nabla_point": None}
    m = model.total_dim
    for p in pts:
        frame = model.orthonormal_frame(p)
        rf = model.curvature_frame(p, frame, check=False)
        secs = _plane_sectionals(rf, n_random=n_random, seed=seed)
        lo, hi = float(np.min(secs)), float(np.max(secs))
        if lo < sec_min:
            sec_min, worst["sec_min_point"] = lo, p
        if hi > sec_max:
            sec_max, worst["sec_max_point"] = hi, p
        nr = model.nabla_curvature_frame(p, frame, check=False)
        nn = float(np.sqrt(np.sum(nr ** 2)))
        if nn > nabla_max:
            nabla_max, worst["nabla_point"] = nn, p
        for a in range(m):
            for b in range(m):
                if a == b:
                    continue
                berger_mixed = max(berger_mixed,
                                   float(np.max(np.abs(rf[a, :, b, :].diagonal()))))
        if m >= 4:
            for a in range(m):
                for b in range(m):
                    for c in range(m):
                        for d in range(m):
                            if len({a, b, c, d}) == 4:
                                berger_distinct = max(berger_distinct,
                                                      abs(float(rf[a, b, c, d])))
    mixed_bound = 0.5 * (bounds.K1 + bounds.K2)
    distinct_bound = (2.0 / 3.0) * (bounds.K1 + bounds.K2)
    berger_ok = (berger_mixed <= mixed_bound + slack
                 and berger_distinct <= distinct_bound + slack)
    passed = (sec_min >= -bounds.K1 - slack and sec_max <= bounds.K2 + slack
              and nabla_max <= bounds.L + slack)
    return BoundReport(sec_min=sec_min, sec_max=sec_max, nabla_max=nabla_max,
                       berger_mixed=berger_mixed, berger_distinct=berger_distinct,
                       berger_mixed_bound=mixed_bound,
                       berger_distinct_bound=distinct_bound,
                       berger_ok=berger_ok, passed=passed, worst=worst)
