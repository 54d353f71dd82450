"""Sampled immersions F: M^n -> N^{n+d} on structured parameter grids.

Two grid topologies are supported:

* ``torus``          -- a fully periodic n-dimensional grid (n = 2 here),
  parameters in [0, 2 pi) per axis;
* ``axisym-profile`` -- a 1D profile over the interval [0, pi], sampled at
  cell centers, generating a rotationally symmetric hypersurface.  The
  rotation group acts on a designated block of ambient coordinates; the
  stored positions are the meridian (first rotational coordinate active,
  the others zero).  Ghost nodes across the poles are obtained by the
  reflection that flips the rotational block, which places them on the
  smooth continuation of the profile, so centered stencils remain valid up
  to the poles.

Derivatives in rotational directions are exact: the chart in those
directions is the exponential chart of the symmetry orbit and its partials
at the meridian are symmetrized products of rotation generators applied to
the position.  Profile-direction derivatives come from either centered
finite differences (``fd`` source) or closed forms (``analytic`` source).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, InputError, ShapeError

TOPOLOGY_TORUS = "torus"
TOPOLOGY_AXISYM = "axisym-profile"

# Relative threshold below which a Gram-Schmidt candidate is skipped.
GS_SKIP_THRESHOLD = 1e-6

# |S^{n-1}| factors for the axisymmetric quadrature.
_SPHERE_MEASURE = {2: 2.0 * math.pi, 3: 4.0 * math.pi}


@dataclass(frozen=True)
class ParamGrid:
    """Structured parameter grid for a sampled immersion."""

    n: int
    topology: str
    sizes: tuple
    spacings: tuple

    def __post_init__(self):
        if self.topology not in (TOPOLOGY_TORUS, TOPOLOGY_AXISYM):
            raise InputError(f"unknown grid topology {self.topology!r}")
        if any(s < 8 for s in self.sizes):
            raise InputError("every grid axis needs at least 8 nodes")
        if any(h <= 0 for h in self.spacings):
            raise InputError("grid spacings must be positive")
        if self.topology == TOPOLOGY_TORUS:
            if self.n != 2 or len(self.sizes) != 2:
                raise InputError("torus grids are implemented for n = 2")
        else:
            if len(self.sizes) != 1:
                raise InputError("axisym-profile grids have a single axis")
            if self.n not in (2, 3):
                raise InputError("axisym-profile supports n in {2, 3}")

    @property
    def num_nodes(self):
        return int(np.prod(self.sizes))


def torus_grid(sizes):
    sizes = tuple(int(s) for s in sizes)
    spacings = tuple(2.0 * math.pi / s for s in sizes)
    return ParamGrid(n=len(sizes), topology=TOPOLOGY_TORUS, sizes=sizes,
                     spacings=spacings)


def axisym_grid(n, size):
    size = int(size)
    return ParamGrid(n=n, topology=TOPOLOGY_AXISYM, sizes=(size,),
                     spacings=(math.pi / size,))


@dataclass
class Partials:
    """Position and parameter-derivative arrays at each node."""

    X: np.ndarray            # (N, cdim)
    d1: np.ndarray           # (N, n, cdim)
    d2: np.ndarray           # (N, n, n, cdim)
    d3: np.ndarray = None    # (N, n, n, n, cdim) when order 3 was requested


@dataclass
class AdaptedFrame:
    """Coordinate tangents plus an orthonormal normal frame at a node."""

    tangent: np.ndarray      # (n, cdim)
    normal: np.ndarray       # (d, cdim)


def _plane_generator(dim, i, j):
    """Rotation generator J with J e_j = e_i, J e_i = -e_j."""
    J = np.zeros((dim, dim))
    J[i, j] = 1.0
    J[j, i] = -1.0
    return J


def _sym_product(mats):
    """Symmetrized product over all orderings of the given matrices."""
    dim = mats[0].shape[0]
    acc = np.zeros((dim, dim))
    perms = list(itertools.permutations(range(len(mats))))
    for p in perms:
        term = np.eye(dim)
        for idx in p:
            term = term @ mats[idx]
        acc += term
    return acc / len(perms)


def _fd_stack(ext, h, order):
    """Centered profile-direction derivatives from a ghost-extended array.

    ``ext`` has G = order-dependent ghosts on each side; returns the stack
    (d0, d1, d2[, d3]) on the interior nodes.
    """
    g = 2
    c = ext[g:-g]
    p1, m1 = ext[g + 1:-g + 1 or None], ext[g - 1:-g - 1]
    out = [c, (p1 - m1) / (2.0 * h), (p1 - 2.0 * c + m1) / h ** 2]
    if order >= 3:
        p2, m2 = ext[g + 2:len(ext) - g + 2 or None], ext[g - 2:-g - 2]
        out.append((p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h ** 3))
    return out


class DiscreteImmersion:
    """A sampled immersion with derivative access.

    Positions are ambient chart coordinates per node (embedding coordinates
    for sphere/hyperboloid models).  The object is immutable in spirit:
    flow steps produce new instances via :meth:`with_positions`.
    """

    def __init__(self, grid, ambient, positions, shape="custom",
                 shape_params=(), derivative_source="fd", rot_block=None,
                 orbit_planes=None, profile_formula=None):
        self.grid = grid
        self.ambient = ambient
        self.positions = np.asarray(positions, dtype=float)
        self.shape = shape
        self.shape_params = tuple(shape_params)
        if derivative_source not in ("fd", "analytic"):
            raise InputError("derivative_source must be 'fd' or 'analytic'")
        self.derivative_source = derivative_source
        self.rot_block = tuple(rot_block) if rot_block is not None else None
        self.orbit_planes = orbit_planes
        self.profile_formula = profile_formula
        if self.positions.shape != (grid.num_nodes, ambient.coord_dim):
            raise InputError(
                f"positions must have shape ({grid.num_nodes}, "
                f"{ambient.coord_dim})")
        if grid.topology == TOPOLOGY_AXISYM and self.rot_block is None:
            raise InputError("axisym immersions need a rotational block")
        if derivative_source == "analytic" and orbit_planes is None \
                and profile_formula is None:
            raise InputError(
                f"shape {shape!r} has no analytic derivative provider")

    # -- structure ----------------------------------------------------------

    @property
    def n(self):
        return self.grid.n

    @property
    def d(self):
        return self.ambient.total_dim - self.grid.n

    @property
    def cdim(self):
        return self.ambient.coord_dim

    @property
    def num_nodes(self):
        return self.grid.num_nodes

    def node_params(self):
        """Parameter coordinates per node, shape (N, axes)."""
        if self.grid.topology == TOPOLOGY_AXISYM:
            m = self.grid.sizes[0]
            h = self.grid.spacings[0]
            return ((np.arange(m) + 0.5) * h)[:, None]
        nu, nv = self.grid.sizes
        hu, hv = self.grid.spacings
        uu, vv = np.meshgrid(np.arange(nu) * hu, np.arange(nv) * hv,
                             indexing="ij")
        return np.stack([uu.ravel(), vv.ravel()], axis=1)

    def with_positions(self, positions):
        return DiscreteImmersion(
            grid=self.grid, ambient=self.ambient, positions=positions,
            shape=self.shape, shape_params=self.shape_params,
            derivative_source=self.derivative_source, rot_block=self.rot_block,
            orbit_planes=self.orbit_planes,
            profile_formula=self.profile_formula)

    def reflection_matrix(self):
        """Isometry mapping the profile point at u to the one at -u."""
        s = np.ones(self.cdim)
        for idx in self.rot_block:
            s[idx] = -1.0
        return s

    # -- derivative machinery -------------------------------------------------

    def _extended_meridian(self, ghosts):
        """Meridian positions extended through both poles by reflection."""
        pos = self.positions
        s = self.reflection_matrix()
        head = pos[:ghosts][::-1] * s
        tail = pos[-ghosts:][::-1] * s
        return np.concatenate([head, pos, tail], axis=0)

    def _profile_stack(self, ghosts, order):
        """(d0..d3) profile-direction derivatives on ghost-extended nodes.

        The returned arrays have ``num_nodes + 2 * ghosts`` rows.
        """
        h = self.grid.spacings[0]
        need = ghosts + 2
        ext = self._extended_meridian(need)
        if self.derivative_source == "fd" or (
                self.orbit_planes is None and self.profile_formula is None):
            stack = _fd_stack(ext, h, order=max(order, 2))
            cut = need - 2 - ghosts
            if cut > 0:
                stack = [a[cut:-cut] for a in stack]
            return stack
        if self.orbit_planes is not None:
            J = _plane_generator(self.cdim, *self.orbit_planes[0])
            base = ext[need - ghosts: len(ext) - need + ghosts or None]
            stack = [base]
            cur = base
            for _ in range(max(order, 2)):
                cur = cur @ J.T
                stack.append(cur)
            return stack
        # Closed-form profile (shape-specific); valid only while positions
        # still match the constructed shape.
        m = self.grid.sizes[0]
        u = (np.arange(-ghosts, m + ghosts) + 0.5) * h
        stack = self.profile_formula(u, max(order, 2))
        interior = stack[0][ghosts:len(u) - ghosts or None]
        if not np.allclose(interior, self.positions, atol=1e-9, rtol=0.0):
            raise InputError(
                "analytic profile no longer matches the node positions; "
                "use the finite-difference source for evolved immersions")
        return stack

    def _rot_generators(self):
        dim = self.cdim
        r0 = self.rot_block[0]
        return [_plane_generator(dim, ra, r0) for ra in self.rot_block[1:]]

    def partials(self, order=2, ghosts=0):
        """Parameter partial derivatives up to ``order`` at each node.

        ``ghosts > 0`` (axisym only) also evaluates at reflected ghost nodes
        beyond the poles so that derived per-node fields can be differenced
        in the profile direction.
        """
        if self.grid.topology == TOPOLOGY_AXISYM:
            return self._partials_axisym(order, ghosts)
        return self._partials_torus(order)

    def _partials_axisym(self, order, ghosts):
        n = self.n
        stack = self._profile_stack(ghosts, order)
        N = stack[0].shape[0]
        cdim = self.cdim
        gens = self._rot_generators()

        def jsym(idx):
            if len(idx) == 0:
                return np.eye(cdim)
            return _sym_product([gens[a] for a in idx])

        d1 = np.zeros((N, n, cdim))
        d2 = np.zeros((N, n, n, cdim))
        d1[:, 0] = stack[1]
        for a in range(1, n):
            d1[:, a] = stack[0] @ gens[a - 1].T
        d2[:, 0, 0] = stack[2]
        for a in range(1, n):
            d2[:, 0, a] = d2[:, a, 0] = stack[1] @ gens[a - 1].T
            for b in range(a, n):
                mat = jsym((a - 1, b - 1))
                d2[:, a, b] = d2[:, b, a] = stack[0] @ mat.T
        d3 = None
        if order >= 3:
            d3 = np.zeros((N, n, n, n, cdim))
            d3[:, 0, 0, 0] = stack[3]
            for a in range(1, n):
                val = stack[2] @ gens[a - 1].T
                for perm in {(0, 0, a), (0, a, 0), (a, 0, 0)}:
                    d3[:, perm[0], perm[1], perm[2]] = val
                for b in range(1, n):
                    val2 = stack[1] @ jsym((a - 1, b - 1)).T
                    for perm in {(0, a, b), (a, 0, b), (a, b, 0)}:
                        d3[:, perm[0], perm[1], perm[2]] = val2
                    for c in range(1, n):
                        val3 = stack[0] @ jsym((a - 1, b - 1, c - 1)).T
                        d3[:, a, b, c] = val3
        return Partials(X=stack[0], d1=d1, d2=d2, d3=d3)

    def _torus_axis_stacks(self, order):
        """Per-axis derivative stacks d^k/du_a^k for k = 0..order."""
        nu, nv = self.grid.sizes
        arr = self.positions.reshape(nu, nv, self.cdim)
        if self.derivative_source == "analytic" and self.orbit_planes:
            stacks = []
            for axis in range(2):
                J = _plane_generator(self.cdim, *self.orbit_planes[axis])
                stack = [arr]
                cur = arr
                for _ in range(order):
                    cur = cur @ J.T
                    stack.append(cur)
                stacks.append(stack)
            return arr, stacks
        stacks = []
        for axis in range(2):
            h = self.grid.spacings[axis]
            p1 = np.roll(arr, -1, axis=axis)
            m1 = np.roll(arr, 1, axis=axis)
            stack = [arr, (p1 - m1) / (2 * h), (p1 - 2 * arr + m1) / h ** 2]
            if order >= 3:
                p2 = np.roll(arr, -2, axis=axis)
                m2 = np.roll(arr, 2, axis=axis)
                stack.append((p2 - 2 * p1 + 2 * m1 - m2) / (2 * h ** 3))
            stacks.append(stack)
        return arr, stacks

    def _torus_mixed(self, counts, stacks):
        """Mixed partial with per-axis derivative counts (FD composition)."""
        cu, cv = counts
        if self.derivative_source == "analytic" and self.orbit_planes:
            Ju = _plane_generator(self.cdim, *self.orbit_planes[0])
            Jv = _plane_generator(self.cdim, *self.orbit_planes[1])
            mat = np.linalg.matrix_power(Ju, cu) @ np.linalg.matrix_power(Jv, cv)
            arr = self.positions.reshape(*self.grid.sizes, self.cdim)
            return arr @ mat.T
        arr = stacks[0][cu] if cv == 0 else stacks[1][cv] if cu == 0 else None
        if arr is not None:
            return arr
        # Apply the v-stencil to the u-differentiated array.
        base = stacks[0][cu]
        h = self.grid.spacings[1]
        if cv == 1:
            return (np.roll(base, -1, axis=1) - np.roll(base, 1, axis=1)) / (2 * h)
        if cv == 2:
            return (np.roll(base, -1, axis=1) - 2 * base
                    + np.roll(base, 1, axis=1)) / h ** 2
        raise InputError("unsupported mixed derivative order")

    def _partials_torus(self, order):
        n = self.n
        cdim = self.cdim
        arr, stacks = self._torus_axis_stacks(order)
        N = self.num_nodes

        def flat(a):
            return a.reshape(N, cdim)

        d1 = np.zeros((N, n, cdim))
        d2 = np.zeros((N, n, n, cdim))
        d1[:, 0] = flat(self._torus_mixed((1, 0), stacks))
        d1[:, 1] = flat(self._torus_mixed((0, 1), stacks))
        d2[:, 0, 0] = flat(self._torus_mixed((2, 0), stacks))
        d2[:, 1, 1] = flat(self._torus_mixed((0, 2), stacks))
        duv = flat(self._torus_mixed((1, 1), stacks))
        d2[:, 0, 1] = d2[:, 1, 0] = duv
        d3 = None
        if order >= 3:
            d3 = np.zeros((N, n, n, n, cdim))
            vals = {
                (3, 0): flat(self._torus_mixed((3, 0), stacks)),
                (0, 3): flat(self._torus_mixed((0, 3), stacks)),
                (2, 1): flat(self._torus_mixed((2, 1), stacks)),
                (1, 2): flat(self._torus_mixed((1, 2), stacks)),
            }
            for idx in itertools.product(range(2), repeat=3):
                cu = idx.count(0)
                d3[:, idx[0], idx[1], idx[2]] = vals[(cu, 3 - cu)]
        return Partials(X=self.positions.copy(), d1=d1, d2=d2, d3=d3)

    # -- export ---------------------------------------------------------------

    def export_csv(self, path):
        """One row per node: parameter coordinates then ambient coordinates."""
        params = self.node_params()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = [f"param{i}" for i in range(params.shape[1])]
            header += [f"x{a}" for a in range(self.cdim)]
            writer.writerow(header)
            for row_p, row_x in zip(params, self.positions):
                writer.writerow([repr(float(v)) for v in row_p]
                                + [repr(float(v)) for v in row_x])


# -- metric, frames, volume ----------------------------------------------------


def metric_all(imm, partials=None):
    """Induced metric, inverse, and sqrt(det g) at every node."""
    p = partials if partials is not None else imm.partials(order=2)
    g = imm.ambient.dot(p.X[:, None, None, :], p.d1[:, :, None, :],
                        p.d1[:, None, :, :])
    det = np.linalg.det(g)
    if np.any(~np.isfinite(det)) or np.any(det <= 0.0):
        bad = int(np.argmin(det))
        raise DegeneracyError(
            f"induced metric degenerate (det g = {det[bad]:.3e})", node=bad)
    ginv = np.linalg.inv(g)
    return g, ginv, np.sqrt(det)


def induced_metric(imm, node):
    """Per-node view: {g_ij, g^ij, sqrt(det g)}."""
    g, ginv, sdet = metric_all(imm)
    return {"g": g[node], "g_inv": ginv[node], "sqrt_det": float(sdet[node])}


def quadrature_weights(imm):
    """Cell weight multiplying sqrt(det g) in the volume quadrature."""
    if imm.grid.topology == TOPOLOGY_AXISYM:
        return imm.grid.spacings[0] * _SPHERE_MEASURE[imm.n]
    return float(np.prod(imm.grid.spacings))


def total_volume(imm, partials=None):
    """Total volume by the midpoint quadrature of sqrt(det g)."""
    _, _, sdet = metric_all(imm, partials)
    return float(np.sum(sdet) * quadrature_weights(imm))


def tangent_orthonormal_all(imm, partials, g=None):
    """Orthonormalized tangent frames E with E = L^{-1} T, g = L L^T.

    Returns (E, L) with E of shape (N, n, cdim).
    """
    if g is None:
        g, _, _ = metric_all(imm, partials)
    L = np.linalg.cholesky(g)
    E = np.linalg.solve(L, partials.d1)
    return E, L


def normal_frames_all(imm, partials, tangents_on=None):
    """Deterministic orthonormal normal frames at every node.

    Gram-Schmidt of the ambient coordinate basis (chart-projected for the
    embedded models) against the tangent space; candidates whose residual
    norm falls below ``GS_SKIP_THRESHOLD`` are skipped.
    """
    model = imm.ambient
    X = partials.X
    N, cdim = X.shape
    d = imm.d
    if tangents_on is None:
        tangents_on, _ = tangent_orthonormal_all(imm, partials)
    frames = np.zeros((N, d, cdim))
    count = np.zeros(N, dtype=int)
    for a in range(cdim):
        if np.all(count >= d):
            break
        v = np.zeros((N, cdim))
        v[:, a] = 1.0
        v = model.tangent_project(X, v)
        for i in range(imm.n):
            e = tangents_on[:, i]
            v = v - model.dot(X, v, e)[:, None] * e
        for j in range(d):
            e = frames[:, j]
            v = v - model.dot(X, v, e)[:, None] * e
        nrm2 = model.dot(X, v, v)
        accept = (nrm2 > GS_SKIP_THRESHOLD ** 2) & (count < d)
        if not np.any(accept):
            continue
        unit = np.where(accept[:, None], v / np.sqrt(np.where(accept, nrm2, 1.0))[:, None], 0.0)
        frames[np.arange(N), np.minimum(count, d - 1)] += np.where(
            accept[:, None], unit, 0.0)
        count = count + accept.astype(int)
    if np.any(count < d):
        bad = int(np.argmin(count))
        raise DegeneracyError(
            "could not complete the normal frame at a node", node=bad)
    return frames


def adapted_frame(imm, node):
    """Coordinate tangents and the orthonormal normal frame at one node."""
    p = imm.partials(order=2)
    g, _, _ = metric_all(imm, p)
    tang_on, _ = tangent_orthonormal_all(imm, p, g)
    normals = normal_frames_all(imm, p, tang_on)
    return AdaptedFrame(tangent=p.d1[node].copy(), normal=normals[node].copy())


def min_physical_spacing(imm, partials=None):
    """Smallest metric length of a grid cell edge (gridded axes only)."""
    p = partials if partials is not None else imm.partials(order=2)
    g, _, _ = metric_all(imm, p)
    if imm.grid.topology == TOPOLOGY_AXISYM:
        return float(np.min(np.sqrt(g[:, 0, 0])) * imm.grid.spacings[0])
    vals = [np.min(np.sqrt(g[:, a, a])) * imm.grid.spacings[a]
            for a in range(imm.n)]
    return float(min(vals))


def check_immersion(imm, tol=1e-10):
    """Validate chart constraints and nondegeneracy of the induced metric."""
    res = imm.ambient.chart_residual(imm.positions)
    if np.any(res > tol):
        raise InputError(
            f"positions violate the ambient chart constraint "
            f"(max residual {float(np.max(res)):.2e})")
    metric_all(imm)


# -- immersion zoo ---------------------------------------------------------------


def _axisym_layout(ambient, n):
    """Rotational block and profile coordinate indices per ambient kind."""
    if ambient.kind in ("euclidean", "perturbed"):
        if ambient.kind == "perturbed":
            raise ShapeError(
                "axisym immersions need a rotationally symmetric ambient")
        rot = tuple(range(n))
        axis = n
        return rot, axis
    if ambient.kind == "sphere":
        return tuple(range(n)), n
    # hyperbolic: coordinate 0 is timelike, rotation acts on 1..n
    return tuple(range(1, n + 1)), n + 1


def build_immersion(shape, grid, ambient, params=(), derivative_source="fd"):
    """Construct a zoo immersion.

    Shapes: ``round-sphere(r)``, ``ellipsoid(semi-axes)``,
    ``product-torus(a, b)``, ``clifford-torus()``,
    ``graph-torus(R, r, amplitude, mode_u, mode_v)``.
    """
    params = tuple(float(v) for v in params)
    builder = _SHAPE_BUILDERS.get(shape)
    if builder is None:
        raise ShapeError(f"unknown shape {shape!r}")
    imm = builder(grid, ambient, params, derivative_source)
    check_immersion(imm)
    return imm


def _require(cond, msg):
    if not cond:
        raise ShapeError(msg)


def _build_round_sphere(grid, ambient, params, source):
    _require(grid.topology == TOPOLOGY_AXISYM,
             "round-sphere requires an axisym-profile grid")
    _require(len(params) == 1 and params[0] > 0,
             "round-sphere takes a single positive radius")
    n = grid.n
    _require(ambient.total_dim >= n + 1,
             "ambient dimension too small for the sphere")
    r = params[0]
    u = ((np.arange(grid.sizes[0]) + 0.5) * grid.spacings[0])
    cdim = ambient.coord_dim
    pos = np.zeros((grid.sizes[0], cdim))
    if ambient.kind in ("euclidean", "perturbed"):
        rot, axis = _axisym_layout(ambient, n)
        pos[:, rot[0]] = r * np.sin(u)
        pos[:, axis] = r * np.cos(u)
        orbit = ((rot[0], axis),)
    elif ambient.kind == "sphere":
        rho = math.sqrt(ambient.c) * r
        _require(0.0 < rho < math.pi,
                 "geodesic radius must satisfy 0 < sqrt(c) r < pi")
        rot, pcoord = _axisym_layout(ambient, n)
        s = 1.0 / math.sqrt(ambient.c)
        pos[:, rot[0]] = s * math.sin(rho) * np.sin(u)
        pos[:, pcoord] = s * math.sin(rho) * np.cos(u)
        pos[:, pcoord + 1] = s * math.cos(rho)
        orbit = ((rot[0], pcoord),)
    else:  # hyperbolic
        rho = math.sqrt(ambient.c) * r
        rot, pcoord = _axisym_layout(ambient, n)
        s = 1.0 / math.sqrt(ambient.c)
        pos[:, 0] = s * math.cosh(rho)
        pos[:, rot[0]] = s * math.sinh(rho) * np.sin(u)
        pos[:, pcoord] = s * math.sinh(rho) * np.cos(u)
        orbit = ((rot[0], pcoord),)
    return DiscreteImmersion(
        grid=grid, ambient=ambient, positions=pos, shape="round-sphere",
        shape_params=params, derivative_source=source, rot_block=rot,
        orbit_planes=orbit)


def _build_ellipsoid(grid, ambient, params, source):
    _require(grid.topology == TOPOLOGY_AXISYM,
             "ellipsoid requires an axisym-profile grid")
    n = grid.n
    _require(len(params) == n + 1, f"ellipsoid in dimension n={n} takes "
             f"{n + 1} semi-axes")
    _require(all(v > 0 for v in params), "semi-axes must be positive")
    _require(ambient.kind == "euclidean",
             "ellipsoids are supported in the euclidean ambient")
    a = params[0]
    tail = params[1:]
    _require(max(tail) - min(tail) < 1e-14,
             "axisym ellipsoid needs equal trailing semi-axes (a, b, ..., b)")
    b = tail[0]
    rot, axis = _axisym_layout(ambient, n)
    u = ((np.arange(grid.sizes[0]) + 0.5) * grid.spacings[0])
    pos = np.zeros((grid.sizes[0], ambient.coord_dim))
    pos[:, rot[0]] = b * np.sin(u)
    pos[:, axis] = a * np.cos(u)

    if abs(a - b) < 1e-14:
        orbit = ((rot[0], axis),)
        formula = None
    else:
        orbit = None

        def formula(uvals, order, _a=a, _b=b, _rot=rot[0], _axis=axis,
                    _cdim=ambient.coord_dim):
            out = []
            for k in range(order + 1):
                arr = np.zeros((len(uvals), _cdim))
                arr[:, _rot] = _b * np.sin(uvals + k * math.pi / 2.0)
                arr[:, _axis] = _a * np.cos(uvals + k * math.pi / 2.0)
                out.append(arr)
            return out

    return DiscreteImmersion(
        grid=grid, ambient=ambient, positions=pos, shape="ellipsoid",
        shape_params=params, derivative_source=source, rot_block=rot,
        orbit_planes=orbit, profile_formula=formula)


def _torus_params(grid):
    nu, nv = grid.sizes
    hu, hv = grid.spacings
    uu, vv = np.meshgrid(np.arange(nu) * hu, np.arange(nv) * hv, indexing="ij")
    return uu.ravel(), vv.ravel()


def _build_product_torus(grid, ambient, params, source):
    _require(grid.topology == TOPOLOGY_TORUS,
             "product-torus requires a torus grid")
    _require(len(params) == 2 and min(params) > 0,
             "product-torus takes two positive radii")
    _require(ambient.kind in ("euclidean", "perturbed"),
             "product-torus lives in a flat-chart ambient")
    _require(ambient.total_dim >= 4, "product-torus needs ambient dim >= 4")
    a, b = params
    u, v = _torus_params(grid)
    pos = np.zeros((grid.num_nodes, ambient.coord_dim))
    pos[:, 0] = a * np.cos(u)
    pos[:, 1] = a * np.sin(u)
    pos[:, 2] = b * np.cos(v)
    pos[:, 3] = b * np.sin(v)
    return DiscreteImmersion(
        grid=grid, ambient=ambient, positions=pos, shape="product-torus",
        shape_params=params, derivative_source=source,
        orbit_planes=((1, 0), (3, 2)))


def _build_clifford_torus(grid, ambient, params, source):
    _require(grid.topology == TOPOLOGY_TORUS,
             "clifford-torus requires a torus grid")
    _require(ambient.kind == "sphere",
             "clifford-torus requires the sphere ambient")
    _require(ambient.total_dim == 3, "clifford-torus lives in S^3")
    _require(len(params) == 0, "clifford-torus takes no parameters")
    u, v = _torus_params(grid)
    s = 1.0 / math.sqrt(2.0 * ambient.c)
    pos = np.stack([s * np.cos(u), s * np.sin(u),
                    s * np.cos(v), s * np.sin(v)], axis=1)
    return DiscreteImmersion(
        grid=grid, ambient=ambient, positions=pos, shape="clifford-torus",
        shape_params=params, derivative_source=source,
        orbit_planes=((1, 0), (3, 2)))


def _build_graph_torus(grid, ambient, params, source):
    _require(grid.topology == TOPOLOGY_TORUS,
             "graph-torus requires a torus grid")
    _require(ambient.kind in ("euclidean", "perturbed"),
             "graph-torus lives in a flat-chart ambient")
    _require(ambient.total_dim >= 3, "graph-torus needs ambient dim >= 3")
    _require(source == "fd", "graph-torus carries no analytic provider")
    if len(params) == 2:
        params = params + (0.0, 1.0, 1.0)
    _require(len(params) == 5,
             "graph-torus takes (R, r, amplitude, mode_u, mode_v)")
    R, r, amp, mu, mv = params
    _require(R > 0 and r > 0, "torus radii must be positive")
    _require(R - r * (1.0 + abs(amp)) > 0,
             "graph-torus height perturbation too large for the tube radius")
    u, v = _torus_params(grid)
    rho = r * (1.0 + amp * np.cos(mu * u) * np.cos(mv * v))
    pos = np.zeros((grid.num_nodes, ambient.coord_dim))
    pos[:, 0] = (R + rho * np.cos(v)) * np.cos(u)
    pos[:, 1] = (R + rho * np.cos(v)) * np.sin(u)
    pos[:, 2] = rho * np.sin(v)
    return DiscreteImmersion(
        grid=grid, ambient=ambient, positions=pos, shape="graph-torus",
        shape_params=params, derivative_source=source)


_SHAPE_BUILDERS = {
    "round-sphere": _build_round_sphere,
    "ellipsoid": _build_ellipsoid,
    "product-torus": _build_product_torus,
    "clifford-torus": _build_clifford_torus,
    "graph-torus": _build_graph_torus,
}
