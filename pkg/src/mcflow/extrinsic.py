"""Second fundamental form, covariant derivatives, structure-equation residuals.

All per-node quantities are computed in batch over the grid.  The second
fundamental form is first assembled frame-free as the normal-valued tensor

    W_ij = normal projection of (d^2 F / dx^i dx^j + chart Christoffel terms),

so cross-node finite differences never depend on a choice of normal frame;
orthonormal-frame components (``h``) are produced per node afterwards.
Reported scalars (norms, traces, the mean-curvature-aligned decomposition)
are invariant under orthogonal remixing of the normal frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, InputError
from .immersion import (TOPOLOGY_AXISYM, _plane_generator, normal_frames_all)

DEFAULT_HMIN_SQ_GUARD = 1e-12


def _metric_inverse(g, n):
    """(det, inverse, cholesky) of SPD metric stacks; closed form for n=2."""
    if n == 2:
        a, b, c = g[:, 0, 0], g[:, 0, 1], g[:, 1, 1]
        det = a * c - b * b
        safe = np.where(det > 0, det, 1.0)
        ginv = np.empty_like(g)
        ginv[:, 0, 0] = c / safe
        ginv[:, 1, 1] = a / safe
        ginv[:, 0, 1] = ginv[:, 1, 0] = -b / safe
        chol = np.zeros_like(g)
        with np.errstate(invalid="ignore"):
            l00 = np.sqrt(np.where(a > 0, a, np.nan))
            chol[:, 0, 0] = l00
            chol[:, 1, 0] = b / l00
            chol[:, 1, 1] = np.sqrt(c - (b / l00) ** 2)
        return det, ginv, chol
    det = np.linalg.det(g)
    if np.any(~np.isfinite(det)) or np.any(det <= 0.0):
        return det, None, None
    return det, np.linalg.inv(g), np.linalg.cholesky(g)


# -- containers ------------------------------------------------------------------


@dataclass
class ExtrinsicState:
    """Per-node second-fundamental-form package in orthonormal frames."""

    h: np.ndarray             # (d, n, n) normal-frame components
    H: np.ndarray             # (d,) mean curvature components
    Hsq: float                # |H|^2
    Aring: np.ndarray         # (d, n, n) tracefree part
    normsq_A: float
    normsq_Aring: float
    decompH: dict | None      # {A2_H, A2_I, Aring2_H, Aring2_I} when |H| > guard


class ExtrinsicField:
    """Batched extrinsic data over all (possibly ghost-extended) nodes."""

    def __init__(self, imm, partials, ghosts=0, guard=DEFAULT_HMIN_SQ_GUARD,
                 minimal=False, normal_rotation=None):
        self.imm = imm
        self.partials = partials
        self.ghosts = ghosts
        self.guard = guard
        model = imm.ambient
        X = partials.X
        t = partials.d1
        n = imm.n
        self.X = X
        self.mw = model.metric_diag(X)                      # (N, cdim)
        tm = t * self.mw[:, None, :]
        self.g = np.einsum("nic,njc->nij", tm, t)
        det, ginv, chol = _metric_inverse(self.g, n)
        if np.any(~np.isfinite(det)) or np.any(det <= 0.0):
            bad = int(np.argmin(np.nan_to_num(det, nan=-np.inf)))
            raise DegeneracyError(
                f"induced metric degenerate (det g = {det[bad]:.3e})",
                node=bad - ghosts)
        self.ginv = ginv
        self.sqrt_det = np.sqrt(det)
        self.chol = chol

        # Chart-covariant second derivative D_ij and its normal part W_ij.
        D = partials.d2
        if model.has_coordinate_connection:
            gam = model.christoffel(X)
            D = D + np.einsum("ncab,nia,njb->nijc", gam, t, t)
        self.D = D
        # Induced Christoffel symbols Gamma^m_{ij} (tangential part of D);
        # batched matmuls on flattened (i, j) pairs keep this path cheap.
        N = X.shape[0]
        cdim = X.shape[-1]
        Df = D.reshape(N, n * n, cdim)
        Dt = Df @ np.swapaxes(tm, -1, -2)                  # (N, ij, l)
        gamma_f = self.ginv @ np.swapaxes(Dt, -1, -2)      # (N, m, ij)
        self.gamma = gamma_f.reshape(N, n, n, n)
        Wf = Df - np.swapaxes(gamma_f, -1, -2) @ t
        W = model.tangent_project(X[:, None, :], Wf).reshape(N, n, n, cdim)
        self.W = W
        Wf = W.reshape(N, n * n, cdim)
        self.Hvec = (self.ginv.reshape(N, 1, n * n) @ Wf)[:, 0, :]
        self.Hsq = np.einsum("nc,nc,nc->n", self.Hvec, self.mw, self.Hvec)
        M = (Wf * self.mw[:, None, :]) @ np.swapaxes(Wf, -1, -2)
        self.A2 = np.einsum("nik,njl,nijkl->n", self.ginv, self.ginv,
                            M.reshape(N, n, n, n, n))
        self.Aring2 = self.A2 - self.Hsq / n

        self.tang_on = None
        self.normals = None
        self.h = None
        if not minimal:
            self._build_frames(normal_rotation)

    def _build_frames(self, normal_rotation):
        imm, p = self.imm, self.partials
        n = imm.n
        self.tang_on = np.linalg.solve(self.chol, p.d1)
        normals = normal_frames_all(imm, p, self.tang_on)
        if normal_rotation is not None:
            normals = np.einsum("ab,nbc->nac", np.asarray(normal_rotation),
                                normals)
        self.normals = normals
        # Coordinate-slot components, then orthonormal tangent slots.
        hc = np.einsum("nijc,nc,nac->naij", self.W, self.mw, normals)
        self.h = _slots_to_frame(hc, self.chol, first_slot=2)
        self.Hcomp = np.einsum("naii->na", self.h)
        self.Aring = self.h - self.Hcomp[:, :, None, None] * np.eye(n) / n
        # H-aligned decomposition where |H|^2 exceeds the guard.
        self.decomp_valid = self.Hsq > self.guard
        Hnorm = np.sqrt(np.where(self.decomp_valid, self.Hsq, 1.0))
        Hhat = self.Hcomp / Hnorm[:, None]
        self.hH = np.einsum("na,naij->nij", Hhat, self.h)
        A2_H = np.einsum("nij,nij->n", self.hH, self.hH)
        invalid = np.where(self.decomp_valid, 0.0, np.nan)
        self.A2_H = A2_H + invalid
        self.A2_I = self.A2 - A2_H + invalid
        self.Aring2_H = A2_H - self.Hsq / n + invalid
        self.Aring2_I = self.A2 - A2_H + invalid

    @property
    def num_rows(self):
        return self.X.shape[0]

    def interior(self, arr):
        """Strip ghost rows from a field computed on the extended nodes."""
        if self.ghosts == 0:
            return arr
        return arr[self.ghosts:-self.ghosts]

    def state_at(self, node) -> ExtrinsicState:
        if self.h is None:
            raise InputError("field was built in minimal mode")
        i = node + self.ghosts
        decomp = None
        if self.decomp_valid[i]:
            decomp = {
                "A2_H": float(self.A2_H[i]),
                "A2_I": float(self.A2_I[i]),
                "Aring2_H": float(self.Aring2_H[i]),
                "Aring2_I": float(self.Aring2_I[i]),
            }
        return ExtrinsicState(
            h=self.h[i].copy(), H=self.Hcomp[i].copy(),
            Hsq=float(self.Hsq[i]), Aring=self.Aring[i].copy(),
            normsq_A=float(self.A2[i]),
            normsq_Aring=float(self.Aring2[i]), decompH=decomp)


def extrinsic_field(imm, order=2, ghosts=0, guard=DEFAULT_HMIN_SQ_GUARD,
                    minimal=False, normal_rotation=None):
    p = imm.partials(order=order, ghosts=ghosts)
    return ExtrinsicField(imm, p, ghosts=ghosts, guard=guard, minimal=minimal,
                          normal_rotation=normal_rotation)


def extrinsic_state(imm, node, guard=DEFAULT_HMIN_SQ_GUARD,
                    normal_rotation=None):
    """Second-fundamental-form package at one node."""
    ef = extrinsic_field(imm, guard=guard, normal_rotation=normal_rotation)
    return ef.state_at(node)


def _slots_to_frame(arr, L, first_slot):
    """Apply L^{-1} on every tensor slot of ``arr`` from ``first_slot`` on.

    ``arr`` has shape (N, ..., s1, ..., sk, [trailing]) where the slots to
    convert each have length n; the slot axes start at ``first_slot`` and run
    to the end of the array.
    """
    out = arr
    k = arr.ndim - first_slot
    for slot in range(k):
        moved = np.moveaxis(out, first_slot + slot, -1)
        solved = np.linalg.solve(
            L[(slice(None),) + (None,) * (moved.ndim - 2)],
            moved[..., None])[..., 0]
        out = np.moveaxis(solved, -1, first_slot + slot)
    return out


# -- ambient curvature in the adapted frame ---------------------------------------


def full_frame(ef):
    """Stacked orthonormal frame (tangents then normals), (N, n+d, cdim)."""
    if ef.tang_on is None:
        raise InputError("field was built in minimal mode")
    return np.concatenate([ef.tang_on, ef.normals], axis=1)


def ambient_curvature_adapted(ef):
    """Ambient curvature components in the adapted frame, (N, m, m, m, m).

    Space forms broadcast a single closed-form tensor; the perturbed model
    contracts its coordinate tensor with the frame at every node.
    """
    model = ef.imm.ambient
    m = model.total_dim
    N = ef.num_rows
    if model.is_space_form:
        base = model._space_form_frame_tensor(m)
        return np.broadcast_to(base, (N,) + base.shape)
    rc = model.curvature_coord(ef.X)
    f = full_frame(ef)
    return np.einsum("nABCD,naA,nbB,ncC,ndD->nabcd", rc, f, f, f, f,
                     optimize=True)


def ambient_nabla_curvature_adapted(ef):
    """Frame components of the derivative of the ambient curvature."""
    model = ef.imm.ambient
    m = model.total_dim
    N = ef.num_rows
    if model.is_space_form:
        return np.broadcast_to(np.zeros((m,) * 5), (N,) + (m,) * 5)
    nr = model.nabla_curvature_coord(ef.X)
    f = full_frame(ef)
    return np.einsum("nEABCD,neE,naA,nbB,ncC,ndD->neabcd", nr, f, f, f, f, f,
                     optimize=True)


# -- covariant derivatives ----------------------------------------------------------


@dataclass
class GradientData:
    """Per-node first covariant derivatives of A and H."""

    gradA: np.ndarray         # (d, n, n, n) frame components (alpha; k, i, j)
    gradH: np.ndarray         # (d, n) frame components (alpha; k)
    normsq_gradA: float
    normsq_gradH: float
    w: np.ndarray             # (n, d) components sum_j Rbar_{alpha j i j}
    normsq_w: float


def _third_chart_derivative(imm, ef):
    """Chart derivative of D_ij along x^k (d3 plus conformal corrections)."""
    model = imm.ambient
    p = ef.partials
    X, t = ef.X, p.d1
    B = p.d3.copy()
    if model.has_coordinate_connection:
        gam = model.christoffel(X)
        dgam = model.christoffel_grad(X)
        B += np.einsum("ndcab,nkd,nia,njb->nkijc", dgam, t, t, t,
                       optimize=True)
        B += np.einsum("ncab,nkia,njb->nkijc", gam, p.d2, t, optimize=True)
        B += np.einsum("ncab,nia,nkjb->nkijc", gam, t, p.d2, optimize=True)
        B += np.einsum("ncab,nka,nijb->nkijc", gam, t, ef.D, optimize=True)
    return B


class GradientField:
    """Batched covariant-derivative data (optionally on extended nodes)."""

    def __init__(self, imm, ef=None, ghosts=0):
        if ef is None:
            ef = extrinsic_field(imm, order=3, ghosts=ghosts)
        if ef.partials.d3 is None:
            raise InputError("gradient data needs order-3 partials")
        self.ef = ef
        self.imm = imm
        model = imm.ambient
        p = ef.partials
        X, t, mw = ef.X, p.d1, ef.mw

        B = _third_chart_derivative(imm, ef)
        # V_kij = P_N(B_kij) - Gamma^l_ij W_kl - Gamma^l_ki W_lj
        #         - Gamma^l_kj W_il
        PNB = _normal_project(model, X, t, ef.ginv, mw, B)
        V = (PNB
             - np.einsum("nlij,nklc->nkijc", ef.gamma, ef.W)
             - np.einsum("nlki,nljc->nkijc", ef.gamma, ef.W)
             - np.einsum("nlkj,nilc->nkijc", ef.gamma, ef.W))
        self.V = V
        self.gradH_vec = np.einsum("nij,nkijc->nkc", ef.ginv, V)
        VV = np.einsum("nkijc,nc,nKIJc->nkijKIJ", V, mw, V, optimize=True)
        self.normsq_gradA = np.einsum(
            "nkK,niI,njJ,nkijKIJ->n", ef.ginv, ef.ginv, ef.ginv, VV,
            optimize=True)
        GH = np.einsum("nkc,nc,nKc->nkK", self.gradH_vec, mw, self.gradH_vec)
        self.normsq_gradH = np.einsum("nkK,nkK->n", ef.ginv, GH)

        # Orthonormal-frame components.
        if ef.normals is not None:
            va = np.einsum("nkijc,nc,nac->nakij", V, mw, ef.normals,
                           optimize=True)
            self.gradA_frame = _slots_to_frame(va, ef.chol, first_slot=2)
            gh = np.einsum("nkc,nc,nac->nak", self.gradH_vec, mw, ef.normals)
            self.gradH_frame = _slots_to_frame(gh, ef.chol, first_slot=2)
            rbar = ambient_curvature_adapted(ef)
            n = imm.n
            # w_{i alpha} = sum_j Rbar_{alpha j i j}
            self.w = np.einsum("najij->nia", rbar[:, n:, :n, :n, :n])
            self.normsq_w = np.einsum("nia,nia->n", self.w, self.w)
        else:
            self.gradA_frame = self.gradH_frame = None
            self.w = self.normsq_w = None

    def data_at(self, node) -> GradientData:
        i = node + self.ef.ghosts
        return GradientData(
            gradA=self.gradA_frame[i].copy(),
            gradH=self.gradH_frame[i].copy(),
            normsq_gradA=float(self.normsq_gradA[i]),
            normsq_gradH=float(self.normsq_gradH[i]),
            w=self.w[i].copy(), normsq_w=float(self.normsq_w[i]))


def _normal_project(model, X, t, ginv, mw, v):
    """Project vector-valued arrays (leading node axis) onto the normal space."""
    shp = v.shape
    flat = v.reshape(shp[0], -1, shp[-1])
    flat = model.tangent_project(X[:, None, :], flat)
    inner = np.einsum("nmc,nc,nkc->nmk", t, mw, flat)
    coef = np.einsum("nlm,nmk->nlk", ginv, inner)
    flat = flat - np.einsum("nlc,nlk->nkc", t, coef)
    return flat.reshape(shp)


def covariant_derivatives(imm, node):
    """First covariant derivatives of A and H at one node."""
    gf = GradientField(imm)
    return gf.data_at(node)


# -- scalar Laplace-Beltrami ---------------------------------------------------------


def _scalar_derivs_axisym(imm, field):
    """(f, f_u, f_uu) for a rotation-invariant scalar field on the profile."""
    h = imm.grid.spacings[0]
    f = np.asarray(field, dtype=float)
    ext = np.concatenate([f[:2][::-1], f, f[-2:][::-1]])
    c = ext[2:-2]
    p1, m1 = ext[3:-1], ext[1:-3]
    return c, (p1 - m1) / (2 * h), (p1 - 2 * c + m1) / h ** 2


def _scalar_derivs_torus(imm, field):
    nu, nv = imm.grid.sizes
    hu, hv = imm.grid.spacings
    f = np.asarray(field, dtype=float).reshape(nu, nv)
    d1 = np.zeros((nu, nv, 2))
    d2 = np.zeros((nu, nv, 2, 2))
    for axis, h in ((0, hu), (1, hv)):
        p1, m1 = np.roll(f, -1, axis=axis), np.roll(f, 1, axis=axis)
        d1[..., axis] = (p1 - m1) / (2 * h)
        d2[..., axis, axis] = (p1 - 2 * f + m1) / h ** 2
    fuv = (np.roll(np.roll(f, -1, 0), -1, 1) - np.roll(np.roll(f, -1, 0), 1, 1)
           - np.roll(np.roll(f, 1, 0), -1, 1)
           + np.roll(np.roll(f, 1, 0), 1, 1)) / (4 * hu * hv)
    d2[..., 0, 1] = d2[..., 1, 0] = fuv
    N = nu * nv
    return f.reshape(N), d1.reshape(N, 2), d2.reshape(N, 2, 2)


def laplacian_scalar(imm, field, ef=None):
    """Laplace-Beltrami of a per-node scalar field (second-order stencils)."""
    if ef is None:
        ef = extrinsic_field(imm, minimal=True)
    if imm.grid.topology == TOPOLOGY_AXISYM:
        _, fu, fuu = _scalar_derivs_axisym(imm, field)
        hess_term = ef.ginv[:, 0, 0] * fuu
        gamma_u = np.einsum("nij,nij->n", ef.ginv, ef.gamma[:, 0])
        return hess_term - gamma_u * fu
    _, d1, d2 = _scalar_derivs_torus(imm, field)
    hess_term = np.einsum("nij,nij->n", ef.ginv, d2)
    gam = np.einsum("nij,nlij,nl->n", ef.ginv, ef.gamma, d1)
    return hess_term - gam


# -- intrinsic curvature (for the Gauss residual) --------------------------------------


def _christoffel_grad_nodes(imm, ef):
    """Node values of d_k Gamma^m_{ij} from order-3 derivative data."""
    model = imm.ambient
    p = ef.partials
    X, t, mw = ef.X, p.d1, ef.mw
    # dg_{ab,k} = <D_ka, t_b> + <t_a, D_kb>
    Dt = np.einsum("nkac,nc,nbc->nkab", ef.D, mw, t)
    dg = Dt + np.swapaxes(Dt, -1, -2)
    dginv = -np.einsum("nla,nkab,nbm->nklm", ef.ginv, dg, ef.ginv)
    B = _third_chart_derivative(imm, ef)
    nDt = np.einsum("nkijc,nc,nlc->nkijl", B, mw, t, optimize=True)
    DD = np.einsum("nijc,nc,nklc->nijkl", ef.D, mw, ef.D, optimize=True)
    if model.is_embedded:
        sig = model._signature()
        q = np.einsum("na,a,na->n", X, sig, X)
        cn = (1.0 / q)[:, None, None, None, None]
        gg = np.einsum("nij,nkl->nijkl", ef.g, ef.g)
        # Components of D along the constraint normal contract to -g_ij.
        nDt = nDt + cn * np.einsum("nijkl->nkijl", gg)
        DD = DD - cn * gg
    term = nDt + np.einsum("nijkl->nkijl", DD)
    Dtan = np.einsum("nijc,nc,nlc->nijl", ef.D, mw, t)
    return (np.einsum("nkml,nijl->nkmij", dginv, Dtan)
            + np.einsum("nml,nkijl->nkmij", ef.ginv, term))


def _curvature_from_connection(g, ginv, chol, gam, dgam):
    """Lowered curvature components from Gamma and its derivative."""
    rm = (np.einsum("njmik->nmijk", dgam)
          - np.einsum("nimjk->nmijk", dgam)
          + np.einsum("neik,nmje->nmijk", gam, gam)
          - np.einsum("nejk,nmie->nmijk", gam, gam))
    r_low = np.einsum("nmijk,nml->nijkl", rm, g)
    return _slots_to_frame(r_low, chol, first_slot=1)


def intrinsic_curvature_frame(imm, ef):
    """Intrinsic curvature R_{ijkl} in the orthonormal tangent frame.

    Assembled per node from the induced connection and its derivative;
    components follow the same sign convention as the ambient tensor, so a
    sectional curvature is the component R_{abab}.
    """
    dgam = _christoffel_grad_nodes(imm, ef)
    return _curvature_from_connection(ef.g, ef.ginv, ef.chol, ef.gamma, dgam)


def _fd_even_scalar(ext, h):
    """(f, f_u, f_uu) on interior nodes of a ghost-extended scalar array."""
    c = ext[2:-2]
    p1, m1 = ext[3:-1], ext[1:-3]
    return c, (p1 - m1) / (2.0 * h), (p1 - 2.0 * c + m1) / h ** 2


def _metric_field_derivatives(imm, ef):
    """Grid-difference derivative arrays of the induced metric field.

    Returns ``dg[n, k, i, j] = d_k g_ij`` and ``d2g[n, k, l, i, j]``.  Axisym
    grids difference the profile direction; the rotational directions use the
    closed-form chart expansion of the orbit metric (r^2 times the round
    metric of S^{n-1} in its exponential chart).
    """
    n = imm.n
    if imm.grid.topology == TOPOLOGY_AXISYM:
        N = imm.num_nodes
        h = imm.grid.spacings[0]
        ef2 = extrinsic_field(imm, order=2, ghosts=2, minimal=True)
        _, guu_u, guu_uu = _fd_even_scalar(ef2.g[:, 0, 0], h)
        _, rr_u, rr_uu = _fd_even_scalar(ef2.g[:, 1, 1], h)
        dg = np.zeros((N, n, n, n))
        d2g = np.zeros((N, n, n, n, n))
        dg[:, 0, 0, 0] = guu_u
        d2g[:, 0, 0, 0, 0] = guu_uu
        for a in range(1, n):
            dg[:, 0, a, a] = rr_u
            d2g[:, 0, 0, a, a] = rr_uu
        rr = ef.g[:, 1, 1]
        for a in range(1, n):
            for b in range(1, n):
                for c in range(1, n):
                    for d_ in range(1, n):
                        val = -(2.0 * (a == b) * (c == d_)
                                - (a == c) * (b == d_)
                                - (a == d_) * (b == c)) / 3.0
                        if val != 0.0:
                            d2g[:, a, b, c, d_] = rr * val
        return dg, d2g
    nu, nv = imm.grid.sizes
    gf = ef.g.reshape(nu, nv, n, n)
    dg = np.zeros((nu, nv, n, n, n))
    d2g = np.zeros((nu, nv, n, n, n, n))
    for axis, h in ((0, imm.grid.spacings[0]), (1, imm.grid.spacings[1])):
        p1, m1 = np.roll(gf, -1, axis=axis), np.roll(gf, 1, axis=axis)
        dg[:, :, axis] = (p1 - m1) / (2 * h)
        d2g[:, :, axis, axis] = (p1 - 2 * gf + m1) / h ** 2
    hu, hv = imm.grid.spacings
    cross = (np.roll(np.roll(gf, -1, 0), -1, 1)
             - np.roll(np.roll(gf, -1, 0), 1, 1)
             - np.roll(np.roll(gf, 1, 0), -1, 1)
             + np.roll(np.roll(gf, 1, 0), 1, 1)) / (4 * hu * hv)
    d2g[:, :, 0, 1] = d2g[:, :, 1, 0] = cross
    N = nu * nv
    return dg.reshape(N, n, n, n), d2g.reshape(N, n, n, n, n)


def intrinsic_curvature_metric_route(imm, ef):
    """Intrinsic curvature from grid differences of the induced metric.

    Independent of the extrinsic assembly, so the Gauss residual genuinely
    cross-checks two discretizations (second-order for the fd source).
    """
    g, ginv, chol = ef.g, ef.ginv, ef.chol
    dg, d2g = _metric_field_derivatives(imm, ef)
    # Gamma^m_ij = 1/2 g^{ml} (d_i g_jl + d_j g_il - d_l g_ij)
    bracket = (dg + np.einsum("njil->nijl", dg)
               - np.einsum("nlij->nijl", dg))
    gam = 0.5 * np.einsum("nml,nijl->nmij", ginv, bracket)
    dginv = -np.einsum("nma,nkab,nbl->nkml", ginv, dg, ginv)
    bracket2 = (d2g + np.einsum("nkjil->nkijl", d2g)
                - np.einsum("nklij->nkijl", d2g))
    dgam = (0.5 * np.einsum("nkml,nijl->nkmij", dginv, bracket)
            + 0.5 * np.einsum("nml,nkijl->nkmij", ginv, bracket2))
    return _curvature_from_connection(g, ginv, chol, gam, dgam)



# -- normal-bundle curvature ------------------------------------------------------------


def _projector_matrices(model, X, t, ginv, mw):
    """Normal-space projector as a matrix field, (N, cdim, cdim)."""
    Pc = model.chart_normal_projector(X)
    tm = t * mw[:, None, :]
    PT = np.einsum("nac,nab,nbe->nce", t, ginv, tm)
    return Pc - PT


def normal_curvature_frame(imm, ef):
    """Normal-bundle curvature components Rperp_{i j alpha beta}.

    Computed frame-free by differentiating the projector operator field
    O(x) = P_N(x) twice with the normal connection: column b of the result
    is the curvature applied to the global normal field P_N e_b, and the
    node frame contracts the operator down to components.  The profile
    direction of axisym grids uses ghost-extended nodes; rotational
    directions differentiate by commutators with the symmetry generator.
    """
    n, d = imm.n, imm.d
    if d < 2 or (imm.grid.topology == TOPOLOGY_AXISYM and imm.n != 2):
        # Rank-one normal bundles have no curvature components; axisym
        # profiles with padding normals have flat normal bundles.
        return np.zeros((imm.num_nodes, n, n, d, d))
    if imm.grid.topology == TOPOLOGY_AXISYM:
        return _normal_curvature_axisym(imm, ef)
    return _normal_curvature_torus(imm, ef)


def _normal_curvature_torus(imm, ef):
    model = imm.ambient
    X, t, mw, ginv = ef.X, ef.partials.d1, ef.mw, ef.ginv
    O0 = _projector_matrices(model, X, t, ginv, mw)
    gam_ops = _chart_gamma_operators(model, X, t)
    E = _operator_derivative_torus(imm, model, X, t, ginv, mw, O0, gam_ops)
    Z = _operator_derivative_torus(imm, model, X, t, ginv, mw, E, gam_ops)
    rop = -Z + np.swapaxes(Z, 1, 2)            # (N, i, j, c, b)
    return _contract_normal_operator(ef, rop)


def _chart_gamma_operators(model, X, t):
    """Matrices (Gamma_k)^c_b = Gamma^c_{ab} t_k^a, or None when flat."""
    if not model.has_coordinate_connection:
        return None
    gam = model.christoffel(X)
    return np.einsum("ncab,nka->nkcb", gam, t)


def _project_operator(model, X, t, ginv, mw, ops):
    """Normal-project the output (row) index of operator fields (..., c, b)."""
    shp = ops.shape
    swapped = np.swapaxes(ops, -1, -2)                # (..., b, c)
    flat = swapped.reshape(shp[0], -1, shp[-2])
    flat = _normal_project(model, X, t, ginv, mw, flat)
    swapped = flat.reshape(swapped.shape)
    return np.swapaxes(swapped, -1, -2)


def _operator_derivative_torus(imm, model, X, t, ginv, mw, ops, gam_ops):
    """P_N (d_k ops + Gamma_k ops) over both grid axes."""
    nu, nv = imm.grid.sizes
    shp = ops.shape
    arr = ops.reshape(nu, nv, -1)
    ders = []
    for axis, h in ((0, imm.grid.spacings[0]), (1, imm.grid.spacings[1])):
        der = (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) \
            / (2 * h)
        ders.append(der.reshape(shp))
    dops = np.stack(ders, axis=1)                      # (N, k, ..., c, b)
    if gam_ops is not None:
        mid = ops.reshape(shp[0], -1, shp[-2], shp[-1])
        corr = np.einsum("nkce,nyeb->nkycb", gam_ops, mid)
        dops = dops + corr.reshape((shp[0], 2) + shp[1:])
    return _project_operator(model, X, t, ginv, mw, dops)


def _contract_normal_operator(ef, rop):
    """R^perp components from the antisymmetrized operator field.

    Contracts the normal frame onto the operator and converts the two
    coordinate direction slots to the orthonormal tangent frame.
    """
    out = np.einsum("nab,nijcb,nc,ngc->nijag", ef.normals, rop, ef.mw,
                    ef.normals, optimize=True)
    for slot in (1, 2):
        moved = np.moveaxis(out, slot, -1)
        solved = np.linalg.solve(
            ef.chol[(slice(None),) + (None,) * (moved.ndim - 2)],
            moved[..., None])[..., 0]
        out = np.moveaxis(solved, -1, slot)
    return out


def _normal_curvature_axisym(imm, ef):
    model = imm.ambient
    cdim = imm.cdim
    G = 2
    ef2 = extrinsic_field(imm, order=2, ghosts=G)
    X, t, mw, ginv = ef2.X, ef2.partials.d1, ef2.mw, ef2.ginv
    O0 = _projector_matrices(model, X, t, ginv, mw)
    J = _plane_generator(cdim, imm.rot_block[1], imm.rot_block[0])
    h = imm.grid.spacings[0]

    def op_derivative(ops):
        """(d_u, d_s) of equivariant operator fields along the meridian."""
        du = np.zeros_like(ops)
        du[1:-1] = (ops[2:] - ops[:-2]) / (2 * h)
        ds = np.einsum("ce,n...eb->n...cb", J, ops) \
            - np.einsum("n...ce,eb->n...cb", ops, J)
        return np.stack([du, ds], axis=1)

    E = _project_operator(model, X, t, ginv, mw, op_derivative(O0))
    Z = _project_operator(model, X, t, ginv, mw, op_derivative(E))
    rop = (-Z + np.swapaxes(Z, 1, 2))[G:-G]
    return _contract_normal_operator(ef, rop)


# -- structure residuals ----------------------------------------------------------------


@dataclass
class StructureResiduals:
    gauss: float
    codazzi: float
    ricci: float


def gradA_field_frame(imm, ef):
    """Covariant derivative of A via grid differences of the W field.

    Returns frame components shaped like ``GradientField.gradA_frame`` but
    built from cross-node differences of the frame-free normal-valued
    tensor, independent of the pointwise third-derivative assembly.  Falls
    back to ``None`` when the topology/dimension has no field route.
    """
    model = imm.ambient
    n, cdim = imm.n, imm.cdim
    if imm.grid.topology == TOPOLOGY_AXISYM:
        if n != 2:
            return None
        G = 2
        ef2 = extrinsic_field(imm, order=2, ghosts=G, minimal=True)
        W = ef2.W
        h = imm.grid.spacings[0]
        J = _plane_generator(cdim, imm.rot_block[1], imm.rot_block[0])
        dW = np.zeros((len(W), 2) + W.shape[1:])
        dW[1:-1, 0] = (W[2:] - W[:-2]) / (2 * h)
        dW[:, 1] = np.einsum("ca,nija->nijc", J, W)
        X, t, ginv, mw = ef2.X, ef2.partials.d1, ef2.ginv, ef2.mw
        proj = _normal_project(model, X, t, ginv, mw, dW)
        V = (proj
             - np.einsum("nlki,nljc->nkijc", ef2.gamma, W)
             - np.einsum("nlkj,nilc->nkijc", ef2.gamma, W))
        V = V[G:-G]
    else:
        W = ef.W
        nu, nv = imm.grid.sizes
        shp = W.shape
        arr = W.reshape(nu, nv, -1)
        ders = []
        for axis, h in ((0, imm.grid.spacings[0]),
                        (1, imm.grid.spacings[1])):
            der = (np.roll(arr, -1, axis=axis)
                   - np.roll(arr, 1, axis=axis)) / (2 * h)
            ders.append(der.reshape(shp))
        dW = np.stack(ders, axis=1)
        X, t, ginv, mw = ef.X, ef.partials.d1, ef.ginv, ef.mw
        if model.has_coordinate_connection:
            gam = model.christoffel(X)
            dW = dW + np.einsum("ncab,nka,nijb->nkijc", gam, t, W)
        proj = _normal_project(model, X, t, ginv, mw, dW)
        V = (proj
             - np.einsum("nlki,nljc->nkijc", ef.gamma, W)
             - np.einsum("nlkj,nilc->nkijc", ef.gamma, W))
    va = np.einsum("nkijc,nc,nac->nakij", V, ef.mw, ef.normals, optimize=True)
    return _slots_to_frame(va, ef.chol, first_slot=2)


def structure_residual_fields(imm):
    """Per-node max-norm residuals of the three structure equations.

    The fd source cross-checks independent grid-difference routes (metric
    field for Gauss, W field for Codazzi, projector field for Ricci) against
    the extrinsic assembly; residuals decay at second order.  The analytic
    source verifies that closed-form derivative data solves the equations,
    so its residuals sit at the rounding floor.
    """
    ef = extrinsic_field(imm, order=3)
    n, d = imm.n, imm.d
    rbar = ambient_curvature_adapted(ef)

    if imm.derivative_source == "analytic":
        r_int = intrinsic_curvature_frame(imm, ef)
    else:
        r_int = intrinsic_curvature_metric_route(imm, ef)
    gauss_rhs = (rbar[:, :n, :n, :n, :n]
                 + np.einsum("naik,najl->nijkl", ef.h, ef.h)
                 - np.einsum("nail,najk->nijkl", ef.h, ef.h))
    gauss_field = np.abs(r_int - gauss_rhs).max(axis=(1, 2, 3, 4))

    grad = None
    if imm.derivative_source == "fd":
        grad = gradA_field_frame(imm, ef)
    if grad is None:
        grad = GradientField(imm, ef).gradA_frame
    codazzi_lhs = grad - np.swapaxes(grad, 2, 4)
    rbar_t = np.einsum("naijk->nakij", rbar[:, n:, :n, :n, :n])
    codazzi_field = np.abs(codazzi_lhs + rbar_t).max(axis=(1, 2, 3, 4))

    rperp = normal_curvature_frame(imm, ef)
    ricci_rhs = (rbar[:, :n, :n, n:, n:]
                 + np.einsum("naik,nbjk->nijab", ef.h, ef.h)
                 - np.einsum("najk,nbik->nijab", ef.h, ef.h))
    ricci_field = np.abs(rperp - ricci_rhs).max(axis=(1, 2, 3, 4))
    return gauss_field, codazzi_field, ricci_field


def structure_residuals(imm, node=None):
    """Max-norm residuals of the Gauss, Codazzi and Ricci equations.

    For fd-source axisym grids the max is taken in a pole-weighted norm
    (weight sin^2 u): the grid-difference routes are evaluated in the
    profile chart, which is singular on the axis, and pole-adjacent chart
    components lose their order there.  The extrinsic quantities themselves
    stay uniformly second order (covered by the pole-regularity checks).
    """
    gauss_field, codazzi_field, ricci_field = structure_residual_fields(imm)
    if node is not None:
        return StructureResiduals(gauss=float(gauss_field[node]),
                                  codazzi=float(codazzi_field[node]),
                                  ricci=float(ricci_field[node]))
    weight = np.ones(imm.num_nodes)
    if imm.grid.topology == TOPOLOGY_AXISYM and imm.derivative_source == "fd":
        weight = np.sin(imm.node_params()[:, 0]) ** 2
    return StructureResiduals(gauss=float((gauss_field * weight).max()),
                              codazzi=float((codazzi_field * weight).max()),
                              ricci=float((ricci_field * weight).max()))


# -- second derivatives of H (normal-valued Hessian) ---------------------------------


def hessian_H(imm):
    """Covariant Hessian of the mean curvature vector, (N, i, j, cdim).

    Implemented for n = 2 grids: the profile direction uses ghost-extended
    evaluation, rotational directions use the symmetry generators.
    """
    model = imm.ambient
    n, cdim = imm.n, imm.cdim
    if n != 2:
        raise InputError("hessian_H is implemented for n = 2 grids")
    if imm.grid.topology == TOPOLOGY_AXISYM:
        G = 2
        ef = extrinsic_field(imm, order=3, ghosts=G)
        gf = GradientField(imm, ef)
        Z = gf.gradH_vec                              # (Ne, k, cdim)
        h = imm.grid.spacings[0]
        J = _plane_generator(cdim, imm.rot_block[1], imm.rot_block[0])
        dZ_u = np.zeros_like(Z)
        dZ_u[1:-1] = (Z[2:] - Z[:-2]) / (2 * h)
        # grad H is an equivariant vector field with scalar-behaved slots.
        dZ_s = np.einsum("ca,nka->nkc", J, Z)
        dZ = np.stack([dZ_u, dZ_s], axis=1)           # (Ne, i, k, cdim)
        X, t, mw, ginv = ef.X, ef.partials.d1, ef.mw, ef.ginv
        proj = _normal_project(model, X, t, ginv, mw, dZ)
        hess = proj - np.einsum("nlij,nlc->nijc", ef.gamma, Z)
        return hess[G:-G]
    ef = extrinsic_field(imm, order=3)
    gf = GradientField(imm, ef)
    Z = gf.gradH_vec
    nu, nv = imm.grid.sizes
    shp = Z.shape
    arr = Z.reshape(nu, nv, -1)
    ders = []
    for axis, hh in ((0, imm.grid.spacings[0]), (1, imm.grid.spacings[1])):
        der = (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) \
            / (2 * hh)
        ders.append(der.reshape(shp))
    dZ = np.stack(ders, axis=1)
    X, t, mw, ginv = ef.X, ef.partials.d1, ef.mw, ef.ginv
    if model.has_coordinate_connection:
        gam = model.christoffel(X)
        dZ = dZ + np.einsum("ncab,nia,nkb->nikc", gam, t, Z)
    proj = _normal_project(model, X, t, ginv, mw, dZ)
    return proj - np.einsum("nlij,nlc->nijc", ef.gamma, Z)


def normsq_grad2A(imm):
    """|second covariant derivative of A|^2 per node (n = 2 grids).

    One more normal-connection derivative of the field V = grad A, with the
    profile direction differenced on ghost-extended nodes and rotational
    directions supplied by the symmetry generators.
    """
    model = imm.ambient
    n, cdim = imm.n, imm.cdim
    if n != 2:
        raise InputError("normsq_grad2A is implemented for n = 2 grids")
    if imm.grid.topology == TOPOLOGY_AXISYM:
        G = 2
        ef = extrinsic_field(imm, order=3, ghosts=G)
        gf = GradientField(imm, ef)
        V = gf.V                                    # (Ne, k, i, j, c)
        h = imm.grid.spacings[0]
        J = _plane_generator(cdim, imm.rot_block[1], imm.rot_block[0])
        dV = np.zeros((len(V), 2) + V.shape[1:])
        dV[1:-1, 0] = (V[2:] - V[:-2]) / (2 * h)
        dV[:, 1] = np.einsum("ca,nkija->nkijc", J, V)
        X, t, mw, ginv = ef.X, ef.partials.d1, ef.mw, ef.ginv
        proj = _normal_project(model, X, t, ginv, mw, dV)
        V2 = (proj
              - np.einsum("nmlk,nmijc->nlkijc", ef.gamma, V)
              - np.einsum("nmli,nkmjc->nlkijc", ef.gamma, V)
              - np.einsum("nmlj,nkimc->nlkijc", ef.gamma, V))
        V2 = V2[G:-G]
        efi = extrinsic_field(imm, order=2, minimal=True)
        gi, mwi = efi.ginv, efi.mw
    else:
        ef = extrinsic_field(imm, order=3)
        gf = GradientField(imm, ef)
        V = gf.V
        nu, nv = imm.grid.sizes
        shp = V.shape
        arr = V.reshape(nu, nv, -1)
        ders = []
        for axis, hh in ((0, imm.grid.spacings[0]),
                         (1, imm.grid.spacings[1])):
            der = (np.roll(arr, -1, axis=axis)
                   - np.roll(arr, 1, axis=axis)) / (2 * hh)
            ders.append(der.reshape(shp))
        dV = np.stack(ders, axis=1)
        X, t, mw, ginv = ef.X, ef.partials.d1, ef.mw, ef.ginv
        if model.has_coordinate_connection:
            gam = model.christoffel(X)
            dV = dV + np.einsum("ncab,nla,nkijb->nlkijc", gam, t, V)
        proj = _normal_project(model, X, t, ginv, mw, dV)
        V2 = (proj
              - np.einsum("nmlk,nmijc->nlkijc", ef.gamma, V)
              - np.einsum("nmli,nkmjc->nlkijc", ef.gamma, V)
              - np.einsum("nmlj,nkimc->nlkijc", ef.gamma, V))
        gi, mwi = ef.ginv, ef.mw
    VV = np.einsum("nlkijc,nc,nLKIJc->nlkijLKIJ", V2, mwi, V2, optimize=True)
    return np.einsum("nlL,nkK,niI,njJ,nlkijLKIJ->n", gi, gi, gi, gi, VV,
                     optimize=True)
