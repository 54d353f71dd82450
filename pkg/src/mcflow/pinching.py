"""Curvature-pinching constants, reaction terms, inequality audits, blowup ODE.

Everything here is explicit arithmetic in the second fundamental form and
the ambient curvature bounds: the preservation constants C1..C4 and the
threshold b1 for the pinching quantity Q = |A|^2 - a|H|^2 + b, the gradient
inequalities relating |grad A| and |grad H|, the reaction-term split of the
evolution of Q in a curved ambient, the pinching functions f_sigma and the
blowup comparison ODE for b(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .extrinsic import (GradientField, ambient_curvature_adapted,
                        ambient_nabla_curvature_adapted, extrinsic_field,
                        hessian_H, laplacian_scalar)

DEFAULT_HMIN_SQ_GUARD = 1e-12


def pinching_coefficient(n):
    """Dimension-dependent coefficient of |H|^2 in the pinching condition."""
    if n < 2:
        raise InputError("pinching coefficient needs n >= 2")
    if n in (2, 3):
        return 4.0 / (3.0 * n)
    return 1.0 / (n - 1.0)


def cnd_constant(n, d):
    """Constant multiplying (K1+K2)^2 in the second gradient inequality."""
    return n ** 4 * d / (2.0 * (n - 1.0) * (2.0 * n + 1.0))


@dataclass
class PinchingParams:
    """Pinching coefficients plus the free constants of the estimates.

    The free constants default to the evaluation point used for the explicit
    threshold (all equal to one); eta defaults to half the available slack
    (3/(n+2) - a)/2 so that eps_nabla stays positive for admissible a.
    """

    a: float
    b: float = 0.0
    sigma: float = 0.1
    p: int = 2
    eta: float | None = None
    mu: float = 1.0
    rho: float = 1.0
    varrho: float = 1.0
    theta: float = 1.0
    vartheta: float = 1.0
    N1: float = 1.0
    N2: float = 1.0
    eta5: float = 1.0
    C0: float = 1.0
    delta: float = 0.1
    simons_C: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise InputError("sigma must lie in (0, 1)")
        if self.p < 2:
            raise InputError("integral exponent p must be >= 2")
        for name in ("mu", "rho", "varrho", "theta", "vartheta", "N1", "N2",
                     "eta5"):
            if getattr(self, name) <= 0:
                raise InputError(f"free constant {name} must be positive")
        if self.eta is not None and self.eta <= 0:
            raise InputError("eta must be positive when given")

    def resolved_eta(self, n):
        if self.eta is not None:
            return self.eta
        slack = 3.0 / (n + 2.0) - self.a
        if slack <= 0:
            raise InputError(
                f"a = {self.a} leaves no gradient-inequality slack for n={n}")
        return 0.5 * slack

    def validate_preservation(self, n):
        """Check the admissible range of ``a`` for preservation statements."""
        if n in (2, 3):
            if self.a > 4.0 / (3.0 * n):
                raise InputError(f"a must satisfy a <= 4/(3n) for n = {n}")
        elif self.a >= 1.0 / (n - 1.0):
            raise InputError(f"a must satisfy a < 1/(n-1) for n = {n}")


@dataclass
class PinchingConstants:
    """Explicit constants of the preserved-pinching threshold."""

    C1: float
    C2: float
    C3: float
    C4: float
    b1: float
    b0: float
    eps_nabla: float
    Cnd: float
    C0: float = 1.0
    delta: float = 0.1

    def as_dict(self):
        return {"C1": self.C1, "C2": self.C2, "C3": self.C3, "C4": self.C4,
                "b1": self.b1, "b0": self.b0, "eps_nabla": self.eps_nabla,
                "Cnd": self.Cnd, "C0": self.C0, "delta": self.delta}


def pinching_constants(n, d, bounds, a=None, params=None):
    """Evaluate C1..C4, b1, b0, eps_nabla and C(n, d).

    ``bounds`` provides K1, K2, L.  For K1 + K2 = 0 the curvature terms all
    vanish, theta and vartheta are taken as zero, and b1 = 0.
    """
    if a is None:
        a = pinching_coefficient(n)
    if params is None:
        params = PinchingParams(a=a)
    K1, K2, L = bounds.K1, bounds.K2, bounds.L
    q = a - 1.0 / n
    if q <= 0:
        raise InputError("pinching constants need a > 1/n")
    flat = (K1 + K2) == 0.0
    theta = 0.0 if flat else params.theta
    vartheta = 0.0 if flat else params.vartheta
    rho, varrho = params.rho, params.varrho
    base = 4.0 * n * K1 + 2.0 * n * K2 + 2.0 * (n * a * K1 + K2) / q
    C1 = base + (varrho * n * (d - 1) + n * (d - 2)
                 + (16.0 / 3.0) * rho * (n - 1) * (d - 1)) * (K1 + K2) + theta
    C2 = base + (n / varrho + (16.0 / (3.0 * rho)) * (n - 1)
                 + (8.0 / 3.0) * math.sqrt(n - 1.0) * (d - 2)) * (K1 + K2) \
        + n * vartheta
    C3 = 2.0 * (n * a * K1 + K2) / q
    if flat:
        C4 = 0.0
        b1 = 0.0
    else:
        C4 = L ** 2 / theta + 4.0 * L ** 2 / vartheta
        b1 = max(C1 * q / (2.0 * a),
                 C2 * n * q / 4.0,
                 0.25 * n * q * (C3 + math.sqrt(C3 ** 2 + 8.0 * C4 / (n * q))))
    b0 = max(b1, 2.0 * K1)
    eta = params.resolved_eta(n)
    eps_nabla = 3.0 / (n + 2.0) - eta - a
    if eps_nabla <= 0:
        raise InputError(
            f"eta = {eta} too large: eps_nabla = {eps_nabla:.3e} <= 0")
    return PinchingConstants(C1=C1, C2=C2, C3=C3, C4=C4, b1=b1, b0=b0,
                             eps_nabla=eps_nabla, Cnd=cnd_constant(n, d),
                             C0=params.C0, delta=params.delta)


# -- pointwise pinching quantities ---------------------------------------------------


def pinching_quantities(state, constants, params,
                        guard=DEFAULT_HMIN_SQ_GUARD):
    """Q, f_sigma and the pinch ratio |Aring|^2 / |H|^{2-delta} at a node."""
    Q = state.normsq_A - params.a * state.Hsq + params.b
    f_sigma = None
    pinch_ratio = None
    if state.Hsq > guard:
        f_sigma = state.normsq_Aring / state.Hsq ** (1.0 - params.sigma)
        pinch_ratio = state.normsq_Aring \
            / state.Hsq ** (1.0 - 0.5 * constants.delta)
    return {"Q": Q, "f_sigma": f_sigma, "pinch_ratio": pinch_ratio}


def pinching_fields(ef, constants, params):
    """Batched Q, f_sigma, pinch-ratio arrays (NaN where |H| is guarded)."""
    Q = ef.A2 - params.a * ef.Hsq + params.b
    valid = ef.Hsq > ef.guard
    H2 = np.where(valid, ef.Hsq, 1.0)
    f_sigma = np.where(valid, ef.Aring2 / H2 ** (1.0 - params.sigma), np.nan)
    ratio = np.where(valid, ef.Aring2 / H2 ** (1.0 - 0.5 * constants.delta),
                     np.nan)
    return {"Q": Q, "f_sigma": f_sigma, "pinch_ratio": ratio}


def fit_envelope_constant(pinch_ratios):
    """Smallest C0 bounding |Aring|^2 <= C0 |H|^{2-delta} over given samples."""
    arr = np.asarray(pinch_ratios, dtype=float)
    if np.all(np.isnan(arr)):
        raise InputError("no valid pinch-ratio samples to fit")
    return float(np.nanmax(arr))


# -- reaction terms -------------------------------------------------------------------


@dataclass
class ReactionTerms:
    R1: float
    R2: float
    Z: float
    I: float
    II: float | None
    III: float
    IV: float
    P_a: float | None
    splits: dict | None = None


def reaction_arrays(h, Hcomp, rbar, nabla_rbar=None):
    """Frame-free reaction sums, batched over nodes.

    ``h`` is (N, d, n, n) in orthonormal frames, ``Hcomp`` is (N, d), and
    ``rbar`` holds adapted-frame ambient curvature components (N, m, m, m, m)
    with tangent indices first.  Returns per-node arrays.
    """
    N, d, n, _ = h.shape
    hh = np.einsum("naij,nbij->nab", h, h)
    R1a = np.einsum("nab,nab->n", hh, hh)
    comm = np.einsum("naip,nbjp->nabij", h, h) \
        - np.einsum("najp,nbip->nabij", h, h)
    R1b = np.einsum("nabij,nabij->n", comm, comm)
    R1 = R1a + R1b
    Hh = np.einsum("na,naij->nij", Hcomp, h)
    R2 = np.einsum("nij,nij->n", Hh, Hh)
    # Z = sum H^a h^a_ip h^b_pj h^b_ij - (both R1 sums)
    Zlead = np.einsum("nip,nbpj,nbij->n", Hh, h, h, optimize=True)
    Z = Zlead - R1

    tt = rbar[:, :n, :n, :n, :n]
    mixed = rbar[:, :n, n:, :n, n:]
    hsum = np.einsum("napq,naij->npqij", h, h)
    I1 = 4.0 * np.einsum("nipjq,npqij->n", tt, hsum, optimize=True)
    hsq = np.einsum("napi,naij->npj", h, h)
    I2 = 4.0 * np.einsum("nkjkp,npj->n", tt, hsq, optimize=True)
    I = I1 - I2
    amb_A = 2.0 * np.einsum("nkakb,nab->n", mixed, hh, optimize=True)
    amb_B = 2.0 * np.einsum("nkakb,na,nb->n", mixed, Hcomp, Hcomp,
                            optimize=True)
    hcontr = np.einsum("naip,nbij->npjab", h, h)
    III = -8.0 * np.einsum("njpab,npjab->n", rbar[:, :n, :n, n:, n:], hcontr,
                           optimize=True)
    if nabla_rbar is not None:
        nr = nabla_rbar
        IV = 2.0 * np.einsum("nkkijb,nbij->n", nr[:, :n, :n, :n, :n, n:], h,
                             optimize=True) \
            - 2.0 * np.einsum("nijkkb,nbij->n", nr[:, :n, :n, :n, :n, n:], h,
                              optimize=True)
    else:
        IV = np.zeros(N)
    return {"R1": R1, "R2": R2, "Z": Z, "I": I, "amb_A": amb_A,
            "amb_B": amb_B, "III": III, "IV": IV}


def _h_aligned_rotation(Hcomp):
    """Orthogonal d x d matrix whose first row is H/|H| (deterministic)."""
    d = len(Hcomp)
    norm = float(np.linalg.norm(Hcomp))
    rows = [np.asarray(Hcomp, dtype=float) / norm]
    for b in range(d):
        v = np.zeros(d)
        v[b] = 1.0
        for r in rows:
            v = v - (v @ r) * r
        if v @ v > 1e-12:
            rows.append(v / math.sqrt(v @ v))
        if len(rows) == d:
            break
    if len(rows) < d:
        raise InputError("failed to complete the H-aligned normal rotation")
    return np.asarray(rows)


def reaction_terms(state, rbar, nabla_rbar=None, a=None, n=None,
                   guard=DEFAULT_HMIN_SQ_GUARD):
    """Reaction-term package at one node.

    ``rbar`` (and ``nabla_rbar`` for the derivative term) hold adapted-frame
    ambient components at the node.  The mean-curvature-aligned sub-splits
    II1..II3, III1, III2 require |H| above the guard and are omitted
    otherwise.  The raw sums R1, R2, Z, I, III are always reported; II and
    P_a additionally need the coefficient ``a``.
    """
    h = state.h[None]
    Hc = state.H[None]
    if n is None:
        n = state.h.shape[-1]
    d = state.h.shape[0]
    raw = reaction_arrays(h, Hc, rbar[None],
                          None if nabla_rbar is None else nabla_rbar[None])
    out = {k: float(v[0]) for k, v in raw.items()}
    II = None
    P_a = None
    splits = None
    if a is not None:
        II = out["amb_A"] - a * out["amb_B"]
        P_a = out["I"] + II + out["III"] + out["IV"]
    if state.Hsq > guard and a is not None:
        rot = _h_aligned_rotation(state.H)
        hrot = np.einsum("ab,bij->aij", rot, state.h)
        m = rbar.shape[0]
        R = np.eye(m)
        R[n:, n:] = rot
        rb = np.einsum("ABCD,aA,bB,cC,dD->abcd", rbar, R, R, R, R,
                       optimize=True)
        mix = rb[:n, n:, :n, n:]          # R_{k alpha l beta}
        tnn = rb[:n, :n, n:, n:]          # R_{j p alpha beta}
        h0 = hrot[0]
        s00 = float(np.einsum("kk->", mix[:, 0, :, 0]))
        II1 = 2.0 * s00 * float(np.sum(h0 * h0)) - 2.0 * a * s00 * state.Hsq
        if d > 1:
            hd = hrot[1:]
            sA0 = np.einsum("kak->a", mix[:, 1:, :, 0])
            II2 = 4.0 * float(np.einsum("a,aij,ij->", sA0, hd, h0))
            sAB = np.einsum("kakb->ab", mix[:, 1:, :, 1:])
            II3 = 2.0 * float(np.einsum("ab,aij,bij->", sAB, hd, hd))
            III1 = -16.0 * float(np.einsum("jpa,aip,ij->",
                                           tnn[:, :, 1:, 0], hd, h0,
                                           optimize=True))
            full = np.einsum("jpab,aip,bij->", tnn[:, :, 1:, 1:], hd, hd,
                             optimize=True)
            diag = np.einsum("jpa,aip,aij->",
                             np.einsum("jpaa->jpa", tnn[:, :, 1:, 1:]),
                             hd, hd, optimize=True)
            III2 = -8.0 * float(full - diag)
        else:
            II2 = II3 = III1 = III2 = 0.0
        splits = {"II1": float(II1), "II2": float(II2), "II3": float(II3),
                  "III1": float(III1), "III2": float(III2)}
    return ReactionTerms(R1=out["R1"], R2=out["R2"], Z=out["Z"], I=out["I"],
                         II=II, III=out["III"], IV=out["IV"], P_a=P_a,
                         splits=splits)


# -- inequality audits -----------------------------------------------------------------


@dataclass
class AuditRow:
    node: int
    name: str
    lhs: float
    rhs: float
    margin: float
    passed: bool | None


def default_audit_tol(imm, scale=10.0):
    """Pass tolerance: 1e-8 for analytic sources, scaled h^2 for fd."""
    if imm.derivative_source == "analytic":
        return 1e-8
    h = max(imm.grid.spacings)
    return scale * h ** 2


def _sample_planes(n, n_planes, seed):
    """Orthonormal coefficient pairs spanning tangent 2-planes."""
    planes = []
    for a in range(n):
        for b in range(a + 1, n):
            c1 = np.zeros(n)
            c2 = np.zeros(n)
            c1[a] = 1.0
            c2[b] = 1.0
            planes.append((c1, c2))
    rng = np.random.default_rng(seed)
    for _ in range(n_planes if n > 2 else 0):
        c1 = rng.standard_normal(n)
        c1 /= np.linalg.norm(c1)
        c2 = rng.standard_normal(n)
        c2 -= (c2 @ c1) * c1
        c2 /= np.linalg.norm(c2)
        planes.append((c1, c2))
    return planes


def _complete_plane_basis(c1, c2):
    n = len(c1)
    rows = [np.asarray(c1, float), np.asarray(c2, float)]
    for a in range(n):
        v = np.zeros(n)
        v[a] = 1.0
        for r in rows:
            v = v - (v @ r) * r
        if v @ v > 1e-12:
            rows.append(v / math.sqrt(v @ v))
        if len(rows) == n:
            break
    return np.asarray(rows)


def xu_gu_margins(ef, rbar, kmin, n_planes=100, seed=0):
    """Worst-plane margin of the intrinsic sectional-curvature lower bound.

    Sectional curvatures come from the Gauss identity; the bound is
    (2 Kbar_min + |H|^2/(n-1) - |A|^2)/2 plus the nonnegative completion
    term in the plane-adapted frame.  Returns per-node (margin, K, bound)
    at the minimizing plane.
    """
    imm = ef.imm
    n = imm.n
    N = ef.num_rows
    tt = rbar[:, :n, :n, :n, :n]
    base = 0.5 * (2.0 * kmin + ef.Hsq / (n - 1.0) - ef.A2)
    best_margin = np.full(N, np.inf)
    best_K = np.zeros(N)
    best_bound = np.zeros(N)
    for c1, c2 in _sample_planes(n, n_planes, seed):
        Rterm = np.einsum("nabcd,a,b,c,d->n", tt, c1, c2, c1, c2)
        B = _complete_plane_basis(c1, c2)
        hB = np.einsum("naij,pi,qj->napq", ef.h, B, B)
        K = Rterm + np.einsum("na,na->n", hB[:, :, 0, 0], hB[:, :, 1, 1]) \
            - np.einsum("na,na->n", hB[:, :, 0, 1], hB[:, :, 0, 1])
        extra = np.zeros(N)
        for i in range(n):
            for j in range(i + 1, n):
                if (i, j) == (0, 1):
                    continue
                extra += np.einsum("na,na->n", hB[:, :, i, j], hB[:, :, i, j])
        bound = base + extra
        margin = K - bound
        better = margin < best_margin
        best_margin = np.where(better, margin, best_margin)
        best_K = np.where(better, K, best_K)
        best_bound = np.where(better, bound, best_bound)
    return best_margin, best_K, best_bound


def inequality_audit(imm, bounds, constants, params, tol=None, n_planes=100,
                     seed=0, include_simons=False):
    """Evaluate the explicit pointwise inequalities over all nodes.

    Returns a list of AuditRow.  Entries needing the mean-curvature-aligned
    decomposition are reported only at nodes where |H|^2 exceeds the guard;
    the positivity ratio of Z is reported without a pass flag.
    """
    if tol is None:
        tol = default_audit_tol(imm)
    n, d = imm.n, imm.d
    ef = extrinsic_field(imm, order=3)
    gf = GradientField(imm, ef)
    rbar = ambient_curvature_adapted(ef)
    nrbar = None
    if not imm.ambient.is_space_form:
        nrbar = ambient_nabla_curvature_adapted(ef)
    raw = reaction_arrays(ef.h, ef.Hcomp, rbar,
                          nrbar if nrbar is not None else None)
    K1, K2, L = bounds.K1, bounds.K2, bounds.L
    Ksum = K1 + K2
    eta = params.resolved_eta(n)
    a = params.a
    rows = []
    N = imm.num_nodes

    def emit(name, lhs, rhs, direction="ge"):
        """Record rows; margin is the slack of the stated inequality."""
        lhs = np.asarray(lhs, dtype=float)
        rhs = np.asarray(rhs, dtype=float)
        margin = lhs - rhs if direction == "ge" else rhs - lhs
        for node in range(N):
            if not np.isfinite(margin[node]):
                continue
            rows.append(AuditRow(node=node, name=name, lhs=float(lhs[node]),
                                 rhs=float(rhs[node]),
                                 margin=float(margin[node]),
                                 passed=bool(margin[node] >= -tol)))

    # Gradient inequalities (lower bounds: lhs >= rhs).
    coeff_w = (2.0 / (n + 2.0)) * ((2.0 / (n + 2.0)) / eta - n / (n - 1.0))
    emit("lemma31_grad1", gf.normsq_gradA,
         (3.0 / (n + 2.0) - eta) * gf.normsq_gradH - coeff_w * gf.normsq_w)
    lhs2 = gf.normsq_gradA - gf.normsq_gradH / n
    frac = (n - 1.0) / (2.0 * n + 1.0)
    emit("lemma31_grad2a", lhs2,
         frac * gf.normsq_gradA
         - (2.0 * n / ((n - 1.0) * (2.0 * n + 1.0))) * gf.normsq_w)
    emit("lemma31_grad2b", lhs2,
         frac * gf.normsq_gradA - constants.Cnd * Ksum ** 2)

    # Reaction-term estimates (upper bounds: lhs <= rhs).  The codimension
    # counting factors are clamped at zero: for d = 1 the corresponding sums
    # are empty.
    emit("estimate_I", raw["I"], 4.0 * n * K1 * ef.Aring2, direction="le")
    dm1 = max(d - 1, 0)
    dm2 = max(d - 2, 0)
    valid = ef.decomp_valid
    if np.any(valid):
        II = raw["amb_A"] - a * raw["amb_B"]
        rhs_II = ((2.0 * n * K2 * ef.A2_H + 2.0 * n * a * K1 * ef.Hsq)
                  + params.varrho * n * dm1 * Ksum * ef.Aring2_H
                  + (n / params.varrho) * Ksum * ef.Aring2_I
                  + 2.0 * n * K2 * ef.Aring2_I
                  + n * dm2 * Ksum * ef.Aring2_H)
        emit("estimate_II", np.where(valid, II, np.nan), rhs_II,
             direction="le")
        rhs_III = ((16.0 / 3.0) * params.rho * (n - 1) * dm1 * Ksum
                   * ef.Aring2_H
                   + ((16.0 / (3.0 * params.rho)) * (n - 1)
                      + (8.0 / 3.0) * math.sqrt(n - 1.0) * dm2) * Ksum
                   * ef.Aring2_I)
        emit("estimate_III", np.where(valid, raw["III"], np.nan), rhs_III,
             direction="le")
        rhs_IV = (L ** 2 / params.theta + params.theta * ef.Aring2_H
                  + 4.0 * L ** 2 / params.vartheta
                  + n * params.vartheta * ef.Aring2_I)
        emit("estimate_IV", np.where(valid, raw["IV"], np.nan), rhs_IV,
             direction="le")

    # Intrinsic sectional curvature lower bound.
    model = imm.ambient
    if model.is_space_form:
        kmin = np.full(N, model.space_form_curvature)
    else:
        kmin = np.array([model.min_sectional(x) for x in ef.X])
    margin, Kbest, bound = xu_gu_margins(ef, rbar, kmin, n_planes=n_planes,
                                         seed=seed)
    for node in range(N):
        rows.append(AuditRow(node=node, name="xu_gu",
                             lhs=float(Kbest[node]), rhs=float(bound[node]),
                             margin=float(margin[node]),
                             passed=bool(margin[node] >= -tol)))

    # Positivity ratio of Z (reported, not asserted).
    denom = ef.Aring2 * ef.Hsq
    ratio = np.where(denom > 1e-14, raw["Z"] / np.where(denom > 1e-14, denom,
                                                        1.0), np.nan)
    for node in range(N):
        rows.append(AuditRow(node=node, name="z_ratio",
                             lhs=float(raw["Z"][node]), rhs=float(denom[node]),
                             margin=float(ratio[node]), passed=None))

    if include_simons and n == 2:
        rows.extend(simons_report_rows(imm, ef, gf, raw, params))
    return rows


def simons_report_rows(imm, ef, gf, raw, params):
    """Report both sides of the Laplacian lower bound for |Aring|^2.

    The comparison constant is a configuration input (params.simons_C); no
    pass flag is attached.
    """
    lap = laplacian_scalar(imm, ef.Aring2, ef=ef)
    hess = hessian_H(imm)
    inner = np.einsum("nijc,nc,nac->naij", hess, ef.mw, ef.normals)
    from .extrinsic import _slots_to_frame
    hessf = _slots_to_frame(inner, ef.chol, first_slot=2)
    pairing = np.einsum("naij,naij->n", ef.Aring, hessf)
    grad_ring = gf.normsq_gradA - gf.normsq_gradH / imm.n
    C = params.simons_C
    lhs = 0.5 * lap
    rhs = grad_ring + pairing + raw["Z"] - C * ef.Hsq - C
    return [AuditRow(node=i, name="simons_laplacian", lhs=float(lhs[i]),
                     rhs=float(rhs[i]), margin=float(lhs[i] - rhs[i]),
                     passed=None) for i in range(imm.num_nodes)]


def reaction_bound_q0(Aring2_H, Aring2_I, a, b, n):
    """Upper bound for 2 R1 - 2 a R2 at points where Q = 0.

    Valid on states constructed with |H|^2 = (|Aring|^2 + b)/(a - 1/n).
    """
    q = a - 1.0 / n
    return ((6.0 - 2.0 / (n * q)) * Aring2_H * Aring2_I
            + (3.0 - 2.0 / (n * q)) * Aring2_I ** 2
            - (2.0 * n * a * b / (n * q)) * Aring2_H
            - (4.0 * b / (n * q)) * Aring2_I
            - 2.0 * b ** 2 / (n * q))


# -- blowup comparison ODE ---------------------------------------------------------------


@dataclass
class BlowupODEResult:
    t: np.ndarray
    b: np.ndarray
    t0: float | None
    blowup: bool
    status: str


def b_blowup_ode(b_init, constants, a, n, dt_ode, cap=1e12,
                 max_steps=20_000_000, record_stride=None):
    """Integrate b' = 2 b^2/(n (a - 1/n)) - C3 b - C4 by explicit RK4.

    Stops at the overflow cap; the first crossing time estimates the blowup
    time.  A nonpositive initial slope is reported as a non-blowup
    configuration rather than an error.
    """
    if dt_ode <= 0:
        raise InputError("dt_ode must be positive")
    q = a - 1.0 / n
    if q <= 0:
        raise InputError("blowup ODE needs a > 1/n")
    C3, C4 = constants.C3, constants.C4

    def f(b):
        return 2.0 * b * b / (n * q) - C3 * b - C4

    if f(b_init) <= 0.0:
        return BlowupODEResult(t=np.array([0.0]), b=np.array([b_init]),
                               t0=None, blowup=False, status="non_blowup")
    if record_stride is None:
        record_stride = 100
    ts = [0.0]
    bs = [float(b_init)]
    t, b = 0.0, float(b_init)
    for step in range(1, max_steps + 1):
        k1 = f(b)
        k2 = f(b + 0.5 * dt_ode * k1)
        k3 = f(b + 0.5 * dt_ode * k2)
        k4 = f(b + dt_ode * k3)
        b = b + (dt_ode / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt_ode
        if not np.isfinite(b) or b >= cap:
            ts.append(t)
            bs.append(min(b, cap) if np.isfinite(b) else cap)
            return BlowupODEResult(t=np.asarray(ts), b=np.asarray(bs),
                                   t0=t, blowup=True, status="blowup")
        if step % record_stride == 0:
            ts.append(t)
            bs.append(b)
    return BlowupODEResult(t=np.asarray(ts), b=np.asarray(bs), t0=None,
                           blowup=False, status="max_steps")


# -- gradient-estimate functional ----------------------------------------------------------


def gradient_estimate_functional(state, grad, params):
    """f = |grad H|^2 + (N1 + N2 |A|^2) |Aring|^2 - eta5 |H|^4 at a node."""
    return (grad.normsq_gradH
            + (params.N1 + params.N2 * state.normsq_A) * state.normsq_Aring
            - params.eta5 * state.Hsq ** 2)


def gradient_estimate_field(ef, gf, params):
    """Batched version of the gradient-estimate functional."""
    return (gf.normsq_gradH
            + (params.N1 + params.N2 * ef.A2) * ef.Aring2
            - params.eta5 * ef.Hsq ** 2)


def gradient_estimate_defaults(n, eta5):
    """(N1, N2) picked in the construction order: N2 first, then N1.

    The closed constants of the derivation are not explicit, so unit
    placeholders stand in for them; N2 absorbs the |H|^2 |grad A|^2 terms
    and N1 then absorbs the remaining |grad A|^2 terms.
    """
    N2 = n * (2.0 * n + 1.0) / (n - 1.0) * (1.0 + 12.0 * eta5 / n)
    N1 = (2.0 * n + 1.0) / (2.0 * (n - 1.0)) * (1.0 + N2)
    return N1, N2
