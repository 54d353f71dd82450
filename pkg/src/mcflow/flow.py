"""Mean curvature flow stepping, blowup detection, evolution residuals.

The velocity is the mean curvature vector (no tangential reparameterization),
stepped by forward Euler with a curvature-capped step size.  Embedded ambient
models (sphere/hyperboloid) step in their flat embedding coordinates and
reproject onto the constraint surface.  Blowup is detected by a threshold on
max |A|^2 and the reported time extrapolates 1/max|A|^2 linearly to zero.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, InputError
from .extrinsic import (GradientField, ambient_curvature_adapted,
                        ambient_nabla_curvature_adapted, extrinsic_field,
                        laplacian_scalar)
from .immersion import TOPOLOGY_AXISYM, quadrature_weights
from .pinching import (PinchingParams, gradient_estimate_field,
                       pinching_coefficient, reaction_arrays)


@dataclass
class FlowConfig:
    cfl: float = 0.2
    t_max: float = 0.25
    blowup_threshold: float = 1e6
    max_steps: int = 5_000_000
    diag_stride: int = 100
    hmin_sq_guard: float = 1e-12
    snapshot_stride: int = 0
    dt_max: float = math.inf

    def __post_init__(self):
        if not 0.0 < self.cfl < 1.0:
            raise InputError("cfl must lie in (0, 1)")
        if self.t_max <= 0 or self.blowup_threshold <= 0:
            raise InputError("t_max and blowup_threshold must be positive")
        if self.max_steps < 1 or self.diag_stride < 1:
            raise InputError("max_steps and diag_stride must be >= 1")
        if self.dt_max <= 0:
            raise InputError("dt_max must be positive")


SAMPLE_FIELDS = ("t", "dt", "volume", "H2_max", "H2_min", "A2_max",
                 "Aring2_max", "Q_max", "f_sigma_max", "f5_max",
                 "int_f_sigma_p", "diameter", "res_dmu", "res_H2", "res_A2")


@dataclass
class FlowSample:
    t: float
    dt: float
    volume: float
    H2_max: float
    H2_min: float
    A2_max: float
    Aring2_max: float
    Q_max: float
    f_sigma_max: float
    f5_max: float
    int_f_sigma_p: float
    diameter: float
    res_dmu: float
    res_H2: float
    res_A2: float

    def as_row(self):
        return [getattr(self, k) for k in SAMPLE_FIELDS]


@dataclass
class FlowTrace:
    samples: list
    status: str
    detected_T: float | None = None
    blowup_node: int | None = None
    message: str = ""
    final_immersion: object = None
    snapshots: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(s, name) for s in self.samples])


def _fast_state(imm, order=2):
    """Minimal extrinsic data for the stepping loop."""
    return extrinsic_field(imm, order=order, minimal=True)


def min_spacing_from_field(imm, ef):
    g = ef.g
    if imm.grid.topology == TOPOLOGY_AXISYM:
        return float(np.min(np.sqrt(g[:, 0, 0])) * imm.grid.spacings[0])
    vals = [float(np.min(np.sqrt(g[:, a, a]))) * imm.grid.spacings[a]
            for a in range(imm.n)]
    return min(vals)


def adaptive_dt(imm, config, ef=None):
    """dt = cfl * min(1/max|A|^2, h_min^2/(2n)) with h_min metric spacing."""
    if ef is None:
        ef = _fast_state(imm)
    a2max = float(np.max(ef.A2))
    if not np.isfinite(a2max):
        raise DegeneracyError("nonfinite curvature in step-size control",
                              node=int(np.argmax(~np.isfinite(ef.A2))))
    hmin = min_spacing_from_field(imm, ef)
    cap = hmin ** 2 / (2.0 * imm.n)
    if a2max > 0:
        cap = min(cap, 1.0 / a2max)
    return min(config.cfl * cap, config.dt_max)


def mcf_step(imm, dt, ef=None, validate=True):
    """One forward-Euler step of the flow; returns the stepped immersion."""
    if ef is None:
        ef = _fast_state(imm)
    new_pos = imm.positions + dt * ef.Hvec
    new_pos = imm.ambient.project_chart(new_pos)
    if imm.grid.topology == TOPOLOGY_AXISYM:
        # Symmetry keeps the meridian in its plane; pin it exactly.
        for idx in imm.rot_block[1:]:
            new_pos[:, idx] = 0.0
    out = imm.with_positions(new_pos)
    if validate:
        try:
            _fast_state(out)
        except DegeneracyError as err:
            raise DegeneracyError(
                f"flow step degenerated the immersion: {err}",
                node=err.node) from err
    return out


def umbilical_ode_oracle(n, c, r0, dt=1e-5, rho_floor=1e-3):
    """Shrinking round-sphere trajectory in the flat or spherical ambient.

    For c = 0 the closed form r(t) = sqrt(r0^2 - 2 n t) gives T = r0^2/(2n).
    For c = +1 the geodesic radius solves rho' = -n cot(rho); the first
    integral cos(rho) e^{-n t} pins the collapse time exactly.
    """
    if c == 0:
        if r0 <= 0:
            raise InputError("initial radius must be positive")
        T = r0 ** 2 / (2.0 * n)
        t = np.linspace(0.0, T * (1.0 - 1e-12), 512)
        return {"t": t, "radius": np.sqrt(np.maximum(r0 ** 2 - 2 * n * t, 0)),
                "T": T}
    if c != 1:
        raise InputError("the umbilical oracle supports c in {0, +1}")
    if not 0.0 < r0 < math.pi / 2.0:
        raise InputError("geodesic radius must lie in (0, pi/2)")
    T_exact = -math.log(math.cos(r0)) / n

    def f(rho):
        return -n / math.tan(rho)

    ts = [0.0]
    rhos = [r0]
    t, rho = 0.0, r0
    while rho > rho_floor:
        # Stop before the collapse becomes stiffer than the step resolves.
        if dt * abs(f(rho)) > 0.5 * rho:
            break
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        step = (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho += step
        t += dt
        ts.append(t)
        rhos.append(rho)
        if t > 10 * T_exact + 1.0:
            break
    rhos = np.asarray(rhos)
    if np.any(np.diff(rhos) > 0):
        raise InputError("umbilical oracle trajectory failed monotonicity")
    return {"t": np.asarray(ts), "radius": rhos, "T": T_exact}


@dataclass
class EvolutionResiduals:
    res_dmu: float
    res_H2: float
    res_A2: float
    excluded: int
    fields: dict


def _time_derivative(y0, y1, y2, dt0, dt1):
    """Second-order derivative at the middle of three (nonuniform) times."""
    num = dt0 ** 2 * y2 - dt1 ** 2 * y0 + (dt1 ** 2 - dt0 ** 2) * y1
    return num / (dt0 * dt1 * (dt0 + dt1))


def evolution_residual(states, times, include_ambient=True,
                       pinching_params=None):
    """Residuals of the evolution identities over a 3-state window.

    ``states`` are immersions on a common grid at ``times`` (strictly
    increasing); the centered time difference at the middle state is
    compared against the spatial right-hand sides assembled there.  Each
    residual is max over nodes of |difference - RHS| / max(1, |RHS|); on
    fd-source axisym grids the max carries the pole weight sin^2 u because
    the profile chart degenerates on the axis.  ``include_ambient=False``
    drops the ambient curvature term from the |H|^2 right-hand side
    (term-ablation debugging); the per-node RHS arrays are exposed in
    ``fields``.
    """
    if len(states) != 3 or len(times) != 3:
        raise InputError("evolution residual needs exactly three states")
    t0, t1, t2 = times
    dt0, dt1 = t1 - t0, t2 - t1
    if dt0 <= 0 or dt1 <= 0:
        raise InputError("times must be strictly increasing")
    imm = states[1]
    ef0 = _fast_state(states[0])
    ef2 = _fast_state(states[2])
    ef = extrinsic_field(imm, order=3)
    gf = GradientField(imm, ef)
    rbar = ambient_curvature_adapted(ef)
    nrbar = None
    if not imm.ambient.is_space_form:
        nrbar = ambient_nabla_curvature_adapted(ef)
    raw = reaction_arrays(ef.h, ef.Hcomp, rbar, nrbar)

    # Volume-form residual.
    d_mu = _time_derivative(ef0.sqrt_det, ef.sqrt_det, ef2.sqrt_det, dt0, dt1)
    rhs_dmu = -ef.Hsq * ef.sqrt_det
    r_dmu = np.abs(d_mu - rhs_dmu) / np.maximum(1.0, np.abs(rhs_dmu))

    # |H|^2 residual.
    d_H2 = _time_derivative(ef0.Hsq, ef.Hsq, ef2.Hsq, dt0, dt1)
    lap_H2 = laplacian_scalar(imm, ef.Hsq, ef=ef)
    rhs_H2 = lap_H2 - 2.0 * gf.normsq_gradH + 2.0 * raw["R2"]
    if include_ambient:
        rhs_H2 = rhs_H2 + raw["amb_B"]
    r_H2 = np.abs(d_H2 - rhs_H2) / np.maximum(1.0, np.abs(rhs_H2))

    # |A|^2 residual.
    d_A2 = _time_derivative(ef0.A2, ef.A2, ef2.A2, dt0, dt1)
    lap_A2 = laplacian_scalar(imm, ef.A2, ef=ef)
    rhs_A2 = (lap_A2 - 2.0 * gf.normsq_gradA + 2.0 * raw["R1"]
              + raw["I"] + raw["III"] + raw["IV"])
    if include_ambient:
        rhs_A2 = rhs_A2 + raw["amb_A"]
    r_A2 = np.abs(d_A2 - rhs_A2) / np.maximum(1.0, np.abs(rhs_A2))

    bad = ~(np.isfinite(r_dmu) & np.isfinite(r_H2) & np.isfinite(r_A2))
    excluded = int(np.sum(bad))
    ok = ~bad
    if not np.any(ok):
        raise DegeneracyError("all nodes excluded from the residual window")
    weight = np.ones(imm.num_nodes)
    if imm.grid.topology == TOPOLOGY_AXISYM and \
            imm.derivative_source == "fd":
        weight = np.sin(imm.node_params()[:, 0]) ** 2
    fields = {"rhs_dmu": rhs_dmu, "rhs_H2": rhs_H2, "rhs_A2": rhs_A2,
              "diff_dmu": d_mu, "diff_H2": d_H2, "diff_A2": d_A2,
              "amb_B": raw["amb_B"], "amb_A": raw["amb_A"]}
    return EvolutionResiduals(res_dmu=float(np.max((r_dmu * weight)[ok])),
                              res_H2=float(np.max((r_H2 * weight)[ok])),
                              res_A2=float(np.max((r_A2 * weight)[ok])),
                              excluded=excluded, fields=fields)


def diameter_estimate(imm, ef=None):
    """Intrinsic diameter estimate from grid graph distances.

    Axisym grids use the profile arc length plus the largest parallel
    circle; torus grids run Dijkstra from a few seed nodes over the grid
    graph with metric edge lengths.
    """
    if ef is None:
        ef = _fast_state(imm)
    if imm.grid.topology == TOPOLOGY_AXISYM:
        h = imm.grid.spacings[0]
        arc = float(np.sum(np.sqrt(ef.g[:, 0, 0])) * h)
        r_max = float(np.max(np.sqrt(np.abs(ef.g[:, 1, 1]))))
        return max(arc, math.pi * r_max)
    nu, nv = imm.grid.sizes
    hu, hv = imm.grid.spacings
    wu = np.sqrt(ef.g[:, 0, 0]).reshape(nu, nv) * hu
    wv = np.sqrt(ef.g[:, 1, 1]).reshape(nu, nv) * hv
    best = 0.0
    for seed in {0, (nu // 2) * nv + nv // 2, (nu // 3) * nv,
                 nv // 2}:
        dist = np.full(nu * nv, np.inf)
        dist[seed] = 0.0
        pq = [(0.0, seed)]
        while pq:
            dcur, node = heapq.heappop(pq)
            if dcur > dist[node]:
                continue
            i, j = divmod(node, nv)
            for (i2, j2, w) in (((i + 1) % nu, j, wu[i, j]),
                                ((i - 1) % nu, j, wu[(i - 1) % nu, j]),
                                (i, (j + 1) % nv, wv[i, j]),
                                (i, (j - 1) % nv, wv[i, (j - 1) % nv])):
                nxt = i2 * nv + j2
                nd = dcur + w
                if nd < dist[nxt]:
                    dist[nxt] = nd
                    heapq.heappush(pq, (nd, nxt))
        best = max(best, float(np.max(dist)))
    return best


def detect_blowup_time(t_hist, a2_hist, threshold):
    """Extrapolate 1/max|A|^2 linearly to zero over the final samples."""
    t_hist = np.asarray(t_hist)
    a2_hist = np.asarray(a2_hist)
    keep = a2_hist >= threshold / 16.0
    if np.sum(keep) < 2:
        keep = np.zeros(len(t_hist), dtype=bool)
        keep[-min(10, len(t_hist)):] = True
    tt = t_hist[keep]
    yy = 1.0 / a2_hist[keep]
    slope, icept = np.polyfit(tt, yy, 1)
    if slope >= 0:
        return float(tt[-1])
    return float(-icept / slope)


def run_flow(initial, config, pinching_params=None, observer=None,
             diagnostics=True):
    """Run the flow until t_max, blowup threshold, or step failure.

    ``observer`` may provide ``on_step(t_new, dt, ef_new, imm_new)`` called
    after every accepted step and ``on_sample(sample, ef, imm)`` at each
    diagnostics sample.
    """
    imm = initial
    n = imm.n
    if pinching_params is None:
        a = pinching_coefficient(n)
        pinching_params = PinchingParams(a=a)
    t = 0.0
    step = 0
    samples = []
    snapshots = []
    t_hist = []
    a2_hist = []
    window = []                # rolling (t, immersion) triple
    status = "reached_t_max"
    message = ""
    detected_T = None
    blowup_node = None
    ef = _fast_state(imm)
    last_dt = 0.0
    if observer is not None and hasattr(observer, "on_start"):
        observer.on_start(ef, imm)
    while True:
        a2max = float(np.max(ef.A2))
        t_hist.append(t)
        a2_hist.append(a2max)
        sample_due = diagnostics and (step % config.diag_stride == 0)
        terminal = False
        if a2max >= config.blowup_threshold:
            status = "blowup_detected"
            detected_T = detect_blowup_time(t_hist, a2_hist,
                                            config.blowup_threshold)
            blowup_node = int(np.argmax(ef.A2))
            terminal = True
        elif t >= config.t_max - 1e-15:
            status = "reached_t_max"
            terminal = True
        elif step >= config.max_steps:
            status = "step_failure"
            message = "maximum step count reached"
            terminal = True
        if sample_due or terminal:
            sample = _diagnostics_sample(imm, t, last_dt, window,
                                         pinching_params, config)
            samples.append(sample)
            if observer is not None and hasattr(observer, "on_sample"):
                observer.on_sample(sample, imm)
        if config.snapshot_stride and (
                step % (config.diag_stride * config.snapshot_stride) == 0):
            snapshots.append((t, imm))
        if terminal:
            break
        try:
            dt = adaptive_dt(imm, config, ef)
            dt = min(dt, config.t_max - t)
            new_imm = mcf_step(imm, dt, ef=ef, validate=False)
            new_ef = _fast_state(new_imm)
        except DegeneracyError as err:
            status = "step_failure"
            message = str(err)
            blowup_node = err.node
            sample = _diagnostics_sample(imm, t, last_dt, window,
                                         pinching_params, config)
            samples.append(sample)
            break
        window.append((t, imm))
        if len(window) > 2:
            window.pop(0)
        imm = new_imm
        ef = new_ef
        t += dt
        last_dt = dt
        step += 1
        if observer is not None:
            observer.on_step(t, dt, ef, imm)
    return FlowTrace(samples=samples, status=status, detected_T=detected_T,
                     blowup_node=blowup_node, message=message,
                     final_immersion=imm, snapshots=snapshots)


def _diagnostics_sample(imm, t, dt, window, params, config):
    """Assemble one full diagnostics record at the current state."""
    ef = extrinsic_field(imm, order=3, guard=config.hmin_sq_guard)
    gf = GradientField(imm, ef)
    weights = quadrature_weights(imm)
    volume = float(np.sum(ef.sqrt_det) * weights)
    valid = ef.decomp_valid
    H2 = np.where(valid, ef.Hsq, np.nan)
    f_sigma = np.where(valid, ef.Aring2
                       / np.where(valid, ef.Hsq, 1.0) ** (1 - params.sigma),
                       np.nan)
    int_fp = float(np.nansum(np.where(valid, f_sigma ** params.p, 0.0)
                             * ef.sqrt_det) * weights)
    f5 = gradient_estimate_field(ef, gf, params)
    Q = ef.A2 - params.a * ef.Hsq + params.b
    res = (math.nan, math.nan, math.nan)
    if len(window) == 2:
        (t0, s0), (t1, s1) = window
        try:
            ev = evolution_residual([s0, s1, imm], [t0, t1, t],
                                    pinching_params=params)
            res = (ev.res_dmu, ev.res_H2, ev.res_A2)
        except DegeneracyError:
            pass
    return FlowSample(
        t=t, dt=dt, volume=volume,
        H2_max=float(np.max(ef.Hsq)), H2_min=float(np.min(ef.Hsq)),
        A2_max=float(np.max(ef.A2)), Aring2_max=float(np.max(ef.Aring2)),
        Q_max=float(np.max(Q)),
        f_sigma_max=float(np.nanmax(f_sigma)) if np.any(valid) else math.nan,
        f5_max=float(np.max(f5)),
        int_f_sigma_p=int_fp,
        diameter=diameter_estimate(imm, ef),
        res_dmu=res[0], res_H2=res[1], res_A2=res[2])
