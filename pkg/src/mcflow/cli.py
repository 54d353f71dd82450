"""Command-line entry point.

Subcommands: ``constants``, ``analyze``, ``flow``, ``rescale-flow``,
``convergence``, ``audit``.  Each writes structured outputs into the output
directory: delimited CSV tables with fixed headers, versioned JSON
summaries, and (unless disabled) rendered PNG figures.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
failure (a summary is still written when a trace exists).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import figures
from .config import ExperimentConfig
from .errors import ConfigError, McflowError
from .extrinsic import extrinsic_field, structure_residual_fields
from .flow import (SAMPLE_FIELDS, _fast_state, evolution_residual,
                   mcf_step, run_flow)
from .pinching import (PinchingParams, default_audit_tol, inequality_audit,
                       pinching_coefficient, pinching_constants)
from .rescale import RESCALE_FIELDS, roundness_report, run_rescaled_flow

SCHEMA_VERSION = 1


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, payload):
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and math.isnan(obj):
        return "nan"
    return str(obj)


def _sanitize(obj):
    """Replace NaN/inf floats so the JSON stays strictly valid."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _load_config(args):
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_file(args.config)
    cfg.apply_overrides(getattr(args, "set", None))
    if getattr(args, "out", None):
        cfg.set("output.dir", args.out)
    return cfg


def _outdir(cfg):
    path = Path(cfg["output.dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_constants(args):
    n, d = args.n, args.d
    a = args.a if args.a is not None else pinching_coefficient(n)
    from .ambient import CurvatureBounds
    bounds = CurvatureBounds(K1=args.k1, K2=args.k2, L=args.L, i_N=args.i_N)
    params = PinchingParams(a=a, eta=args.eta, rho=args.rho,
                            varrho=args.varrho, theta=args.theta,
                            vartheta=args.vartheta)
    const = pinching_constants(n, d, bounds, a=a, params=params)
    payload = {"n": n, "d": d, "a": a, "K1": args.k1, "K2": args.k2,
               "L": args.L}
    payload.update(const.as_dict())
    text = json.dumps(_sanitize(payload), indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        if out.suffix != ".json":
            out = out / "constants.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    print(text)
    return 0


def _trace_rows(trace, rescale_samples=None):
    rows = []
    for k, s in enumerate(trace.samples):
        row = s.as_row()
        if rescale_samples is not None:
            r = rescale_samples[k]
            row += [r.psi, r.t_tilde, r.vol_tilde, r.Aring2_tilde_max,
                    r.H_ratio]
        rows.append(row)
    return rows


def _flow_extrema(trace):
    def col(name):
        vals = trace.column(name)
        vals = vals[np.isfinite(vals)]
        return {"min": float(vals.min()), "max": float(vals.max())} \
            if len(vals) else {}
    return {name: col(name) for name in ("volume", "H2_max", "A2_max",
                                         "Aring2_max", "Q_max", "f5_max")}


def _run_flow_command(args, rescaled):
    cfg = _load_config(args)
    outdir = _outdir(cfg)
    imm = cfg.build_immersion()
    params = cfg.pinching_params(imm.n)
    fcfg = cfg.flow_config()
    status_code = 0
    if rescaled:
        trace, rsamples = run_rescaled_flow(imm, fcfg, pinching_params=params)
    else:
        trace = run_flow(imm, fcfg, pinching_params=params)
        rsamples = None
    header = list(SAMPLE_FIELDS) + (list(RESCALE_FIELDS) if rescaled else [])
    _write_csv(outdir / "trace.csv", header, _trace_rows(trace, rsamples))
    summary = {
        "command": "rescale-flow" if rescaled else "flow",
        "seed": cfg["seed"],
        "status": trace.status,
        "detected_T": trace.detected_T,
        "blowup_node": trace.blowup_node,
        "message": trace.message,
        "samples": len(trace.samples),
        "extrema": _flow_extrema(trace),
        "config": cfg.echo(),
    }
    if rescaled:
        report = _sanitize(roundness_report(rsamples))
        _write_json(outdir / "roundness.json", report)
        summary["roundness"] = report
    _write_json(outdir / "summary.json", _sanitize(summary))
    if trace.snapshots:
        snapdir = outdir / "snapshots"
        snapdir.mkdir(exist_ok=True)
        for idx, (t, snap) in enumerate(trace.snapshots):
            snap.export_csv(snapdir / f"snapshot_{idx:05d}.csv")
    if cfg["output.plots"]:
        figures.render_trace(trace, outdir / "fig_trace.png")
        if rescaled:
            figures.render_roundness(rsamples, outdir / "fig_roundness.png")
    if trace.status == "step_failure":
        status_code = 3
    return status_code


def cmd_flow(args):
    return _run_flow_command(args, rescaled=False)


def cmd_rescale_flow(args):
    return _run_flow_command(args, rescaled=True)


def cmd_analyze(args):
    cfg = _load_config(args)
    outdir = _outdir(cfg)
    imm = cfg.build_immersion()
    ef = extrinsic_field(imm, order=3, guard=cfg["flow.hmin_sq_guard"])
    gauss, codazzi, ricci = structure_residual_fields(imm)
    params = imm.node_params()
    header = [f"param{i}" for i in range(params.shape[1])] + [
        "A2", "H2", "Aring2", "A2_H", "A2_I", "Aring2_H", "Aring2_I",
        "gauss_res", "codazzi_res", "ricci_res"]
    cols = [ef.A2, ef.Hsq, ef.Aring2, ef.A2_H, ef.A2_I, ef.Aring2_H,
            ef.Aring2_I, gauss, codazzi, ricci]
    rows = []
    for node in range(imm.num_nodes):
        rows.append([float(params[node, i]) for i in range(params.shape[1])]
                    + [float(c[node]) for c in cols])
    _write_csv(outdir / "analyze.csv", header, rows)
    summary = {"command": "analyze", "seed": cfg["seed"],
               "config": cfg.echo(), "fields": {}}
    for name, arr in zip(header[params.shape[1]:], cols):
        vals = np.asarray(arr, dtype=float)
        ok = np.isfinite(vals)
        if np.any(ok):
            summary["fields"][name] = {
                "min": float(vals[ok].min()), "max": float(vals[ok].max()),
                "mean": float(vals[ok].mean())}
        else:
            summary["fields"][name] = {}
    _write_json(outdir / "summary.json", _sanitize(summary))
    if cfg["output.plots"]:
        figures.render_fields(imm, {"A2": ef.A2, "H2": ef.Hsq,
                                    "Aring2": ef.Aring2, "gauss_res": gauss,
                                    "codazzi_res": codazzi},
                              outdir / "fig_fields.png")
    return 0


def cmd_audit(args):
    cfg = _load_config(args)
    outdir = _outdir(cfg)
    imm = cfg.build_immersion()
    params = cfg.pinching_params(imm.n)
    bounds = cfg.bounds()
    const = pinching_constants(imm.n, imm.d, bounds, a=params.a,
                               params=params)
    tol = cfg["audit.tol"]
    if tol is None:
        tol = default_audit_tol(imm, scale=cfg["audit.tol_scale"])
    rows = inequality_audit(imm, bounds, const, params, tol=tol,
                            n_planes=cfg["audit.planes"], seed=cfg["seed"],
                            include_simons=(imm.n == 2))
    _write_csv(outdir / "audit.csv",
               ["node", "name", "lhs", "rhs", "margin", "passed"],
               [[r.node, r.name, r.lhs, r.rhs, r.margin,
                 "" if r.passed is None else int(r.passed)] for r in rows])
    checked = [r for r in rows if r.passed is not None]
    failed = [r for r in checked if not r.passed]
    summary = {"command": "audit", "seed": cfg["seed"], "tol": tol,
               "constants": const.as_dict(), "rows": len(rows),
               "checked": len(checked), "failed": len(failed),
               "pass_rate": 1.0 - len(failed) / max(1, len(checked)),
               "config": cfg.echo()}
    _write_json(outdir / "summary.json", _sanitize(summary))
    if cfg["output.plots"]:
        figures.render_audit(rows, outdir / "fig_audit.png")
    return 0


def _fit_order(sizes, values):
    """Least-squares slope of log2(value) against refinement level."""
    vals = np.asarray(values, dtype=float)
    if np.any(~np.isfinite(vals)) or np.any(vals <= 1e-10):
        return None, "floor"
    levels = np.log2(np.asarray(sizes, dtype=float))
    slope = np.polyfit(levels, np.log2(vals), 1)[0]
    return float(-slope), "fit"


def cmd_convergence(args):
    cfg = _load_config(args)
    outdir = _outdir(cfg)
    levels = args.levels or cfg["convergence.levels"]
    if levels < 3:
        raise ConfigError("convergence study needs at least 3 levels")
    base_sizes = cfg["grid.sizes"]
    rows = []
    struct_data = {"gauss": [], "codazzi": [], "ricci": []}
    evo_data = {"res_dmu": [], "res_H2": [], "res_A2": []}
    ambient = cfg.build_ambient()
    sizes_used = []
    for lev in range(levels):
        scale = 2 ** lev
        sizes = tuple(s * scale for s in base_sizes)
        try:
            cfg_l = ExperimentConfig(dict(cfg.values))
            cfg_l.set("grid.sizes", ",".join(str(s) for s in sizes))
            imm = cfg_l.build_immersion(ambient=ambient)
        except (ConfigError, McflowError) as err:
            rows.append([lev, sizes[0], "", "", "", "", "", "",
                         f"build failure: {err}"])
            continue
        sizes_used.append(sizes[0])
        from .extrinsic import structure_residuals
        sr = structure_residuals(imm)
        struct_data["gauss"].append((sizes[0], sr.gauss))
        struct_data["codazzi"].append((sizes[0], sr.codazzi))
        struct_data["ricci"].append((sizes[0], sr.ricci))
        ev = _evolution_residual_at_level(imm, cfg, lev)
        for key in evo_data:
            evo_data[key].append((sizes[0], getattr(ev, key)))
        rows.append([lev, sizes[0], sr.gauss, sr.codazzi, sr.ricci,
                     ev.res_dmu, ev.res_H2, ev.res_A2, ""])
    _write_csv(outdir / "orders.csv",
               ["level", "size", "gauss", "codazzi", "ricci", "res_dmu",
                "res_H2", "res_A2", "note"], rows)
    orders = {}
    for name, data in list(struct_data.items()) + list(evo_data.items()):
        if len(data) >= 2:
            order, flag = _fit_order([p[0] for p in data],
                                     [p[1] for p in data])
            orders[name] = {"order": order, "flag": flag,
                            "values": [p[1] for p in data]}
    summary = {"command": "convergence", "seed": cfg["seed"],
               "levels": levels, "sizes": sizes_used, "orders": orders,
               "config": cfg.echo()}
    _write_json(outdir / "summary.json", _sanitize(summary))
    if cfg["output.plots"]:
        figures.render_orders({**struct_data, **evo_data},
                              outdir / "fig_orders.png")
    return 0


def _evolution_residual_at_level(imm, cfg, lev):
    """CFL-locked joint refinement: dt scales with the squared spacing.

    Halving the grid spacing quarters dt (the parabolic scaling the adaptive
    step control also follows), which keeps the forward-Euler trajectory
    error in lockstep with the spatial error.  Each level runs to the same
    middle time (4 dt_0) so the three-state windows compare matched states.
    """
    ef = _fast_state(imm)
    from .flow import min_spacing_from_field
    hmin = min_spacing_from_field(imm, ef)
    dt = 0.5 * cfg["flow.cfl"] * hmin ** 2 / (2.0 * imm.n)
    states = [imm]
    times = [0.0]
    cur = imm
    t = 0.0
    nsteps = 4 * 4 ** lev + 1
    for _ in range(nsteps):
        cur = mcf_step(cur, dt, validate=False)
        t += dt
        states.append(cur)
        times.append(t)
    return evolution_residual(states[-3:], times[-3:])


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mcflow",
        description="Mean curvature flow simulator and diagnostics")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("constants", help="evaluate the pinching constants")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k1", type=float, default=0.0)
    p.add_argument("--k2", type=float, default=0.0)
    p.add_argument("--L", type=float, default=0.0)
    p.add_argument("--i-N", dest="i_N", type=float, default=1.0)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--varrho", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--vartheta", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_constants)

    for name, func, helptext in (
            ("analyze", cmd_analyze, "per-node extrinsic diagnostics"),
            ("flow", cmd_flow, "run the mean curvature flow"),
            ("rescale-flow", cmd_rescale_flow,
             "run the flow with volume-normalizing rescaling"),
            ("audit", cmd_audit, "pointwise inequality audits"),
            ("convergence", cmd_convergence, "refinement study")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None,
                       help="configuration file (dotted keys)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        if name == "convergence":
            p.add_argument("--levels", type=int, default=None)
        p.set_defaults(func=func)
    return parser


COMMANDS = ("constants", "analyze", "flow", "rescale-flow", "convergence",
            "audit")


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    if not argv or argv[0] not in COMMANDS and not argv[0].startswith("-"):
        parser.print_usage(sys.stderr)
        return 1
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except McflowError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
