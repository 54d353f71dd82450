"""Experiment configuration: flat dotted-key files with strict validation.

The format is one ``key = value`` pair per line, ``#`` comments, blank lines
ignored.  Unknown keys are rejected.  Values are parsed by the declared type
of each key; list-valued keys take comma-separated entries.
"""

from __future__ import annotations

import math

from .ambient import AmbientModel, CurvatureBounds
from .errors import ConfigError
from .flow import FlowConfig
from .immersion import (TOPOLOGY_AXISYM, TOPOLOGY_TORUS, axisym_grid,
                        build_immersion, torus_grid)
from .pinching import PinchingParams, pinching_coefficient

_NONE = object()


def _parse_bool(text):
    val = text.strip().lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_list(text):
    items = [s for s in (p.strip() for p in text.split(",")) if s]
    return tuple(float(s) for s in items)


def _parse_int_list(text):
    items = [s for s in (p.strip() for p in text.split(",")) if s]
    return tuple(int(s) for s in items)


# key -> (parser, default).  ``None`` defaults mean "resolved downstream".
SCHEMA = {
    "seed": (int, 0),
    "ambient.kind": (str, "euclidean"),
    "ambient.c": (float, 1.0),
    "ambient.total_dim": (int, 3),
    "ambient.perturb_amplitude": (float, 0.01),
    "ambient.perturb_wavenumber": (float, 1.0),
    "immersion.shape": (str, "round-sphere"),
    "immersion.params": (_parse_float_list, (1.0,)),
    "immersion.dim": (int, 2),
    "immersion.derivative_source": (str, "fd"),
    "grid.topology": (str, TOPOLOGY_AXISYM),
    "grid.sizes": (_parse_int_list, (128,)),
    "bounds.K1": (float, 0.0),
    "bounds.K2": (float, 0.0),
    "bounds.L": (float, 0.0),
    "bounds.i_N": (float, 1.0),
    "pinching.a": (float, None),
    "pinching.b": (float, 0.0),
    "pinching.sigma": (float, 0.1),
    "pinching.p": (int, 2),
    "pinching.eta": (float, None),
    "pinching.mu": (float, 1.0),
    "pinching.rho": (float, 1.0),
    "pinching.varrho": (float, 1.0),
    "pinching.theta": (float, 1.0),
    "pinching.vartheta": (float, 1.0),
    "pinching.N1": (float, 1.0),
    "pinching.N2": (float, 1.0),
    "pinching.eta5": (float, 1.0),
    "pinching.C0": (float, 1.0),
    "pinching.delta": (float, 0.1),
    "pinching.simons_C": (float, 0.0),
    "flow.cfl": (float, 0.2),
    "flow.t_max": (float, 0.25),
    "flow.blowup_threshold": (float, 1e6),
    "flow.max_steps": (int, 5_000_000),
    "flow.diag_stride": (int, 100),
    "flow.hmin_sq_guard": (float, 1e-12),
    "flow.dt_max": (float, math.inf),
    "audit.tol": (float, None),
    "audit.tol_scale": (float, 10.0),
    "audit.planes": (int, 100),
    "convergence.levels": (int, 3),
    "output.dir": (str, "out"),
    "output.snapshots": (_parse_bool, False),
    "output.snapshot_stride": (int, 10),
    "output.plots": (_parse_bool, True),
}


class ExperimentConfig:
    """Validated configuration with typed access and object builders."""

    def __init__(self, values=None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        if values:
            for k, v in values.items():
                self.set(k, v)

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(
                        f"{path}:{lineno}: expected 'key = value'")
                key, _, val = stripped.partition("=")
                cfg.set(key.strip(), val.strip(), where=f"{path}:{lineno}")
        return cfg

    def set(self, key, value, where=None):
        if key not in SCHEMA:
            loc = f"{where}: " if where else ""
            raise ConfigError(f"{loc}unknown configuration key {key!r}")
        parser, _ = SCHEMA[key]
        if isinstance(value, str):
            try:
                value = parser(value)
            except (ValueError, TypeError) as err:
                loc = f"{where}: " if where else ""
                raise ConfigError(
                    f"{loc}bad value for {key!r}: {err}") from err
        self.values[key] = value

    def apply_overrides(self, pairs):
        for pair in pairs or ():
            if "=" not in pair:
                raise ConfigError(f"override must be key=value, got {pair!r}")
            key, _, val = pair.partition("=")
            self.set(key.strip(), val.strip(), where="--set")

    def __getitem__(self, key):
        return self.values[key]

    # -- builders ---------------------------------------------------------

    def build_ambient(self):
        kind = self["ambient.kind"]
        dim = self["ambient.total_dim"]
        try:
            if kind == "euclidean":
                return AmbientModel.euclidean(dim)
            if kind == "sphere":
                return AmbientModel.sphere(self["ambient.c"], dim)
            if kind == "hyperbolic":
                return AmbientModel.hyperbolic(self["ambient.c"], dim)
            if kind == "perturbed":
                return AmbientModel.perturbed(
                    dim, self["ambient.perturb_amplitude"],
                    self["ambient.perturb_wavenumber"])
        except Exception as err:
            raise ConfigError(f"bad ambient block: {err}") from err
        raise ConfigError(f"unknown ambient kind {kind!r}")

    def build_grid(self):
        topo = self["grid.topology"]
        sizes = self["grid.sizes"]
        try:
            if topo == TOPOLOGY_AXISYM:
                if len(sizes) != 1:
                    raise ConfigError("axisym grids take a single size")
                return axisym_grid(self["immersion.dim"], sizes[0])
            if topo == TOPOLOGY_TORUS:
                if len(sizes) == 1:
                    sizes = (sizes[0], sizes[0])
                return torus_grid(sizes)
        except ConfigError:
            raise
        except Exception as err:
            raise ConfigError(f"bad grid block: {err}") from err
        raise ConfigError(f"unknown grid topology {topo!r}")

    def build_immersion(self, ambient=None, grid=None):
        ambient = ambient or self.build_ambient()
        grid = grid or self.build_grid()
        try:
            return build_immersion(
                self["immersion.shape"], grid, ambient,
                params=self["immersion.params"],
                derivative_source=self["immersion.derivative_source"])
        except Exception as err:
            raise ConfigError(f"bad immersion block: {err}") from err

    def bounds(self):
        try:
            return CurvatureBounds(K1=self["bounds.K1"], K2=self["bounds.K2"],
                                   L=self["bounds.L"], i_N=self["bounds.i_N"])
        except Exception as err:
            raise ConfigError(f"bad bounds block: {err}") from err

    def pinching_params(self, n=None):
        a = self["pinching.a"]
        if a is None:
            if n is None:
                n = self["immersion.dim"]
            a = pinching_coefficient(n)
        try:
            return PinchingParams(
                a=a, b=self["pinching.b"], sigma=self["pinching.sigma"],
                p=self["pinching.p"], eta=self["pinching.eta"],
                mu=self["pinching.mu"], rho=self["pinching.rho"],
                varrho=self["pinching.varrho"], theta=self["pinching.theta"],
                vartheta=self["pinching.vartheta"], N1=self["pinching.N1"],
                N2=self["pinching.N2"], eta5=self["pinching.eta5"],
                C0=self["pinching.C0"], delta=self["pinching.delta"],
                simons_C=self["pinching.simons_C"])
        except Exception as err:
            raise ConfigError(f"bad pinching block: {err}") from err

    def flow_config(self):
        try:
            return FlowConfig(
                cfl=self["flow.cfl"], t_max=self["flow.t_max"],
                blowup_threshold=self["flow.blowup_threshold"],
                max_steps=self["flow.max_steps"],
                diag_stride=self["flow.diag_stride"],
                hmin_sq_guard=self["flow.hmin_sq_guard"],
                snapshot_stride=self["output.snapshot_stride"]
                if self["output.snapshots"] else 0,
                dt_max=self["flow.dt_max"])
        except ConfigError:
            raise
        except Exception as err:
            raise ConfigError(f"bad flow block: {err}") from err

    def echo(self):
        """Serializable copy of all values (for summaries)."""
        out = {}
        for k, v in sorted(self.values.items()):
            if isinstance(v, tuple):
                out[k] = list(v)
            elif isinstance(v, float) and math.isinf(v):
                out[k] = "inf"
            else:
                out[k] = v
        return out
