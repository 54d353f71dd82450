"""Mean curvature flow of submanifolds in model ambient spaces.

Simulator and diagnostics: extrinsic curvature packages on structured grids,
curvature-pinching constants and inequality audits, flow stepping with blowup
detection, and the volume-normalizing rescaled flow.
"""

from .ambient import (AmbientModel, BoundReport, CurvatureBounds,
                      curvature_tensor_at, nabla_curvature_at,
                      verify_geometry_bounds)
from .errors import (ChartError, ConfigError, DegeneracyError, FrameError,
                     InputError, McflowError, ShapeError)
from .extrinsic import (ExtrinsicState, GradientData, GradientField,
                        covariant_derivatives, extrinsic_field,
                        extrinsic_state, laplacian_scalar,
                        structure_residuals)
from .flow import (FlowConfig, FlowTrace, adaptive_dt, evolution_residual,
                   mcf_step, run_flow, umbilical_ode_oracle)
from .immersion import (AdaptedFrame, DiscreteImmersion, ParamGrid,
                        adapted_frame, axisym_grid, build_immersion,
                        induced_metric, torus_grid, total_volume)
from .pinching import (PinchingConstants, PinchingParams, b_blowup_ode,
                       cnd_constant, gradient_estimate_functional,
                       inequality_audit, pinching_coefficient,
                       pinching_constants, pinching_quantities,
                       reaction_terms)
from .rescale import (RescaleState, advance_rescaling, dilated_view,
                      hbar_value, roundness_report, run_rescaled_flow)

__version__ = "0.1.0"

__all__ = [
    "AdaptedFrame", "AmbientModel", "BoundReport", "ChartError",
    "ConfigError", "CurvatureBounds", "DegeneracyError", "DiscreteImmersion",
    "ExtrinsicState", "FlowConfig", "FlowTrace", "FrameError", "GradientData",
    "GradientField", "InputError", "McflowError", "ParamGrid",
    "PinchingConstants", "PinchingParams", "RescaleState", "ShapeError",
    "adaptive_dt", "adapted_frame", "advance_rescaling", "axisym_grid",
    "b_blowup_ode", "build_immersion", "cnd_constant",
    "covariant_derivatives", "curvature_tensor_at", "dilated_view",
    "evolution_residual", "extrinsic_field", "extrinsic_state",
    "gradient_estimate_functional", "hbar_value", "induced_metric",
    "inequality_audit", "laplacian_scalar", "mcf_step", "nabla_curvature_at",
    "pinching_coefficient", "pinching_constants", "pinching_quantities",
    "reaction_terms", "roundness_report", "run_flow", "run_rescaled_flow",
    "structure_residuals", "torus_grid", "total_volume",
    "umbilical_ode_oracle", "verify_geometry_bounds",
]
