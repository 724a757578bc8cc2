"""tdpid: spectrum-based analysis and filtered-PID co-design for linear
time-delay systems.

The library assembles the closed loop of a delayed LTI plant with a PID
controller whose derivative action runs through a first-order low-pass
filter, computes characteristic roots and the spectral abscissa, and jointly
optimizes the gains and the filter constant by nonsmooth minimization of the
(penalized) spectral abscissa.
"""
from .errors import ComputationError, TdpidError, ValidationError
from .model import (ClosedLoopSystem, DelaySystem, PIDFilterController,
                    ValidationReport, assemble_closed_loop, controller_to_dict,
                    load_controller, load_system, system_to_dict,
                    validate_controller, validate_system, with_input_delay)
from .spectrum import (Rect, Root, ScalarQuasiPolynomial, Spectrum,
                       SpectrumOptions, char_matrix, char_matrix_derivative,
                       compute_roots, default_search_floor, scan_scalar,
                       spectral_abscissa)
from .sensitivity import (AbscissaSubgradient, RootSensitivity,
                          abscissa_subgradient, parameter_labels, root_gradient)
from .optimize import (MinimizeOptions, MinimizeResult, OptimizationResult,
                       PenaltyConfig, WindowResult, check_gradient,
                       design_filtered_pid, minimize, pack_params,
                       penalized_abscissa, refine_T_window, unpack_params)
from .analysis import (DelayMarginResult, RootLocus, StabilityRegion,
                       Trajectory, delay_margin, root_locus, simulate,
                       stability_region)

__version__ = "0.1.0"

__all__ = [
    "TdpidError", "ValidationError", "ComputationError",
    "DelaySystem", "PIDFilterController", "ClosedLoopSystem",
    "ValidationReport", "assemble_closed_loop", "validate_system",
    "validate_controller", "load_system", "load_controller",
    "system_to_dict", "controller_to_dict", "with_input_delay",
    "Spectrum", "SpectrumOptions", "Root", "ScalarQuasiPolynomial", "Rect",
    "char_matrix", "char_matrix_derivative", "compute_roots",
    "spectral_abscissa", "default_search_floor", "scan_scalar",
    "RootSensitivity", "AbscissaSubgradient", "root_gradient",
    "abscissa_subgradient", "parameter_labels",
    "PenaltyConfig", "MinimizeOptions", "MinimizeResult",
    "OptimizationResult", "WindowResult", "pack_params", "unpack_params",
    "penalized_abscissa", "minimize", "design_filtered_pid",
    "refine_T_window", "check_gradient",
    "DelayMarginResult", "StabilityRegion", "RootLocus", "Trajectory",
    "delay_margin", "stability_region", "root_locus", "simulate",
    "__version__",
]
