"""Worst-case and probabilistic robustness certificates for dense classifiers."""

__version__ = "0.1.0"

from .network import (  # noqa: E402
    Activation,
    InputSpec,
    Network,
    forward,
    load_network,
    margin,
    save_network,
)
from .relaxation import Mode, compute_margin_bounds, compute_preactivation_bounds, relax_activation  # noqa: E402
from .worst_case import certify_worst_case, is_certified, minimize_affine_over_ball  # noqa: E402
from .probabilistic import (  # noqa: E402
    Method,
    NoiseModel,
    convert_norm_certificate,
    convolution_bounds,
    gaussian_bounds,
    hoeffding_bounds,
    theorem_sandwich,
)
from .driver import CertificationRequest, certify_proven_radius, run_batch  # noqa: E402

__all__ = [
    "Activation", "InputSpec", "Network", "forward", "load_network", "margin", "save_network",
    "Mode", "compute_margin_bounds", "compute_preactivation_bounds", "relax_activation",
    "certify_worst_case", "is_certified", "minimize_affine_over_ball",
    "Method", "NoiseModel", "convert_norm_certificate", "convolution_bounds", "gaussian_bounds",
    "hoeffding_bounds", "theorem_sandwich",
    "CertificationRequest", "certify_proven_radius", "run_batch",
]
