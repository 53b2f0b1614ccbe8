"""Two ways to make feature visualizations lie: a gated circuit and a silent-unit hijack."""
from .audit import verify_preservation
from .circuit import (CircuitError, FoolingCircuitSpec, choose_k, decoy_filter, embed_image_filter, gate_forward,
                      graft_fooling_circuit, oracle_detector, smiley_image)
from .detector import (NATURAL, SYNTHETIC, detector_accuracy, detector_dataset, detector_decisions, detector_units,
                       log_thresholds, synthetic_pool, train_detector)
from .silent import (InjectionError, InjectionReport, SilentInjectionSpec, combined_filters, default_target,
                     effective_filters, find_block, inject_silent_hijack, natural_response_max, orthogonal_residual)

__all__ = [
    "NATURAL", "SYNTHETIC", "CircuitError", "FoolingCircuitSpec", "InjectionError", "InjectionReport",
    "SilentInjectionSpec", "choose_k", "combined_filters", "decoy_filter", "default_target", "detector_accuracy",
    "detector_dataset", "detector_decisions", "detector_units", "effective_filters", "embed_image_filter",
    "find_block",
    "gate_forward", "graft_fooling_circuit", "inject_silent_hijack", "log_thresholds", "natural_response_max",
    "oracle_detector", "orthogonal_residual", "smiley_image", "synthetic_pool", "train_detector",
    "verify_preservation",
]
