"""Empirical lenses: path similarity, silent units and path linearity."""
from .census import LayerCensus, SilentCensus, max_activations, relu_layers, silent_census
from .linearity import (AGPAResult, ALDPResult, LinearityReport, agpa, aldp, linearity_report, read_scores,
                        segment_distance, successive_angles)
from .pathsim import (LayerSimilarity, SimilarityReport, band, layerwise_similarity, moving_std, normalize_curve,
                      similarity_report, smooth_curve)
from .stats import METRICS, correlation_p, cosine, pairwise_matrix, pearson, ranks, spearman, spearman_with_p

__all__ = [
    "METRICS", "AGPAResult", "ALDPResult", "LayerCensus", "LayerSimilarity", "LinearityReport", "SilentCensus",
    "SimilarityReport", "agpa", "aldp", "band", "correlation_p", "cosine", "layerwise_similarity", "linearity_report",
    "max_activations", "moving_std", "normalize_curve", "pairwise_matrix", "pearson", "ranks", "read_scores",
    "relu_layers", "segment_distance", "silent_census", "similarity_report", "smooth_curve", "spearman",
    "spearman_with_p", "successive_angles",
]
