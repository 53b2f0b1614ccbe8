"""What a min/max summary can and cannot reveal about a function, checked on grids."""
from .classes import TOL, Membership, membership_check, random_member, random_with_summary
from .decoders import (affine_coefficients, affine_decoder, decoder_battery, exact_decoders, member_decoder,
                       midpoint_bound, midpoint_decoder, random_decoder)
from .grid import DEFAULT_N, ClassTag, GridError, GridFunction, MinMaxSummary, minmax_summary, sup_norm
from .pairs import CounterexamplePair, PairError, construct_pair
from .verify import (NEGATIVE_CLASSES, POSITIVE_CLASSES, BoundReport, classify_witness, demo_table, format_table,
                     proposition_bound_holds, reports_to_csv, run_suite, verify_approx_bound, verify_class,
                     verify_classify_bound, verify_exact, verify_seed)

__all__ = [
    "DEFAULT_N", "NEGATIVE_CLASSES", "POSITIVE_CLASSES", "TOL", "BoundReport", "ClassTag", "CounterexamplePair",
    "GridError", "GridFunction", "Membership", "MinMaxSummary", "PairError", "affine_coefficients",
    "affine_decoder", "classify_witness", "construct_pair", "decoder_battery", "demo_table", "exact_decoders",
    "format_table", "member_decoder", "membership_check", "midpoint_bound", "midpoint_decoder",
    "minmax_summary", "proposition_bound_holds", "random_decoder", "random_member", "random_with_summary",
    "reports_to_csv", "run_suite", "sup_norm", "verify_approx_bound", "verify_class", "verify_classify_bound",
    "verify_exact", "verify_seed",
]
