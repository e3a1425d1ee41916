"""Surrogate-based cross-correlation (SBCC) and the generalized
cross-correlation family for PIV, with a synthetic Monte Carlo harness."""

__version__ = "0.1.0"

from .correlators import (ContextBank, CorrelationPlane, MethodConfig, correlate,
                          method_config, sbcc_oracle, sbcc_surrogates)
from .errors import SBCCError
from .peakfit import PeakEstimate, analyze_peak
from .pivgrid import ContextPolicy, GridSpec, VectorField, detect_outliers, process_pair

__all__ = [
    "ContextBank",
    "ContextPolicy",
    "CorrelationPlane",
    "GridSpec",
    "MethodConfig",
    "PeakEstimate",
    "SBCCError",
    "VectorField",
    "analyze_peak",
    "correlate",
    "detect_outliers",
    "method_config",
    "process_pair",
    "sbcc_oracle",
    "sbcc_surrogates",
]
