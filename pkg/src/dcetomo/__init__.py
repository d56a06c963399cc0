"""Delay covariance tomography from unsynchronized arrival timestamps."""

from .estimator import (
    CovarianceEstimate,
    dce_estimate,
    direct_covariance,
    filter_outliers,
    pearson,
    sample_covariance,
)
from .timing import RelativeSeries, SenderOffsets, TimingRecord, build_relative_series

__version__ = "0.1.0"

__all__ = [
    "CovarianceEstimate",
    "RelativeSeries",
    "SenderOffsets",
    "TimingRecord",
    "build_relative_series",
    "dce_estimate",
    "direct_covariance",
    "filter_outliers",
    "pearson",
    "sample_covariance",
]
