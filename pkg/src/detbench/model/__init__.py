"""Tiny extractors, meta-architecture heads and the analytic cost model."""

from .config import LARGE_M, MAX_PROPOSALS, SMALL_M, DetectorConfig, MetaArch
from .cost import CostReport, LayerCost, cost_model
from .detector import Detector, RawDetections, run_detector

__all__ = [
    "LARGE_M",
    "MAX_PROPOSALS",
    "SMALL_M",
    "CostReport",
    "Detector",
    "DetectorConfig",
    "LayerCost",
    "MetaArch",
    "RawDetections",
    "cost_model",
    "run_detector",
]
