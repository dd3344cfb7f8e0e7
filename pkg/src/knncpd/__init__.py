"""Streaming change-point detection with sliding-window k-NN scan statistics."""

from .arl import FunctionalEstimates, estimate_functionals, solve_threshold
from .core import DistanceSpec, KnnCpdError, Observation, distance
from .detect import DetectionEvent, Detector, DetectorConfig
from .nngraph import GraphFunctionals, GrowingGraph, WindowGraph
from .scan import ScanConfig, ScanValue, zmax
from .twosample import LabeledSample, evaluate

__version__ = "0.1.0"

__all__ = [
    "DetectionEvent",
    "Detector",
    "DetectorConfig",
    "DistanceSpec",
    "FunctionalEstimates",
    "GraphFunctionals",
    "GrowingGraph",
    "KnnCpdError",
    "LabeledSample",
    "Observation",
    "ScanConfig",
    "ScanValue",
    "WindowGraph",
    "distance",
    "estimate_functionals",
    "evaluate",
    "solve_threshold",
    "zmax",
]
