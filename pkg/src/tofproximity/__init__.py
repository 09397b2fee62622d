"""Detect unknown objects near a robot arm from time-of-flight histograms.

The robot's own returns are explained by a background model built from
reference captures over a joint-space grid; bins that the model cannot
explain are reported as objects.
"""

from .calibration import CalibrationOffset, apply_calibration, compute_calibration
from .config import SimConfig, load_config
from .detector import Detection, DetectorConfig, FrameResult, ProximityDetector, detect
from .exceptions import DegenerateGeometry, DegenerateSignal, InsufficientData
from .histogram import (
    HistogramPreprocessor,
    KdeConfig,
    ProcessedHistogram,
    TransientHistogram,
    estimate_dc_offset,
    preprocess,
)
from .reference import BackgroundModel, GridSpec, ReferenceDataset, ReferencePose
from .simulator import SensorSpec, SimArm

__version__ = "0.1.0"

__all__ = [
    "BackgroundModel",
    "CalibrationOffset",
    "DegenerateGeometry",
    "DegenerateSignal",
    "Detection",
    "DetectorConfig",
    "FrameResult",
    "GridSpec",
    "HistogramPreprocessor",
    "InsufficientData",
    "KdeConfig",
    "ProcessedHistogram",
    "ProximityDetector",
    "ReferenceDataset",
    "ReferencePose",
    "SensorSpec",
    "SimArm",
    "SimConfig",
    "TransientHistogram",
    "apply_calibration",
    "compute_calibration",
    "detect",
    "estimate_dc_offset",
    "load_config",
    "preprocess",
]
