"""Per-bin additive correction for the bias a sensor picks up when power cycled.

The robot is returned to the first reference pose, a batch of fresh frames
is averaged, and the difference to the raw mean recorded during reference
capture is added to every later frame before pre-processing.
"""

from dataclasses import dataclass

import numpy as np

from .validation import check_histogram

__all__ = ["CalibrationOffset", "compute_calibration", "apply_calibration"]


@dataclass(frozen=True, eq=False)
class CalibrationOffset:
    h_calib: np.ndarray
    source_pose: np.ndarray = None

    @classmethod
    def zeros(cls, b, source_pose=None):
        return cls(np.zeros(b), source_pose)


def compute_calibration(reference_mean, fresh_frames, source_pose=None):
    """Correction that maps fresh captures back onto the stored raw mean.

    Parameters
    ----------
    reference_mean : array-like of shape (b,)
        Raw-count mean recorded at the first reference pose.
    fresh_frames : sequence of histograms of length b
        Captures taken at the same pose after the sensor was power cycled.
    """
    ref = np.asarray(reference_mean, dtype=float)
    frames = [check_histogram(f) for f in fresh_frames]
    if not frames:
        raise ValueError("need at least one fresh frame")
    for f in frames:
        if f.shape != ref.shape:
            raise ValueError(
                f"frame has {f.shape[0]} bins, reference mean has {ref.shape[0]}"
            )
    h_ref = np.mean(frames, axis=0)
    pose = None if source_pose is None else np.asarray(source_pose, dtype=float)
    return CalibrationOffset(h_calib=ref - h_ref, source_pose=pose)


def apply_calibration(h, calib):
    """Add the correction and clamp negative counts to zero."""
    counts = check_histogram(h)
    if calib is None:
        return counts
    if calib.h_calib.shape != counts.shape:
        raise ValueError(
            f"calibration has {calib.h_calib.shape[0]} bins, frame has {counts.shape[0]}"
        )
    return np.maximum(counts + calib.h_calib, 0.0)
