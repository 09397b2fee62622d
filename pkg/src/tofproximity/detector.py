"""Per-frame detection of unknown objects against the background model."""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .calibration import CalibrationOffset, apply_calibration, compute_calibration
from .exceptions import DegenerateSignal
from .histogram import preprocess
from .reference import BARYCENTRIC, SIGMA_FLOOR, BackgroundModel
from .validation import check_histogram, check_joint_state

__all__ = [
    "DetectorConfig",
    "Detection",
    "FrameResult",
    "likelihood",
    "gate",
    "find_segments",
    "extract_peak",
    "bin_to_distance",
    "distance_to_bin",
    "detect",
    "detect_frame",
    "detections_from_likelihood",
    "ProximityDetector",
]

# Linear bin-to-range conversion of the sensor (metres).
SLOPE = 0.01387
INTERCEPT = -0.1825

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class DetectorConfig:
    """Detection parameters.

    ``trim_range`` is a half-open ``(lo, hi)`` bin interval; bins outside it
    are never gated. ``None`` disables trimming.
    """

    t: float = 0.001
    c: int = 4
    trim_range: tuple = (15, 80)
    slope: float = SLOPE
    intercept: float = INTERCEPT

    def __post_init__(self):
        if not 0 < self.t < 1:
            raise ValueError(f"t must lie in (0, 1), got {self.t}")
        if int(self.c) != self.c or self.c < 1:
            raise ValueError(f"c must be a positive integer, got {self.c}")
        if self.trim_range is not None:
            lo, hi = self.trim_range
            if not 0 <= lo < hi:
                raise ValueError(f"invalid trim range {self.trim_range}")


@dataclass(frozen=True)
class Detection:
    segment: tuple
    peak_bin: int
    distance: float
    min_likelihood: float


@dataclass(frozen=True, eq=False)
class FrameResult:
    detections: list
    extrapolated: bool
    degenerate: bool = False
    likelihood: np.ndarray = field(default=None, repr=False)
    values: np.ndarray = field(default=None, repr=False)

    @property
    def closest(self):
        return self.detections[0] if self.detections else None


def likelihood(h_proc, bg):
    """Per-bin likelihood, equal to one where the frame matches the mean."""
    h = np.asarray(getattr(h_proc, "values", h_proc), dtype=float)
    mu = np.asarray(bg.mu, dtype=float)
    sigma = np.asarray(bg.sigma, dtype=float)
    if h.shape != mu.shape or h.shape != sigma.shape:
        raise ValueError(
            f"length mismatch: frame {h.shape}, mean {mu.shape}, sigma {sigma.shape}"
        )
    z = (h - mu) / sigma
    return np.maximum(np.exp(-0.5 * z * z), _TINY)


def gate(p, t):
    """1 where the likelihood falls strictly below ``t``."""
    return (np.asarray(p) < t).astype(np.int8)


def find_segments(g, c):
    """Maximal runs of ones at least ``c`` bins long, as inclusive (start, end)."""
    g = np.asarray(g).astype(bool)
    if g.size == 0:
        return []
    edges = np.diff(np.concatenate(([0], g.view(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [
        (int(s), int(e)) for s, e in zip(starts, ends) if e - s + 1 >= c
    ]


def extract_peak(h_proc, segment):
    """Bin of the largest value within ``segment``; ties go to the lower bin."""
    h = np.asarray(getattr(h_proc, "values", h_proc))
    start, end = segment
    return int(start + np.argmax(h[start : end + 1]))


def bin_to_distance(i_peak, cfg=DetectorConfig()):
    return cfg.slope * i_peak + cfg.intercept


def distance_to_bin(distance, cfg=DetectorConfig()):
    """Fractional bin index of a range; inverse of :func:`bin_to_distance`."""
    return (distance - cfg.intercept) / cfg.slope


def detect_frame(h_raw, q, model, cfg=DetectorConfig(), calib=None):
    """Run the full pipeline on one frame.

    Calibration is applied to the raw counts first, then ambient removal
    and normalisation (skipped when the model was built from raw counts),
    then the background query, likelihood, gating inside the trim range,
    segment search and peak extraction.

    A frame with no usable signal yields ``degenerate=True`` and no
    detections.
    """
    counts = apply_calibration(check_histogram(h_raw), calib)
    bg = model.query(q)
    ds = model.dataset_
    if counts.shape[0] != ds.b:
        raise ValueError(f"frame has {counts.shape[0]} bins, model has {ds.b}")
    if ds.preprocessed:
        try:
            values = preprocess(counts, ds.kde).values
        except DegenerateSignal:
            return FrameResult([], bg.extrapolated, degenerate=True)
    else:
        values = counts
    p = likelihood(values, bg)
    return FrameResult(
        detections_from_likelihood(values, p, cfg),
        bg.extrapolated,
        likelihood=p,
        values=values,
    )


def detections_from_likelihood(values, p, cfg=DetectorConfig()):
    """Gate, trim, segment and localise, given a likelihood vector."""
    g = gate(p, cfg.t)
    if cfg.trim_range is not None:
        lo, hi = cfg.trim_range
        g[:lo] = 0
        g[hi:] = 0
    detections = []
    for seg in find_segments(g, cfg.c):
        peak = extract_peak(values, seg)
        detections.append(
            Detection(
                segment=seg,
                peak_bin=peak,
                distance=bin_to_distance(peak, cfg),
                min_likelihood=float(p[seg[0] : seg[1] + 1].min()),
            )
        )
    detections.sort(key=lambda d: (d.distance, d.segment[0]))
    return detections


def detect(h_raw, q, model, cfg=DetectorConfig(), calib=None):
    """Detections in one frame, closest first. Empty list means no object.

    Raises
    ------
    DegenerateSignal
        When the frame carries no signal, so no decision can be made.
    """
    result = detect_frame(h_raw, q, model, cfg, calib)
    if result.degenerate:
        raise DegenerateSignal("frame has no signal after offset removal")
    return result.detections


class ProximityDetector(BaseEstimator):
    """Object detector for one arm-mounted sensor.

    ``fit`` takes a :class:`~tofproximity.reference.ReferenceDataset` and
    builds the background model; ``predict`` returns the distance to the
    closest detected object per frame (NaN when nothing is detected).

    Parameters
    ----------
    t : float, default=0.001
        Likelihood threshold.
    c : int, default=4
        Minimum number of contiguous gated bins.
    trim_range : tuple or None, default=(15, 80)
    slope, intercept : float
        Linear bin-to-metre conversion.
    mode : {"barycentric", "nearest"}
    sigma_floor : float
    """

    def __init__(
        self,
        t=0.001,
        c=4,
        trim_range=(15, 80),
        slope=SLOPE,
        intercept=INTERCEPT,
        mode=BARYCENTRIC,
        sigma_floor=SIGMA_FLOOR,
    ):
        self.t = t
        self.c = c
        self.trim_range = trim_range
        self.slope = slope
        self.intercept = intercept
        self.mode = mode
        self.sigma_floor = sigma_floor

    @property
    def config(self):
        trim = None if self.trim_range is None else tuple(self.trim_range)
        return DetectorConfig(self.t, self.c, trim, self.slope, self.intercept)

    def fit(self, dataset, y=None):
        self.config  # validates parameters
        self.model_ = BackgroundModel(mode=self.mode, sigma_floor=self.sigma_floor).fit(dataset)
        self.n_joints_ = dataset.n
        self.n_features_in_ = dataset.b
        self.calibration_ = None
        return self

    def calibrate(self, fresh_frames):
        """Estimate the power-cycle correction from frames at the first pose."""
        check_is_fitted(self, "model_")
        ds = self.model_.dataset_
        if ds.raw_mean_first is None:
            raise ValueError("reference dataset has no raw mean for its first pose")
        self.calibration_ = compute_calibration(
            ds.raw_mean_first, fresh_frames, source_pose=ds.joints[0]
        )
        return self

    def set_calibration(self, calib):
        check_is_fitted(self, "model_")
        if calib is not None and not isinstance(calib, CalibrationOffset):
            raise TypeError("calib must be a CalibrationOffset")
        self.calibration_ = calib
        return self

    def detect_frame(self, h, q):
        check_is_fitted(self, "model_")
        q = check_joint_state(q, self.n_joints_)
        return detect_frame(h, q, self.model_, self.config, self.calibration_)

    def detect(self, h, q):
        check_is_fitted(self, "model_")
        return detect(h, q, self.model_, self.config, self.calibration_)

    def predict(self, X, Q):
        """Closest detected distance per frame; NaN for no detection.

        Parameters
        ----------
        X : array-like of shape (n_frames, b)
        Q : array-like of shape (n_frames, n)
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if X.shape[0] != Q.shape[0]:
            raise ValueError("X and Q must have the same number of rows")
        out = np.full(X.shape[0], np.nan)
        for i, (h, q) in enumerate(zip(X, Q)):
            res = self.detect_frame(h, q)
            if res.detections:
                out[i] = res.detections[0].distance
        return out
