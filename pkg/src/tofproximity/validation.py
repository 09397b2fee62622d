"""Input validation helpers shared by the estimators."""

import numpy as np


def check_histogram(h, name="histogram"):
    """Return ``h`` as a finite, non-negative 1-D float array."""
    if hasattr(h, "counts"):
        h = h.counts
    arr = np.asarray(h, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative counts")
    return arr


def check_histogram_batch(X, name="X"):
    """Return ``X`` as a finite, non-negative 2-D float array (frames x bins)."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (n_frames, n_bins), got {arr.shape}")
    if arr.shape[1] == 0:
        raise ValueError(f"{name} has no bins")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative counts")
    return arr


def check_joint_state(q, n=None, name="q"):
    """Return ``q`` as a finite 1-D float array, optionally of length ``n``."""
    arr = np.atleast_1d(np.asarray(q, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} has {arr.shape[0]} joints, model expects {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite angles")
    return arr
