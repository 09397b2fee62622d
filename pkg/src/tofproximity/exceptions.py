"""Exception types raised by the detection pipeline."""


class DegenerateSignal(ValueError):
    """Frame carries no usable shape information after offset removal.

    Callers should treat this as a "no decision" outcome for the frame,
    which is distinct from "no object present".
    """


class DegenerateGeometry(ValueError):
    """Reference poses do not span joint space (no simplex can be formed)."""


class InsufficientData(ValueError):
    """Too few usable frames to estimate per-bin statistics."""

