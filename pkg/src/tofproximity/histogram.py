"""Transient histogram types and ambient-light pre-processing.

Ambient light shows up as a constant level under the whole histogram. The
level is estimated as the mode of the bin values (maximum of a Gaussian
kernel density over the values), subtracted, and the remainder is scaled to
unit L1 norm.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DegenerateSignal
from .validation import check_histogram, check_histogram_batch

__all__ = [
    "KdeConfig",
    "TransientHistogram",
    "ProcessedHistogram",
    "estimate_dc_offset",
    "preprocess",
    "HistogramPreprocessor",
]

NORM_EPS = 1e-6

# Sub-steps per grid cell used by the final refinement. A power of two keeps
# every candidate position exactly representable relative to the grid origin.
_REFINE_SPLIT = 16
# Blocks are kept during the search whenever their upper bound is within this
# relative margin of the best value seen, so near-ties all reach refinement.
_TIE_MARGIN = 1e-3
_MAX_REFINE = 8


@dataclass(frozen=True)
class KdeConfig:
    """Parameters of the DC-offset search.

    ``bandwidth`` is the kernel width in count units. The argmax is searched
    on a grid of step ``search_resolution`` spanning the observed value range
    widened by ``search_margin`` on both sides.
    """

    bandwidth: float = 5.0
    search_resolution: float = 0.25
    search_margin: float = 0.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not self.search_resolution > 0:
            raise ValueError(
                f"search_resolution must be > 0, got {self.search_resolution}"
            )
        if not self.search_margin >= 0:
            raise ValueError(f"search_margin must be >= 0, got {self.search_margin}")


@dataclass(frozen=True, eq=False)
class TransientHistogram:
    """Per-bin photon counts of one sensor zone for one frame."""

    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "counts", check_histogram(self.counts))

    @property
    def bin_count(self):
        return self.counts.shape[0]

    def __len__(self):
        return self.counts.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.counts if dtype is None else self.counts.astype(dtype)


@dataclass(frozen=True, eq=False)
class ProcessedHistogram:
    """Offset-corrected histogram with unit L1 norm."""

    values: np.ndarray
    offset: float

    def __len__(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@njit(cache=True)
def _density_at(x, values, weights, inv_two_var):
    # Unnormalised kernel sum over distinct values; the constant factor does
    # not move the argmax.
    acc = 0.0
    for i in range(values.shape[0]):
        d = x - values[i]
        acc += weights[i] * np.exp(-(d * d) * inv_two_var)
    return acc


@njit(cache=True)
def _block_bound(a, b, values, weights, inv_two_var):
    # Every sample moved to its nearest point of [a, b]; equals the density
    # itself when a == b.
    acc = 0.0
    for i in range(values.shape[0]):
        v = values[i]
        if v < a:
            d = a - v
        elif v > b:
            d = v - b
        else:
            d = 0.0
        acc += weights[i] * np.exp(-(d * d) * inv_two_var)
    return acc


@njit(cache=True)
def _kde_mode(values, weights, lo, step, n_grid, inv_two_var, block, tie_margin, split, max_refine):
    # Lower bound: density at the grid point nearest the centre of the
    # densest bandwidth-wide window of (sorted) values.
    n_val = values.shape[0]
    bw = np.sqrt(0.5 / inv_two_var)
    best_w = -1.0
    centre = values[0]
    j = 0
    mass = 0.0
    for i in range(n_val):
        mass += weights[i]
        while values[i] - values[j] > bw:
            mass -= weights[j]
            j += 1
        if mass > best_w:
            best_w = mass
            centre = 0.5 * (values[i] + values[j])
    k = int(np.floor((centre - lo) / step + 0.5))
    k = min(max(k, 0), n_grid - 1)
    best = _density_at(lo + k * step, values, weights, inv_two_var)

    # Depth-first branch and bound over blocks of grid indices.
    n_blocks = (n_grid + block - 1) // block
    cap = n_blocks + 64 * (int(np.log2(block)) + 2)
    stack_s = np.empty(cap, np.int64)
    stack_e = np.empty(cap, np.int64)
    top = 0
    for j in range(n_blocks - 1, -1, -1):
        stack_s[top] = j * block
        stack_e[top] = min((j + 1) * block, n_grid)
        top += 1
    cand_i = np.empty(n_grid if n_grid < 4096 else 4096, np.int64)
    cand_f = np.empty(cand_i.shape[0], np.float64)
    n_cand = 0
    while top > 0:
        top -= 1
        s = stack_s[top]
        e = stack_e[top]
        ub = _block_bound(lo + s * step, lo + (e - 1) * step, values, weights, inv_two_var)
        if ub < best * (1.0 - tie_margin):
            continue
        if e - s == 1:
            if ub > best:
                best = ub
            if n_cand == cand_i.shape[0]:
                # Keep the buffer bounded: drop entries that fell out of range.
                m = 0
                for r in range(n_cand):
                    if cand_f[r] >= best * (1.0 - tie_margin):
                        cand_i[m] = cand_i[r]
                        cand_f[m] = cand_f[r]
                        m += 1
                n_cand = m
            cand_i[n_cand] = s
            cand_f[n_cand] = ub
            n_cand += 1
            continue
        if top + 2 > cap:
            grown_s = np.empty(2 * cap, np.int64)
            grown_e = np.empty(2 * cap, np.int64)
            grown_s[:top] = stack_s[:top]
            grown_e[:top] = stack_e[:top]
            stack_s = grown_s
            stack_e = grown_e
            cap *= 2
        half = (e - s + 1) // 2
        # Push the upper half first so the lower half is explored first.
        stack_s[top] = s + half
        stack_e[top] = e
        top += 1
        stack_s[top] = s
        stack_e[top] = s + half
        top += 1

    # Refine around the strongest candidates on a dyadic sub-lattice.
    keep_i = cand_i[:n_cand]
    keep_f = cand_f[:n_cand]
    order = np.argsort(-keep_f, kind="mergesort")
    sub = step / split
    best_x = np.inf
    best_f = -1.0
    done = np.empty(max_refine, np.int64)
    used = 0
    for r in order:
        if used == max_refine or keep_f[r] < best * (1.0 - tie_margin):
            break
        # Neighbouring grid points share most of their refinement window.
        near = False
        for u in range(used):
            if abs(keep_i[r] - done[u]) <= 1:
                near = True
        if near:
            continue
        done[used] = keep_i[r]
        used += 1
        center = lo + keep_i[r] * step
        for j in range(-split, split + 1):
            x = center + j * sub
            f = _density_at(x, values, weights, inv_two_var)
            if f > best_f or (f == best_f and x < best_x):
                best_f = f
                best_x = x
    return best_x


def estimate_dc_offset(h, cfg=KdeConfig()):
    """Modal value of the histogram counts under a Gaussian KDE.

    The density is maximised exactly over a uniform grid (branch and bound
    on block upper bounds), then refined on a ``search_resolution / 16``
    lattice within one grid step of the best candidates. Ties go to the
    smallest position.

    Parameters
    ----------
    h : array-like of shape (b,) or TransientHistogram
    cfg : KdeConfig

    Returns
    -------
    float
    """
    values, weights = np.unique(check_histogram(h), return_counts=True)
    weights = weights.astype(float)
    step = float(cfg.search_resolution)
    lo = float(values.min() - cfg.search_margin)
    hi = float(values.max() + cfg.search_margin)
    n_grid = int(np.floor((hi - lo) / step + 1e-9)) + 1
    inv_two_var = 0.5 / (cfg.bandwidth * cfg.bandwidth)
    width = max(1, int(np.ceil(4.0 * cfg.bandwidth / step)))
    block = 1 << int(np.ceil(np.log2(width)))
    return float(
        _kde_mode(
            values, weights, lo, step, n_grid, inv_two_var, block,
            _TIE_MARGIN, _REFINE_SPLIT, _MAX_REFINE,
        )
    )


def preprocess(h, cfg=KdeConfig(), eps=NORM_EPS):
    """Subtract the DC offset and scale to unit L1 norm.

    Raises
    ------
    DegenerateSignal
        If the offset-corrected histogram has L1 norm below ``eps``.
    """
    counts = check_histogram(h)
    offset = estimate_dc_offset(counts, cfg)
    centered = counts - offset
    norm = np.abs(centered).sum()
    if norm < eps:
        raise DegenerateSignal(
            f"L1 norm {norm:.3g} after removing offset {offset:.6g} is below {eps:g}"
        )
    return ProcessedHistogram(values=centered / norm, offset=offset)


class HistogramPreprocessor(TransformerMixin, BaseEstimator):
    """Row-wise ambient correction and L1 normalisation.

    Stateless transformer; ``fit`` only records the number of bins.

    Parameters
    ----------
    bandwidth, search_resolution, search_margin : float
        See :class:`KdeConfig`.
    on_degenerate : {"raise", "nan"}
        What to do with rows that carry no signal.
    """

    def __init__(
        self,
        bandwidth=5.0,
        search_resolution=0.25,
        search_margin=0.0,
        on_degenerate="raise",
    ):
        self.bandwidth = bandwidth
        self.search_resolution = search_resolution
        self.search_margin = search_margin
        self.on_degenerate = on_degenerate

    @property
    def kde_config(self):
        return KdeConfig(self.bandwidth, self.search_resolution, self.search_margin)

    def fit(self, X, y=None):
        X = check_histogram_batch(X)
        self.kde_config  # validates parameters
        if self.on_degenerate not in ("raise", "nan"):
            raise ValueError(f"unknown on_degenerate={self.on_degenerate!r}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_histogram_batch(X)
        if hasattr(self, "n_features_in_") and X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} bins, expected {self.n_features_in_}"
            )
        cfg = self.kde_config
        out = np.empty_like(X)
        for i, row in enumerate(X):
            try:
                out[i] = preprocess(row, cfg).values
            except DegenerateSignal:
                if self.on_degenerate == "raise":
                    raise
                out[i] = np.nan
        return out
