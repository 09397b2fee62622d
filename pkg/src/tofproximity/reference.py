"""Background model of the robot-only histogram as a function of joint state.

A reference dataset holds, for every sampled joint state, the per-bin mean
and standard deviation of pre-processed robot-only histograms. The
:class:`BackgroundModel` estimator interpolates these statistics to
arbitrary joint states, either with barycentric weights over a simplex that
contains the query or by copying the nearest sampled pose.
"""

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateGeometry, DegenerateSignal, InsufficientData
from .histogram import KdeConfig, preprocess
from .validation import check_histogram, check_joint_state

__all__ = [
    "GridSpec",
    "ReferencePose",
    "ReferenceDataset",
    "BackgroundQuery",
    "BackgroundModel",
    "summarize_pose",
    "SIGMA_FLOOR",
]

SIGMA_FLOOR = 1e-4
BARYCENTRIC = "barycentric"
NEAREST = "nearest"

_SNAP = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned grid in joint space, enumerated in C order.

    Axis ``k`` holds ``shape[k]`` values ``start[k] + i * step[k]``.
    """

    start: tuple
    step: tuple
    shape: tuple

    def __post_init__(self):
        if not (len(self.start) == len(self.step) == len(self.shape)):
            raise ValueError("start, step and shape must have equal length")
        if any(s <= 0 for s in self.step):
            raise ValueError("grid steps must be positive")
        if any(int(m) < 1 for m in self.shape):
            raise ValueError("every axis needs at least one value")

    @classmethod
    def from_ranges(cls, ranges, step):
        """Grid covering each ``(lo, hi)`` range inclusively at spacing ``step``.

        A scalar ``step`` is shared by all axes. The upper end is included
        when it lies on the lattice (within 1e-9 of a step).
        """
        ranges = [tuple(map(float, r)) for r in ranges]
        steps = np.broadcast_to(np.asarray(step, dtype=float), (len(ranges),))
        shape = []
        for (lo, hi), st in zip(ranges, steps):
            if hi < lo:
                raise ValueError(f"empty range ({lo}, {hi})")
            shape.append(int(math.floor((hi - lo) / st + 1e-9)) + 1)
        return cls(
            start=tuple(lo for lo, _ in ranges),
            step=tuple(float(s) for s in steps),
            shape=tuple(shape),
        )

    @property
    def n(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axis(self, k):
        return self.start[k] + np.arange(self.shape[k]) * self.step[k]

    def points(self):
        """All grid points, shape ``(size, n)``, C order."""
        axes = [self.axis(k) for k in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def subsample(self, factor):
        """Every ``factor``-th point along each axis."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("factor must be >= 1")
        return GridSpec(
            start=self.start,
            step=tuple(s * factor for s in self.step),
            shape=tuple((m - 1) // factor + 1 for m in self.shape),
        )


@dataclass(frozen=True, eq=False)
class ReferencePose:
    q: np.ndarray
    mean: np.ndarray
    spread: np.ndarray
    sample_count: int


def summarize_pose(q, raw_frames, cfg=KdeConfig(), preprocessed=True):
    """Per-bin mean and sample standard deviation of one pose's frames.

    Frames are pre-processed first (unless ``preprocessed`` is False, in
    which case raw counts are summarised). Frames without signal are
    dropped.

    Raises
    ------
    InsufficientData
        If fewer than two frames survive.
    """
    q = check_joint_state(q)
    rows = []
    b = None
    for frame in raw_frames:
        counts = check_histogram(frame)
        if b is None:
            b = counts.shape[0]
        elif counts.shape[0] != b:
            raise ValueError("frames have different bin counts")
        if not preprocessed:
            rows.append(counts)
            continue
        try:
            rows.append(preprocess(counts, cfg).values)
        except DegenerateSignal:
            continue
    if len(rows) < 2:
        raise InsufficientData(
            f"pose {q.tolist()}: {len(rows)} usable frames, need at least 2"
        )
    stack = np.vstack(rows)
    return ReferencePose(
        q=q,
        mean=stack.mean(axis=0),
        spread=stack.std(axis=0, ddof=1),
        sample_count=len(rows),
    )


@dataclass(eq=False)
class ReferenceDataset:
    """Reference statistics for a set of joint states.

    Attributes
    ----------
    joints : ndarray of shape (m, n)
    means, spreads : ndarray of shape (m, b)
    counts : ndarray of shape (m,)
    kde : KdeConfig
        Pre-processing parameters the statistics were built with.
    grid : GridSpec or None
        Set when ``joints`` enumerates a full grid in C order.
    preprocessed : bool
        False when the statistics describe raw counts.
    raw_mean_first : ndarray of shape (b,) or None
        Mean raw histogram at the first pose, the anchor for power-cycle
        calibration.
    """

    joints: np.ndarray
    means: np.ndarray
    spreads: np.ndarray
    counts: np.ndarray
    kde: KdeConfig = field(default_factory=KdeConfig)
    grid: GridSpec = None
    preprocessed: bool = True
    raw_mean_first: np.ndarray = None

    def __post_init__(self):
        self.joints = np.atleast_2d(np.asarray(self.joints, dtype=float))
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.spreads = np.atleast_2d(np.asarray(self.spreads, dtype=float))
        self.counts = np.asarray(self.counts, dtype=int).reshape(-1)
        m = self.joints.shape[0]
        if self.means.shape[0] != m or self.spreads.shape[0] != m or self.counts.shape[0] != m:
            raise ValueError("joints, means, spreads and counts disagree on pose count")
        if self.means.shape != self.spreads.shape:
            raise ValueError("means and spreads must have the same shape")
        if np.any(self.spreads < 0):
            raise ValueError("spreads must be non-negative")
        if np.any(self.counts < 1):
            raise ValueError("sample counts must be positive")
        if self.grid is not None and self.grid.n != self.n:
            raise ValueError("grid dimensionality does not match joints")
        if self.raw_mean_first is not None:
            self.raw_mean_first = np.asarray(self.raw_mean_first, dtype=float)
            if self.raw_mean_first.shape != (self.b,):
                raise ValueError("raw_mean_first must have one value per bin")

    @classmethod
    def from_poses(cls, poses, **kwargs):
        poses = list(poses)
        if not poses:
            raise ValueError("no poses")
        return cls(
            joints=np.vstack([p.q for p in poses]),
            means=np.vstack([p.mean for p in poses]),
            spreads=np.vstack([p.spread for p in poses]),
            counts=[p.sample_count for p in poses],
            **kwargs,
        )

    @property
    def n(self):
        return self.joints.shape[1]

    @property
    def b(self):
        return self.means.shape[1]

    def __len__(self):
        return self.joints.shape[0]

    @property
    def poses(self):
        return [
            ReferencePose(self.joints[i], self.means[i], self.spreads[i], int(self.counts[i]))
            for i in range(len(self))
        ]

    def subsample(self, factor):
        """Coarser dataset keeping every ``factor``-th grid pose per axis."""
        if self.grid is None:
            raise ValueError("subsampling needs a grid-structured dataset")
        grids = [np.arange(0, m, int(factor)) for m in self.grid.shape]
        idx = np.ravel_multi_index(
            np.meshgrid(*grids, indexing="ij"), self.grid.shape
        ).ravel()
        # raw_mean_first stays valid: index 0 is always kept.
        return replace(
            self,
            joints=self.joints[idx],
            means=self.means[idx],
            spreads=self.spreads[idx],
            counts=self.counts[idx],
            grid=self.grid.subsample(factor),
        )

    def save(self, path):
        from .io import write_reference

        write_reference(path, self)

    @classmethod
    def load(cls, path):
        from .io import read_reference

        return read_reference(path)


@dataclass(frozen=True, eq=False)
class BackgroundQuery:
    """Interpolated robot-only statistics at one joint state."""

    mu: np.ndarray
    sigma: np.ndarray
    extrapolated: bool = False


def _kuhn_weights(local):
    """Simplex of the Kuhn triangulation of the unit cube containing ``local``.

    Returns the vertex offsets (n+1, n) as 0/1 integers and the barycentric
    weights. Coordinates are visited in decreasing order; ties go to the
    lower axis index.
    """
    n = local.shape[0]
    order = np.lexsort((np.arange(n), -local))
    sorted_local = local[order]
    weights = np.empty(n + 1)
    weights[0] = 1.0 - sorted_local[0]
    weights[1:n] = sorted_local[:-1] - sorted_local[1:]
    weights[n] = sorted_local[-1]
    offsets = np.zeros((n + 1, n), dtype=np.intp)
    for k in range(n):
        offsets[k + 1] = offsets[k]
        offsets[k + 1, order[k]] = 1
    return offsets, weights


class BackgroundModel(BaseEstimator):
    """Joint-state indexed background statistics.

    Parameters
    ----------
    mode : {"barycentric", "nearest"}
        Interpolation rule. Queries outside the sampled region always fall
        back to the nearest pose and are flagged as extrapolated.
    sigma_floor : float
        Lower bound applied to every interpolated spread.

    Attributes
    ----------
    dataset_ : ReferenceDataset
    structure_ : {"grid", "scattered", "nearest"}
        How simplexes are located.
    n_simplices_ : int
        Number of simplexes in the decomposition (0 in nearest mode).
    """

    def __init__(self, mode=BARYCENTRIC, sigma_floor=SIGMA_FLOOR):
        self.mode = mode
        self.sigma_floor = sigma_floor

    def fit(self, dataset, y=None):
        if self.mode not in (BARYCENTRIC, NEAREST):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")
        ds = dataset
        m, n = ds.joints.shape
        self.dataset_ = ds
        self.n_joints_ = n
        self.n_bins_ = ds.b
        self._tree = cKDTree(ds.joints)
        self._delaunay = None
        self._order1d = None
        self._grid_lo = self._grid_hi = None

        on_grid = ds.grid is not None and ds.grid.size == m and np.allclose(
            ds.grid.points(), ds.joints, rtol=0, atol=1e-9
        )
        if on_grid:
            self._grid_lo = np.asarray(ds.grid.start, dtype=float)
            self._grid_step = np.asarray(ds.grid.step, dtype=float)
            self._grid_shape = np.asarray(ds.grid.shape, dtype=np.intp)
            self._grid_hi = self._grid_lo + (self._grid_shape - 1) * self._grid_step

        degenerate = m < n + 1 or np.linalg.matrix_rank(ds.joints - ds.joints[0]) < n
        if self.mode == NEAREST:
            self.structure_ = NEAREST
            self.n_simplices_ = 0
            if not degenerate and not on_grid and n >= 2:
                self._delaunay = Delaunay(ds.joints)
            elif not degenerate and n == 1:
                self._order1d = np.argsort(ds.joints[:, 0], kind="stable")
            return self
        if degenerate:
            raise DegenerateGeometry(
                f"{m} poses do not span {n}-dimensional joint space"
            )
        if on_grid:
            self.structure_ = "grid"
            self.n_simplices_ = int(np.prod(self._grid_shape - 1)) * math.factorial(n)
        elif n == 1:
            self.structure_ = "scattered"
            self._order1d = np.argsort(ds.joints[:, 0], kind="stable")
            self.n_simplices_ = m - 1
        else:
            self.structure_ = "scattered"
            try:
                self._delaunay = Delaunay(ds.joints)
            except QhullError as exc:
                raise DegenerateGeometry(str(exc)) from exc
            self.n_simplices_ = int(self._delaunay.simplices.shape[0])
        return self

    def _nearest(self, q):
        _, i = self._tree.query(q)
        return int(i)

    def _inside(self, q):
        if self._grid_lo is not None:
            return bool(
                np.all(q >= self._grid_lo - _SNAP) and np.all(q <= self._grid_hi + _SNAP)
            )
        if self._order1d is not None:
            x = self.dataset_.joints[self._order1d, 0]
            return bool(x[0] - _SNAP <= q[0] <= x[-1] + _SNAP)
        if self._delaunay is not None:
            return bool(self._delaunay.find_simplex(q, tol=_SNAP) >= 0)
        return False

    def weights(self, q):
        """Pose indices and interpolation weights for joint state ``q``.

        Returns
        -------
        rows : ndarray of int
        weights : ndarray of float
            Non-negative, summing to one.
        extrapolated : bool
        """
        check_is_fitted(self, "dataset_")
        q = check_joint_state(q, self.n_joints_)
        if self.mode == NEAREST:
            return np.array([self._nearest(q)]), np.ones(1), not self._inside(q)
        if self.structure_ == "grid":
            return self._grid_weights(q)
        if self._order1d is not None:
            return self._interval_weights(q)
        return self._delaunay_weights(q)

    def _fallback(self, q):
        return np.array([self._nearest(q)]), np.ones(1), True

    def _grid_weights(self, q):
        if not self._inside(q):
            return self._fallback(q)
        f = (q - self._grid_lo) / self._grid_step
        snapped = np.round(f)
        f = np.where(np.abs(f - snapped) < _SNAP, snapped, f)
        f = np.clip(f, 0, self._grid_shape - 1)
        cell = np.minimum(np.floor(f), self._grid_shape - 2).astype(np.intp)
        offsets, w = _kuhn_weights(f - cell)
        rows = np.ravel_multi_index((cell + offsets).T, tuple(self._grid_shape))
        return rows, w, False

    def _interval_weights(self, q):
        x = self.dataset_.joints[self._order1d, 0]
        if not x[0] - _SNAP <= q[0] <= x[-1] + _SNAP:
            return self._fallback(q)
        j = int(np.searchsorted(x, q[0], side="right")) - 1
        j = min(max(j, 0), x.shape[0] - 2)
        t = (q[0] - x[j]) / (x[j + 1] - x[j])
        t = min(max(t, 0.0), 1.0)
        if abs(t) < _SNAP:
            t = 0.0
        elif abs(t - 1) < _SNAP:
            t = 1.0
        return self._order1d[[j, j + 1]], np.array([1.0 - t, t]), False

    def _delaunay_weights(self, q):
        tri = self._delaunay
        s = int(tri.find_simplex(q, tol=_SNAP))
        if s < 0:
            return self._fallback(q)
        n = self.n_joints_
        T = tri.transform[s]
        lam = T[:n].dot(q - T[n])
        w = np.append(lam, 1.0 - lam.sum())
        w[np.abs(w) < _SNAP] = 0.0
        w = np.clip(w, 0.0, None)
        w /= w.sum()
        return tri.simplices[s].astype(np.intp), w, False

    def query(self, q):
        """Interpolated mean and spread at joint state ``q``."""
        rows, w, extrapolated = self.weights(q)
        ds = self.dataset_
        if rows.shape[0] == 1:
            mu = ds.means[rows[0]].copy()
            spread = ds.spreads[rows[0]]
        else:
            mu = w @ ds.means[rows]
            spread = w @ ds.spreads[rows]
        return BackgroundQuery(
            mu=mu,
            sigma=np.maximum(spread, self.sigma_floor),
            extrapolated=extrapolated,
        )

    def predict(self, Q):
        """Interpolated mean histograms for each row of ``Q``."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        return np.vstack([self.query(q).mu for q in Q])


def grid_pose_count(ranges, step):
    """Number of grid poses covering ``ranges`` at spacing ``step``."""
    return GridSpec.from_ranges(ranges, step).size


def enumerate_simplices(grid):
    """All simplexes of the Kuhn decomposition of a grid, as row-index tuples.

    Intended for inspection and tests; the model itself never materialises
    the decomposition.
    """
    shape = tuple(grid.shape)
    n = len(shape)
    out = []
    for cell in itertools.product(*(range(m - 1) for m in shape)):
        for perm in itertools.permutations(range(n)):
            v = np.array(cell)
            verts = [np.ravel_multi_index(tuple(v), shape)]
            for ax in perm:
                v = v.copy()
                v[ax] += 1
                verts.append(np.ravel_multi_index(tuple(v), shape))
            out.append(tuple(int(x) for x in verts))
    return out
