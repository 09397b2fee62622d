"""Synthetic direct time-of-flight sensor looking along a robot link.

The forward model turns a list of reflecting patches into expected photon
counts per bin: each patch deposits a Gaussian pulse centred on the bin of
its range, with amplitude falling off as ``1/r**4``. Ambient light adds a
constant rate to every bin and a power-cycle bias adds a fixed per-bin
offset. Frames are Poisson draws around the expectation.

All randomness comes from explicit seeds. Per-pose and per-frame streams are
derived with ``numpy.random.SeedSequence`` spawn keys, so any subset can be
regenerated independently and in any order.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .detector import INTERCEPT, SLOPE
from .histogram import KdeConfig
from .reference import GridSpec, ReferenceDataset, summarize_pose
from .validation import check_joint_state

__all__ = [
    "ROBOT",
    "OBJECT",
    "ScenePatch",
    "SensorSpec",
    "SimArm",
    "ObjectSpec",
    "LabeledFrame",
    "render_expected",
    "sample_frame",
    "generate_reference",
    "generate_eval_scene",
    "object_albedo_for_contrast",
    "power_cycle_bias",
    "derive_rng",
    "capture_frames",
]

ROBOT = "robot"
OBJECT = "object"

NEAR_FIELD_FLOOR = 0.02
REFERENCE_RANGE = 0.1


@dataclass(frozen=True)
class ScenePatch:
    distance: float
    effective_albedo: float
    label: str = ROBOT

    def __post_init__(self):
        if not self.distance >= 0:
            raise ValueError(f"patch distance must be >= 0, got {self.distance}")
        if not self.effective_albedo >= 0:
            raise ValueError(f"albedo must be >= 0, got {self.effective_albedo}")


@dataclass(frozen=True, eq=False)
class SensorSpec:
    """Sensor constants.

    ``crosstalk_*`` describe an internal near-field return (a pulse below the
    zero-range bin) whose gain varies from one capture burst to the next by
    a relative standard deviation of ``crosstalk_jitter``. It is off by
    default.
    """

    b: int = 80
    slope: float = SLOPE
    intercept: float = INTERCEPT
    pulse_sigma: float = 2.0
    signal_photons: float = 2000.0
    ambient_rate: float = 0.0
    power_bias: np.ndarray = None
    crosstalk_bin: float = 8.0
    crosstalk_photons: float = 0.0
    crosstalk_jitter: float = 0.0

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("b must be positive")
        if not self.pulse_sigma > 0:
            raise ValueError("pulse_sigma must be positive")
        if not self.signal_photons > 0:
            raise ValueError("signal_photons must be positive")
        if self.ambient_rate < 0:
            raise ValueError("ambient_rate must be >= 0")
        if self.power_bias is not None:
            bias = np.asarray(self.power_bias, dtype=float)
            if bias.shape != (self.b,):
                raise ValueError("power_bias must have one value per bin")
            object.__setattr__(self, "power_bias", bias)

    def with_(self, **changes):
        return replace(self, **changes)


def _pulse(bins, centre, sigma):
    d = bins - centre
    return np.exp(-0.5 * d * d / (sigma * sigma))


def render_expected(patches, spec, crosstalk_gain=1.0):
    """Expected photon counts per bin for a set of patches."""
    bins = np.arange(spec.b, dtype=float)
    out = np.zeros(spec.b)
    for p in patches:
        r = max(p.distance, NEAR_FIELD_FLOOR)
        amp = spec.signal_photons * p.effective_albedo * (REFERENCE_RANGE / r) ** 4
        if amp > 0:
            centre = (p.distance - spec.intercept) / spec.slope
            out += amp * _pulse(bins, centre, spec.pulse_sigma)
    if spec.crosstalk_photons > 0 and crosstalk_gain > 0:
        out += crosstalk_gain * spec.crosstalk_photons * _pulse(
            bins, spec.crosstalk_bin, spec.pulse_sigma
        )
    out += spec.ambient_rate
    if spec.power_bias is not None:
        out += spec.power_bias
    return np.maximum(out, 0.0)


def derive_rng(seed, *key):
    """Generator for the stream identified by ``key`` under ``seed``."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    )


def sample_frame(expected, rng_seed):
    """One Poisson draw per bin. ``rng_seed`` is an int or a Generator."""
    lam = np.asarray(expected, dtype=float)
    if np.any(lam < 0):
        raise ValueError("expected counts must be non-negative")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.poisson(lam).astype(float)


@dataclass(frozen=True)
class SimArm:
    """Parametric 1-3 DoF wrist seen by a sensor mounted on the preceding link.

    The sensor always sees a stretch of its own link a few centimetres
    away. Joint 1 swings the wrist housing through the beam, joint 2 tilts
    it and moves the flange, joint 3 moves a tool finger further out. Every
    patch range and albedo is a smooth function of the joint angles.
    """

    n_joints: int = 2
    link: tuple = ((0.045, 0.04), (0.055, 0.05), (0.07, 0.04))
    wrist_range: float = 0.21
    wrist_swing: float = 0.06
    wrist_albedo: float = 3.0
    flange_range: float = 0.30
    flange_swing: float = 0.06
    flange_albedo: float = 6.0
    finger_range: float = 0.40
    finger_swing: float = 0.08
    finger_albedo: float = 6.0

    def __post_init__(self):
        if self.n_joints not in (1, 2, 3):
            raise ValueError("SimArm supports 1 to 3 joints")

    def patches(self, q):
        q = check_joint_state(q, self.n_joints)
        out = [ScenePatch(r, a, ROBOT) for r, a in self.link]
        tilt = np.cos(q[1]) if self.n_joints >= 2 else 1.0
        out.append(
            ScenePatch(
                self.wrist_range + self.wrist_swing * np.sin(q[0]),
                self.wrist_albedo * (0.7 + 0.3 * tilt),
                ROBOT,
            )
        )
        if self.n_joints >= 2:
            out.append(
                ScenePatch(
                    self.flange_range + self.flange_swing * np.sin(q[1]),
                    self.flange_albedo * (0.6 + 0.4 * np.cos(q[0])),
                    ROBOT,
                )
            )
        if self.n_joints >= 3:
            out.append(
                ScenePatch(
                    self.finger_range + self.finger_swing * np.sin(q[2]),
                    self.finger_albedo * (0.5 + 0.5 * np.cos(q[2] - q[1])),
                    ROBOT,
                )
            )
        return out

    def nearest_surface(self, q):
        """Range of the robot return with the largest expected amplitude."""
        patches = self.patches(q)
        amp = [
            p.effective_albedo / max(p.distance, NEAR_FIELD_FLOOR) ** 4 for p in patches
        ]
        return patches[int(np.argmax(amp))].distance


@dataclass(frozen=True)
class ObjectSpec:
    """Object whose front surface sits at ``distance``.

    The object extends ``width_bins`` bins in depth; each deeper layer
    reflects ``depth_decay`` times as much as the one in front of it.
    """

    distance: float
    albedo: float
    width_bins: int = 6
    depth_decay: float = 0.75

    def patches(self, slope=SLOPE):
        return [
            ScenePatch(self.distance + k * slope, self.albedo * self.depth_decay**k, OBJECT)
            for k in range(int(self.width_bins))
        ]


@dataclass(frozen=True, eq=False)
class LabeledFrame:
    frame: np.ndarray
    q: np.ndarray
    object_present: bool = False
    true_distance: float = None


def object_albedo_for_contrast(
    arm, q, spec, distance, contrast, width_bins=6, depth_decay=0.75
):
    """Albedo that lifts ``width_bins`` bins by at least ``contrast`` Poisson
    standard deviations of the robot-only signal.

    The lift is measured per bin against ``sqrt`` of the robot-only
    expectation (ambient included); the ``width_bins``-th strongest bin sets
    the scale.
    """
    robot = render_expected(arm.patches(q), spec)
    unit = render_expected(
        ObjectSpec(distance, 1.0, width_bins, depth_decay).patches(spec.slope),
        spec.with_(ambient_rate=0.0, power_bias=None, crosstalk_photons=0.0),
    )
    ratio = unit / np.sqrt(np.maximum(robot, 1.0))
    k = min(int(width_bins), spec.b)
    scale = np.sort(ratio)[::-1][k - 1]
    if scale <= 0:
        return 0.0
    return float(contrast / scale)


def _burst_gain(spec, rng):
    if spec.crosstalk_jitter <= 0:
        return 1.0
    return max(0.0, 1.0 + spec.crosstalk_jitter * rng.standard_normal())


def generate_reference(
    arm,
    grid,
    frames_per_pose,
    spec,
    seed,
    kde=KdeConfig(),
    preprocessed=True,
):
    """Robot-only reference statistics on every point of ``grid``.

    ``grid`` is a :class:`GridSpec` or a ``(ranges, step)`` pair. Pose ``i``
    draws its burst gain and frames from stream ``(seed, 0, i)``.
    """
    if not isinstance(grid, GridSpec):
        ranges, step = grid
        grid = GridSpec.from_ranges(ranges, step)
    if grid.n != arm.n_joints:
        raise ValueError("grid dimensionality does not match the arm")
    frames_per_pose = int(frames_per_pose)
    poses = []
    raw_first = None
    for i, q in enumerate(grid.points()):
        rng = derive_rng(seed, 0, i)
        lam = render_expected(arm.patches(q), spec, _burst_gain(spec, rng))
        frames = rng.poisson(lam, size=(frames_per_pose, spec.b)).astype(float)
        if i == 0:
            raw_first = frames.mean(axis=0)
        poses.append(summarize_pose(q, frames, kde, preprocessed=preprocessed))
    return ReferenceDataset.from_poses(
        poses, kde=kde, grid=grid, preprocessed=preprocessed, raw_mean_first=raw_first
    )


def generate_eval_scene(arm, q, object_spec, spec, seed):
    """One labelled frame at joint state ``q``, optionally with an object."""
    q = check_joint_state(q, arm.n_joints)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    patches = arm.patches(q)
    present = object_spec is not None
    if present:
        patches = patches + object_spec.patches(spec.slope)
    lam = render_expected(patches, spec, _burst_gain(spec, rng))
    return LabeledFrame(
        frame=rng.poisson(lam).astype(float),
        q=q,
        object_present=present,
        true_distance=float(object_spec.distance) if present else None,
    )


def capture_frames(arm, q, spec, n_frames, seed):
    """``n_frames`` robot-only frames sharing one capture burst."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lam = render_expected(arm.patches(q), spec, _burst_gain(spec, rng))
    return rng.poisson(lam, size=(int(n_frames), spec.b)).astype(float)


def power_cycle_bias(b, amplitude, seed, smoothness=4.0):
    """Smooth random per-bin offset with maximum magnitude ``amplitude``."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(b + 8 * int(smoothness))
    kernel = _pulse(np.arange(-4 * smoothness, 4 * smoothness + 1), 0.0, smoothness)
    smooth = np.convolve(white, kernel, mode="same")[4 * int(smoothness) : 4 * int(smoothness) + b]
    return amplitude * smooth / np.abs(smooth).max()
