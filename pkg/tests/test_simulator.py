import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tofproximity import GridSpec, SensorSpec, SimArm
from tofproximity.simulator import (
    ObjectSpec,
    ScenePatch,
    derive_rng,
    generate_eval_scene,
    generate_reference,
    object_albedo_for_contrast,
    power_cycle_bias,
    render_expected,
    sample_frame,
)

PI = math.pi
SPEC = SensorSpec()


def test_empty_scene_is_zero():
    assert np.array_equal(render_expected([], SPEC), np.zeros(80))


def test_patch_lands_on_its_bin():
    lam = render_expected([ScenePatch(0.3723, 1.0)], SPEC)
    assert int(np.argmax(lam)) == 40


def test_ambient_only_is_constant():
    assert np.array_equal(render_expected([], SPEC.with_(ambient_rate=12.5)), np.full(80, 12.5))


def test_bias_added_and_clamped():
    bias = np.zeros(80)
    bias[3], bias[4] = 5.0, -50.0
    lam = render_expected([], SPEC.with_(ambient_rate=10.0, power_bias=bias))
    assert lam[3] == 15.0 and lam[4] == 0.0 and lam[5] == 10.0


def test_spec_validation():
    with pytest.raises(ValueError):
        SensorSpec(pulse_sigma=0)
    with pytest.raises(ValueError):
        SensorSpec(b=0)
    with pytest.raises(ValueError):
        SensorSpec(power_bias=np.zeros(3))
    with pytest.raises(ValueError):
        ScenePatch(-0.1, 1.0)


def test_poisson_sampling():
    assert np.array_equal(sample_frame(np.zeros(10), 0), np.zeros(10))
    draws = np.array([sample_frame([1000.0], derive_rng(9, i))[0] for i in range(10_000)])
    assert abs(draws.mean() - 1000) <= 3 * math.sqrt(1000 / 10_000)
    with pytest.raises(ValueError):
        sample_frame([-1.0], 0)


def test_sampling_is_deterministic():
    lam = render_expected(SimArm().patches([0.2, -0.4]), SPEC.with_(ambient_rate=30))
    assert np.array_equal(sample_frame(lam, 5), sample_frame(lam, 5))
    assert np.array_equal(sample_frame(lam, derive_rng(5, 1, 2)), sample_frame(lam, derive_rng(5, 1, 2)))
    assert not np.array_equal(sample_frame(lam, derive_rng(5, 1, 2)), sample_frame(lam, derive_rng(5, 1, 3)))


def test_variance_matches_mean():
    lam = render_expected(SimArm().patches([0.0, 0.0]), SPEC.with_(ambient_rate=40))
    rng = np.random.default_rng(11)
    n = 4000
    frames = rng.poisson(lam, size=(n, 80))
    var = frames.var(axis=0, ddof=1)
    # standard error of a Poisson sample variance
    se = np.sqrt((lam + 2 * lam**2) / n)
    assert np.mean(np.abs(var - lam) <= 3 * se) >= 0.97


patch = st.builds(
    ScenePatch,
    st.floats(0.0, 1.2),
    st.floats(0.0, 10.0),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(patch, max_size=5), patch)
def test_adding_a_patch_never_removes_light(patches, extra):
    spec = SPEC.with_(ambient_rate=5.0)
    assert np.all(render_expected(patches + [extra], spec) >= render_expected(patches, spec))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.03, 0.9))
def test_isolated_patch_peak_bin(r):
    lam = render_expected([ScenePatch(r, 1.0)], SPEC)
    x = (r - SPEC.intercept) / SPEC.slope
    if 0 <= round(x) < 80:
        assert abs(int(np.argmax(lam)) - round(x)) <= 1


@pytest.mark.parametrize("n", [1, 2, 3])
def test_arm_surfaces_move_continuously(n):
    arm = SimArm(n_joints=n)
    rng = np.random.default_rng(n)
    for q in rng.uniform(-PI, PI, (50, n)):
        a = [p.distance for p in arm.patches(q)]
        b = [p.distance for p in arm.patches(q + 1e-6)]
        assert np.max(np.abs(np.subtract(a, b))) < 1e-6
    with pytest.raises(ValueError):
        SimArm(n_joints=4)


def test_reference_bookkeeping():
    arm = SimArm(n_joints=1)
    grid = GridSpec((-0.5,), (0.25,), (5,))
    ds = generate_reference(arm, grid, 50, SPEC.with_(ambient_rate=20), seed=0)
    assert len(ds) == 5
    assert np.all(ds.counts == 50)
    assert ds.raw_mean_first.shape == (80,)


def test_arm_reference_pose_counts():
    ranges = [(-PI, -PI / 12), (-5 * PI / 6, 5 * PI / 12), (-PI / 2, 5 * PI / 12)]
    arm = SimArm(n_joints=3)
    ds = generate_reference(arm, (ranges, PI / 12), 2, SPEC.with_(ambient_rate=20), seed=0)
    assert len(ds) == 2304
    assert GridSpec.from_ranges(ranges, PI / 6).size == len(oracles.grid_points(ranges, PI / 6))


def test_reference_is_reproducible():
    arm = SimArm(n_joints=1)
    grid = GridSpec((0.0,), (0.5,), (3,))
    spec = SPEC.with_(ambient_rate=20, crosstalk_photons=300, crosstalk_jitter=0.1)
    a = generate_reference(arm, grid, 10, spec, seed=4)
    b = generate_reference(arm, grid, 10, spec, seed=4)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.spreads, b.spreads)
    c = generate_reference(arm, grid, 10, spec, seed=5)
    assert not np.array_equal(a.means, c.means)


def test_eval_scene_ground_truth():
    arm = SimArm()
    spec = SPEC.with_(ambient_rate=30)
    q = np.array([0.1, 0.2])
    empty = generate_eval_scene(arm, q, None, spec, 3)
    assert (empty.object_present, empty.true_distance) == (False, None)
    obj = generate_eval_scene(arm, q, ObjectSpec(0.20, 1.0), spec, 3)
    assert (obj.object_present, obj.true_distance) == (True, 0.20)
    dark = generate_eval_scene(arm, q, ObjectSpec(0.5, 0.0), spec, 3)
    assert np.array_equal(dark.frame, empty.frame)


def test_object_contrast_construction():
    arm = SimArm()
    spec = SPEC.with_(ambient_rate=40)
    q = np.array([0.3, -0.2])
    d = 0.45
    albedo = object_albedo_for_contrast(arm, q, spec, d, 6.0)
    robot = render_expected(arm.patches(q), spec)
    obj = render_expected(ObjectSpec(d, albedo).patches(), spec.with_(ambient_rate=0.0))
    lift = obj / np.sqrt(robot)
    assert np.sum(lift >= 6.0 - 1e-9) >= 6


def test_power_cycle_bias_shape():
    bias = power_cycle_bias(80, 30.0, seed=1)
    assert bias.shape == (80,)
    assert np.max(np.abs(bias)) == pytest.approx(30.0)
    assert np.array_equal(bias, power_cycle_bias(80, 30.0, seed=1))
