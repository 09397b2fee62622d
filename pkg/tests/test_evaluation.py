import csv

import numpy as np
import pytest

from tofproximity.config import SimConfig
from tofproximity.detector import DetectorConfig, bin_to_distance, detect_frame
from tofproximity.evaluation import (
    Benchmark,
    eval_ablation,
    eval_ambient,
    eval_baseline_onsensor,
    eval_detection,
    eval_roc,
    eval_self_detection,
    onsensor_peaks,
    run_experiment,
    summarize,
)
from tofproximity.reference import BackgroundModel, ReferenceDataset, summarize_pose
from tofproximity.simulator import ObjectSpec, render_expected

TINY = SimConfig(n_robot_frames=40, n_object_frames=20)


@pytest.fixture(scope="module")
def roc(small_bench):
    return eval_roc(small_bench)


def test_roc_rows(roc, small_bench):
    cfg = small_bench.config
    assert len(roc.rows) == len(cfg.t_grid) * len(cfg.c_grid)
    fprs = [r["fpr"] for r in roc.rows]
    assert fprs == sorted(fprs)


def test_roc_rates_monotone(roc, small_bench):
    cfg = small_bench.config
    for key in ("fpr", "detection_rate"):
        for c in cfg.c_grid:
            vals = [roc.row(t=t, c=c)[key] for t in cfg.t_grid]
            assert vals == sorted(vals), (key, c)
        for t in cfg.t_grid:
            vals = [roc.row(t=t, c=c)[key] for c in cfg.c_grid]
            assert vals == sorted(vals, reverse=True), (key, t)


def test_roc_base_point_matches_detection(roc, small_bench):
    base = eval_detection(small_bench).rows[0]
    point = roc.row(t=0.001, c=4)
    for key in ("tpr", "fpr", "mean_abs_error_m"):
        assert point[key] == base[key]


def test_zero_noise_self_detection(small_bench):
    bench = small_bench
    spec = bench.spec.with_(crosstalk_jitter=0.0)
    poses = []
    for q in bench.grid.points():
        lam = render_expected(bench.arm.patches(q), spec)
        poses.append(summarize_pose(q, [lam, lam], bench.kde))
    model = BackgroundModel().fit(ReferenceDataset.from_poses(poses, kde=bench.kde, grid=bench.grid))
    for q in bench.grid.points():
        lam = render_expected(bench.arm.patches(q), spec)
        assert detect_frame(lam, q, model).detections == []


def test_perfect_frames_detect_every_object(small_bench):
    model = small_bench.model()
    hits = 0
    frames = small_bench.object_frames()
    for f in frames:
        obj = small_bench.object_spec(f.q, f.true_distance)
        lam = render_expected(small_bench.arm.patches(f.q) + obj.patches(), small_bench.spec)
        best = detect_frame(lam, f.q, model).closest
        hits += best is not None and abs(best.distance - f.true_distance) <= 0.06
    assert hits == len(frames)


def test_dark_objects_behave_like_robot_frames(small_bench):
    model = small_bench.model()
    frames = small_bench.object_frames(contrast=0.0, n=60)
    hits = sum(bool(detect_frame(f.frame, f.q, model).detections) for f in frames)
    assert hits / len(frames) <= 0.05


def test_self_detection_report(small_bench):
    rep = eval_self_detection(small_bench)
    assert len(rep.rows) == 2 * len(small_bench.config.subsample_factors)
    for r in rep.rows:
        assert r["n_robot"] == small_bench.config.n_robot_frames
        assert 0 <= r["fpr"] <= 1 and r["tpr"] is None
    assert rep.row(mode="barycentric", factor=1)["fpr"] <= 0.02


def test_onsensor_peaks_examples(small_bench):
    bench = small_bench
    q = np.array([0.0, 0.0])
    robot = render_expected(bench.arm.patches(q), bench.spec)
    surface = bench.robot_surface_bin(q)
    # empty scene: only robot returns
    reported = onsensor_peaks(robot)
    assert len(reported) == 2
    assert set(reported) <= set(onsensor_peaks(robot, max_peaks=None))
    assert max(reported) <= surface
    # bright object closer than the far robot surface
    near = bin_to_distance(22)
    lam = render_expected(bench.arm.patches(q) + [*ObjectSpec(near, 20.0, 1).patches()], bench.spec)
    est = [bin_to_distance(p) for p in onsensor_peaks(lam)]
    assert min(abs(d - near) for d in est) <= 0.03
    # dim object beyond the robot: estimates stay at robot ranges
    far = bin_to_distance(surface + 15)
    lam = render_expected(bench.arm.patches(q) + ObjectSpec(far, 0.5).patches(), bench.spec)
    assert max(onsensor_peaks(lam)) <= surface


def test_baseline_report(small_bench):
    rep = eval_baseline_onsensor(small_bench, n_beyond=40)
    base = rep.row(method="baseline", scene="suite")
    assert base["fpr"] == 1.0  # the robot is always visible to the raw peak finder
    beyond = [f for f in rep.frames if f["scene"] == "beyond_robot" and f["method"] == "baseline"]
    slope = DetectorConfig().slope
    assert all(f["max_estimate_m"] <= f["robot_surface_m"] + 2 * slope + 1e-12 for f in beyond)
    assert rep.row(method="full", scene="beyond_robot")["tpr"] >= 0.9


def test_ablation_base_matches_detection(small_bench):
    rep = eval_ablation(small_bench)
    assert rep.row(condition="base") == dict(eval_detection(small_bench).rows[0])
    assert rep.row(condition="no_calibration")["fpr"] >= 0.5
    assert rep.row(condition="biased_calibrated")["fpr"] <= 0.02
    assert rep.row(condition="no_trimming")["fpr"] > rep.row(condition="base")["fpr"]


def test_ambient_report(small_bench):
    rep = eval_ambient(small_bench)
    base = eval_detection(small_bench).rows[0]["fpr"]
    assert rep.row(ambient_scale=1.0, preprocessing=1)["fpr"] == base
    for level in small_bench.config.ambient_levels:
        on = rep.row(ambient_scale=level, preprocessing=1)["fpr"]
        off = rep.row(ambient_scale=level, preprocessing=0)["fpr"]
        assert on <= off
    assert rep.row(ambient_scale=2.0, preprocessing=1)["fpr"] <= 0.02
    assert rep.row(ambient_scale=10.0, preprocessing=0)["fpr"] >= 0.5


def test_summarize_counts():
    rows = [
        {"outcome": "TP", "gt_present": 1, "n_detections": 1, "abs_error_m": 0.01},
        {"outcome": "FN", "gt_present": 1, "n_detections": 1, "abs_error_m": 0.2},
        {"outcome": "FP", "gt_present": 0, "n_detections": 2, "abs_error_m": None},
        {"outcome": "TN", "gt_present": 0, "n_detections": 0, "abs_error_m": None},
        {"outcome": "DEG", "gt_present": 0, "n_detections": 0, "abs_error_m": None},
    ]
    s = summarize(rows)
    assert (s["tpr"], s["fpr"], s["detection_rate"]) == (0.5, 0.5, 1.0)
    assert s["mean_abs_error_m"] == 0.01 and s["n_degenerate"] == 1


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_report_files_and_recomputation(tmp_path):
    rep = run_experiment("ablation", TINY, tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"report.csv", "frames.csv", "config.snapshot"}
    report = _read(tmp_path / "report.csv")
    frames = _read(tmp_path / "frames.csv")
    assert len(report) == len(rep.rows)
    for row in report:
        members = [f for f in frames if f["condition"] == row["condition"]]
        robot = [f for f in members if f["outcome"] in ("FP", "TN")]
        obj = [f for f in members if f["outcome"] in ("TP", "FN")]
        tps = [float(f["abs_error_m"]) for f in obj if f["outcome"] == "TP"]
        assert float(row["fpr"]) == sum(f["outcome"] == "FP" for f in robot) / len(robot)
        assert float(row["tpr"]) == len(tps) / len(obj)
        assert float(row["mean_abs_error_m"]) == pytest.approx(np.mean(tps), rel=1e-15)
    snapshot = (tmp_path / "config.snapshot").read_text()
    assert "experiment = ablation" in snapshot and "eval_seed = 2" in snapshot


def test_config_snapshot_reloads(tmp_path):
    from tofproximity.config import load_config

    run_experiment("detection", TINY, tmp_path)
    assert load_config(tmp_path / "config.snapshot") == TINY


def test_unknown_experiment():
    with pytest.raises(ValueError):
        run_experiment("nope", TINY)


def test_runs_are_byte_identical(tmp_path):
    run_experiment("detection", TINY, tmp_path / "a")
    run_experiment("detection", TINY, tmp_path / "b")
    a = (tmp_path / "a" / "frames.csv").read_bytes()
    assert a == (tmp_path / "b" / "frames.csv").read_bytes()
    assert Benchmark(TINY).robot_frames(n=3)[2].frame.tolist() == Benchmark(TINY).robot_frames(n=3)[2].frame.tolist()
