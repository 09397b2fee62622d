"""End-to-end acceptance checks, one test per criterion.

Each test records a single ``PASS``/``FAIL``/``SKIP`` line with the measured
numbers; the lines are printed at the end of the pytest run.
"""

import math
import os
import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from tofproximity import DegenerateSignal, ProximityDetector, estimate_dc_offset, preprocess
from tofproximity.config import SimConfig
from tofproximity.detector import SLOPE, DetectorConfig, detect, detect_frame, find_segments, gate
from tofproximity.evaluation import (
    EXPERIMENTS,
    Benchmark,
    eval_ablation,
    eval_baseline_onsensor,
    eval_detection,
    eval_self_detection,
    median_latency,
    stream_throughput,
)
from tofproximity.reference import BackgroundModel
from tofproximity.simulator import derive_rng, render_expected

PI = math.pi
ARM_RANGES = ((-PI, -PI / 12), (-5 * PI / 6, 5 * PI / 12), (-PI / 2, 5 * PI / 12))


def record(number, ok, text):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def bench():
    return Benchmark(SimConfig())


@pytest.fixture(scope="module")
def random_histograms():
    """1000 histograms: half simulated sensor frames, half arbitrary counts."""
    b = Benchmark(SimConfig())
    rng = derive_rng(100, 0)
    out = []
    for i in range(500):
        q = rng.uniform(-PI / 2, PI / 2, 2)
        spec = b.spec.with_(ambient_rate=float(rng.uniform(0, 120)))
        lam = render_expected(b.arm.patches(q), spec, crosstalk_gain=float(rng.uniform(0, 2)))
        out.append(rng.poisson(lam).astype(float))
    for i in range(500):
        size = int(rng.integers(5, 81))
        out.append(rng.integers(0, int(rng.integers(1, 400)), size).astype(float))
    return out


def test_criterion_01_dc_offset_oracle(random_histograms):
    t0 = time.perf_counter()
    got = [estimate_dc_offset(h) for h in random_histograms]
    elapsed = time.perf_counter() - t0
    want = [oracles.kde_mode(h, 5.0, 0.05) for h in random_histograms]
    err = np.abs(np.subtract(got, want))
    ok = bool(np.all(err <= 0.25)) and elapsed < 10
    record(1, ok, f"max |offset - dense oracle| = {err.max():.4f} over {len(got)} histograms "
                  f"(limit 0.25); runtime {elapsed:.2f} s (limit 10 s)")


def test_criterion_02_normalisation_and_ambient(bench, random_histograms):
    worst = 0.0
    for h in random_histograms:
        try:
            worst = max(worst, abs(np.abs(preprocess(h).values).sum() - 1.0))
        except DegenerateSignal:
            pass
    model = bench.model()
    frames = bench.robot_frames(n=100) + bench.object_frames(n=100)
    mismatches = 0
    for f in frames:
        base = detect(f.frame, f.q, model)
        mismatches += sum(detect(f.frame + k, f.q, model) != base for k in (1, 10, 100))
    ok = worst <= 1e-9 and mismatches == 0
    record(2, ok, f"max | ||values||_1 - 1 | = {worst:.2e} (limit 1e-9); "
                  f"{mismatches} changed detection lists over {len(frames)} frames x 3 shifts")


def test_criterion_03_interpolation(bench):
    ds = bench.reference()
    bary = bench.model()
    nearest = bench.model(mode="nearest")
    node_errors = 0
    for i in range(len(ds)):
        rows, w, _ = bary.weights(ds.joints[i])
        mu, spread = w @ ds.means[rows], w @ ds.spreads[rows]
        node_errors += not (np.array_equal(mu, ds.means[i]) and np.array_equal(spread, ds.spreads[i]))
        node_errors += not np.array_equal(nearest.query(ds.joints[i]).mu, ds.means[i])
    rng = derive_rng(101, 0)
    queries = rng.uniform(-PI / 2, PI / 2, (1000, 2))
    worst_sum, min_w, nn_errors = 0.0, 1.0, 0
    for q in queries:
        _, w, _ = bary.weights(q)
        worst_sum = max(worst_sum, abs(w.sum() - 1.0))
        min_w = min(min_w, w.min())
        want = ds.means[oracles.nearest_index(ds.joints, q)]
        nn_errors += not np.array_equal(nearest.query(q).mu, want)
    ok = node_errors == 0 and worst_sum <= 1e-9 and min_w >= -1e-9 and nn_errors == 0
    record(3, ok, f"{node_errors} node mismatches over {len(ds)} poses; max |sum w - 1| = "
                  f"{worst_sum:.1e}, min w = {min_w:.1e}; {nn_errors}/1000 nearest mismatches")


def test_criterion_04_end_to_end():
    t0 = time.perf_counter()
    fresh = Benchmark(SimConfig())
    row = eval_detection(fresh).rows[0]
    elapsed = time.perf_counter() - t0
    ok = (row["tpr"] >= 0.90 and row["fpr"] <= 0.02
          and row["mean_abs_error_m"] <= 0.028 and elapsed <= 300)
    record(4, ok, f"TPR {row['tpr']:.3f} (>= 0.90), FPR {row['fpr']:.4f} (<= 0.02), mean error "
                  f"{row['mean_abs_error_m']:.4f} m (<= 0.028) on {row['n_object']} object / "
                  f"{row['n_robot']} robot frames; runtime {elapsed:.1f} s (<= 300 s)")


def test_criterion_05_sampling_density(bench):
    rep = eval_self_detection(bench)
    factors = bench.config.subsample_factors
    b = [rep.row(mode="barycentric", factor=f)["fpr"] for f in factors]
    n = [rep.row(mode="nearest", factor=f)["fpr"] for f in factors]
    ok = all(x <= y for x, y in zip(b, n)) and b == sorted(b) and n == sorted(n)
    record(5, ok, f"FPR barycentric {b} vs nearest {n} at factors {list(factors)}")


def test_criterion_06_ablation(bench):
    rep = eval_ablation(bench)
    base = rep.row(condition="base")
    nocal = rep.row(condition="no_calibration")["fpr"]
    cal = rep.row(condition="biased_calibrated")["fpr"]
    notrim = rep.row(condition="no_trimming")["fpr"]
    sigma = math.sqrt(bench.config.ambient_rate)
    bias_sigmas = float(np.max(np.abs(bench.bias)) / sigma)
    # a zero base rate is read as "below one frame in n"
    floor = max(base["fpr"], 1.0 / base["n_robot"])
    ok = (bias_sigmas >= 4 and bench.spec.crosstalk_photons > 0 and nocal >= 0.5
          and cal <= 0.02 and notrim >= 10 * floor and notrim > base["fpr"])
    record(6, ok, f"bias {bias_sigmas:.1f} sigma: FPR uncalibrated {nocal:.3f} (>= 0.5), "
                  f"calibrated {cal:.3f} (<= 0.02); no trimming {notrim:.3f} vs base "
                  f"{base['fpr']:.3f} (>= 10 x max(base, 1/n) = {10 * floor:.3f})")


def test_criterion_07_baseline_ceiling(bench):
    rep = eval_baseline_onsensor(bench)
    base = [f for f in rep.frames if f["scene"] == "beyond_robot" and f["method"] == "baseline"]
    excess = max((f["max_estimate_m"] - f["robot_surface_m"]) / SLOPE for f in base)
    full = rep.row(method="full", scene="beyond_robot")
    full_frames = [f for f in rep.frames if f["scene"] == "beyond_robot" and f["method"] == "full"]
    within = np.mean([f["abs_error_m"] is not None and f["abs_error_m"] <= 2 * SLOPE for f in full_frames])
    baseline = rep.row(method="baseline", scene="beyond_robot")
    ok = excess <= 2 + 1e-9 and full["tpr"] >= 0.9 and full["mean_abs_error_m"] <= 2 * SLOPE
    record(7, ok, f"{len(base)} beyond-robot scenes: baseline max excess over robot surface "
                  f"{excess:.2f} bins (<= 2), baseline TPR {baseline['tpr']:.3f}; full method TPR "
                  f"{full['tpr']:.3f} (>= 0.9), mean error {full['mean_abs_error_m'] / SLOPE:.2f} "
                  f"bins (<= 2), {within:.3f} of frames within 2 bins")


def test_criterion_08_roc_exactness(bench):
    cfg = bench.config
    model = bench.model()
    frames = bench.robot_frames() + bench.object_frames()
    t_grid, c_grid = sorted(cfg.t_grid), sorted(cfg.c_grid)
    gate_violations = segment_violations = 0
    for f in frames:
        res = detect_frame(f.frame, f.q, model)
        if res.degenerate:
            continue
        gates = [gate(res.likelihood, t) for t in t_grid]
        gate_violations += sum(int(np.any(a > b)) for a, b in zip(gates, gates[1:]))
        for g in gates:
            segs = [set(find_segments(g, c)) for c in c_grid]
            segment_violations += sum(not (b <= a) for a, b in zip(segs, segs[1:]))
    ok = gate_violations == 0 and segment_violations == 0
    record(8, ok, f"{gate_violations} gate and {segment_violations} segment monotonicity "
                  f"violations over {len(frames)} frames x {len(t_grid)} t x {len(c_grid)} c")


@pytest.fixture(scope="module")
def arm3():
    cfg = SimConfig(dof=3, ranges=ARM_RANGES, frames_per_pose=5,
                    n_robot_frames=300, n_object_frames=200)
    b = Benchmark(cfg)
    det = ProximityDetector().fit(b.reference())
    return det, b.robot_frames() + b.object_frames()


def test_criterion_09a_latency(arm3):
    det, frames = arm3
    med = median_latency(det, frames, repeats=2)
    ok = med <= 1e-3
    record(9, ok, f"median detect() {med * 1e3:.3f} ms for b=80, n=3, "
                  f"{len(det.model_.dataset_)} reference poses (<= 1 ms)")


def test_criterion_09b_stream_scaling(arm3):
    cores = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    det, frames = arm3
    one = stream_throughput(det, frames, 1, 400)
    four = stream_throughput(det, frames, 4, 400)
    scaling = four / one
    text = (f"throughput {one:.0f} -> {four:.0f} frames/s from 1 to 4 streams "
            f"(x{scaling:.2f}, needs >= 3) on {cores} available core(s)")
    if cores < 4:
        line = f"SKIP criterion  9: {text}; not evaluable, requires a 4-core machine"
        ACCEPTANCE_LINES.append(line)
        pytest.skip(line)
    record(9, scaling >= 3, text)


def test_criterion_10_determinism(tmp_path):
    cfg = SimConfig(n_robot_frames=60, n_object_frames=30)
    same = []
    for name, fn in EXPERIMENTS.items():
        blobs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            fn(Benchmark(cfg)).write(out)
            blobs.append((out / "frames.csv").read_bytes())
        same.append(blobs[0] == blobs[1])
    ok = all(same)
    record(10, ok, f"byte-identical frames.csv for {sum(same)}/{len(same)} experiments "
                   f"({', '.join(EXPERIMENTS)}) across independent runs")
