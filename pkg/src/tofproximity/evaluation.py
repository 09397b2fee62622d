"""Simulated benchmarks and the experiments run on them.

Each ``eval_*`` function takes a :class:`Benchmark` and returns an
:class:`EvalReport` holding aggregate rows plus one row per processed frame,
so every aggregate can be recomputed from ``frames.csv``.

Frame outcomes
--------------
Robot-only frames are ``FP`` when anything is detected and ``TN``
otherwise. Object frames are ``TP`` when the closest detection lies within
``MATCH_WINDOW`` metres of the true distance and ``FN`` otherwise. Frames
without signal are ``DEG`` and excluded from both rates.
"""

import csv
import math
import multiprocessing as mp
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .calibration import compute_calibration
from .config import SimConfig, dump_config
from .detector import (
    DetectorConfig,
    bin_to_distance,
    detect_frame,
    detections_from_likelihood,
)
from .histogram import KdeConfig
from .reference import BARYCENTRIC, NEAREST, BackgroundModel, GridSpec
from .simulator import (
    ObjectSpec,
    SensorSpec,
    SimArm,
    capture_frames,
    derive_rng,
    generate_eval_scene,
    generate_reference,
    object_albedo_for_contrast,
    power_cycle_bias,
    render_expected,
)

__all__ = [
    "MATCH_WINDOW",
    "Benchmark",
    "EvalReport",
    "frame_outcome",
    "summarize",
    "onsensor_peaks",
    "eval_self_detection",
    "eval_detection",
    "eval_baseline_onsensor",
    "eval_roc",
    "eval_ablation",
    "eval_ambient",
    "EXPERIMENTS",
    "run_experiment",
    "median_latency",
    "stream_throughput",
]

MATCH_WINDOW = 0.06

# Random stream keys under the eval seed.
_ROBOT_POSES, _ROBOT_FRAMES = 10, 1
_OBJECT_POSES, _OBJECT_FRAMES = 20, 2
_CALIB_FRAMES = 3
_BEYOND_POSES, _BEYOND_FRAMES = 40, 4

BASELINE_PROMINENCE = 5.0


class Benchmark:
    """Simulated arm, sensor, reference data and evaluation frames for a config.

    Everything is generated lazily and cached, so experiments that share a
    benchmark see identical frames.
    """

    def __init__(self, config=None):
        self.config = cfg = config if config is not None else SimConfig()
        self.arm = SimArm(n_joints=cfg.dof)
        self.spec = SensorSpec(
            b=cfg.b,
            pulse_sigma=cfg.pulse_sigma,
            signal_photons=cfg.signal_photons,
            ambient_rate=cfg.ambient_rate,
            crosstalk_bin=cfg.crosstalk_bin,
            crosstalk_photons=cfg.crosstalk_photons,
            crosstalk_jitter=cfg.crosstalk_jitter,
        )
        self.kde = KdeConfig(cfg.bandwidth, cfg.search_resolution)
        self.grid = GridSpec.from_ranges(cfg.ranges, cfg.grid_step)
        self.detector_config = DetectorConfig(
            t=cfg.t, c=cfg.c, trim_range=(cfg.trim_lo, cfg.trim_hi)
        )
        self._cache = {}

    def _cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def reference(self, preprocessed=True):
        cfg = self.config
        return self._cached(
            ("reference", preprocessed),
            lambda: generate_reference(
                self.arm,
                self.grid,
                cfg.frames_per_pose,
                self.spec,
                cfg.reference_seed,
                kde=self.kde,
                preprocessed=preprocessed,
            ),
        )

    def model(self, mode=BARYCENTRIC, factor=1, preprocessed=True):
        def build():
            ds = self.reference(preprocessed)
            if factor != 1:
                ds = ds.subsample(factor)
            return BackgroundModel(mode=mode).fit(ds)

        return self._cached(("model", mode, factor, preprocessed), build)

    @property
    def bias(self):
        cfg = self.config
        amplitude = cfg.bias_sigma * math.sqrt(max(cfg.ambient_rate, 1.0))
        return power_cycle_bias(cfg.b, amplitude, cfg.bias_seed)

    @property
    def biased_spec(self):
        return self.spec.with_(power_bias=self.bias)

    def _poses(self, n, key):
        lo = np.array([r[0] for r in self.config.ranges])
        hi = np.array([r[1] for r in self.config.ranges])
        rng = derive_rng(self.config.eval_seed, key)
        return lo + (hi - lo) * rng.random((n, self.config.dof))

    def robot_frames(self, spec=None, n=None):
        """Robot-only frames at uniformly random poses.

        Poses and noise streams depend only on the frame index, so the same
        call with a different ``spec`` gives paired frames.
        """
        spec = self.spec if spec is None else spec
        n = self.config.n_robot_frames if n is None else int(n)
        poses = self._poses(n, _ROBOT_POSES)
        seed = self.config.eval_seed
        return [
            generate_eval_scene(self.arm, q, None, spec, derive_rng(seed, _ROBOT_FRAMES, i))
            for i, q in enumerate(poses)
        ]

    def object_spec(self, q, distance):
        cfg = self.config
        albedo = object_albedo_for_contrast(
            self.arm,
            q,
            self.spec,
            distance,
            cfg.object_contrast,
            cfg.object_width_bins,
            cfg.object_depth_decay,
        )
        return ObjectSpec(distance, albedo, cfg.object_width_bins, cfg.object_depth_decay)

    def object_frames(self, spec=None, n=None, contrast=None):
        """Frames with one object whose front bin is uniform in the configured range.

        The object albedo is set from the unbiased sensor so that a bias
        changes the frames but not the scene.
        """
        cfg = self.config
        spec = self.spec if spec is None else spec
        n = cfg.n_object_frames if n is None else int(n)
        poses = self._poses(n, _OBJECT_POSES)
        rng = derive_rng(cfg.eval_seed, _OBJECT_POSES, 1)
        bins = rng.uniform(cfg.object_bin_min, cfg.object_bin_max, n)
        out = []
        for i, (q, x) in enumerate(zip(poses, bins)):
            obj = self.object_spec(q, bin_to_distance(x, self.detector_config))
            if contrast is not None:
                scale = contrast / cfg.object_contrast if cfg.object_contrast else 0.0
                obj = ObjectSpec(obj.distance, obj.albedo * scale, obj.width_bins, obj.depth_decay)
            out.append(
                generate_eval_scene(
                    self.arm, q, obj, spec, derive_rng(cfg.eval_seed, _OBJECT_FRAMES, i)
                )
            )
        return out

    def robot_surface_bin(self, q):
        """Farthest robot return that the on-sensor baseline could report."""
        lam = render_expected(self.arm.patches(q), self.spec)
        peaks = onsensor_peaks(lam, self.detector_config.trim_range, max_peaks=None)
        return max(peaks) if peaks else None

    def beyond_robot_frames(self, n=200, min_gap=3, max_tries=20):
        """Object frames where the robot return dominates a farther object.

        Candidates place the object front at least ``min_gap`` bins past the
        farthest robot peak. A candidate is kept only if the strongest peaks
        of its noise-free histogram are all robot returns, i.e. none lies
        past the robot surface. Returns ``(frames, robot_surface_bins)``.
        """
        cfg = self.config
        trim = self.detector_config.trim_range
        frames, surfaces = [], []
        for j in range(int(n) * max_tries):
            if len(frames) == n:
                break
            rng = derive_rng(cfg.eval_seed, _BEYOND_POSES, j)
            lo_q = np.array([r[0] for r in cfg.ranges])
            hi_q = np.array([r[1] for r in cfg.ranges])
            q = lo_q + (hi_q - lo_q) * rng.random(cfg.dof)
            surface = self.robot_surface_bin(q)
            if surface is None or surface + min_gap > cfg.object_bin_max:
                continue
            x = rng.uniform(surface + min_gap, cfg.object_bin_max)
            obj = self.object_spec(q, bin_to_distance(x, self.detector_config))
            lam = render_expected(self.arm.patches(q) + obj.patches(self.spec.slope), self.spec)
            if max(onsensor_peaks(lam, trim), default=-1) > surface:
                continue
            frames.append(
                generate_eval_scene(
                    self.arm, q, obj, self.spec, derive_rng(cfg.eval_seed, _BEYOND_FRAMES, j)
                )
            )
            surfaces.append(surface)
        if len(frames) < n:
            raise RuntimeError(f"only {len(frames)} of {n} beyond-robot scenes found")
        return frames, surfaces

    def calibration(self, spec=None, preprocessed=True):
        """Offset from fresh frames captured at the first reference pose."""
        spec = self.spec if spec is None else spec
        ds = self.reference(preprocessed)
        fresh = capture_frames(
            self.arm,
            ds.joints[0],
            spec,
            self.config.calibration_frames,
            derive_rng(self.config.eval_seed, _CALIB_FRAMES),
        )
        return compute_calibration(ds.raw_mean_first, fresh, source_pose=ds.joints[0])


def frame_outcome(frame, result, match_window=MATCH_WINDOW):
    """Per-frame record of a detection result against ground truth."""
    closest = result.closest
    row = {
        "gt_present": int(frame.object_present),
        "gt_distance_m": frame.true_distance if frame.object_present else None,
        "degenerate": int(result.degenerate),
        "extrapolated": int(result.extrapolated),
        "n_detections": len(result.detections),
        "closest_bin": closest.peak_bin if closest else None,
        "closest_distance_m": closest.distance if closest else None,
        "abs_error_m": None,
    }
    if result.degenerate:
        row["outcome"] = "DEG"
    elif frame.object_present:
        if closest is not None:
            row["abs_error_m"] = abs(closest.distance - frame.true_distance)
        hit = closest is not None and row["abs_error_m"] <= match_window
        row["outcome"] = "TP" if hit else "FN"
    else:
        row["outcome"] = "FP" if closest is not None else "TN"
    return row


def summarize(outcomes):
    """Aggregate metrics over per-frame outcome rows."""
    counts = {k: 0 for k in ("TP", "FN", "FP", "TN", "DEG")}
    errors = []
    detected = 0
    for r in outcomes:
        counts[r["outcome"]] += 1
        if r["outcome"] == "TP":
            errors.append(r["abs_error_m"])
        if r["gt_present"] and r["outcome"] != "DEG" and r["n_detections"] > 0:
            detected += 1
    n_obj = counts["TP"] + counts["FN"]
    n_rob = counts["FP"] + counts["TN"]
    return {
        "n_frames": sum(counts.values()),
        "n_object": n_obj,
        "n_robot": n_rob,
        "n_degenerate": counts["DEG"],
        "tpr": counts["TP"] / n_obj if n_obj else None,
        "fpr": counts["FP"] / n_rob if n_rob else None,
        "detection_rate": detected / n_obj if n_obj else None,
        "mean_abs_error_m": float(np.mean(errors)) if errors else None,
    }


def _q_columns(q):
    return {f"q_{k + 1}": float(v) for k, v in enumerate(q)}


def _run(condition, frames, model, cfg, calib=None, start_id=0):
    rows = []
    for i, f in enumerate(frames):
        res = detect_frame(f.frame, f.q, model, cfg, calib)
        row = dict(condition)
        row["frame_id"] = start_id + i
        row.update(_q_columns(f.q))
        row.update(frame_outcome(f, res))
        rows.append(row)
    return rows


@dataclass
class EvalReport:
    """Aggregates, per-frame outcomes and the resolved configuration."""

    experiment: str
    rows: list
    frames: list
    config: SimConfig
    extra: dict = field(default_factory=dict)

    def row(self, **match):
        """The single aggregate row whose fields equal ``match``."""
        hits = [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {match}")
        return hits[0]

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "report.csv"), self.rows)
        _write_csv(os.path.join(out_dir, "frames.csv"), self.frames)
        run = {"experiment": self.experiment}
        run.update(self.extra)
        dump_config(self.config, os.path.join(out_dir, "config.snapshot"), extra=run)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else format(float(v), ".17g")
    return str(v)


def _write_csv(path, rows):
    columns = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in columns])


def _aggregate(frames, keys):
    groups = {}
    for r in frames:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    rows = []
    for key, members in groups.items():
        row = dict(zip(keys, key))
        row.update(summarize(members))
        rows.append(row)
    return rows


def eval_self_detection(bench):
    """Robot-only false positive rate per interpolation mode and grid coarsening."""
    cfg = bench.config
    frames = bench.robot_frames()
    out = []
    for factor in cfg.subsample_factors:
        for mode in (BARYCENTRIC, NEAREST):
            model = bench.model(mode, factor)
            cond = {"mode": mode, "factor": int(factor), "n_reference_poses": len(model.dataset_)}
            out += _run(cond, frames, model, bench.detector_config)
    rows = _aggregate(out, ("mode", "factor", "n_reference_poses"))
    return EvalReport("self_detection", rows, out, cfg)


def _labelled(bench, spec=None):
    return bench.robot_frames(spec) + bench.object_frames(spec)


def eval_detection(bench):
    """TPR, robot-only FPR and distance error of the full pipeline."""
    out = _run(
        {"condition": "base"}, _labelled(bench), bench.model(), bench.detector_config
    )
    return EvalReport("detection", _aggregate(out, ("condition",)), out, bench.config)


def onsensor_peaks(counts, trim_range=(15, 80), max_peaks=2, prominence=BASELINE_PROMINENCE):
    """Bins of the strongest peaks of a raw histogram, nearest first.

    Stands in for the range output of the sensor firmware: no background
    model, peaks must stand ``prominence`` Poisson deviations above their
    surroundings, and only the ``max_peaks`` highest are kept.
    """
    h = np.asarray(counts, dtype=float)
    lo, hi = trim_range if trim_range is not None else (0, h.shape[0])
    seg = h[lo:hi]
    floor = prominence * math.sqrt(max(float(np.median(h)), 1.0))
    idx, props = find_peaks(seg, prominence=floor)
    if idx.size == 0:
        return []
    order = np.argsort(-seg[idx], kind="stable")
    if max_peaks is not None:
        order = order[:max_peaks]
    return sorted(int(lo + idx[k]) for k in order)


def _baseline_row(frame, peaks, cfg):
    dists = [bin_to_distance(p, cfg) for p in peaks]
    row = {
        "gt_present": int(frame.object_present),
        "gt_distance_m": frame.true_distance if frame.object_present else None,
        "degenerate": 0,
        "extrapolated": 0,
        "n_detections": len(peaks),
        "closest_bin": peaks[0] if peaks else None,
        "closest_distance_m": dists[0] if dists else None,
        "abs_error_m": None,
        "max_estimate_m": max(dists) if dists else None,
    }
    if frame.object_present:
        if dists:
            errs = [abs(d - frame.true_distance) for d in dists]
            best = int(np.argmin(errs))
            row["closest_bin"] = peaks[best]
            row["closest_distance_m"] = dists[best]
            row["abs_error_m"] = errs[best]
        hit = row["abs_error_m"] is not None and row["abs_error_m"] <= MATCH_WINDOW
        row["outcome"] = "TP" if hit else "FN"
    else:
        row["outcome"] = "FP" if peaks else "TN"
    return row


def eval_baseline_onsensor(bench, n_beyond=200):
    """Raw-peak baseline against the full method.

    Two scene sets are scored: the standard labelled suite, and scenes whose
    object sits beyond the farthest robot return. Baseline rows score the
    better of its two estimates; ``max_estimate_m`` and ``robot_surface_m``
    allow the ceiling check.
    """
    cfg = bench.detector_config
    model = bench.model()
    beyond, surfaces = bench.beyond_robot_frames(n_beyond)
    suites = [
        ("suite", _labelled(bench), None),
        ("beyond_robot", beyond, surfaces),
    ]
    out = []
    for scene, frames, surf in suites:
        for i, f in enumerate(frames):
            base = {"scene": scene, "frame_id": i}
            base.update(_q_columns(f.q))
            s = surf[i] if surf else bench.robot_surface_bin(f.q)
            surface = {"robot_surface_m": bin_to_distance(s, cfg) if s is not None else None}

            row = {"method": "baseline", **base}
            row.update(_baseline_row(f, onsensor_peaks(f.frame, cfg.trim_range), cfg))
            row.update(surface)
            out.append(row)

            res = detect_frame(f.frame, f.q, model, cfg)
            row = {"method": "full", **base}
            row.update(frame_outcome(f, res))
            row["max_estimate_m"] = max((d.distance for d in res.detections), default=None)
            row.update(surface)
            out.append(row)
    rows = _aggregate(out, ("method", "scene"))
    return EvalReport("baseline_onsensor", rows, out, bench.config)


def eval_roc(bench):
    """Operating points over the threshold and segment-length grids.

    Likelihoods are computed once per frame and re-gated for every pair.
    ``detection_rate`` counts object frames with any detection; unlike the
    matched TPR it is monotone in both parameters by construction.
    """
    base = bench.detector_config
    model = bench.model()
    frames = _labelled(bench)
    cached = [(f, detect_frame(f.frame, f.q, model, base)) for f in frames]
    out = []
    for c in bench.config.c_grid:
        for t in bench.config.t_grid:
            cfg = DetectorConfig(t=t, c=c, trim_range=base.trim_range)
            for i, (f, res) in enumerate(cached):
                if res.degenerate:
                    swept = res
                else:
                    dets = detections_from_likelihood(res.values, res.likelihood, cfg)
                    swept = type(res)(dets, res.extrapolated, False, res.likelihood, res.values)
                row = {"t": float(t), "c": int(c), "frame_id": i}
                row.update(_q_columns(f.q))
                row.update(frame_outcome(f, swept))
                out.append(row)
    rows = _aggregate(out, ("t", "c"))
    rows.sort(key=lambda r: (r["fpr"], r["tpr"] if r["tpr"] is not None else -1, r["t"], r["c"]))
    return EvalReport("roc", rows, out, bench.config)


def eval_ablation(bench):
    """Full pipeline against runs with one stage removed.

    Calibration is ablated on frames carrying an injected power-cycle bias;
    ``biased_calibrated`` restores it on the same frames.
    """
    cfg = bench.detector_config
    labelled = _labelled(bench)
    biased = _labelled(bench, bench.biased_spec)
    runs = [
        ("base", labelled, bench.model(), cfg, None),
        ("no_preprocessing", labelled, bench.model(preprocessed=False), cfg, None),
        ("no_calibration", biased, bench.model(), cfg, None),
        ("biased_calibrated", biased, bench.model(), cfg, bench.calibration(bench.biased_spec)),
        (
            "no_trimming",
            labelled,
            bench.model(),
            DetectorConfig(cfg.t, cfg.c, None, cfg.slope, cfg.intercept),
            None,
        ),
    ]
    out = []
    for name, frames, model, dcfg, calib in runs:
        out += _run({"condition": name}, frames, model, dcfg, calib)
    rows = _aggregate(out, ("condition",))
    return EvalReport("ablation", rows, out, bench.config)


def eval_ambient(bench):
    """Robot-only FPR under scaled ambient light, with and without pre-processing."""
    cfg = bench.config
    out = []
    for level in cfg.ambient_levels:
        spec = bench.spec.with_(ambient_rate=cfg.ambient_rate * float(level))
        frames = bench.robot_frames(spec)
        for pre in (True, False):
            cond = {"ambient_scale": float(level), "preprocessing": int(pre)}
            out += _run(cond, frames, bench.model(preprocessed=pre), bench.detector_config)
    rows = _aggregate(out, ("ambient_scale", "preprocessing"))
    return EvalReport("ambient", rows, out, cfg)


EXPERIMENTS = {
    "self_detection": eval_self_detection,
    "detection": eval_detection,
    "baseline": eval_baseline_onsensor,
    "roc": eval_roc,
    "ablation": eval_ablation,
    "ambient": eval_ambient,
}


def run_experiment(name, config=None, out_dir=None):
    try:
        fn = EXPERIMENTS[name]
    except KeyError:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    report = fn(Benchmark(config))
    if out_dir is not None:
        report.write(out_dir)
    return report


def median_latency(detector, frames, repeats=1):
    """Median wall time in seconds of one ``detector.detect`` call."""
    times = []
    for _ in range(repeats):
        for f in frames:
            t0 = time.perf_counter()
            detector.detect_frame(f.frame, f.q)
            times.append(time.perf_counter() - t0)
    return statistics.median(times)


_WORKER = {}


def _stream_worker(args):
    stream, n_frames = args
    detector, frames = _WORKER["detector"], _WORKER["frames"]
    detector.detect_frame(frames[0].frame, frames[0].q)
    start = time.monotonic()
    for k in range(n_frames):
        f = frames[(stream + k) % len(frames)]
        detector.detect_frame(f.frame, f.q)
    return start, time.monotonic()


def stream_throughput(detector, frames, n_streams, frames_per_stream=500):
    """Frames per second with ``n_streams`` independent processes.

    Each stream is one process running its own detector copy, as with one
    process per physical sensor.
    """
    # Compile in the parent so forked workers inherit the jitted code.
    detector.detect_frame(frames[0].frame, frames[0].q)
    _WORKER["detector"], _WORKER["frames"] = detector, list(frames)
    ctx = mp.get_context("fork")
    with ctx.Pool(n_streams) as pool:
        spans = pool.map(
            _stream_worker, [(s, frames_per_stream) for s in range(n_streams)], chunksize=1
        )
    _WORKER.clear()
    wall = max(e for _, e in spans) - min(s for s, _ in spans)
    return n_streams * frames_per_stream / wall
