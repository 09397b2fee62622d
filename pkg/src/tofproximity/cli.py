"""Command line entry point: ``tofproximity <command> ...``."""

import argparse
import sys

import numpy as np

from .config import SimConfig, load_config
from .detector import ProximityDetector
from .evaluation import EXPERIMENTS, Benchmark, run_experiment
from .io import (
    FrameRecord,
    read_calibration,
    read_frames,
    read_reference,
    write_calibration,
    write_frames,
)
from .reference import BARYCENTRIC, NEAREST
from .simulator import capture_frames, derive_rng

SCENES = ("labelled", "robot", "objects", "calibration")


def _config(path):
    return load_config(path) if path else SimConfig()


def _fmt_distance(d):
    return format(d, ".6f")


def cmd_detect(args, out):
    det = ProximityDetector(
        t=args.t,
        c=args.c,
        mode=args.mode,
        trim_range=None if args.no_trim else (args.trim_lo, args.trim_hi),
    ).fit(read_reference(args.model))
    if args.calib:
        det.set_calibration(read_calibration(args.calib))
    for rec in read_frames(args.frames):
        res = det.detect_frame(rec.counts, rec.q)
        best = res.closest
        fields = [
            rec.frame_id,
            str(len(res.detections)),
            str(best.peak_bin) if best else "",
            _fmt_distance(best.distance) if best else "",
            str(int(res.extrapolated)),
        ]
        out.write(",".join(fields) + "\n")
    return 0


def cmd_calibrate(args, out):
    det = ProximityDetector().fit(read_reference(args.model))
    records = read_frames(args.frames)
    if not records:
        raise ValueError("frame file is empty")
    first = det.model_.dataset_.joints[0]
    worst = max(float(np.max(np.abs(r.q - first))) for r in records)
    if worst > 1e-6:
        sys.stderr.write(
            f"warning: frames deviate from the first reference pose by up to {worst:.3g} rad\n"
        )
    det.calibrate([r.counts for r in records])
    write_calibration(args.out, det.calibration_)
    return 0


def cmd_simulate_reference(args, out):
    bench = Benchmark(_config(args.config))
    ds = bench.reference(preprocessed=not args.raw)
    ds.save(args.out)
    out.write(f"wrote {len(ds)} poses to {args.out}\n")
    return 0


def _records(prefix, frames, start=0):
    return [
        FrameRecord(
            frame_id=f"{prefix}{start + i:05d}",
            q=f.q,
            counts=f.frame,
            gt_present=f.object_present,
            gt_distance=f.true_distance,
        )
        for i, f in enumerate(frames)
    ]


def cmd_simulate_eval(args, out):
    bench = Benchmark(_config(args.config))
    spec = bench.biased_spec if args.bias else bench.spec
    records = []
    if args.scenes in ("labelled", "robot"):
        records += _records("r", bench.robot_frames(spec))
    if args.scenes in ("labelled", "objects"):
        records += _records("o", bench.object_frames(spec))
    if args.scenes == "calibration":
        q = bench.grid.points()[0]
        cfg = bench.config
        frames = capture_frames(
            bench.arm, q, spec, cfg.calibration_frames, derive_rng(cfg.eval_seed, 3)
        )
        records = [
            FrameRecord(f"c{i:05d}", q, h, gt_present=False) for i, h in enumerate(frames)
        ]
    write_frames(args.out, records)
    out.write(f"wrote {len(records)} frames to {args.out}\n")
    return 0


def cmd_eval(args, out):
    report = run_experiment(args.experiment, _config(args.config), args.out)
    for row in report.rows:
        parts = []
        for k, v in row.items():
            if isinstance(v, float):
                v = format(v, ".4g")
            parts.append(f"{k}={'' if v is None else v}")
        out.write(" ".join(parts) + "\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="tofproximity",
        description="Object detection near a robot arm from time-of-flight histograms.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="run the detector over a frame file")
    d.add_argument("--model", required=True, help="reference dataset file")
    d.add_argument("--frames", required=True, help="frame CSV file")
    d.add_argument("--t", type=float, default=0.001, help="likelihood threshold")
    d.add_argument("--c", type=int, default=4, help="minimum segment length in bins")
    d.add_argument("--calib", help="calibration file to apply")
    d.add_argument("--mode", choices=(BARYCENTRIC, NEAREST), default=BARYCENTRIC)
    d.add_argument("--trim-lo", type=int, default=15)
    d.add_argument("--trim-hi", type=int, default=80)
    d.add_argument("--no-trim", action="store_true", help="gate every bin")
    d.set_defaults(func=cmd_detect)

    c = sub.add_parser("calibrate", help="compute a power-cycle correction")
    c.add_argument("--model", required=True)
    c.add_argument("--frames", required=True, help="fresh frames at the first reference pose")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("simulate-reference", help="simulate a reference dataset")
    r.add_argument("--config", help="INI configuration (defaults if omitted)")
    r.add_argument("--out", required=True)
    r.add_argument("--raw", action="store_true", help="store raw-count statistics")
    r.set_defaults(func=cmd_simulate_reference)

    e = sub.add_parser("simulate-eval", help="simulate evaluation frames")
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--scenes", choices=SCENES, default="labelled")
    e.add_argument("--bias", action="store_true", help="inject the power-cycle bias")
    e.set_defaults(func=cmd_simulate_eval)

    v = sub.add_parser("eval", help="run an experiment and write its report")
    v.add_argument("experiment", choices=sorted(EXPERIMENTS))
    v.add_argument("--config")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
