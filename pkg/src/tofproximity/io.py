"""Text file formats.

Reference dataset::

    #refdata v1 b=<int> n=<int> sigma=<real> resolution=<real> margin=<real> preprocessed=<0|1>
    #grid start=<r,...> step=<r,...> shape=<i,...>        (optional)
    #raw_mean_first <b reals>                              (optional)
    q_1 .. q_n | mean_0 .. mean_{b-1} | spread_0 .. spread_{b-1} | count

Frame file: CSV whose header declares ``frame_id,q_1..q_n,bin_0..bin_{b-1}``
plus optional ``gt_present,gt_distance_m`` columns.

Calibration file::

    #calib v1 b=<int> n=<int>
    #source_pose <n reals>
    <b reals>

Reals are written with 17 significant digits, which round-trips float64
exactly.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .histogram import KdeConfig
from .reference import GridSpec, ReferenceDataset

__all__ = [
    "FrameRecord",
    "write_reference",
    "read_reference",
    "write_frames",
    "read_frames",
    "write_calibration",
    "read_calibration",
]


def fmt(x):
    return format(float(x), ".17g")


def _join(values):
    return " ".join(fmt(v) for v in values)


def _parse_header(line, tag):
    parts = line.split()
    if not parts or parts[0] != tag:
        raise ValueError(f"expected header starting with {tag!r}, got {line[:40]!r}")
    fields = {}
    for token in parts[2:]:
        key, _, value = token.partition("=")
        fields[key] = value
    return parts[1], fields


def write_reference(path, ds):
    kde = ds.kde
    with open(path, "w") as fh:
        fh.write(
            f"#refdata v1 b={ds.b} n={ds.n} sigma={fmt(kde.bandwidth)} "
            f"resolution={fmt(kde.search_resolution)} margin={fmt(kde.search_margin)} "
            f"preprocessed={int(ds.preprocessed)}\n"
        )
        if ds.grid is not None:
            g = ds.grid
            fh.write(
                "#grid start=" + ",".join(fmt(v) for v in g.start)
                + " step=" + ",".join(fmt(v) for v in g.step)
                + " shape=" + ",".join(str(int(v)) for v in g.shape) + "\n"
            )
        if ds.raw_mean_first is not None:
            fh.write("#raw_mean_first " + _join(ds.raw_mean_first) + "\n")
        for i in range(len(ds)):
            fh.write(
                f"{_join(ds.joints[i])} | {_join(ds.means[i])} | "
                f"{_join(ds.spreads[i])} | {int(ds.counts[i])}\n"
            )


def read_reference(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    version, head = _parse_header(lines[0], "#refdata")
    if version != "v1":
        raise ValueError(f"unsupported reference format {version}")
    b, n = int(head["b"]), int(head["n"])
    kde = KdeConfig(
        bandwidth=float(head.get("sigma", 5.0)),
        search_resolution=float(head.get("resolution", 0.25)),
        search_margin=float(head.get("margin", 0.0)),
    )
    grid = None
    raw_first = None
    joints, means, spreads, counts = [], [], [], []
    for line in lines[1:]:
        if line.startswith("#grid"):
            fields = dict(tok.partition("=")[::2] for tok in line.split()[1:])
            grid = GridSpec(
                start=tuple(float(v) for v in fields["start"].split(",")),
                step=tuple(float(v) for v in fields["step"].split(",")),
                shape=tuple(int(v) for v in fields["shape"].split(",")),
            )
            continue
        if line.startswith("#raw_mean_first"):
            raw_first = np.array(line.split()[1:], dtype=float)
            continue
        if line.startswith("#"):
            continue
        q, mean, spread, count = (part.split() for part in line.split("|"))
        if len(q) != n or len(mean) != b or len(spread) != b:
            raise ValueError(f"malformed pose record: {line[:60]!r}")
        joints.append(np.array(q, dtype=float))
        means.append(np.array(mean, dtype=float))
        spreads.append(np.array(spread, dtype=float))
        counts.append(int(count[0]))
    return ReferenceDataset(
        joints=np.vstack(joints),
        means=np.vstack(means),
        spreads=np.vstack(spreads),
        counts=counts,
        kde=kde,
        grid=grid,
        preprocessed=head.get("preprocessed", "1") == "1",
        raw_mean_first=raw_first,
    )


@dataclass(eq=False)
class FrameRecord:
    frame_id: str
    q: np.ndarray
    counts: np.ndarray
    gt_present: bool = None
    gt_distance: float = None


def write_frames(path, records):
    records = list(records)
    if not records:
        raise ValueError("no frames to write")
    n = records[0].q.shape[0]
    b = records[0].counts.shape[0]
    labelled = any(r.gt_present is not None for r in records)
    header = ["frame_id"] + [f"q_{k + 1}" for k in range(n)] + [f"bin_{i}" for i in range(b)]
    if labelled:
        header += ["gt_present", "gt_distance_m"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            if r.q.shape[0] != n or r.counts.shape[0] != b:
                raise ValueError(f"frame {r.frame_id}: inconsistent dimensions")
            row = [r.frame_id] + [fmt(v) for v in r.q] + [fmt(v) for v in r.counts]
            if labelled:
                present = bool(r.gt_present)
                row += [int(present), fmt(r.gt_distance) if present else ""]
            w.writerow(row)


def read_frames(path):
    """Read a frame file; returns a list of :class:`FrameRecord`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "frame_id":
            raise ValueError("frame file header must start with frame_id")
        q_cols = [i for i, h in enumerate(header) if h.startswith("q_")]
        bin_cols = [i for i, h in enumerate(header) if h.startswith("bin_")]
        if not bin_cols:
            raise ValueError("frame file declares no bin columns")
        gt_p = header.index("gt_present") if "gt_present" in header else None
        gt_d = header.index("gt_distance_m") if "gt_distance_m" in header else None
        out = []
        for row in reader:
            if not row:
                continue
            rec = FrameRecord(
                frame_id=row[0],
                q=np.array([row[i] for i in q_cols], dtype=float),
                counts=np.array([row[i] for i in bin_cols], dtype=float),
            )
            if gt_p is not None:
                rec.gt_present = row[gt_p] == "1"
                if rec.gt_present and gt_d is not None and row[gt_d]:
                    rec.gt_distance = float(row[gt_d])
            out.append(rec)
    return out


def write_calibration(path, calib):
    q = np.asarray(calib.source_pose, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"#calib v1 b={calib.h_calib.shape[0]} n={q.shape[0]}\n")
        fh.write("#source_pose " + _join(q) + "\n")
        fh.write(_join(calib.h_calib) + "\n")


def read_calibration(path):
    from .calibration import CalibrationOffset

    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    _, head = _parse_header(lines[0], "#calib")
    q = np.array(lines[1].split()[1:], dtype=float)
    values = np.array(lines[2].split(), dtype=float)
    if values.shape[0] != int(head["b"]):
        raise ValueError("calibration length does not match header")
    return CalibrationOffset(h_calib=values, source_pose=q)
