"""Key-value configuration for simulated benchmarks.

Files use INI syntax. Angles may be written as arithmetic on ``pi``
(``-pi/2``, ``5*pi/12``). Every key is optional; unset keys keep the
defaults below. Example::

    [arm]
    dof = 2
    ranges = -pi/2:pi/2, -pi/2:pi/2
    grid_step = pi/12

    [sensor]
    ambient_rate = 40

    [eval]
    n_object_frames = 500
    seed = 2
"""

import ast
import configparser
import math
import operator
from dataclasses import asdict, dataclass, field, fields

__all__ = ["SimConfig", "load_config", "dump_config", "parse_angle"]

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}


def parse_angle(text):
    """Evaluate a number or simple arithmetic on ``pi``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression {text!r}")

    return ev(ast.parse(str(text).strip(), mode="eval"))


def _default_ranges():
    return ((-math.pi / 2, math.pi / 2), (-math.pi / 2, math.pi / 2))


@dataclass
class SimConfig:
    # arm
    dof: int = 2
    ranges: tuple = field(default_factory=_default_ranges)
    grid_step: float = math.pi / 12
    # sensor
    b: int = 80
    pulse_sigma: float = 2.0
    signal_photons: float = 2000.0
    ambient_rate: float = 40.0
    crosstalk_bin: float = 8.0
    crosstalk_photons: float = 300.0
    crosstalk_jitter: float = 0.15
    # reference capture
    frames_per_pose: int = 50
    reference_seed: int = 1
    bandwidth: float = 5.0
    search_resolution: float = 0.25
    # evaluation scenes
    eval_seed: int = 2
    n_robot_frames: int = 1000
    n_object_frames: int = 500
    object_contrast: float = 6.0
    object_width_bins: int = 6
    object_depth_decay: float = 0.75
    object_bin_min: float = 20.0
    object_bin_max: float = 70.0
    # detector
    t: float = 0.001
    c: int = 4
    trim_lo: int = 15
    trim_hi: int = 80
    # power-cycle bias, in Poisson standard deviations of the ambient level
    bias_sigma: float = 6.0
    bias_seed: int = 3
    calibration_frames: int = 50
    # sweeps
    subsample_factors: tuple = (1, 2, 3, 4)
    t_grid: tuple = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)
    c_grid: tuple = (1, 2, 4, 8)
    ambient_levels: tuple = (0.0, 0.5, 1.0, 2.0, 10.0)

    def __post_init__(self):
        self.ranges = tuple(tuple(float(v) for v in r) for r in self.ranges)
        if len(self.ranges) != self.dof:
            raise ValueError(f"{len(self.ranges)} joint ranges for {self.dof} joints")

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        if "dof" in changes and "ranges" not in changes:
            d["ranges"] = tuple(self.ranges[:1] * changes["dof"])
        return SimConfig(**d)


_SECTIONS = {
    "arm": ("dof", "ranges", "grid_step"),
    "sensor": (
        "b", "pulse_sigma", "signal_photons", "ambient_rate",
        "crosstalk_bin", "crosstalk_photons", "crosstalk_jitter",
    ),
    "reference": ("frames_per_pose", "reference_seed", "bandwidth", "search_resolution"),
    "eval": (
        "eval_seed", "n_robot_frames", "n_object_frames", "object_contrast",
        "object_width_bins", "object_depth_decay", "object_bin_min", "object_bin_max",
    ),
    "detector": ("t", "c", "trim_lo", "trim_hi"),
    "calibration": ("bias_sigma", "bias_seed", "calibration_frames"),
    "sweeps": ("subsample_factors", "t_grid", "c_grid", "ambient_levels"),
}

_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _parse_value(name, text):
    kind = _TYPES[name]
    if name == "ranges":
        out = []
        for part in text.split(","):
            lo, _, hi = part.partition(":")
            out.append((parse_angle(lo), parse_angle(hi)))
        return tuple(out)
    if kind in (tuple, "tuple"):
        default = getattr(SimConfig(), name)
        cast = int if isinstance(default[0], int) else float
        return tuple(cast(parse_angle(v)) for v in text.split(","))
    if kind in (int, "int"):
        return int(text)
    return parse_angle(text)


def load_config(path):
    """Read an INI file into a :class:`SimConfig`."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        if section == "run":
            continue
        allowed = _SECTIONS.get(section)
        if allowed is None:
            raise ValueError(f"unknown section [{section}]")
        for key, text in parser.items(section):
            if key not in allowed:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            values[key] = _parse_value(key, text)
    if "dof" in values and "ranges" not in values:
        values["ranges"] = _default_ranges()[:1] * values["dof"]
    return SimConfig(**values)


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def dump_config(cfg, path=None, extra=None):
    """Fully resolved INI text for ``cfg``; written to ``path`` if given."""
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = getattr(cfg, key)
            if key == "ranges":
                text = ", ".join(f"{_fmt(lo)}:{_fmt(hi)}" for lo, hi in v)
            elif isinstance(v, tuple):
                text = ", ".join(_fmt(x) for x in v)
            else:
                text = _fmt(v)
            lines.append(f"{key} = {text}")
        lines.append("")
    if extra:
        lines.append("[run]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in extra.items())
        lines.append("")
    text = "\n".join(lines)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
