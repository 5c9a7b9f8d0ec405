"""Experiment specs, sweeps and CSV artifacts."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, NetworkConfig, parse_value, read_key_values, validate_config
from .errors import ConvergenceError, DivergenceError
from .meanfield import solve_fixed_point
from .population import aoi_flags, network_aoi, picard_solve
from .simulation import sample_topologies, simulate_topologies

MODES = ("simulate", "meanfield", "analyze", "sweep")
METHODS = ("sim", "analytic", "meanfield")
MODE_METHODS = {"simulate": ("sim",), "meanfield": ("meanfield",), "analyze": ("analytic",),
                "sweep": METHODS}
SWEEP_AXES = {"xi": "xi", "p": "p", "lambda": "lambda_"}
HEADER = ["swept_value", "sim_aoi", "sim_stderr", "analytic_aoi", "meanfield_aoi", "flags",
          "seed", "git_describe"]
HARD_FAILURE = "no_result"
TRUNCATION_TAIL = 1e-3


@dataclass(frozen=True)
class ExperimentSpec:
    base: NetworkConfig = NetworkConfig()
    mode: str = "sweep"
    sweep_axis: str | None = None
    sweep_values: tuple = ()
    topology_count: int = 20
    output_path: str | None = None
    methods: tuple = ()

    def resolved_methods(self) -> tuple:
        return self.methods or MODE_METHODS[self.mode]

    def plan(self) -> list[tuple[float | None, NetworkConfig]]:
        """One (swept value, config) pair per output row."""
        if self.sweep_axis is None:
            return [(None, self.base)]
        name = SWEEP_AXES[self.sweep_axis]
        return [(v, self.base.replace(**{name: v})) for v in self.sweep_values]


@dataclass
class SweepRow:
    swept_value: float | None
    sim_aoi: float | None = None
    sim_stderr: float | None = None
    analytic_aoi: float | None = None
    meanfield_aoi: float | None = None
    flags: list = field(default_factory=list)

    def flag(self, name: str) -> None:
        if name not in self.flags:
            self.flags.append(name)

    @property
    def populated(self) -> bool:
        return any(v is not None for v in (self.sim_aoi, self.analytic_aoi, self.meanfield_aoi))


def _floats(text: str, key: str, line: int) -> tuple:
    parts = [s.strip() for s in text.split(",") if s.strip()]
    if not parts:
        raise ConfigError(key, f"{key} is empty", line)
    try:
        return tuple(float(s) for s in parts)
    except ValueError:
        raise ConfigError(key, f"malformed value for {key}: {text!r}", line) from None


def parse_spec(path) -> ExperimentSpec:
    """Read an experiment file: NetworkConfig keys plus the experiment keys.

    Raises ConfigError carrying the offending line number.
    """
    changes, lines, extra = {}, {}, {}
    for lineno, key, value in read_key_values(path):
        if key in ("mode", "sweep_axis", "sweep_values", "topology_count", "output_path", "methods"):
            extra[key] = (value, lineno)
            continue
        name, v = parse_value(key, value, lineno)
        changes[name] = v
        lines[name.rstrip("_")] = lineno
    try:
        base = validate_config(NetworkConfig().replace(**changes))
    except ConfigError as err:
        raise ConfigError(err.field, str(err), lines.get(err.field)) from None
    kw = {"base": base}
    if "mode" in extra:
        value, line = extra["mode"]
        if value not in MODES:
            raise ConfigError("mode", f"mode must be one of {', '.join(MODES)}", line)
        kw["mode"] = value
    if "topology_count" in extra:
        value, line = extra["topology_count"]
        if not value.isdigit() or int(value) < 1:
            raise ConfigError("topology_count", "topology_count must be a positive integer", line)
        kw["topology_count"] = int(value)
    if "output_path" in extra:
        kw["output_path"] = extra["output_path"][0]
    if "methods" in extra:
        value, line = extra["methods"]
        methods = tuple(s.strip() for s in value.split(",") if s.strip())
        if not methods or any(m not in METHODS for m in methods):
            raise ConfigError("methods", f"methods must be drawn from {', '.join(METHODS)}", line)
        kw["methods"] = methods
    if ("sweep_axis" in extra) != ("sweep_values" in extra):
        key = "sweep_values" if "sweep_axis" in extra else "sweep_axis"
        other = extra.get("sweep_axis") or extra.get("sweep_values")
        raise ConfigError(key, "sweep_axis and sweep_values must be given together", other[1])
    if "sweep_axis" in extra:
        axis, line = extra["sweep_axis"]
        if axis not in SWEEP_AXES:
            raise ConfigError("sweep_axis", f"sweep_axis must be one of {', '.join(SWEEP_AXES)}", line)
        text, vline = extra["sweep_values"]
        values = _floats(text, "sweep_values", vline)
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError("sweep_values", "sweep_values must be strictly increasing", vline)
        for v in values:
            try:
                validate_config(base.replace(**{SWEEP_AXES[axis]: v}))
            except ConfigError as err:
                raise ConfigError("sweep_values", f"sweep value {v!r}: {err}", vline) from None
        kw["sweep_axis"], kw["sweep_values"] = axis, values
    return ExperimentSpec(**kw)


def _simulate(cfg: NetworkConfig, row: SweepRow, topologies) -> None:
    rep = simulate_topologies(topologies, cfg, cfg.seed)
    for f in rep.flags:
        row.flag(f)
    if np.isfinite(rep.network_avg_aoi):
        row.sim_aoi = rep.network_avg_aoi
        row.sim_stderr = rep.network_avg_aoi_stderr if np.isfinite(rep.network_avg_aoi_stderr) else None


def _analyze(cfg: NetworkConfig, row: SweepRow) -> None:
    try:
        F = picard_solve(cfg)
    except ConvergenceError:
        row.flag("nonconvergence")
        return
    for f in aoi_flags(cfg, F):
        row.flag(f)
    if F.tail_estimate > TRUNCATION_TAIL:
        row.flag("truncation_tail")
    try:
        row.analytic_aoi = network_aoi(cfg, F)
    except DivergenceError:
        row.flag("divergence_suspected")


def _meanfield(cfg: NetworkConfig, row: SweepRow, topologies) -> None:
    values = []
    for tp in topologies:
        if len(tp) == 0:
            row.flag("empty_topology")
            continue
        try:
            values.append(solve_fixed_point(tp, cfg).cond_aoi)
        except ConvergenceError:
            row.flag("nonconvergence")
            return
    if values:
        row.meanfield_aoi = float(np.concatenate(values).mean())


def run_rows(spec: ExperimentSpec) -> list[SweepRow]:
    methods = spec.resolved_methods()
    rows = []
    cached = None
    for value, cfg in spec.plan():
        row = SweepRow(value)
        if "sim" in methods or "meanfield" in methods:
            # topologies depend on lambda only; reuse them across xi / p sweeps
            if cached is None or spec.sweep_axis == "lambda":
                cached = sample_topologies(cfg, spec.topology_count, cfg.seed)
        if "sim" in methods:
            _simulate(cfg, row, cached)
        if "analytic" in methods:
            _analyze(cfg, row)
        if "meanfield" in methods:
            _meanfield(cfg, row, cached)
        if not row.populated:
            row.flag(HARD_FAILURE)
        rows.append(row)
    return rows


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def render_csv(spec: ExperimentSpec, rows: list[SweepRow], describe: str | None = None) -> str:
    describe = git_describe() if describe is None else describe
    buf = io.StringIO()
    buf.write("# aoi-mesh experiment\n")
    buf.write(f"# mode = {spec.mode}\n")
    buf.write(f"# methods = {','.join(spec.resolved_methods())}\n")
    if spec.sweep_axis:
        buf.write(f"# sweep_axis = {spec.sweep_axis}\n")
    buf.write(f"# topology_count = {spec.topology_count}\n")
    for f in dataclasses.fields(spec.base):
        buf.write(f"# {f.name.rstrip('_')} = {getattr(spec.base, f.name)!r}\n")
    buf.write(f"# scale: {spec.base.window:g} m torus x {spec.topology_count} topologies x "
              f"{spec.base.measure_slots} measured slots (reference study: 1 km^2 x 10000 realizations)\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow([_fmt(r.swept_value), _fmt(r.sim_aoi), _fmt(r.sim_stderr), _fmt(r.analytic_aoi),
                    _fmt(r.meanfield_aoi), ";".join(r.flags), spec.base.seed, describe])
    return buf.getvalue()


def run(spec: ExperimentSpec, out=None) -> tuple[int, str]:
    """Execute the spec and write its CSV. Returns (exit status, csv text).

    Status 3 when any row has no result at all.
    """
    rows = run_rows(spec)
    text = render_csv(spec, rows)
    path = out if out is not None else spec.output_path
    if path:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    status = 3 if any(HARD_FAILURE in r.flags for r in rows) else 0
    return status, text


class CompareError(ValueError):
    pass


@dataclass
class CompareReport:
    swept_values: list
    rel_diff: list
    max_gap: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.tolerance

    def summary(self) -> str:
        lines = ["swept_value,rel_diff"]
        for v, d in zip(self.swept_values, self.rel_diff):
            lines.append(f"{v},{'' if d is None else repr(d)}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"max_gap={self.max_gap!r} tolerance={self.tolerance!r} {verdict}")
        return "\n".join(lines)


def read_results(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        body = [line for line in fh if not line.startswith("#")]
    rows = list(csv.DictReader(body))
    if rows and set(HEADER) - set(rows[0]):
        raise CompareError(f"{path}: header does not match the result schema")
    return rows


def compare(csv_a, csv_b, tolerance: float, column_a: str = "analytic_aoi",
            column_b: str | None = None) -> CompareReport:
    """Row-wise |a - b| / |b| between two result files (or two columns of one file)."""
    column_b = column_a if column_b is None else column_b
    for c in (column_a, column_b):
        if c not in HEADER:
            raise CompareError(f"unknown column {c!r}")
    a, b = read_results(csv_a), read_results(csv_b)
    grid_a = [r["swept_value"] for r in a]
    grid_b = [r["swept_value"] for r in b]
    if len(grid_a) != len(grid_b) or any(
            (x or y) and (not x or not y or not math.isclose(float(x), float(y), rel_tol=1e-12))
            for x, y in zip(grid_a, grid_b)):
        raise CompareError("swept grids differ")
    diffs = []
    for ra, rb in zip(a, b):
        va, vb = ra[column_a], rb[column_b]
        if not va or not vb:
            diffs.append(None)
            continue
        va, vb = float(va), float(vb)
        diffs.append(0.0 if va == vb else abs(va - vb) / abs(vb))
    present = [d for d in diffs if d is not None]
    max_gap = max(present) if present else math.nan
    return CompareReport(grid_a, diffs, max_gap, tolerance)
