import csv
import dataclasses

import numpy as np
import pytest

from aoi_mesh.cli import main
from aoi_mesh.config import ConfigError
from aoi_mesh.experiment import HEADER, CompareError, compare, parse_spec, read_results, run

SMALL_SIM = "window = 40\ntopology_count = 2\nwarmup_slots = 20\nmeasure_slots = 200\n"


def read_results_from_text(text):
    return list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))


def _spec(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_from_mode_only(tmp_path):
    spec = parse_spec(_spec(tmp_path, "mode = analyze\n"))
    b = spec.base
    assert spec.mode == "analyze" and spec.sweep_axis is None
    assert b.alpha == 3.8 and b.theta == 1.0 and b.r == 0.5
    assert b.p_tx == pytest.approx(0.0501, rel=1e-3)
    assert b.noise == pytest.approx(1e-12, rel=1e-9)
    assert b.window == 300 and spec.topology_count == 20 and b.measure_slots == 4000


def test_range_error_names_field_and_line(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_spec(_spec(tmp_path, "mode = analyze\n\nxi = 1.5\n"))
    assert info.value.field == "xi" and info.value.line == 3
    assert "xi" in str(info.value)


@pytest.mark.parametrize("text,field,line", [
    ("mode = analyze\nbogus = 1\n", "bogus", 2),
    ("alpha = three\n", "alpha", 1),
    ("mode = plot\n", "mode", 1),
    ("sweep_axis = xi\nsweep_values = 0.5, 0.25\n", "sweep_values", 2),
    ("sweep_axis = p\nsweep_values = 0.5, 1.5\n", "sweep_values", 2),
    ("sweep_axis = xi\n", "sweep_values", 1),
    ("methods = sim, guess\n", "methods", 1),
])
def test_parse_errors_carry_line(tmp_path, text, field, line):
    with pytest.raises(ConfigError) as info:
        parse_spec(_spec(tmp_path, text))
    assert info.value.field == field and info.value.line == line


def test_three_row_plan(tmp_path):
    spec = parse_spec(_spec(tmp_path, "sweep_axis = xi\nsweep_values = 0.25,0.5,0.75\n"))
    plan = spec.plan()
    assert [v for v, _ in plan] == [0.25, 0.5, 0.75]
    assert [c.xi for _, c in plan] == [0.25, 0.5, 0.75]
    lam = parse_spec(_spec(tmp_path, "sweep_axis = lambda\nsweep_values = 0.01, 0.02\n"))
    assert [c.lambda_ for _, c in lam.plan()] == [0.01, 0.02]


def test_empty_sweep_is_parse_error_without_artifact(tmp_path):
    out = tmp_path / "out.csv"
    path = _spec(tmp_path, f"sweep_axis = xi\nsweep_values =\noutput_path = {out}\n")
    with pytest.raises(ConfigError):
        parse_spec(path)
    assert main(["sweep", "--spec", str(path), "--out", str(out)]) == 2
    assert not out.exists()


def test_csv_schema_and_determinism(tmp_path):
    path = _spec(tmp_path, SMALL_SIM + "lambda = 0.02\nsweep_axis = xi\nsweep_values = 0.3, 0.8\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--spec", str(path), "--seed", "11", "--out", str(a)]) == 0
    assert main(["sweep", "--spec", str(path), "--seed", "11", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert b"\r" not in a.read_bytes()
    text = a.read_text()
    assert "# lambda = 0.02" in text and "# scale:" in text
    rows = read_results(a)
    assert list(rows[0]) == HEADER and len(rows) == 2
    for r in rows:
        assert r["seed"] == "11"
        assert all(r[c] for c in ("sim_aoi", "sim_stderr", "analytic_aoi", "meanfield_aoi"))
    c = tmp_path / "c.csv"
    main(["sweep", "--spec", str(path), "--seed", "12", "--out", str(c)])
    assert read_results(c)[0]["sim_aoi"] != rows[0]["sim_aoi"]


def test_mode_restricts_columns(tmp_path, capsys):
    path = _spec(tmp_path, SMALL_SIM + "lambda = 0.02\n")
    assert main(["meanfield", "--spec", str(path)]) == 0
    out = capsys.readouterr().out
    lines = [line for line in out.splitlines() if not line.startswith("#")]
    assert lines[0] == ",".join(HEADER)
    fields = lines[1].split(",")
    assert fields[1] == "" and fields[3] == "" and float(fields[4]) > 1


def test_flags_propagate(tmp_path):
    path = _spec(tmp_path, "lambda = 0.01\np = 1\nsweep_axis = xi\nsweep_values = 0.5, 1.0\n")
    spec = parse_spec(path)
    status, text = run(dataclasses.replace(spec, mode="analyze"))
    rows = read_results_from_text(text)
    assert status == 0
    assert rows[0]["flags"] == "" and "divergence_suspected" in rows[1]["flags"].split(";")
    empty = _spec(tmp_path, SMALL_SIM + "lambda = 0\nmethods = sim\n", "empty.cfg")
    assert main(["simulate", "--spec", str(empty), "--out", str(tmp_path / "e.csv")]) == 3
    flags = read_results(tmp_path / "e.csv")[0]["flags"].split(";")
    assert "empty_topology" in flags and "no_result" in flags


def test_exit_codes(tmp_path):
    assert main(["analyze", "--spec", str(tmp_path / "missing.cfg")]) == 4
    bad = _spec(tmp_path, "xi = 0\n")
    assert main(["analyze", "--spec", str(bad)]) == 2
    assert main(["analyze"]) == 2
    ok = _spec(tmp_path, "lambda = 0.01\n")
    assert main(["analyze", "--spec", str(ok), "--out", str(tmp_path / "nodir" / "x.csv")]) == 4


def test_compare(tmp_path, capsys):
    path = _spec(tmp_path, SMALL_SIM + "lambda = 0.01\nsweep_axis = xi\nsweep_values = 0.4, 0.6\n")
    a = tmp_path / "a.csv"
    main(["sweep", "--spec", str(path), "--out", str(a)])
    rep = compare(a, a, 0.0)
    assert rep.max_gap == 0 and rep.passed
    assert main(["compare", str(a), str(a), "--tol", "0"]) == 0
    assert "PASS" in capsys.readouterr().out
    cross = compare(a, a, 0.1, "sim_aoi", "analytic_aoi")
    assert 0 < cross.max_gap < 0.1
    assert main(["compare", str(a), str(a), "--tol", "1e-9", "--column-a", "sim_aoi",
                 "--column-b", "analytic_aoi"]) == 1
    other = _spec(tmp_path, "lambda = 0.01\nsweep_axis = xi\nsweep_values = 0.4, 0.7\n", "o.cfg")
    b = tmp_path / "b.csv"
    main(["analyze", "--spec", str(other), "--out", str(b)])
    with pytest.raises(CompareError):
        compare(a, b, 0.1)
    assert main(["compare", str(a), str(b)]) == 2


def test_arrival_sweep_low_density_shape(tmp_path):
    xs = "0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0"
    path = _spec(tmp_path, f"mode = analyze\nlambda = 0.01\np = 1\nr = 0.5\nsweep_axis = xi\nsweep_values = {xs}\n")
    status, text = run(parse_spec(path))
    rows = read_results_from_text(text)
    assert status == 0 and len(rows) == 10
    vals = np.array([float(r["analytic_aoi"]) for r in rows])
    clean = [i for i, r in enumerate(rows) if not r["flags"]]
    assert clean == list(range(9))
    assert np.all(np.diff(vals[clean]) < 0)


def test_access_sweep_low_arrival_shape(tmp_path):
    ps = ", ".join(f"{v:.1f}" for v in np.arange(1, 11) / 10)
    path = _spec(tmp_path, f"mode = analyze\nlambda = 0.05\nxi = 0.25\nsweep_axis = p\nsweep_values = {ps}\n")
    status, text = run(parse_spec(path))
    vals = np.array([float(r["analytic_aoi"]) for r in read_results_from_text(text)])
    assert status == 0 and np.all(np.diff(vals) <= 0)
