import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from shs_aoi.cli import main

YAML_MODEL = """
name: one-link
n: 1
states:
  - {id: 0, drift: [1]}
transitions:
  - source: 0
    target: 0
    rate:
      - {exponents: [1], coefficient: 100.0}
    reset: {constant: [0.0]}
"""


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_solve_illustrative(tmp_path):
    res = invoke("solve", "--model", "illustrative", "--a1", 100, "--order", 100, "--out", tmp_path)
    assert res.exit_code == 0
    value = float(res.output.split("avg age x0:")[1].split()[0])
    assert value == pytest.approx(0.0798, rel=0.01)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "solve" and manifest["options"]["order"] == 100
    assert (tmp_path / "moments.csv").exists() and (tmp_path / "estimates.csv").exists()


def test_solve_auto_scale(tmp_path):
    res = invoke("solve", "--model", "illustrative", "--a1", 0.1, "--order", 40, "--scale", "auto", "--out", tmp_path)
    assert res.exit_code == 0 and "scale: 6" in res.output


def test_solve_from_config(tmp_path):
    path = tmp_path / "m.yaml"
    path.write_text(YAML_MODEL)
    res = invoke("solve", "--config", path, "--order", 40, "--out", tmp_path / "o")
    assert res.exit_code == 0
    assert float(res.output.split("avg age x0:")[1].split()[0]) == pytest.approx(0.0798, rel=0.01)


def test_simulate_is_deterministic(tmp_path):
    args = ("simulate", "--model", "illustrative", "--a1", 100, "--events", "1e5", "--seed", 7)
    a = invoke(*args, "--out", tmp_path / "a")
    b = invoke(*args, "--out", tmp_path / "b")
    assert a.exit_code == 0 and a.output == b.output
    assert (tmp_path / "a" / "stats.csv").read_bytes() == (tmp_path / "b" / "stats.csv").read_bytes()


def test_simulate_event_log(tmp_path):
    res = invoke("simulate", "--model", "csma", "--a", "1,1", "--H", "1,1", "--events", 1000,
                 "--log-events", 20, "--out", tmp_path)
    assert res.exit_code == 0 and "support violations: 0" in res.output
    rows = list(csv.reader(open(tmp_path / "events.csv")))
    assert len(rows) == 21


def test_sweep_writes_estimates(tmp_path):
    res = invoke("sweep", "--model", "illustrative", "--a1", 100, "--orders", "4:20", "--out", tmp_path)
    assert res.exit_code == 0
    rows = list(csv.DictReader(open(tmp_path / "estimates.csv")))
    assert len(rows) >= 17


def test_optimize_trace_nonincreasing(tmp_path):
    res = invoke("optimize", "--model", "csma", "--n", 2, "--H", "1,1", "--box", "0.1:10", "--out", tmp_path)
    assert res.exit_code == 0
    rows = list(csv.DictReader(open(tmp_path / "trace.csv")))
    obj = np.array([float(r["objective"]) for r in rows])
    assert np.all(np.diff(obj) <= 1e-10)


def test_compare_fixed_parameters(tmp_path):
    res = invoke("compare", "--H", "1,1", "--a", "3,3", "--r", "3,3", "--out", tmp_path)
    assert res.exit_code == 0 and "gain=" in res.output
    assert (tmp_path / "gain.csv").exists()


def test_reproduce_fig4_passes_on_expected_failure(tmp_path):
    res = invoke("reproduce", "fig4", "--out", tmp_path)
    assert res.exit_code == 0 and "PASS" in res.output


@pytest.mark.parametrize(
    "args",
    [
        ("solve", "--model", "nope"),
        ("solve",),
        ("solve", "--model", "csma", "--a", "1,x", "--H", "1,1"),
        ("solve", "--model", "csma", "--a", "1,1", "--H", "1"),
        ("solve", "--config", "/does/not/exist.yaml"),
        ("optimize", "--model", "csma", "--box", "1-2"),
        ("reproduce", "table9"),
        ("simulate", "--model", "illustrative", "--events", "-5"),
    ],
)
def test_invalid_input_exit_code(args, tmp_path):
    res = CliRunner().invoke(main, list(args) + ["--out", str(tmp_path)])
    assert res.exit_code == 2, res.output


def test_bad_config_key(tmp_path):
    path = tmp_path / "m.yaml"
    path.write_text(YAML_MODEL + "bogus: 1\n")
    res = CliRunner().invoke(main, ["solve", "--config", str(path), "--out", str(tmp_path)])
    assert res.exit_code == 2
