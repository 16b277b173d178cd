import json
from pathlib import Path

import numpy as np
import pytest

from sparsign import analysis, cli

DATA = Path(__file__).parent / "data"

QUAD_SPEC = {
    "version": 1,
    "name": "quad_golden",
    "problem": {"type": "quadratic", "workers": 4, "dim": 3, "spread": 1.0, "init": 2.0},
    "run": {"algorithm": "alg1", "rounds": 5, "sample_size": 2,
            "compressor": {"kind": "sparsign", "budget": 0.5}, "eta": 0.1, "track_kappa": True},
    "repeats": 2,
    "master_seed": 11,
    "output_path": "unused",
}


def write_spec(tmp_path, spec, name="spec.json"):
    path = tmp_path / name
    path.write_text(json.dumps(spec, indent=2))
    return str(path)


def test_csv_header_is_pinned():
    assert cli.CSV_HEADER == "round,objective,wrong_agg_fraction,grad_l1,uplink_bits,downlink_bits,kappa_mean"


def test_golden_run(tmp_path):
    code = cli.main(["run", write_spec(tmp_path, QUAD_SPEC), "--out", str(tmp_path / "out")])
    assert code == 0
    produced = (tmp_path / "out" / "quad_golden_r0.csv").read_text()
    assert produced == (DATA / "quad_golden_r0.csv").read_text()


def test_identical_runs_are_byte_identical(tmp_path):
    spec = write_spec(tmp_path, QUAD_SPEC)
    cli.main(["run", spec, "--out", str(tmp_path / "a")])
    cli.main(["run", spec, "--out", str(tmp_path / "b"), "--jobs", "2"])
    for name in ("quad_golden_r0.csv", "quad_golden_r1.csv", "quad_golden_summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "quad_golden_r0.csv").read_bytes() != (tmp_path / "a" / "quad_golden_r1.csv").read_bytes()


def test_seed_override_changes_output(tmp_path):
    spec = write_spec(tmp_path, QUAD_SPEC)
    cli.main(["run", spec, "--out", str(tmp_path / "a")])
    cli.main(["run", spec, "--out", str(tmp_path / "b"), "--seed", "12"])
    assert (tmp_path / "a" / "quad_golden_r0.csv").read_bytes() != (tmp_path / "b" / "quad_golden_r0.csv").read_bytes()


def test_summary_contents(tmp_path):
    cli.main(["run", write_spec(tmp_path, QUAD_SPEC), "--out", str(tmp_path)])
    lines = (tmp_path / "quad_golden_summary.txt").read_text().splitlines()
    entries = dict(line.split("=", 1) for line in lines)
    assert entries["repeats"] == "2"
    assert entries["repeat.1.csv"] == "quad_golden_r1.csv"
    assert "aggregate.final_objective.mean" in entries


def test_round_trip():
    spec = cli.ExperimentSpec.from_dict(QUAD_SPEC)
    again = cli.ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again == spec
    assert again.to_dict() == spec.to_dict()


@pytest.mark.parametrize("name", ["rosenbrock_sign.json", "rosenbrock_sparsign_b001.json", "rosenbrock_sparsign_b01.json"])
def test_bundled_specs_round_trip(name):
    text, _ = cli.load_spec_text(name)
    spec = cli.parse_spec(text)
    assert cli.ExperimentSpec.from_dict(spec.to_dict()) == spec


def test_bundled_sign_spec(tmp_path):
    assert cli.main(["run", "rosenbrock_sign.json", "--out", str(tmp_path)]) == 0
    rows = np.genfromtxt(tmp_path / "rosenbrock_sign_r0.csv", delimiter=",", names=True)
    assert np.all(rows["wrong_agg_fraction"] == 1.0)


def test_bundled_sparsign_spec(tmp_path):
    assert cli.main(["run", "rosenbrock_sparsign_b001.json", "--out", str(tmp_path)]) == 0
    for k in range(10):
        rows = np.genfromtxt(tmp_path / f"rosenbrock_sparsign_b001_r{k}.csv", delimiter=",", names=True)
        assert rows["wrong_agg_fraction"].mean() < 0.5
    entries = dict(l.split("=", 1) for l in (tmp_path / "rosenbrock_sparsign_b001_summary.txt").read_text().splitlines())
    for k in range(10):
        assert float(entries[f"repeat.{k}.final_objective"]) < float(entries[f"repeat.{k}.initial_objective"])


def test_parse_error_reports_location(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "version": 1,\n  "name": oops\n}')
    assert cli.main(["run", str(path)]) == cli.EXIT_PARSE
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize(
    "mutate",
    [
        lambda s: s.update(extra=1),
        lambda s: s["run"].update(learning_rate=0.1),
        lambda s: s["problem"].update(alpha=0.1),
        lambda s: s["run"]["compressor"].update(bugdet=0.1),
        lambda s: s.pop("run"),
        lambda s: s.update(version=2),
        lambda s: s["run"].update(rounds="5"),
        lambda s: s["problem"].update(type="mnist"),
    ],
)
def test_schema_errors(tmp_path, mutate, capsys):
    spec = json.loads(json.dumps(QUAD_SPEC))
    mutate(spec)
    assert cli.main(["run", write_spec(tmp_path, spec)]) == cli.EXIT_PARSE
    assert "spec error" in capsys.readouterr().err


@pytest.mark.parametrize(
    "mutate",
    [
        lambda s: s["run"].update(sample_size=9),
        lambda s: s.update(repeats=0),
        lambda s: s["run"]["compressor"].update(budget=-1.0),
    ],
)
def test_invariant_errors(tmp_path, mutate):
    spec = json.loads(json.dumps(QUAD_SPEC))
    mutate(spec)
    assert cli.main(["run", write_spec(tmp_path, spec)]) == cli.EXIT_INVARIANT


def test_numeric_failure(tmp_path):
    spec = json.loads(json.dumps(QUAD_SPEC))
    spec["run"] = {"algorithm": "alg1", "rounds": 200, "sample_size": 4, "compressor": {"kind": "identity"},
                   "server_rule": "mean", "eta": 1e6}
    spec["repeats"] = 1
    with np.errstate(over="ignore", invalid="ignore"):
        assert cli.main(["run", write_spec(tmp_path, spec), "--out", str(tmp_path)]) == cli.EXIT_NUMERIC


def test_missing_file():
    assert cli.main(["run", "/nonexistent/spec.json"]) == cli.EXIT_PARSE


def test_bound_check_bundled_sweep(tmp_path):
    out = tmp_path / "table.csv"
    assert cli.main(["bound-check", "bound_check_sweep.json", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "p_bar,q_bar,M,exact_prob,bound,slack,status"
    assert len(lines) == 1 + 9 * 8
    assert all(float(l.split(",")[5]) >= 0 for l in lines[1:])


def test_bound_check_distributions(tmp_path, capsys):
    spec = {"version": 1, "mode": "distributions",
            "distributions": [{"p": [0.0], "q": [1.0]}, {"p": [0.5, 0.3], "q": [0.2, 0.4]}]}
    assert cli.main(["bound-check", write_spec(tmp_path, spec)]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[1] == "0,1,1,0,0,0,ok"
    assert rows[2].endswith("hypothesis violated")


def test_bound_check_reports_violation(tmp_path, monkeypatch):
    monkeypatch.setattr(analysis, "theorem1_bound", lambda p, q, m: 0.0)
    spec = {"version": 1, "mode": "sweep", "p_bar": [0.1], "q_offset": 0.1, "workers": [3]}
    assert cli.main(["bound-check", write_spec(tmp_path, spec)]) == cli.EXIT_VIOLATION


def test_bound_check_rejects_infeasible(tmp_path):
    spec = {"version": 1, "mode": "distributions", "distributions": [{"p": [0.7], "q": [0.6]}]}
    assert cli.main(["bound-check", write_spec(tmp_path, spec)]) == cli.EXIT_INVARIANT
    spec = {"version": 1, "mode": "sweep", "p_bar": [0.1], "q_offset": 0.1, "workers": [3], "bogus": 1}
    assert cli.main(["bound-check", write_spec(tmp_path, spec)]) == cli.EXIT_PARSE
