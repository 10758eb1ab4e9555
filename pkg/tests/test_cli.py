import json
import subprocess
import sys

import numpy as np
import pytest

from fracdelay import cli
from fracdelay.model import ValidationError

ENSEMBLE_41 = ["sin", "cos", "neg_cos", "const:1.5"]
ENSEMBLE_42 = ["linear", "cos", "neg_cos", "const:1.5"]


def write_config(tmp_path, **kw):
    data = {"problem": "example_4_1", "phis": ENSEMBLE_41,
            "solver": {"dt": 2.0 ** -5, "T": 5.0}, "output_dir": str(tmp_path / "out")}
    data.update(kw)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


def test_run_writes_expected_files(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["pairwise.csv", "report.txt", "traj_const_1.5.csv", "traj_cos.csv",
                     "traj_neg_cos.csv", "traj_sin.csv"]
    header = (out / "pairwise.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["t", "max_pairwise"] and len(header) == 2 + 6
    report = (out / "report.txt").read_text()
    assert "contraction_bound = 0.667966" in report
    assert "holds = yes" in report
    assert "[gronwall]" in report and "sin|cos" in report


def test_report_example_4_2(tmp_path):
    cfg = write_config(tmp_path, problem="example_4_2", phis=ENSEMBLE_42)
    assert cli.main(["run", str(cfg)]) == 0
    report = (tmp_path / "out" / "report.txt").read_text()
    assert "status = not applicable" in report
    assert "[kernel_decay_k2]" in report
    assert "decaying = yes" in report


def test_zero_phis_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, phis=[])
    assert cli.main(["run", str(cfg)]) != 0
    assert "ValidationError" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("patch", [
    {"problem": "example_9"},
    {"problem": {"alpha": 1.5, "beta": 1.0, "t0": 0.0, "h": 1.0, "rhs": "example_4_1"}},
    {"problem": {"alpha": 0.5, "beta": -1.0, "t0": 0.0, "h": 1.0, "rhs": "example_4_1"}},
    {"problem": {"alpha": 0.5, "beta": 1.0, "t0": 0.0, "h": 1.0, "rhs": "exp"}},
    {"problem": {"alpha": 0.5, "beta": 1.0, "t0": 0.0}},
    {"phis": ["sin", "sin"]},
    {"phis": ["tan"]},
    {"phis": "sin"},
    {"solver": {"dt": 0.3, "T": 5.0}},
    {"solver": {"dt": 0.25, "T": 5.1}},
    {"solver": {"dt": -1.0}},
    {"solver": {"method": "rk4"}},
    {"solver": {"corrector_sweeps": 0}},
    {"solver": {"tolerance": 1}},
    {"analysis": {"eps_list": [0.0]}},
])
def test_config_violations_are_named_errors(patch):
    data = {"problem": "example_4_1", "phis": ENSEMBLE_41, "solver": {"dt": 0.125, "T": 2.0}}
    data.update(patch)
    with pytest.raises(ValidationError):
        cli.parse_config(data)


def test_bad_json_is_validation_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        cli.load_config(p)


def test_overrides(tmp_path):
    cfg = cli.load_config(write_config(tmp_path), {"dt": 0.0625, "T": 3.0, "method": "picard", "seed": 9})
    assert (cfg.solver.dt, cfg.solver.T, cfg.solver.method, cfg.seed) == (0.0625, 3.0, "picard", 9)


def test_inline_problem(tmp_path):
    cfg = write_config(tmp_path, problem={"alpha": 0.3, "beta": 2.0, "t0": 0.0, "h": 0.5,
                                          "rhs": "delay_linear:0.2", "name": "mine"},
                       phis=["const:1", "cos"])
    assert cli.main(["run", str(cfg)]) == 0
    assert "name = mine" in (tmp_path / "out" / "report.txt").read_text()


def test_csv_round_trip(tmp_path):
    cfg = write_config(tmp_path)
    cli.main(["run", str(cfg)])
    conf = cli.load_config(cfg)
    from fracdelay.model import history_from_name
    from fracdelay.solver import solve

    p = conf.build_problem(history_from_name("cos"))
    traj = solve(p, conf.solver).trajectory
    t, y = cli.read_trajectory_csv(tmp_path / "out" / "traj_cos.csv")
    assert np.array_equal(t, traj.times)
    assert np.array_equal(y, traj.values)


def test_run_is_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    cli.main(["run", str(cfg)])
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    cli.main(["run", str(cfg)])
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert first == second


def test_report_command(tmp_path, capsys):
    cfg = write_config(tmp_path)
    cli.main(["run", str(cfg)])
    capsys.readouterr()
    assert cli.main(["report", str(tmp_path / "out")]) == 0
    assert capsys.readouterr().out == (tmp_path / "out" / "report.txt").read_text()
    assert cli.main(["report", str(tmp_path / "missing")]) != 0


def test_picard_method_report(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.main(["run", str(cfg), "--method", "picard"]) == 0
    assert "[picard]" in (tmp_path / "out" / "report.txt").read_text()


def test_failed_run_leaves_no_outputs(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)

    def boom(*a, **k):
        from fracdelay.solver import SolverError
        raise SolverError(1.0, float("nan"))

    monkeypatch.setattr(cli.solver, "solve", boom)
    assert cli.main(["run", str(cfg)]) != 0
    out = tmp_path / "out"
    assert not out.exists() or not any(out.iterdir())


def test_selftest_passes_and_is_deterministic(capsys):
    assert cli.main(["selftest"]) == 0
    first = capsys.readouterr().out
    assert "FAIL" not in first
    cli.main(["selftest"])
    assert capsys.readouterr().out == first


def test_selftest_catches_perturbed_gamma(capsys):
    assert cli.main(["selftest", "--perturb-gamma", "1e-6"]) != 0
    out = capsys.readouterr().out
    assert "FAIL  gamma(0.5)" in out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fracdelay", "run", str(tmp_path / "nope.json")],
                         capture_output=True, text=True)
    assert res.returncode != 0
    assert "error" in res.stderr
