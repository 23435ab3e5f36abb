import csv
import json
import logging
import subprocess
import sys

import numpy as np
import pytest

from ph_shape import cli
from ph_shape.config import bundled_config_path
from ph_shape.package import ENVELOPE, MASS_CSV, POTENTIAL_CSV


def write_config(path, **simulation):
    data = json.loads(bundled_config_path("cartpole").read_text())
    data["simulation"].update({"T": 0.5, "dt_out": 0.01, **simulation})
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def short_config(tmp_path_factory):
    return write_config(tmp_path_factory.mktemp("cfg") / "cp_short.json")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory, short_config):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--config", str(short_config), "--out", str(out)]) == cli.EXIT_OK
    return out


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def test_synth_writes_package(synth_dir):
    for name in (ENVELOPE, MASS_CSV, POTENTIAL_CSV, cli.SYNTH_JSON):
        assert (synth_dir / name).is_file()
    report = json.loads((synth_dir / cli.SYNTH_JSON).read_text())
    lo, hi = report["domain"]
    assert abs(lo + 0.48) <= 0.02 and abs(hi - 0.48) <= 0.02
    assert report["ke_residual_nodes"] <= 1e-7


def test_synth_report_lines(tmp_path, short_config, capsys):
    assert cli.main(["synth", "--config", str(short_config), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "domain: [-0.48" in out
    assert "lambda_min range" in out and "max KE residual" in out
    assert "s1, s2, s3 at q_i=0: [[1.0]], [[-2.0]], [[1.0]]" in out


def test_synth_acrobot_reports_constant_target(tmp_path, capsys):
    assert cli.main(["synth", "--config", str(bundled_config_path("acrobot")), "--out", str(tmp_path)]) == 0
    line = [ln for ln in capsys.readouterr().out.splitlines() if "max deviation" in ln][0]
    assert float(line.split()[-1]) <= 1e-4


def test_synth_warns_when_s3_not_positive(tmp_path, capsys):
    data = json.loads(bundled_config_path("cartpole").read_text())
    data["synthesis"]["init"]["m_a21"] = 0.0
    cfg = tmp_path / "s3.json"
    cfg.write_text(json.dumps(data))
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "WARNING: s3(0)" in capsys.readouterr().out


def test_reruns_are_bit_identical(tmp_path, short_config, synth_dir):
    assert cli.main(["synth", "--config", str(short_config), "--out", str(tmp_path)]) == 0
    for name in (ENVELOPE, MASS_CSV, POTENTIAL_CSV):
        assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()


def test_check_passes(synth_dir, short_config, capsys):
    assert cli.main(["check", "--config", str(short_config), "--out", str(synth_dir)]) == 0
    out = capsys.readouterr().out
    assert "all checks passed" in out and "[FAIL]" not in out
    assert json.loads((synth_dir / cli.CHECK_JSON).read_text())["passed"] is True


def test_check_fails_on_perturbed_package(tmp_path, synth_dir, short_config, capsys):
    for name in (ENVELOPE, MASS_CSV, POTENTIAL_CSV):
        (tmp_path / name).write_bytes((synth_dir / name).read_bytes())
    header, body = read_rows(tmp_path / MASS_CSV)
    body[:, header.index("m_a21")] += 1e-3
    cli.write_csv(tmp_path / MASS_CSV, header, body)
    assert cli.main(["check", "--config", str(short_config), "--out", str(tmp_path)]) == cli.EXIT_PACKAGE
    assert "verification FAILED" in capsys.readouterr().out


def test_corrupt_package_exit_code(tmp_path, synth_dir, short_config, capsys):
    for name in (ENVELOPE, MASS_CSV, POTENTIAL_CSV):
        (tmp_path / name).write_bytes((synth_dir / name).read_bytes())
    (tmp_path / MASS_CSV).write_text("q_i\n", encoding="utf-8")
    assert cli.main(["check", "--config", str(short_config), "--out", str(tmp_path)]) == cli.EXIT_PACKAGE
    assert "package error" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"system": {"system": "cart-pole"}}', encoding="utf-8")
    assert cli.main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert cli.main(["synth", "--config", str(tmp_path / "none.json")]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_simulate_reduced(synth_dir, short_config, capsys):
    assert cli.main(["simulate", "--config", str(short_config), "--out", str(synth_dir)]) == 0
    summary = json.loads((synth_dir / cli.SUMMARY_JSON).read_text())
    assert summary["H_d_monotone"] == "PASS" and summary["status"] == "success"
    assert summary["kappa"] == 5.0 and summary["kd"] == [[5.0]]
    header, body = read_rows(synth_dir / cli.TRAJECTORY_CSV)
    assert header == ["t", "q1", "q2", "p1", "p2", "u1", "H_d"] and body.shape == (51, 7)


def test_simulate_interconnected(tmp_path, synth_dir, short_config):
    for name in (ENVELOPE, MASS_CSV, POTENTIAL_CSV):
        (tmp_path / name).write_bytes((synth_dir / name).read_bytes())
    args = ["simulate", "--config", str(short_config), "--out", str(tmp_path), "--mode", "interconnected"]
    assert cli.main(args) == 0
    summary = json.loads((tmp_path / cli.SUMMARY_JSON).read_text())
    assert summary["casimir_drift"] == "PASS" and summary["max_casimir_drift"] <= 1e-6


def test_simulate_domain_exit(tmp_path, synth_dir, capsys):
    cfg = write_config(tmp_path / "fast.json", p0=[0.0, 2.0], T=2.0)
    for name in (ENVELOPE, MASS_CSV, POTENTIAL_CSV):
        (tmp_path / name).write_bytes((synth_dir / name).read_bytes())
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_DOMAIN
    assert "domain exit" in capsys.readouterr().out
    _, body = read_rows(tmp_path / cli.TRAJECTORY_CSV)
    assert 0 < body.shape[0] < 201


def test_initial_state_outside_domain(tmp_path, synth_dir):
    cfg = write_config(tmp_path / "far.json", q0=[0.0, 0.6])
    for name in (ENVELOPE, MASS_CSV, POTENTIAL_CSV):
        (tmp_path / name).write_bytes((synth_dir / name).read_bytes())
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_DOMAIN


def test_export_writes_figure_data(tmp_path, short_config):
    assert cli.main(["export", "--config", str(short_config), "--out", str(tmp_path)]) == 0
    for name in cli.EXPORT_FILES.values():
        assert (tmp_path / name).is_file()
    header, mass = read_rows(tmp_path / cli.EXPORT_FILES["mass"])
    assert header == ["q_i", "m_a11", "m_a21", "m_a22", "lambda_min"]
    header, vm = read_rows(tmp_path / cli.EXPORT_FILES["vm"])
    assert header == ["q_i", "V_m"] and vm.shape[0] == mass.shape[0]
    header, sim = read_rows(tmp_path / cli.EXPORT_FILES["sim"])
    assert header == ["t", "q1", "q2", "p1", "p2", "H_d"] and sim.shape[0] == 51


def test_export_potential_grid_has_unique_minimum_at_origin(tmp_path, short_config):
    assert cli.main(["export", "--config", str(short_config), "--out", str(tmp_path)]) == 0
    header, grid = read_rows(tmp_path / cli.EXPORT_FILES["vd"])
    assert header == ["q1", "q2", "V_d", "log10_V_d"]
    assert grid.shape == (cli.VD_POINTS ** 2, 4)
    k = int(np.argmin(grid[:, 2]))
    assert np.array_equal(grid[k, :2], [0.0, 0.0])
    assert np.sum(grid[:, 2] == grid[k, 2]) == 1
    assert grid[k, 3] == pytest.approx(-12.0)


def test_export_empty_trajectory(tmp_path, synth_dir, short_config):
    empty = tmp_path / "empty.csv"
    empty.write_text("t,q1,q2,p1,p2,u1,H_d\n", encoding="utf-8")
    for name in (ENVELOPE, MASS_CSV, POTENTIAL_CSV):
        (tmp_path / name).write_bytes((synth_dir / name).read_bytes())
    args = ["export", "--config", str(short_config), "--out", str(tmp_path), "--trajectory", str(empty)]
    assert cli.main(args) == 0
    assert (tmp_path / cli.EXPORT_FILES["sim"]).read_text() == "t,q1,q2,p1,p2,H_d\n"


def test_log_levels():
    cli.configure_logging({"PH_SHAPE_LOG": "debug"})
    assert logging.getLogger().level == logging.DEBUG
    cli.configure_logging({"PH_SHAPE_LOG": "error"})
    assert logging.getLogger().level == logging.ERROR
    cli.configure_logging({})
    assert logging.getLogger().level == logging.WARNING


def test_unknown_log_level_falls_back(capsys):
    cli.configure_logging({"PH_SHAPE_LOG": "chatty"})
    assert logging.getLogger().level == logging.WARNING
    assert "not recognised" in capsys.readouterr().err


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "ph_shape.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("synth", "check", "simulate", "export"):
        assert name in res.stdout


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as err:
        cli.main([])
    assert err.value.code == 2
