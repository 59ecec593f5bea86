import csv
import json

import numpy as np
import pytest

from sheetforce import __version__
from sheetforce.cli import load_config, main
from sheetforce.currents import CurrentPotential, load_potential, save_potential

SMALL = ["--ntheta", "16", "--nzeta", "16", "-N", "2"]


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# sheetforce {__version__} config ")
    return list(csv.DictReader(lines[1:]))


def test_force_requires_potential(tmp_path, capsys):
    assert main(["force", *SMALL, "-o", str(tmp_path)]) == 1
    assert "potential" in capsys.readouterr().err


def test_force_zero_potential_gives_zero_maps(tmp_path):
    pot = tmp_path / "zero.json"
    save_potential(CurrentPotential.zeros(2), pot)
    assert main(["force", *SMALL, "--potential", str(pot), "-o", str(tmp_path / "out")]) == 0
    rows = read_csv(tmp_path / "out" / "force_map.csv")
    assert len(rows) == 256
    assert all(float(r[k]) == 0.0 for r in rows for k in ("Fx", "Fy", "Fz", "F_normal"))
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["meta"]["version"] == __version__
    assert summary["summary"]["max_force"] == 0.0
    for name in ("current_map.csv", "bn_map.csv"):
        assert (tmp_path / "out" / name).exists()


def test_force_solenoid_is_normal_dominated(tmp_path):
    pot = tmp_path / "sol.json"
    save_potential(CurrentPotential.zeros(2, G=1e6), pot)
    assert main(["force", *SMALL, "--potential", str(pot), "-o", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "force_map.csv")
    normal = np.array([abs(float(r["F_normal"])) for r in rows])
    tangential = np.array([float(r["F_tangential"]) for r in rows])
    assert np.all(tangential < 0.05 * normal)


def test_malformed_surface_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 0 1.0 0 0 0\n1 0 0.3 oops 0 0.3\n")
    pot = tmp_path / "p.json"
    save_potential(CurrentPotential.zeros(2), pot)
    assert main(["force", "--coil", str(bad), "--potential", str(pot), "-o", str(tmp_path)]) == 1
    assert "bad.txt:2:" in capsys.readouterr().err


def test_optimize_writes_record_and_potential(tmp_path):
    out = tmp_path / "opt"
    assert main(["optimize", *SMALL, "--lambda1", "1e-15", "--max-iters", "20", "-o", str(out)]) == 0
    record = json.loads((out / "run.jsonl").read_text().splitlines()[0])
    assert record["termination"] in ("grad_tol", "max_iters")
    assert record["config"]["objective"]["lambda1"] == 1e-15
    pot = load_potential(out / "potential.json")
    assert np.array_equal(pot.coefficients, np.array(record["coefficients"]))
    assert (out / "force_map.csv").exists()


def test_scan_five_rows(tmp_path):
    values = ["1e-16", "1e-15", "1e-14", "1e-13", "1e-12"]
    assert main(["scan", *SMALL, "--weight", "lambda1", "--values", *values,
                 "--max-iters", "30", "-o", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "tradeoff.csv")
    assert [float(r["weight"]) for r in rows] == [float(v) for v in values]
    assert len((tmp_path / "runs.jsonl").read_text().splitlines()) == 5


def test_negative_weight_is_config_error(tmp_path, capsys):
    assert main(["optimize", *SMALL, "--lambda1=-1", "-o", str(tmp_path)]) == 1
    assert "lambda1" in capsys.readouterr().err
    assert main(["scan", *SMALL, "--weight", "gamma", "--values=-1e-16", "-o", str(tmp_path)]) == 1


def test_cases_make_four_directories(tmp_path):
    assert main(["cases", *SMALL, "--weights", "bundled", "--max-iters", "25",
                 "-o", str(tmp_path)]) in (0, 2)
    for name in ("case1", "case2", "case3", "case4"):
        assert (tmp_path / name / "run.jsonl").exists()
        assert (tmp_path / name / "potential.json").exists()
    assert len(read_csv(tmp_path / "cases.csv")) == 4


def test_epsconv_table(tmp_path):
    assert main(["epsconv", "--grids", "8", "12", "--eps-over-h", "4", "1", "0.25",
                 "--G", "1e6", "-o", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "epsconv.csv")
    assert len(rows) == 6 and {r["grid"] for r in rows} == {"8", "12"}
    assert main(["epsconv", "--grids", "8", "--eps-over-h", "2", "-o", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "epsconv.csv")) == 1


def test_epsconv_requires_descending(tmp_path):
    assert main(["epsconv", "--grids", "8", "--eps-over-h", "1", "4", "-o", str(tmp_path)]) == 1


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        'output = "res"\n[grid]\nntheta = 16\nnzeta = 16\n[current]\nN = 2\nG = 5e6\n'
        "[objective]\nlambda1 = 1e-15\n[optimizer]\nmax_iters = 5\n")
    loaded = load_config(cfg)
    assert loaded.N == 2 and loaded.objective["lambda1"] == 1e-15
    assert loaded.output == str(tmp_path / "res")
    assert main(["optimize", "--config", str(cfg), "--max-iters", "3"]) == 0
    record = json.loads((tmp_path / "res" / "run.jsonl").read_text())
    assert record["config"]["optimizer"]["max_iters"] == 3
    assert record["G"] == 5e6


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[objective]\nlamda1 = 1\n")
    assert main(["optimize", "--config", str(cfg)]) == 1
    assert "lamda1" in capsys.readouterr().err


def test_small_grid_is_usage_error(tmp_path):
    assert main(["optimize", "--ntheta", "3", "-o", str(tmp_path)]) == 1


def test_intersecting_surfaces_are_numerical_failure(tmp_path, capsys):
    from sheetforce.problems import data_path
    coil = data_path("plasma_ellipse.txt")
    assert main(["optimize", *SMALL, "--coil", str(coil), "-o", str(tmp_path)]) == 2
    assert "intersect" in capsys.readouterr().err


def test_unknown_subcommand_exit_code():
    with pytest.raises(SystemExit) as info:
        main(["explode"])
    assert info.value.code == 1


def test_headers_carry_config_hash(tmp_path):
    pot = tmp_path / "p.json"
    save_potential(CurrentPotential.zeros(2, G=1e6), pot)
    main(["force", *SMALL, "--potential", str(pot), "-o", str(tmp_path / "a")])
    main(["force", *SMALL, "--potential", str(pot), "--c1", "2e7", "-o", str(tmp_path / "a2")])
    h1 = (tmp_path / "a" / "force_map.csv").read_text().splitlines()[0]
    h2 = (tmp_path / "a2" / "force_map.csv").read_text().splitlines()[0]
    assert h1 != h2
