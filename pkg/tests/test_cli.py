import csv
import json

import pytest

from stipp.cli import build_parser, config_from_args, main
from stipp.envsim import load_raster_series

SMALL = ["--grid-size", "32", "--t-max", "20", "--n-sites", "5", "--n-times", "3", "--node-budget", "20",
         "--ell-s", "80", "--ell-t", "20"]


def test_flags_map_to_config(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"n_seeds": 4, "node_budget": 50}))
    args = build_parser().parse_args(
        ["suite", "--config", str(cfg_file), "--node-budget", "30", "--ell-t", "20", "100",
         "--start", "10", "20", "--no-save-artifacts", "--advection", '{"speed": 3.0}'])
    cfg = config_from_args(args)
    assert cfg.n_seeds == 4 and cfg.node_budget == 30
    assert cfg.ell_t == (20.0, 100.0) and cfg.start == (10.0, 20.0)
    assert cfg.save_artifacts is False and cfg.advection == {"speed": 3.0}
    full = config_from_args(build_parser().parse_args(["suite", "--full-scale", "--n-seeds", "2"]))
    assert full.grid_size == 500 and full.n_times == 50 and full.n_seeds == 2


def test_simulate_writes_raster(tmp_path):
    out = tmp_path / "field.txt"
    assert main(["simulate", *SMALL, "-o", str(out)]) == 0
    s = load_raster_series(out)
    assert s.shape == (21, 32, 32)


def test_plan_and_export(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["plan", *SMALL, "--planner", "iig_st", "--output-dir", str(out)]) == 0
    assert "status=ok" in capsys.readouterr().out
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["planner"] == "iig_st"
    assert (out / "episodes" / "iig_st_ls80_lt20_seed0_mission.csv").exists()
    assert main(["export", str(out), "--kind", "error_vs_time", "-o", str(tmp_path / "plots")]) == 0
    lines = (tmp_path / "plots" / "error_vs_time.csv").read_text().splitlines()
    assert len(lines) == 1 + 3


def test_suite_exit_codes(tmp_path):
    out = tmp_path / "suite"
    assert main(["suite", *SMALL, "--n-seeds", "1", "--output-dir", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["n_seeds"] == 1
    assert (out / "summary.csv").exists() and (out / "plot_data" / "trajectory.csv").exists()
    bad = ["suite", *SMALL, "--scenario", "raster", "--raster-path", str(tmp_path / "nope.txt"),
           "--n-seeds", "1", "--output-dir", str(tmp_path / "bad")]
    assert main(bad) == 1


def test_calibrate_prints_lengthscales(capsys):
    assert main(["calibrate", *SMALL, "--n-fields", "2", "--n-points", "40"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["ell_s"] > 0 and out["ell_t"] > 0


def test_bad_usage():
    with pytest.raises(SystemExit):
        main(["plan", "--planner", "rrt"])
