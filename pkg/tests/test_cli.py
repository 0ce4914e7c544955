import json

import pytest

from sgfio.cli import ConfigError, load_config, main, run


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


SMALL_GRID = {"lx": 4, "lxi": 4, "nx": 33, "nxi": 33}


def test_load_config_defaults(tmp_path):
    cfg = load_config({"subcommand": "verify", "phase": "x*xi"})
    assert cfg.subcommand == "verify"
    assert cfg.tolerances["shooting"] == 1e-10
    assert cfg.payload == {"phase": "x*xi"}


def test_load_config_rejects_unknown_subcommand():
    with pytest.raises(ConfigError):
        load_config({"subcommand": "frobnicate"})


def test_load_config_rejects_unknown_tolerance():
    with pytest.raises(ConfigError) as info:
        load_config({"subcommand": "verify", "tolerances": {"bogus": 1.0}})
    assert "tolerances.bogus" in str(info.value)


def test_load_config_rejects_bad_tolerance_value():
    with pytest.raises(ConfigError):
        load_config({"subcommand": "verify",
                     "tolerances": {"shooting": -1.0}})


def test_out_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("SGFIO_OUT", str(tmp_path / "env_dir"))
    cfg = load_config({"subcommand": "verify", "out": "cfg_dir"})
    assert cfg.out.endswith("env_dir")
    cfg = load_config({"subcommand": "verify", "out": "cfg_dir"},
                      out_override=str(tmp_path / "cli_dir"))
    assert cfg.out.endswith("cli_dir")


def test_verify_subcommand_minimal(tmp_path):
    code = run({"subcommand": "verify", "phase": "x*xi",
                "grid": SMALL_GRID}, out_override=str(tmp_path))
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] is True
    assert report["certificate"]["tau"] == 0.0
    assert report["certificate"]["r"] == 1.0


def test_verify_fails_for_bad_phase(tmp_path):
    code = run({"subcommand": "verify", "phase": "x*xi^3",
                "grid": SMALL_GRID}, out_override=str(tmp_path))
    assert code == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] is False


def test_eikonal_subcommand_writes_artifacts(tmp_path):
    code = run({"subcommand": "eikonal",
                "symbol": {"expr": "ang(xi)", "order": [0, 1]},
                "time": {"t": 0.05, "s": 0.0},
                "grid": SMALL_GRID}, out_override=str(tmp_path))
    assert code == 0
    assert (tmp_path / "phase.csv").exists()
    header = (tmp_path / "phase.csv").read_text().splitlines()[0]
    assert header == "t,s,x,xi,phi,phix,phixi"


def test_eikonal_closed_form_in_csv(tmp_path):
    import numpy as np
    run({"subcommand": "eikonal",
         "symbol": {"expr": "ang(xi)", "order": [0, 1]},
         "time": {"t": 0.05, "s": 0.0},
         "grid": SMALL_GRID}, out_override=str(tmp_path))
    rows = (tmp_path / "phase.csv").read_text().splitlines()[1:]
    worst = 0.0
    for row in rows:
        t, s, x, xi, phi, _, _ = map(float, row.split(","))
        expected = x * xi + (t - s) * np.sqrt(1 + xi * xi)
        worst = max(worst, abs(phi - expected))
    assert worst <= 1e-6


def test_numerical_failure_exit_code(tmp_path):
    code = run({"subcommand": "eikonal",
                "symbol": {"expr": "x^3*xi", "order": [3, 1]},
                "time": {"t": 2.0, "s": 0.0},
                "grid": {"lx": 4, "lxi": 4, "nx": 9, "nxi": 9},
                "tolerances": {"ode_step": 0.02}},
               out_override=str(tmp_path))
    assert code == 3
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["error"]["type"] == "ShootingError"


def test_multiprod_subcommand(tmp_path):
    code = run({"subcommand": "multiprod",
                "chain": ["x*xi + 0.02*xi", "x*xi + 0.03*xi"],
                "grid": {"lx": 4, "lxi": 4, "nx": 65, "nxi": 65}},
               out_override=str(tmp_path))
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["tau0"] <= 0.06
    assert (tmp_path / "product.csv").exists()


def test_invert_subcommand(tmp_path):
    code = run({"subcommand": "invert",
                "phase": {"kind": "expr", "phase": "x*xi + 0.02*xi"},
                "grid": {"lx": 12, "lxi": 12, "nx": 128, "nxi": 128}},
               out_override=str(tmp_path))
    assert code == 0


def test_cli_main_entrypoint(tmp_path):
    cfg = write_config(tmp_path, "verify.json",
                       {"subcommand": "verify", "phase": "x*xi",
                        "grid": SMALL_GRID})
    code = main(["verify", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 0


def test_cli_main_subcommand_mismatch(tmp_path):
    cfg = write_config(tmp_path, "verify.json",
                       {"subcommand": "verify", "phase": "x*xi"})
    code = main(["eikonal", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 2


def test_cli_missing_config_file(tmp_path):
    code = main(["verify", "--config", str(tmp_path / "nope.json")])
    assert code == 2


def test_serial_reruns_byte_identical(tmp_path):
    cfg = {"subcommand": "eikonal",
           "symbol": {"expr": "ang(xi)", "order": [0, 1]},
           "time": {"t": 0.05, "s": 0.0},
           "grid": SMALL_GRID}
    run(cfg, out_override=str(tmp_path / "a"), serial=True)
    run(cfg, out_override=str(tmp_path / "b"), serial=True)
    ra = (tmp_path / "a" / "report.json").read_bytes()
    rb = (tmp_path / "b" / "report.json").read_bytes()
    assert ra == rb
    ca = (tmp_path / "a" / "phase.csv").read_bytes()
    cb = (tmp_path / "b" / "phase.csv").read_bytes()
    assert ca == cb


def test_plots_emitted_when_requested(tmp_path):
    code = run({"subcommand": "eikonal",
                "symbol": {"expr": "ang(xi)", "order": [0, 1]},
                "time": {"t": 0.05, "s": 0.0},
                "grid": SMALL_GRID, "plots": True},
               out_override=str(tmp_path))
    assert code == 0
    svg = (tmp_path / "phase_perturbation.svg").read_text()
    assert svg.lstrip().startswith("<?xml")


def test_hyperbolic_subcommand_closed_form(tmp_path):
    # transport against its in-run closed form G(x - c t)
    code = run({"subcommand": "hyperbolic",
                "lambdas": [{"expr": "0.5*xi", "order": [0, 1]}],
                "eps": 0.0,
                "time": {"t0": 0.1, "steps": 8},
                "grid": {"lx": 12, "lxi": 12, "nx": 96, "nxi": 96},
                "initial": ["exp(-x^2/2)"],
                "closed_form": ["exp(-(x - 0.5*t)^2/2)"],
                "tolerances": {"reference_match": 1e-3}},
               out_override=str(tmp_path))
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["closed_form_relative_l2"] <= 1e-3
    assert (tmp_path / "solution_t008.csv").exists()
