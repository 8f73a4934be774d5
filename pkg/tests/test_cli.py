import json
from pathlib import Path

import numpy as np
import pytest

from chorinfd.checks import random_vector
from chorinfd.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, main
from chorinfd.grid import Box, build_grid
from chorinfd.io import read_field, write_field
from chorinfd.stepper import RunLedger

ACCEPTANCE = str(Path(__file__).resolve().parents[1] / "configs" / "acceptance.ini")


def _err(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(line)


def test_check(capsys):
    assert main(["check", "--trials", "3"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert all(r["ok"] for r in out)


def test_alpha_out_of_range(capsys):
    assert main(["grid-info", ACCEPTANCE, "--set", "discretization.alpha=3"]) == EXIT_CONFIG
    err = _err(capsys)
    assert err["exit_code"] == 2
    assert "(0, 2]" in err["message"]


def test_unknown_key(capsys):
    assert main(["grid-info", ACCEPTANCE, "--set", "solver.precond=ilu"]) == EXIT_CONFIG
    assert "solver.precond" in _err(capsys)["message"]


def test_missing_config(capsys, tmp_path):
    assert main(["run", str(tmp_path / "absent.ini")]) == EXIT_CONFIG
    assert _err(capsys)["error"] == "ConfigError"


def test_grid_info(capsys, tmp_path):
    assert main(["grid-info", ACCEPTANCE, "--dump", str(tmp_path / "g")]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["n_points"] == 1331 and info["n_interior"] == 729
    assert info["n_steps"] == 4
    assert (tmp_path / "g.bin").exists()


def test_run_then_audit(capsys, tmp_path):
    out = tmp_path / "run"
    assert main(["run", ACCEPTANCE, "--out", str(out)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps_run"] == 4
    assert main(["audit", str(out / "ledger.csv"), "--config", ACCEPTANCE]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["ok"]

    led = RunLedger.from_csv(out / "ledger.csv")
    led.rows[1]["norm_u_next"] = 10.0 * led.rows[1]["norm_u_half"]
    led.to_csv(tmp_path / "bad.csv")
    (tmp_path / "bad.meta.json").write_text((out / "ledger.meta.json").read_text())
    assert main(["audit", str(tmp_path / "bad.csv")]) == EXIT_INVARIANT
    assert _err(capsys)["exit_code"] == 4


def test_step_then_resume(capsys, tmp_path):
    out = tmp_path / "s"
    assert main(["step", ACCEPTANCE, "--out", str(out)]) == EXIT_OK
    first = json.loads(capsys.readouterr().out)
    assert first["row"]["step"] == 0
    assert Path(first["checkpoint"]).name == "step_000001.fld"
    assert main(["step", ACCEPTANCE, "--out", str(out), "--checkpoint", first["checkpoint"]]) == EXIT_OK
    second = json.loads(capsys.readouterr().out)
    assert second["row"]["step"] == 1
    assert second["row"]["norm_u"] == first["row"]["norm_u_next"]


def test_decompose(capsys, tmp_path, rng):
    g = build_grid(Box(), 1.0 / 12)
    u = random_vector(g, rng, boundary_zero=False)
    src = write_field(tmp_path / "u.fld", u)
    assert main(["decompose", str(src), "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["div_residual"] < 1e-8
    w = read_field(tmp_path / "w.fld", g)
    phi = read_field(tmp_path / "phi.fld", g)
    assert not w.values[:, g.boundary_idx].any()
    assert not phi.values[g.boundary_idx].any()
    assert np.isfinite(w.values).all()


def test_study_writes_reports(capsys, tmp_path):
    args = ["study", ACCEPTANCE, "--out", str(tmp_path), "--set", "study.levels=1/8 1/16",
            "--set", "study.dictionary=core_e1"]
    assert main(args) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"pairs", "trends", "checks"}
    for name in ("study.json", "timing.json", "levels.csv", "pairs.csv", "weak.csv"):
        assert (tmp_path / name).exists()


def test_output_dir_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("CHORINFD_OUTPUT_DIR", str(tmp_path))
    text = Path(ACCEPTANCE).read_text().replace("dir = out/acceptance\n", "")
    cfg = tmp_path / "c.ini"
    cfg.write_text(text)
    assert main(["run", str(cfg)]) == EXIT_OK
    assert (tmp_path / "ledger.csv").exists()


def test_bad_subcommand():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
