import json

import pytest
from click.testing import CliRunner

from wildflow.cli import admissible_beta, main


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, list(args), catch_exceptions=False)


def test_ledger_writes_tables(runner, tmp_path):
    res = invoke(runner, "ledger", "--out", str(tmp_path), "--qmax", "20")
    assert res.exit_code == 0, res.output
    for name in ("admissibility.csv", "margins.csv", "schedule.csv", "dimension.csv", "summary.jsonl", "manifest.json"):
        assert (tmp_path / name).is_file()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["notes"]["certified"] is True
    assert man["options"]["q_max"] == 20


def test_ledger_is_deterministic(runner, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    invoke(runner, "ledger", "--out", str(a), "--qmax", "15")
    invoke(runner, "ledger", "--out", str(b), "--qmax", "15")
    for name in ("margins.csv", "schedule.csv", "summary.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_unknown_config_key_exits_2(runner, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nbeta = 0.2\nbogus = 1\n")
    res = runner.invoke(main, ["ledger", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    assert "bogus" in res.output


def test_inadmissible_exponents_exit_2(runner, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nbeta = 0.2\ngamma = 0.3\nb = 1.5\nsigma = 0.5\nalpha = 0.01\n")
    res = runner.invoke(main, ["ledger", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2


def test_partial_exponents_rejected(runner, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nb = 1.1\n")
    res = runner.invoke(main, ["ledger", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2 and "sigma" in res.output


def test_dimension_command(runner, tmp_path):
    res = invoke(runner, "dimension", "--out", str(tmp_path))
    assert res.exit_code == 0
    rec = json.loads((tmp_path / "summary.jsonl").read_text())
    assert rec["dimension_bound"] >= rec["dimension_target"] - 1e-12


def test_operators_small_grid(runner, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nsamples = 2\n")
    res = invoke(runner, "operators", "--config", str(cfg), "--grid", "16", "--seed", "3", "--out", str(tmp_path / "o"))
    assert res.exit_code == 0, res.output
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["seed"] == 3 and man["options"]["n"] == 16


def test_mikado_check_small(runner, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nsamples = 2\npoints = 200\nK = 4\n")
    res = invoke(runner, "mikado-check", "--config", str(cfg), "--out", str(tmp_path))
    assert res.exit_code == 0, res.output
    assert (tmp_path / "mikado_table.npz").is_file()


def test_report_on_missing_run(runner, tmp_path):
    res = runner.invoke(main, ["report", "--out", str(tmp_path / "nothing")])
    assert res.exit_code == 2
    res = runner.invoke(main, ["report"])
    assert res.exit_code == 2


def test_report_on_ledger_run(runner, tmp_path):
    invoke(runner, "ledger", "--out", str(tmp_path), "--qmax", "10")
    src = (tmp_path / "manifest.json").read_bytes()
    res = invoke(runner, "report", "--out", str(tmp_path))
    assert res.exit_code == 0, res.output
    assert (tmp_path / "manifest.json").read_bytes() == src
    summary = json.loads((tmp_path / "report" / "summary.jsonl").read_text())
    assert summary["source_certified"] is True
    assert summary["beta_cap"] == pytest.approx(1 / 3)


def test_admissible_beta_ranges():
    # at 1/p = 2/3 the constraint degenerates to beta_tilde <= 1/3
    assert admissible_beta(2 / 3, 0.3, 0.3) == (0.0, pytest.approx(1 / 3))
    assert admissible_beta(2 / 3, 0.4, 0.3) is None
    lo, hi = admissible_beta(0.2, 0.2, 0.3)
    # 0.2 <= 0.1 + 0.7 beta  gives beta >= 1/7
    assert lo == pytest.approx(1 / 7) and hi == pytest.approx(1 / 3)
    assert admissible_beta(0.2, 0.9, 0.3) is None
