import json

import pytest
from qtopc import _cli

pytestmark = pytest.mark.usefixtures("restore_logger")


def test_bounds_command(capsys):
    assert _cli.main(["bounds", "--log-level", "WARNING", "--delta-bar", "0", "--gamma-bar", "0.01"]) == _cli.EXIT_OK
    result = json.loads(capsys.readouterr().out)

    assert result["stability"]["eps_bar"] == pytest.approx(0.01)
    assert result["stability"]["prop2"]["satisfied"] is False
    assert result["floors"]["general"]["value"] == pytest.approx(0.99)
    assert "depolarizing-2lvl/table" in result["floors"]
    assert "appendix-A" not in result["floors"]
    assert result["convergence_rate"] == pytest.approx(0.01)
    assert 0.0 <= result["target_probability_floor"] <= 1.0


def test_bounds_command_three_levels(capsys):
    assert _cli.main(["bounds", "--log-level", "WARNING", "--dim", "3", "--gamma-bar", "0.1"]) == _cli.EXIT_OK
    floors = json.loads(capsys.readouterr().out)["floors"]
    assert "closed-2lvl" not in floors
    assert floors["depolarizing-Nlvl"]["valid"] is True


def test_bounds_without_rate(capsys):
    assert _cli.main(["bounds", "--log-level", "ERROR", "--gamma-bar", "3"]) == _cli.EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["convergence_rate"] is None
    assert result["target_probability_floor"] is None


def test_errors(capsys, tmp_path):
    assert _cli.main(["reproduce", "fig9", "--log-level", "WARNING"]) == _cli.EXIT_ERROR
    assert "Unknown identifier" in capsys.readouterr().err

    assert _cli.main(["montecarlo", "--runs", "0", "--log-level", "WARNING"]) == _cli.EXIT_ERROR
    assert capsys.readouterr().err.startswith("qtopc: error:")

    assert _cli.main(["montecarlo", "--config", str(tmp_path / "missing.ini")]) == _cli.EXIT_ERROR
    assert _cli.main(["bounds", "--log-level", "LOUD"]) == _cli.EXIT_ERROR

    with pytest.raises(SystemExit):
        _cli.main(["teleport"])


def test_qtopc_command(capsys, tmp_path):
    argv = ["qtopc", "--log-level", "WARNING", "--mode", "forced-nominal", "--out", str(tmp_path)]
    assert _cli.main(argv) == _cli.EXIT_OK
    assert capsys.readouterr().out.startswith("final infidelity = ")
    assert (tmp_path / "summary.json").is_file()


def test_config_file_and_flags(capsys, tmp_path):
    ini = tmp_path / "qtopc.ini"
    ini.write_text(f"[campaign]\nmode = forced-nominal\nout = {tmp_path / 'from-file'}\n")
    argv = ["montecarlo", "--log-level", "WARNING", "--config", str(ini), "--out", str(tmp_path / "from-flag")]
    assert _cli.main(argv) == _cli.EXIT_OK
    assert "over 1 run(s)" in capsys.readouterr().out
    assert (tmp_path / "from-flag" / "summary.json").is_file()
    assert not (tmp_path / "from-file").exists()


def test_simulate_command(capsys, tmp_path):
    assert _cli.main(["simulate", "--log-level", "WARNING", "--out", str(tmp_path)]) == _cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "time,fidelity,purity"
    assert lines[1].startswith("0.0,")
    assert lines[-1].startswith("t_f = ")
    assert lines[:-1] == (tmp_path / "simulation.csv").read_text().splitlines()
