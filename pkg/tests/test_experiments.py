import json

import numpy as np
import pytest
from qtopc import _experiments
from qtopc._base import ConfigError, InvariantViolation
from qtopc._config import ExperimentConfig
from qtopc._operators import SIGMA_X, SIGMA_Z


def read_files(root):
    return {path.relative_to(root): path.read_bytes() for path in sorted(root.rglob("*")) if path.is_file()}


def test_presets():
    two = _experiments.two_level_system()
    assert two.dim == 2
    assert two.channel_for("auto", 0.1).name == "sigma_y"
    assert two.channel_for("auto", 0.0).is_empty
    assert two.channel_for("auto", two.gamma).total_rate() == pytest.approx(0.01)

    three = _experiments.three_level_system()
    assert three.dim == 3
    channel = three.channel_for("auto", three.gamma)
    assert channel.name == "J_y"
    assert channel.total_rate() == pytest.approx(0.01)

    with pytest.raises(ConfigError):
        two.channel_for("custom", 0.1)
    with pytest.raises(ConfigError):
        three.channel_for("nonsense", 0.1)


def test_load_system(tmp_path):
    path = tmp_path / "system.npz"
    np.savez(path, h0=SIGMA_Z, controls=[SIGMA_X], initial=[1, 0], target=[0, 1], lindblad=[SIGMA_Z])
    system = _experiments.load_system(path)
    assert system.dim == 2
    assert system.model.n_controls == 1
    assert system.model.bounds.tolist() == [1.0]
    assert system.channel_for("auto", 0.2).name == "custom"

    config = ExperimentConfig(preset="custom", matrices=str(path))
    assert _experiments.build_system(config).name == "custom"

    incomplete = tmp_path / "incomplete.npz"
    np.savez(incomplete, h0=SIGMA_Z)
    with pytest.raises(ConfigError):
        _experiments.load_system(incomplete)
    with pytest.raises(ConfigError):
        _experiments.load_system(tmp_path / "missing.npz")

    mismatched = tmp_path / "mismatched.npz"
    np.savez(mismatched, h0=SIGMA_Z, controls=[SIGMA_X], u_max=[1.0, 2.0], initial=[1, 0], target=[0, 1])
    with pytest.raises(ConfigError):
        _experiments.load_system(mismatched)


def test_worker_count(monkeypatch):
    monkeypatch.delenv(_experiments.THREADS_VARIABLE, raising=False)
    assert 1 <= _experiments.worker_count(3) <= 3

    monkeypatch.setenv(_experiments.THREADS_VARIABLE, "2")
    assert _experiments.worker_count(10) == 2
    assert _experiments.worker_count(1) == 1

    monkeypatch.setenv(_experiments.THREADS_VARIABLE, "many")
    with pytest.raises(ConfigError):
        _experiments.worker_count(10)
    monkeypatch.setenv(_experiments.THREADS_VARIABLE, "0")
    with pytest.raises(ConfigError):
        _experiments.worker_count(10)


def test_forced_nominal_experiment(tmp_path):
    config = ExperimentConfig(mode="forced-nominal", runs=50, out=str(tmp_path))
    summary = _experiments.run_experiment(config)

    assert summary.runs == 1
    assert summary.infidelity_mean < 5e-3
    assert summary.infidelity_std is None
    assert summary.lyapunov_violations == 0
    assert summary.nominal_outcome_rate == 1.0
    assert summary.terminations == {"target-reached": 1}
    assert summary.success_floor == pytest.approx(1 - 0.01)

    lines = (tmp_path / "runs" / "run_0000.csv").read_text().splitlines()
    assert lines[0] == ",".join(_experiments.RUN_COLUMNS)
    assert lines[-1].endswith(",-1")
    assert len(lines) == len(summary.mean_cost) + 1

    bubbles = (tmp_path / "bubbles.csv").read_text().splitlines()
    assert bubbles[0] == "time,fidelity,count"
    assert bubbles[1] == "0.0,0.0,1"

    payload = json.loads((tmp_path / "summary.json").read_text())
    assert set(payload) == {"config", "summary", "units"}
    assert payload["config"]["campaign"]["mode"] == "forced-nominal"
    assert payload["config"]["system"]["preset"] == "two-level"
    assert payload["summary"]["counters"]["lyapunov_violations"] == 0


def test_campaign_is_deterministic(tmp_path, monkeypatch):
    config = ExperimentConfig(runs=2, steps=2, seed=7, out=str(tmp_path))

    monkeypatch.setenv(_experiments.THREADS_VARIABLE, "1")
    _experiments.run_experiment(config)
    serial = read_files(tmp_path)

    monkeypatch.setenv(_experiments.THREADS_VARIABLE, "2")
    summary = _experiments.run_experiment(config)
    assert read_files(tmp_path) == serial

    assert summary.runs == 2
    assert sum(count for _, count in summary.paths) == 2
    assert sum(summary.terminations.values()) == 2
    assert len(list((tmp_path / "runs").iterdir())) == 2
    assert 0.0 <= summary.infidelity_mean <= 1.0
    assert summary.infidelity_stderr == pytest.approx(summary.infidelity_std / 2**0.5)


def test_open_loop_baseline():
    config = ExperimentConfig(mode="open-loop-baseline", runs=2, seed=1)
    records = _experiments.run_campaign(config)
    assert len(records) == 2
    assert all(len(record.entries) == 1 for record in records)
    # the true dissipation rate is drawn per run
    assert records[0].final_infidelity != records[1].final_infidelity

    summary = _experiments.summarize(config, records)
    assert summary.paths == (("", 2),)
    assert summary.nominal_outcome_rate is None
    assert summary.delta_cost_mean is None

    with pytest.raises(InvariantViolation):
        _experiments.summarize(config, ())


def test_stderr_shrinks_with_runs():
    errors = []
    for runs in (100, 400, 1600):
        config = ExperimentConfig(mode="open-loop-baseline", runs=runs, seed=3)
        errors.append(_experiments.summarize(config, _experiments.run_campaign(config)).infidelity_stderr)
    # four times the runs halves the standard error
    for larger, smaller in zip(errors, errors[1:]):
        assert larger / smaller == pytest.approx(2.0, rel=0.25)


def test_simulate(tmp_path):
    result = _experiments.simulate(ExperimentConfig(gamma=0.0, out=str(tmp_path)))
    assert result.final_infidelity < 5e-3
    assert result.times[0] == 0.0
    assert result.times[-1] == pytest.approx(result.solution.t_f)
    assert np.allclose(result.purities, 1.0)

    lines = (tmp_path / "simulation.csv").read_text().splitlines()
    assert lines[0] == "time,fidelity,purity"
    assert len(lines) == len(result.times) + 1

    noisy = _experiments.simulate(ExperimentConfig(gamma=0.2, out=str(tmp_path)))
    assert noisy.purities[-1] < 1.0
    assert noisy.final_infidelity > result.final_infidelity


def test_output_errors(tmp_path):
    blocker = tmp_path / "file.txt"
    blocker.write_text("")
    with pytest.raises(ConfigError):
        _experiments.run_experiment(ExperimentConfig(out=str(blocker / "sub")))
    with pytest.raises(ConfigError):
        _experiments.reproduce("fig9", out=str(tmp_path))
    assert not (tmp_path / "fig9").exists()


def test_reproduce_monotone_figure(tmp_path):
    report = _experiments.reproduce("fig2", runs=1, out=str(tmp_path))
    assert report.passed
    assert report.identifier == "fig2"
    assert (tmp_path / "fig2" / "report.json") in report.files

    payload = json.loads((tmp_path / "fig2" / "report.json").read_text())
    assert payload["passed"] is True
    assert payload["checks"][0]["passed"] is True


@pytest.mark.slow
def test_reproduce_three_level_figure(tmp_path):
    assert _experiments.reproduce("fig4", runs=1, out=str(tmp_path)).passed


@pytest.mark.slow
def test_reproduce_table2(tmp_path):
    report = _experiments.reproduce("table2", runs=200, out=str(tmp_path))
    assert report.passed, report.checks
    lines = (tmp_path / "table2" / "table.csv").read_text().splitlines()
    assert lines[0] == "row,nominal,average"
    assert lines[-1].startswith("open-loop,")


@pytest.mark.slow
def test_reproduce_table3(tmp_path):
    report = _experiments.reproduce("table3", runs=20, out=str(tmp_path))
    assert report.passed, report.checks
    rows = [line.split(",")[0] for line in (tmp_path / "table3" / "table.csv").read_text().splitlines()]
    assert rows == ["row", "closed", "open", "open-loop"]


@pytest.mark.slow
def test_reproduce_fixed_povm_figure(tmp_path):
    report = _experiments.reproduce("fig5", runs=50, out=str(tmp_path))
    assert report.passed, report.checks
    payload = json.loads((tmp_path / "fig5" / "summary.json").read_text())
    assert payload["summary"]["mode"] == "fixed-povm"
    assert payload["summary"]["paths"][0]["count"] >= payload["summary"]["paths"][-1]["count"]
