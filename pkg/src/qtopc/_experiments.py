"""
Presets, Monte-Carlo campaigns and the reproduction of the published tables and figures.

A campaign runs ``config.runs`` independent feedback runs in a thread pool,
each with its own random stream spawned from the master seed, and writes

    <out>/runs/run_0000.csv    step,time,cost,fidelity,outcome
    <out>/bubbles.csv          time,fidelity,count
    <out>/summary.json

Rows are ordered by run index, so the same seed gives byte-identical files
whatever the number of worker threads.
"""
from __future__ import annotations

import collections
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np

from ._base import ConfigError, InvariantViolation, SolverError
from ._bounds import BoundKind, BoundSpec, success_floor
from ._config import ExperimentConfig
from ._control import ControlProblem, SolveResult, solve
from ._core import DensityMatrix, fidelity, overlap
from ._dynamics import (
    Control,
    ControlSchedule,
    DissipationChannel,
    HamiltonianModel,
    Uncertainty,
    evolve_master,
    sample_uncertainty,
)
from ._feedback import FeedbackConfig, RunRecord, run_open_loop, run_qtopc
from ._log import NOTICE
from ._operators import J_X, J_Z, SIGMA_X, SIGMA_Z
from ._sinks import FileSink, RowFormatter, write_json

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator, Sequence

    from numpy.typing import NDArray

__all__ = [
    "BUBBLE_COLUMNS",
    "REPRODUCIBLE",
    "RUN_COLUMNS",
    "SIMULATION_COLUMNS",
    "THREADS_VARIABLE",
    "CampaignSummary",
    "Check",
    "ReproductionReport",
    "SimulationResult",
    "System",
    "build_system",
    "load_system",
    "reproduce",
    "run_campaign",
    "run_experiment",
    "simulate",
    "summarize",
    "three_level_system",
    "two_level_system",
    "worker_count",
    "write_campaign",
]

logger = logging.getLogger(__name__)

THREADS_VARIABLE = "QTOPC_THREADS"
RUN_COLUMNS = ("step", "time", "cost", "fidelity", "outcome")
BUBBLE_COLUMNS = ("time", "fidelity", "count")
SIMULATION_COLUMNS = ("time", "fidelity", "purity")
REPRODUCIBLE = ("table2", "table3", "fig2", "fig3", "fig4", "fig5", "fig6")

UNITS = {
    "time": "inverse units of the free Hamiltonian (hbar = 1)",
    "cost": "dimensionless",
    "infidelity": "dimensionless, 1 - Tr(rho_f rho_target)",
    "fidelity": "dimensionless, sqrt(Tr(rho rho_target))",
    "rates": "inverse time",
}

_DECREASE_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class System:
    """A controlled system with its transfer task and the dissipation of its true dynamics."""

    name: str
    model: HamiltonianModel
    initial: DensityMatrix
    target: DensityMatrix
    channel: str
    """Dissipation operator used when the configuration says ``auto``."""
    gamma: float
    """True dissipation rate used when it is neither configured nor sampled."""
    sample_target: str
    lindblad: tuple[NDArray[np.complex128], ...] = ()

    @property
    def dim(self) -> int:
        return self.model.dim

    def channel_for(self, name: str, gamma: float, rate_bound: float | None = None) -> DissipationChannel:
        name = self.channel if name == "auto" else name
        if name == "custom":
            if not self.lindblad:
                raise ConfigError(f"System {self.name!r} defines no Lindblad operators")
            if gamma == 0:
                return DissipationChannel.empty()
            bound = gamma if rate_bound is None else rate_bound
            return DissipationChannel(self.lindblad, (gamma,) * len(self.lindblad), bound, name="custom")
        try:
            return DissipationChannel.from_name(name, gamma, self.dim, rate_bound)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def two_level_system() -> System:
    """
    H0 = sigma_z, u sigma_x with |u| <= 1, |0> to |1>, true dissipation sqrt(gamma) sigma_y.

    Monte-Carlo runs draw gamma from [0, 0.25]; a single deterministic run
    uses L = 0.1 sigma_y, that is gamma = 0.01.
    """
    return System(
        "two-level",
        HamiltonianModel(SIGMA_Z, (Control(SIGMA_X, 1.0),)),
        DensityMatrix.basis(2, 0),
        DensityMatrix.basis(2, 1),
        channel="sigma_y",
        gamma=0.01,
        sample_target="true",
    )


def three_level_system() -> System:
    """H0 = J_z, u J_x with |u| <= 1, diag(1,0,0) to diag(0,0,1), true dissipation 0.1 J_y."""
    return System(
        "three-level",
        HamiltonianModel(J_Z, (Control(J_X, 1.0),)),
        DensityMatrix.diagonal([1, 0, 0]),
        DensityMatrix.diagonal([0, 0, 1]),
        channel="J_y",
        gamma=0.01,
        sample_target="none",
    )


def _as_density(array: NDArray) -> DensityMatrix:
    if array.ndim == 1:
        return DensityMatrix.from_pure(array)
    return DensityMatrix(array).checked()


def load_system(path: str | os.PathLike[str]) -> System:
    """
    Read a custom system from an ``.npz`` archive.

    Keys: ``h0`` (d, d); ``controls`` (m, d, d); ``u_max`` (m,), ones if
    missing; ``initial`` and ``target``, state vectors or density matrices;
    ``lindblad`` (k, d, d) unit-norm operators, optional.
    """
    try:
        with np.load(path) as archive:
            arrays = {key: np.asarray(archive[key]) for key in archive.files}
    except (OSError, ValueError) as exc:
        raise ConfigError(f"Cannot read system matrices {os.fspath(path)!r}: {exc}") from None
    missing = {"h0", "initial", "target"} - set(arrays)
    if missing:
        raise ConfigError(f"System matrices lack {', '.join(sorted(missing))}")

    controls = arrays.get("controls", np.zeros((0, *arrays["h0"].shape)))
    u_max = arrays.get("u_max", np.ones(len(controls)))
    if len(u_max) != len(controls):
        raise ConfigError(f"{len(controls)} control operators but {len(u_max)} bounds")
    lindblad = tuple(arrays.get("lindblad", ()))
    model = HamiltonianModel(arrays["h0"], tuple(Control(op, float(bound)) for op, bound in zip(controls, u_max)))
    return System(
        "custom",
        model,
        _as_density(arrays["initial"]),
        _as_density(arrays["target"]),
        channel="custom" if lindblad else "none",
        gamma=0.0,
        sample_target="none",
        lindblad=lindblad,
    )


def build_system(config: ExperimentConfig) -> System:
    match config.preset:
        case "two-level":
            return two_level_system()
        case "three-level":
            return three_level_system()
    assert config.matrices is not None
    return load_system(config.matrices)


def worker_count(runs: int) -> int:
    """Threads for a campaign of *runs* runs, capped by the QTOPC_THREADS environment variable."""
    limit = os.cpu_count() or 1
    if value := os.environ.get(THREADS_VARIABLE):
        try:
            limit = int(value)
        except ValueError:
            raise ConfigError(f"{THREADS_VARIABLE} must be an integer, got {value!r}") from None
        if limit < 1:
            raise ConfigError(f"{THREADS_VARIABLE} must be at least 1, got {limit}")
    return max(1, min(limit, runs))


def _prepare_output(out: str | os.PathLike[str]) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"Cannot create output directory {os.fspath(path)!r}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"Output directory {os.fspath(path)!r} is not writable")
    return path


@dataclass(frozen=True, eq=False)
class _Plan:
    """Everything a single run needs, resolved once per campaign."""

    config: ExperimentConfig
    system: System
    problem: ControlProblem
    sample_target: str
    true_gamma: float
    initial_solution: SolveResult | None
    seeds: tuple[np.random.SeedSequence, ...]


def _sample_target(config: ExperimentConfig, system: System) -> str:
    if config.sample_target != "auto":
        return config.sample_target
    # a forced-nominal campaign is one deterministic run at the preset rate
    return "none" if config.mode == "forced-nominal" else system.sample_target


def _true_gamma(config: ExperimentConfig, system: System) -> float:
    return system.gamma if config.gamma is None else config.gamma


def _nominal_problem(config: ExperimentConfig, system: System, nominal_gamma: float) -> ControlProblem:
    return ControlProblem(
        system.model,
        system.initial,
        system.target,
        config.lambda0,
        t_max=config.t_max,
        channel=system.channel_for(config.nominal_channel, nominal_gamma),
        segments=config.segments,
        max_switches=config.max_switches,
        max_iterations=config.max_iterations,
    )


def _plan(config: ExperimentConfig, system: System) -> _Plan:
    sample_target = _sample_target(config, system)
    runs = 1 if config.mode == "forced-nominal" else config.runs
    problem = _nominal_problem(config, system, config.nominal_gamma)
    initial_solution = None
    if sample_target != "nominal":
        # every run starts from the same state with the same nominal model
        try:
            initial_solution = solve(problem, None, config.solver)  # type: ignore[arg-type]
        except SolverError as exc:
            logger.error("Initial solve failed: %s", exc)
        else:
            logger.debug("Initial solution: t_f = %.6g, J = %.6g", initial_solution.t_f, initial_solution.cost)
    return _Plan(
        config, system, problem, sample_target, _true_gamma(config, system), initial_solution,
        tuple(np.random.SeedSequence(config.seed).spawn(runs)),
    )


def _draw_uncertainty(config: ExperimentConfig, dim: int, rng: np.random.Generator) -> Uncertainty | None:
    if config.delta_bar == 0:
        return None
    return sample_uncertainty(config.delta_bar, dim, rng, config.uncertainty_mode)  # type: ignore[arg-type]


def _run_one(plan: _Plan, index: int) -> RunRecord:
    config = plan.config
    rng = np.random.default_rng(plan.seeds[index])
    true_gamma, problem, initial_solution = plan.true_gamma, plan.problem, plan.initial_solution
    rate_bound = None
    match plan.sample_target:
        case "true":
            true_gamma = float(rng.uniform(config.gamma_min, config.gamma_max))
            rate_bound = config.gamma_max
        case "nominal":
            problem = _nominal_problem(config, plan.system, float(rng.uniform(config.gamma_min, config.gamma_max)))
    uncertainty = _draw_uncertainty(config, plan.system.dim, rng)

    feedback = FeedbackConfig(
        problem,
        ts=config.ts,
        max_steps=config.steps,
        true_channel=plan.system.channel_for(config.true_channel, true_gamma, rate_bound),
        uncertainty=uncertainty,
        seed=config.seed,
        povm_mode="fixed" if config.mode == "fixed-povm" else "adaptive",
        solver=config.solver,  # type: ignore[arg-type]
        forced=config.mode == "forced-nominal",
    )
    if config.mode == "open-loop-baseline":
        return run_open_loop(feedback, initial_solution=initial_solution)
    return run_qtopc(feedback, rng=rng, initial_solution=initial_solution)


def run_campaign(config: ExperimentConfig, system: System | None = None) -> tuple[RunRecord, ...]:
    """Execute every run of *config* without writing anything; records are ordered by run index."""
    system = build_system(config) if system is None else system
    plan = _plan(config, system)
    runs = len(plan.seeds)
    workers = worker_count(runs)
    logger.info("Running %d %s run(s) of the %s system on %d thread(s)", runs, config.mode, system.name, workers)

    records: list[RunRecord] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for record in pool.map(partial(_run_one, plan), range(runs)):
            records.append(record)
            if runs >= 10 and len(records) % (runs // 10) == 0:
                logger.info("%d/%d runs done", len(records), runs)
    return tuple(records)


def _statistics(values: NDArray[np.float64]) -> tuple[float, float | None, float | None]:
    """Mean, sample standard deviation and standard error; the latter two need two values."""
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, None, None
    std = float(np.std(values, ddof=1))
    return mean, std, std / math.sqrt(len(values))


def _padded(series: Sequence[NDArray[np.float64]]) -> NDArray[np.float64]:
    """Stack per-run series, repeating the last value of runs that stopped early."""
    length = max(len(values) for values in series)
    return np.array([np.pad(values, (0, length - len(values)), mode="edge") for values in series])


def _mean_series(series: Sequence[NDArray[np.float64]]) -> tuple[float, ...]:
    if not series:
        return ()
    return tuple(float(value) for value in _padded(series).mean(axis=0))


def _point(time: float, value: float) -> tuple[float, float]:
    # + 0.0 turns a rounded -0.0 into 0.0
    return round(time, 3) + 0.0, round(value, 3) + 0.0


@dataclass(frozen=True)
class CampaignSummary:
    mode: str
    runs: int
    infidelity_mean: float
    infidelity_std: float | None
    infidelity_stderr: float | None
    mean_cost: tuple[float, ...]
    """Mean optimal cost per step; runs that stopped early repeat their last value."""
    mean_fidelity: tuple[float, ...]
    delta_cost_mean: float | None
    """Mean of J(k+1) - J(k) over every consecutive pair of every run."""
    delta_cost_stderr: float | None
    nominal_outcome_rate: float | None
    success_floor: float
    """1 - (2 delta_bar + gamma_bar) Ts, the floor on the nominal outcome probability."""
    terminations: dict[str, int]
    lyapunov_violations: int
    """Runs with a step whose cost did not drop by at least lambda0 times the period."""
    decrease_violations: int
    """Runs where a nominal outcome was followed by an increase above 2 sqrt(eps Ts) - lambda0 Ts."""
    paths: tuple[tuple[str, int], ...]
    bubbles: tuple[tuple[float, float, int], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "runs": self.runs,
            "infidelity": {"mean": self.infidelity_mean, "std": self.infidelity_std, "stderr": self.infidelity_stderr},
            "series": {"mean_cost": list(self.mean_cost), "mean_fidelity": list(self.mean_fidelity)},
            "expected_decrease": {"delta_cost_mean": self.delta_cost_mean, "delta_cost_stderr": self.delta_cost_stderr},
            "success": {"nominal_outcome_rate": self.nominal_outcome_rate, "success_floor": self.success_floor},
            "counters": {
                "terminations": dict(self.terminations),
                "lyapunov_violations": self.lyapunov_violations,
                "decrease_violations": self.decrease_violations,
            },
            "paths": [{"outcomes": path, "count": count} for path, count in self.paths],
        }


def _gamma_bar(config: ExperimentConfig, system: System, sample_target: str, true_gamma: float) -> float:
    """Operator norm of sum gamma L^dagger L at the largest true rate."""
    gamma = config.gamma_max if sample_target == "true" else true_gamma
    channel = system.channel_for(config.true_channel, gamma)
    return float(np.linalg.norm(channel.decay_operator(system.dim), ord=2))


def summarize(
    config: ExperimentConfig, records: Sequence[RunRecord], system: System | None = None
) -> CampaignSummary:
    if not records:
        raise InvariantViolation("Cannot summarize an empty campaign")
    system = build_system(config) if system is None else system
    sample_target = _sample_target(config, system)
    true_gamma = _true_gamma(config, system)

    infidelities = np.array([record.final_infidelity for record in records])
    infidelity_mean, infidelity_std, infidelity_stderr = _statistics(infidelities)
    completed = [record for record in records if record.entries]
    mean_cost = _mean_series([record.costs for record in completed])
    mean_fidelity = _mean_series([record.fidelities for record in completed])

    decrements = np.concatenate([record.cost_decrements() for record in records])
    delta_cost_mean, delta_cost_stderr = (None, None)
    if len(decrements):
        delta_cost_mean, _, delta_cost_stderr = _statistics(decrements)

    measured = [entry for record in records for entry in record.measured()]
    nominal_outcome_rate = sum(entry.nominal for entry in measured) / len(measured) if measured else None

    gamma_bar = _gamma_bar(config, system, sample_target, true_gamma)
    eps_ts = (2.0 * config.delta_bar + gamma_bar) * config.ts
    floor = success_floor(BoundSpec(BoundKind.GENERAL, config.delta_bar, gamma_bar, config.ts)).value
    allowed_increase = 2.0 * math.sqrt(eps_ts) - config.lambda0 * config.ts + _DECREASE_SLACK

    def decrease_violated(record: RunRecord) -> bool:
        return any(
            earlier.outcome >= 0 and earlier.nominal and later.cost - earlier.cost > allowed_increase
            for earlier, later in zip(record.entries, record.entries[1:])
        )

    terminations = collections.Counter(record.termination for record in records)
    paths = collections.Counter(
        "-".join(str(entry.outcome) for entry in record.measured()) for record in records
    )
    start = _point(0.0, fidelity(system.initial, system.target))
    bubbles = collections.Counter(
        point
        for record in records
        for point in [start, *(_point(entry.time, entry.fidelity) for entry in record.entries)]
    )

    return CampaignSummary(
        mode=config.mode,
        runs=len(records),
        infidelity_mean=infidelity_mean,
        infidelity_std=infidelity_std,
        infidelity_stderr=infidelity_stderr,
        mean_cost=mean_cost,
        mean_fidelity=mean_fidelity,
        delta_cost_mean=delta_cost_mean,
        delta_cost_stderr=delta_cost_stderr,
        nominal_outcome_rate=nominal_outcome_rate,
        success_floor=floor,
        terminations=dict(sorted(terminations.items())),
        lyapunov_violations=sum(bool(record.lyapunov_violations(config.lambda0)) for record in records),
        decrease_violations=sum(decrease_violated(record) for record in records),
        paths=tuple(sorted(paths.items(), key=lambda item: (-item[1], item[0]))),
        bubbles=tuple((time, value, count) for (time, value), count in sorted(bubbles.items())),
    )


def write_campaign(
    out: str | os.PathLike[str], config: ExperimentConfig, records: Sequence[RunRecord], summary: CampaignSummary
) -> list[Path]:
    """Write the per-run CSV files, the bubble data and the summary; returns the written paths."""
    root = _prepare_output(out)
    runs_dir = root / "runs"
    runs_dir.mkdir(exist_ok=True)
    written = []

    run_format = RowFormatter.for_columns(RUN_COLUMNS)
    for index, record in enumerate(records):
        path = runs_dir / f"run_{index:04d}.csv"
        with FileSink(path, run_format, delay=False) as sink:
            sink.handle_rows(entry._asdict() for entry in record.entries)
        written.append(path)

    path = root / "bubbles.csv"
    with FileSink(path, RowFormatter.for_columns(BUBBLE_COLUMNS), delay=False) as sink:
        sink.handle_rows(dict(zip(BUBBLE_COLUMNS, bubble)) for bubble in summary.bubbles)
    written.append(path)

    path = root / "summary.json"
    write_json(path, {"config": config.sections(), "summary": summary.to_dict(), "units": UNITS})
    written.append(path)
    return written


def run_experiment(config: ExperimentConfig) -> CampaignSummary:
    """
    Run the campaign described by *config* and write its files under ``config.out``.

    The output directory is checked before anything is simulated.
    """
    _prepare_output(config.out)
    system = build_system(config)
    records = run_campaign(config, system)
    summary = summarize(config, records, system)
    write_campaign(config.out, config, records, summary)
    logger.log(
        NOTICE, "%s campaign of %d run(s): mean infidelity %.4g", config.mode, summary.runs, summary.infidelity_mean
    )
    return summary


class SimulationResult(NamedTuple):
    solution: SolveResult
    times: NDArray[np.float64]
    fidelities: NDArray[np.float64]
    purities: NDArray[np.float64]
    final_infidelity: float

    def rows(self) -> Iterator[dict[str, float]]:
        for row in zip(self.times, self.fidelities, self.purities):
            yield dict(zip(SIMULATION_COLUMNS, row))


def simulate(config: ExperimentConfig) -> SimulationResult:
    """
    Apply one open-loop optimal schedule to the true system and record the state at every switching time.

    Writes ``<out>/simulation.csv`` with the columns ``time,fidelity,purity``.
    """
    root = _prepare_output(config.out)
    system = build_system(config)
    problem = _nominal_problem(config, system, config.nominal_gamma)
    solution = solve(problem, None, config.solver)  # type: ignore[arg-type]
    rng = np.random.default_rng(config.seed)
    model = system.model.with_uncertainty(_draw_uncertainty(config, system.dim, rng))
    channel = system.channel_for(config.true_channel, _true_gamma(config, system))

    state = system.initial
    times, fidelities, purities = [0.0], [fidelity(state, system.target)], [state.purity()]
    for segment in solution.schedule.segments:
        state = evolve_master(
            state, model, ControlSchedule((segment,)), channel, include_uncertainty=True, method="expm"
        )
        times.append(times[-1] + segment.duration)
        fidelities.append(fidelity(state, system.target))
        purities.append(state.purity())

    result = SimulationResult(
        solution, np.array(times), np.array(fidelities), np.array(purities), 1.0 - overlap(state, system.target)
    )
    with FileSink(root / "simulation.csv", RowFormatter.for_columns(SIMULATION_COLUMNS), delay=False) as sink:
        sink.handle_rows(result.rows())
    return result


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str


class ReproductionReport(NamedTuple):
    identifier: str
    checks: tuple[Check, ...]
    files: tuple[Path, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_dict(self) -> dict[str, Any]:
        return {
            "identifier": self.identifier,
            "passed": self.passed,
            "checks": [check._asdict() for check in self.checks],
        }


class _Campaign(NamedTuple):
    summary: CampaignSummary
    files: list[Path]


def _campaign(config: ExperimentConfig) -> _Campaign:
    _prepare_output(config.out)
    system = build_system(config)
    records = run_campaign(config, system)
    summary = summarize(config, records, system)
    return _Campaign(summary, write_campaign(config.out, config, records, summary))


def _write_table(path: Path, rows: Sequence[dict[str, Any]]) -> Path:
    with FileSink(path, RowFormatter.for_columns(("row", "nominal", "average")), delay=False) as sink:
        sink.handle_rows(rows)
    return path


def _table(base: ExperimentConfig, root: Path, preset: str, nominal_rows: Sequence[tuple[str, float]]):
    """Forced-nominal and Monte-Carlo infidelity per nominal model, plus the open-loop baseline."""
    files: list[Path] = []
    rows: list[dict[str, Any]] = []
    forced: dict[str, float] = {}
    averages: dict[str, float] = {}
    for label, nominal_gamma in nominal_rows:
        row = base.replace(preset=preset, nominal_gamma=nominal_gamma)
        run = _campaign(row.replace(mode="forced-nominal", out=str(root / label / "forced-nominal")))
        mc = _campaign(row.replace(mode="monte-carlo", out=str(root / label / "monte-carlo")))
        files += run.files + mc.files
        forced[label] = run.summary.infidelity_mean
        averages[label] = mc.summary.infidelity_mean
        rows.append({"row": label, "nominal": forced[label], "average": averages[label]})

    baseline_config = base.replace(
        preset=preset, mode="open-loop-baseline", nominal_gamma=0.0, out=str(root / "baseline")
    )
    if _sample_target(baseline_config, build_system(baseline_config)) == "none" and base.delta_bar == 0:
        # the baseline is deterministic without sampled rates or uncertainty
        baseline_config = baseline_config.replace(runs=1)
    baseline = _campaign(baseline_config)
    files += baseline.files
    # the open loop has no measurement, so both columns carry the same value
    mean = baseline.summary.infidelity_mean
    rows.append({"row": "open-loop", "nominal": mean, "average": mean})
    files.append(_write_table(root / "table.csv", rows))
    return forced, averages, mean, files


def _reproduce_table2(base: ExperimentConfig, root: Path) -> tuple[list[Check], list[Path]]:
    forced, averages, baseline, files = _table(
        base, root, "two-level", (("closed", 0.0), ("gamma=0.01", 0.01), ("gamma=0.25", 0.25))
    )
    checks = [Check(f"{label} forced-nominal infidelity <= 5e-3", value <= 5e-3, f"{value:.4g}")
              for label, value in forced.items()]
    checks += [Check(f"{label} Monte-Carlo mean infidelity in [5e-3, 6e-2]", 5e-3 <= value <= 6e-2, f"{value:.4g}")
               for label, value in averages.items()]
    worst = max(averages.values())
    checks.append(Check(
        "open-loop baseline >= 2 x every Monte-Carlo mean", baseline >= 2 * worst,
        f"baseline {baseline:.4g}, largest mean {worst:.4g}",
    ))
    return checks, files


def _reproduce_table3(base: ExperimentConfig, root: Path) -> tuple[list[Check], list[Path]]:
    forced, averages, baseline, files = _table(base, root, "three-level", (("closed", 0.0), ("open", 0.01)))
    checks = [Check(f"{label} forced-nominal infidelity <= 5e-3", value <= 5e-3, f"{value:.4g}")
              for label, value in forced.items()]
    checks += [Check(f"{label} Monte-Carlo mean infidelity < open-loop baseline", value < baseline,
                     f"{value:.4g} vs {baseline:.4g}")
               for label, value in averages.items()]
    return checks, files


def _monotone_forced(preset: str) -> Callable[[ExperimentConfig, Path], tuple[list[Check], list[Path]]]:
    def reproduce_figure(base: ExperimentConfig, root: Path) -> tuple[list[Check], list[Path]]:
        run = _campaign(base.replace(preset=preset, mode="forced-nominal", out=str(root)))
        summary = run.summary
        return [Check(
            "cost drops by at least lambda0 Ts every step", summary.lyapunov_violations == 0,
            f"costs {', '.join(f'{cost:.4g}' for cost in summary.mean_cost)}",
        )], run.files
    return reproduce_figure


def _averaged(preset: str) -> Callable[[ExperimentConfig, Path], tuple[list[Check], list[Path]]]:
    def reproduce_figure(base: ExperimentConfig, root: Path) -> tuple[list[Check], list[Path]]:
        run = _campaign(base.replace(preset=preset, mode="monte-carlo", out=str(root)))
        costs = np.array(run.summary.mean_cost + run.summary.mean_fidelity)
        finite = len(costs) > 0 and bool(np.all(np.isfinite(costs)))
        checks = [Check("mean cost and fidelity series are finite", finite, f"{len(run.summary.mean_cost)} steps")]
        if finite:
            first, last = run.summary.mean_cost[0], run.summary.mean_cost[-1]
            checks.append(Check("final mean cost < initial mean cost", last < first, f"{first:.4g} -> {last:.4g}"))
        return checks, run.files
    return reproduce_figure


def _reproduce_fig5(base: ExperimentConfig, root: Path) -> tuple[list[Check], list[Path]]:
    run = _campaign(base.replace(preset="two-level", mode="fixed-povm", nominal_gamma=0.0, out=str(root)))
    counts = [count for _, count in run.summary.paths]
    runner_up = counts[1] if len(counts) > 1 else 0
    return [Check(
        "a dominant measurement path emerges", bool(counts) and counts[0] > runner_up,
        f"top path counts {counts[:3]}",
    )], run.files


_REPRODUCERS: dict[str, Callable[[ExperimentConfig, Path], tuple[list[Check], list[Path]]]] = {
    "table2": _reproduce_table2,
    "table3": _reproduce_table3,
    "fig2": _monotone_forced("two-level"),
    "fig3": _averaged("two-level"),
    "fig4": _monotone_forced("three-level"),
    "fig5": _reproduce_fig5,
    "fig6": _averaged("three-level"),
}


def reproduce(
    identifier: str,
    *,
    runs: int = 1000,
    seed: int = 0,
    out: str | os.PathLike[str] = "out",
    base: ExperimentConfig | None = None,
) -> ReproductionReport:
    """
    Run the campaigns behind a published table or figure and check them against acceptance thresholds.

    Files go to ``<out>/<identifier>/``, the outcome of the checks to
    ``<out>/<identifier>/report.json``. Settings other than *runs* and
    *seed* come from *base*.
    """
    if identifier not in _REPRODUCERS:
        raise ConfigError(f"Unknown identifier {identifier!r}; expected one of {', '.join(REPRODUCIBLE)}")
    root = _prepare_output(Path(out) / identifier)
    base = (base or ExperimentConfig()).replace(runs=runs, seed=seed, out=str(root))
    logger.info("Reproducing %s with %d run(s), seed %d", identifier, runs, seed)

    checks, files = _REPRODUCERS[identifier](base, root)
    report = ReproductionReport(identifier, tuple(checks), ())
    for check in checks:
        if not check.passed:
            logger.warning("%s: check failed: %s (%s)", identifier, check.name, check.detail)
    path = root / "report.json"
    write_json(path, report.to_dict())
    return report._replace(files=(*files, path))
