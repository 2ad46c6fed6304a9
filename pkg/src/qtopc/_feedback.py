"""
The measurement feedback loop.

Every period the open-loop problem is re-solved from the current pure
state, the first Ts of the solution is applied to the true system, the
system is measured with a POVM built from the nominal prediction and the
post-measurement state is projected to the nearest pure state.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, NamedTuple

import numpy as np

from ._base import InvariantViolation, MeasurementError, SolverError, Tolerances
from ._control import ControlProblem, SolveResult, evaluate_cost, solve
from ._core import DensityMatrix, PureState, fidelity, nearest_pure_state, overlap
from ._dynamics import ControlSchedule, DissipationChannel, Uncertainty, evolve_master, evolve_nominal
from ._log import STEP

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

__all__ = [
    "FIXED_BASES",
    "DEFAULT_TS_GRID",
    "FeedbackConfig",
    "Measurement",
    "Povm",
    "RunRecord",
    "StepEntry",
    "build_step_povm",
    "forced_outcome_mode",
    "measure",
    "outcome_probabilities",
    "pinned_measurement",
    "replay_record",
    "run_open_loop",
    "run_qtopc",
    "run_qtopc_fixed_povm",
]

logger = logging.getLogger(__name__)

DEFAULT_TS_GRID = tuple(round(0.1 * k, 10) for k in range(1, 21))
"""Candidate periods of the fixed-basis loop, as multiples of the base period."""


@dataclass(frozen=True, eq=False)
class Povm:
    """Positive semidefinite effects summing to the identity."""

    effects: tuple[NDArray[np.complex128], ...]

    def __post_init__(self) -> None:
        effects = []
        for effect in self.effects:
            effect = np.array(effect, dtype=np.complex128)
            effect.setflags(write=False)
            effects.append(effect)
        if not effects:
            raise InvariantViolation("A POVM needs at least one effect")
        dim = effects[0].shape[0]
        for index, effect in enumerate(effects):
            if effect.shape != (dim, dim):
                raise InvariantViolation(f"Effect {index} has shape {effect.shape}, expected {(dim, dim)}")
            if np.max(np.abs(effect - effect.conj().T)) > Tolerances.hermitian:
                raise InvariantViolation(f"Effect {index} is not Hermitian")
            if np.linalg.eigvalsh(effect)[0] < -Tolerances.psd:
                raise InvariantViolation(f"Effect {index} is not positive semidefinite")
        if np.max(np.abs(sum(effects) - np.eye(dim))) > Tolerances.povm:
            raise InvariantViolation("Effects do not sum to the identity")
        object.__setattr__(self, "effects", tuple(effects))

    @classmethod
    def projective(cls, vectors: Sequence[ArrayLike]) -> Povm:
        """Rank-1 projectors onto an orthonormal basis."""
        states = [PureState.normalized(vector) for vector in vectors]
        return cls(tuple(np.outer(state.amplitudes, state.amplitudes.conj()) for state in states))

    @property
    def dim(self) -> int:
        return self.effects[0].shape[0]

    def __len__(self) -> int:
        return len(self.effects)

    def rank_one_state(self, index: int) -> PureState | None:
        """The state an effect projects onto, if the effect has rank one."""
        eigenvalues, eigenvectors = np.linalg.eigh(self.effects[index])
        if eigenvalues[-1] <= Tolerances.psd or np.any(eigenvalues[:-1] > Tolerances.psd):
            return None
        return PureState.normalized(eigenvectors[:, -1], fix_phase=True)


FIXED_BASES = (
    Povm.projective([[1, 0], [0, 1]]),
    Povm.projective([[np.sqrt(3) / 2, 1 / 2], [1 / 2, -np.sqrt(3) / 2]]),
)
"""The two fixed qubit bases: computational, and the one rotated to amplitudes sqrt(3)/2 and 1/2."""


def build_step_povm(nominal: PureState) -> Povm:
    """{|psi><psi|, I - |psi><psi|} for the nominal prediction |psi>."""
    projector = np.outer(nominal.amplitudes, nominal.amplitudes.conj())
    return Povm((projector, np.eye(nominal.dim) - projector))


def outcome_probabilities(rho: DensityMatrix, povm: Povm) -> NDArray[np.float64]:
    """Born-rule probabilities Tr(E_i rho), clipped and renormalized."""
    if rho.dim != povm.dim:
        raise InvariantViolation(f"POVM acts on dimension {povm.dim}, state has dimension {rho.dim}")
    probabilities = np.array([np.einsum("ij,ji->", effect, rho.entries).real for effect in povm.effects])
    drift = abs(probabilities.sum() - 1.0)
    if drift > Tolerances.probability_drift:
        raise MeasurementError(f"Outcome probabilities sum to {probabilities.sum()!r}")
    probabilities = np.clip(probabilities, 0.0, 1.0)
    probabilities[probabilities < Tolerances.negligible_probability] = 0.0
    total = probabilities.sum()
    if total <= 0:
        raise MeasurementError("Every outcome probability is negligible")
    return probabilities / total


class Measurement(NamedTuple):
    outcome: int
    state: DensityMatrix


def _principal_sqrt(effect: NDArray[np.complex128]) -> NDArray[np.complex128]:
    eigenvalues, eigenvectors = np.linalg.eigh(effect)
    return (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.conj().T


def measure(rho: DensityMatrix, povm: Povm, rng: np.random.Generator) -> Measurement:
    """
    Sample an outcome with the Born rule and return the post-measurement state.

    A rank-1 effect leaves exactly the state it projects onto; other
    effects use the Lueders rule sqrt(E) rho sqrt(E) / Tr(E rho).
    """
    probabilities = outcome_probabilities(rho, povm)
    outcome = int(rng.choice(len(probabilities), p=probabilities))
    return Measurement(outcome, _post_state(rho, povm, outcome))


def _post_state(rho: DensityMatrix, povm: Povm, outcome: int) -> DensityMatrix:
    projected = povm.rank_one_state(outcome)
    if projected is not None:
        return projected.density()
    root = _principal_sqrt(povm.effects[outcome])
    post = root @ rho.entries @ root
    return DensityMatrix(post / np.trace(post).real)


def pinned_measurement(rho: DensityMatrix, povm: Povm, outcome: int) -> Measurement:
    """
    Condition *rho* on *outcome* without sampling.

    Raises `MeasurementError` when the outcome has negligible probability.
    """
    if outcome_probabilities(rho, povm)[outcome] == 0.0:
        raise MeasurementError(f"Outcome {outcome} has negligible probability")
    return Measurement(outcome, _post_state(rho, povm, outcome))


@dataclass(frozen=True, eq=False)
class FeedbackConfig:
    """
    One feedback run.

    ``problem`` holds the nominal model used for solving and predicting; the
    true system adds ``true_channel`` and ``uncertainty`` on top of it.
    """

    problem: ControlProblem
    ts: float = 1.0
    max_steps: int = 20
    true_channel: DissipationChannel = field(default_factory=DissipationChannel.empty)
    uncertainty: Uncertainty | None = None
    seed: int = 0
    povm_mode: Literal["adaptive", "fixed"] = "adaptive"
    solver: Literal["auto", "bangbang", "gradient"] = "auto"
    forced: bool = False
    integrator: Literal["expm", "rk4"] = "expm"
    ts_grid: tuple[float, ...] = DEFAULT_TS_GRID
    bases: tuple[Povm, ...] = FIXED_BASES

    def __post_init__(self) -> None:
        if not self.ts > 0:
            raise InvariantViolation(f"Ts must be positive, got {self.ts}")
        if self.max_steps < 1:
            raise InvariantViolation(f"At least one step is needed, got {self.max_steps}")
        self.true_channel.check_dim(self.problem.dim)


class StepEntry(NamedTuple):
    step: int
    time: float
    """Time at the end of the period."""
    cost: float
    """Optimal cost solved from ``start_state``."""
    fidelity: float
    """Fidelity of ``state`` to the target."""
    outcome: int
    """Measured effect index, -1 for the final unmeasured period."""
    state: DensityMatrix
    start_state: DensityMatrix
    solution: ControlSchedule
    duration: float
    nominal: bool
    """Whether the outcome matched the nominal prediction."""


class RunRecord(NamedTuple):
    entries: tuple[StepEntry, ...]
    termination: Literal["target-reached", "max-steps", "solver-failure"]
    final_infidelity: float

    @property
    def costs(self) -> NDArray[np.float64]:
        return np.array([entry.cost for entry in self.entries])

    @property
    def times(self) -> NDArray[np.float64]:
        return np.array([entry.time for entry in self.entries])

    @property
    def fidelities(self) -> NDArray[np.float64]:
        return np.array([entry.fidelity for entry in self.entries])

    def cost_decrements(self) -> NDArray[np.float64]:
        """J(k+1) - J(k) for consecutive steps."""
        return np.diff(self.costs)

    def lyapunov_violations(self, lambda0: float, slack: float = 1e-8) -> list[int]:
        """Steps whose cost did not drop by at least lambda0 times the period just applied."""
        return [
            later.step
            for earlier, later in zip(self.entries, self.entries[1:])
            if later.cost - earlier.cost > -lambda0 * earlier.duration + slack
        ]

    def measured(self) -> list[StepEntry]:
        return [entry for entry in self.entries if entry.outcome >= 0]


def _true_state(config: FeedbackConfig, state: DensityMatrix, schedule: ControlSchedule) -> DensityMatrix:
    model = config.problem.model.with_uncertainty(config.uncertainty)
    return evolve_master(
        state, model, schedule, config.true_channel, include_uncertainty=True, period=config.ts,
        method=config.integrator,
    )


def _prediction(problem: ControlProblem, psi: PureState, schedule: ControlSchedule) -> DensityMatrix:
    """Nominal rho_{Ts|t}: unitary when the nominal model is closed."""
    nominal = problem.model.with_uncertainty(None)
    if problem.channel.is_empty:
        return evolve_nominal(psi, nominal, schedule).density()
    return evolve_master(psi.density(), nominal, schedule, problem.channel, method="expm")


def _solve(config: FeedbackConfig, state: DensityMatrix, warm: ControlSchedule | None) -> SolveResult:
    return solve(config.problem.with_initial(state), warm, config.solver)


def _initial_state(problem: ControlProblem) -> DensityMatrix:
    return nearest_pure_state(problem.initial).density()


def _finish(entries: list[StepEntry], termination, target: DensityMatrix, state: DensityMatrix) -> RunRecord:
    return RunRecord(tuple(entries), termination, 1.0 - overlap(state, target))


def _final_period(
    config: FeedbackConfig, step: int, time: float, state: DensityMatrix, solution: SolveResult
) -> StepEntry:
    """Apply the remaining optimal schedule to the true system without measuring."""
    problem = config.problem
    schedule = solution.schedule
    final = _true_state(config, state, schedule)
    return StepEntry(
        step, time + schedule.t_f, solution.cost, fidelity(final, problem.target), -1, final, state, schedule,
        schedule.t_f, True,
    )


def run_qtopc(
    config: FeedbackConfig,
    *,
    rng: np.random.Generator | None = None,
    initial_solution: SolveResult | None = None,
) -> RunRecord:
    """
    Run the feedback loop with the adaptive POVM.

    The loop stops once the optimal time drops below Ts, after applying the
    remaining schedule, or after ``config.max_steps`` periods.
    *initial_solution* replaces the first solve when given.
    """
    if config.povm_mode == "fixed":
        return run_qtopc_fixed_povm(config, config.bases, rng=rng, initial_solution=initial_solution)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    problem = config.problem
    state = _initial_state(problem)
    warm: ControlSchedule | None = None
    entries: list[StepEntry] = []
    time = 0.0

    for step in range(1, config.max_steps + 1):
        try:
            solution = initial_solution if step == 1 and initial_solution is not None else _solve(config, state, warm)
        except SolverError as exc:
            logger.error("Solver failed at step %d: %s", step, exc)
            return _finish(entries, "solver-failure", problem.target, state)

        if solution.t_f < config.ts:
            entry = _final_period(config, step, time, state, solution)
            entries.append(entry)
            logger.log(STEP, "step %d: final period %.4g, J = %.6g, F = %.6f", step, entry.duration, entry.cost,
                       entry.fidelity)
            return _finish(entries, "target-reached", problem.target, entry.state)

        applied = solution.schedule.truncate(config.ts)
        psi = nearest_pure_state(state)
        predicted = nearest_pure_state(_prediction(problem, psi, applied))
        povm = build_step_povm(predicted)
        true = _true_state(config, state, applied)
        outcome, post = pinned_measurement(true, povm, 0) if config.forced else measure(true, povm, rng)
        start = state
        state = nearest_pure_state(post).density()
        time += config.ts
        warm = solution.schedule.shift(config.ts)
        entry = StepEntry(
            step, time, solution.cost, fidelity(state, problem.target), outcome, state, start, solution.schedule,
            config.ts, outcome == 0,
        )
        entries.append(entry)
        logger.log(STEP, "step %d: t = %.4g, J = %.6g, outcome %d, F = %.6f", step, time, entry.cost, outcome,
                   entry.fidelity)

    return _finish(entries, "max-steps", problem.target, state)


def forced_outcome_mode(config: FeedbackConfig, **kwargs) -> RunRecord:
    """
    `run_qtopc` with every outcome pinned to the nominal effect.

    The true dynamics still act on every period; the state after each
    period is the true state conditioned on the nominal outcome.
    """
    return run_qtopc(dataclasses.replace(config, forced=True), **kwargs)


def _select_fixed(
    config: FeedbackConfig, psi: PureState, solution: SolveResult, bases: Sequence[Povm]
) -> tuple[float, int, int] | None:
    """
    Pick the period and basis effect closest to the nominal prediction.

    Only periods within the optimal time and effects that get closer to the
    target than *psi* are considered; ties go to the longer period.
    """
    problem = config.problem
    nominal = problem.model.with_uncertainty(None)
    current = fidelity(psi.density(), problem.target)
    candidates = [
        (basis_index, effect_index, state)
        for basis_index, basis in enumerate(bases)
        for effect_index in range(len(basis))
        if (state := basis.rank_one_state(effect_index)) is not None
        and fidelity(state.density(), problem.target) > current + Tolerances.degenerate
    ]
    best: tuple[float, float, int, int] | None = None
    for multiple in config.ts_grid:
        period = multiple * config.ts
        if period > solution.t_f + Tolerances.degenerate:
            continue
        predicted = evolve_nominal(psi, nominal, solution.schedule.truncate(period))
        for basis_index, effect_index, state in candidates:
            score = abs(state.inner(predicted)) ** 2
            # periods ascend, so a tie within tolerance moves to the longer one
            if best is None or score > best[0] + Tolerances.degenerate or (
                score >= best[0] - Tolerances.degenerate and period > best[1]
            ):
                best = (score, period, basis_index, effect_index)
    if best is None:
        return None
    return best[1], best[2], best[3]


def run_qtopc_fixed_povm(
    config: FeedbackConfig,
    bases: Sequence[Povm] = FIXED_BASES,
    *,
    rng: np.random.Generator | None = None,
    initial_solution: SolveResult | None = None,
) -> RunRecord:
    """
    Feedback with measurements restricted to fixed bases and an adaptive period.

    Each step picks a period from ``config.ts_grid`` (times ``config.ts``)
    and a basis effect maximizing the overlap with the nominal prediction,
    then measures in that basis. ``StepEntry.duration`` holds the chosen
    period and ``StepEntry.nominal`` whether the chosen effect fired.
    """
    if not bases:
        raise InvariantViolation("At least one measurement basis is needed")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    problem = config.problem
    state = _initial_state(problem)
    warm: ControlSchedule | None = None
    entries: list[StepEntry] = []
    time = 0.0

    for step in range(1, config.max_steps + 1):
        try:
            solution = initial_solution if step == 1 and initial_solution is not None else _solve(config, state, warm)
        except SolverError as exc:
            logger.error("Solver failed at step %d: %s", step, exc)
            return _finish(entries, "solver-failure", problem.target, state)

        psi = nearest_pure_state(state)
        selection = _select_fixed(config, psi, solution, bases)
        if selection is None:
            entry = _final_period(config, step, time, state, solution)
            entries.append(entry)
            return _finish(entries, "target-reached", problem.target, entry.state)

        period, basis_index, effect_index = selection
        applied = solution.schedule.truncate(period)
        true, basis = _true_state(config, state, applied), bases[basis_index]
        if config.forced:
            outcome, post = pinned_measurement(true, basis, effect_index)
        else:
            outcome, post = measure(true, basis, rng)
        start = state
        state = nearest_pure_state(post).density()
        time += period
        warm = solution.schedule.shift(period)
        entries.append(StepEntry(
            step, time, solution.cost, fidelity(state, problem.target), outcome, state, start, solution.schedule,
            period, outcome == effect_index,
        ))
        logger.log(STEP, "step %d: period %.2g in basis %d, outcome %d, F = %.6f", step, period, basis_index,
                   outcome, entries[-1].fidelity)

    return _finish(entries, "max-steps", problem.target, state)


def run_open_loop(
    config: FeedbackConfig, *, initial_solution: SolveResult | None = None
) -> RunRecord:
    """Apply one open-loop optimal schedule to the true system without any measurement."""
    problem = config.problem
    state = _initial_state(problem)
    try:
        solution = initial_solution if initial_solution is not None else _solve(config, state, None)
    except SolverError as exc:
        logger.error("Solver failed: %s", exc)
        return _finish([], "solver-failure", problem.target, state)
    entry = _final_period(config, 1, 0.0, state, solution)
    return _finish([entry], "target-reached", problem.target, entry.state)


def replay_record(record: RunRecord, problem: ControlProblem) -> NDArray[np.float64]:
    """Re-evaluate every logged cost from its logged start state; returns the absolute deviations."""
    return np.array([
        abs(evaluate_cost(problem.with_initial(entry.start_state), entry.solution) - entry.cost)
        for entry in record.entries
    ])
