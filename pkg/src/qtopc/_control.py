"""
Time-optimal open-loop control.

Both solvers minimize J = lambda0 * t_f + D(rho_tar, rho(t_f))^2 over
piecewise-constant, box-bounded controls on the nominal model:

- `solve_bangbang_two_level` searches switching times of controls that
  alternate between +u_max and -u_max.
- `solve_gradient` runs projected gradient descent on equal-length
  segments inside a search over t_f.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, NamedTuple

import numpy as np
import scipy.linalg
from scipy.optimize import minimize, minimize_scalar

from ._base import DimensionMismatch, InvariantViolation, SolverError
from ._core import DensityMatrix, PureState, nearest_pure_state, terminal_error
from ._dynamics import (
    ControlSchedule,
    DissipationChannel,
    HamiltonianModel,
    Segment,
    evolve_master,
    evolve_nominal,
    liouvillian,
)

if TYPE_CHECKING:
    from numpy.typing import NDArray

__all__ = [
    "ControlProblem",
    "SolveResult",
    "evaluate_cost",
    "saturation_fraction",
    "solve",
    "solve_bangbang_two_level",
    "solve_gradient",
]

logger = logging.getLogger(__name__)

_ARMIJO = 1e-4
_MIN_STEP = 1e-12
_GRID_POINTS = 12
_SCREEN_ITERATIONS = 200
_BANGBANG_FRACTIONS = (1 / 8, 1 / 4, 1 / 2, 1.0)
_SEED_BRACKET = 0.1


@dataclass(frozen=True, eq=False)
class ControlProblem:
    model: HamiltonianModel
    initial: DensityMatrix
    target: DensityMatrix
    lambda0: float
    t_max: float = 10.0
    channel: DissipationChannel = field(default_factory=DissipationChannel.empty)
    """Dissipation of the nominal model; empty for closed nominal dynamics."""
    segments: int = 50
    max_switches: int = 3
    max_iterations: int = 5000
    tolerance: float = 1e-10
    fd_step: float = 1e-6
    tf_tolerance: float = 1e-3

    def __post_init__(self) -> None:
        if not self.lambda0 > 0:
            raise InvariantViolation(f"lambda0 must be positive, got {self.lambda0}")
        if not self.t_max > 0:
            raise InvariantViolation(f"t_max must be positive, got {self.t_max}")
        if self.segments < 1 or self.max_switches < 0 or self.max_iterations < 1:
            raise InvariantViolation("segments and max_iterations must be positive, max_switches nonnegative")
        for name in ("initial", "target"):
            state: DensityMatrix = getattr(self, name)
            if state.dim != self.model.dim:
                raise DimensionMismatch(f"{name} has dimension {state.dim}, model has {self.model.dim}")
        self.target.checked()
        self.channel.check_dim(self.model.dim)

    @property
    def dim(self) -> int:
        return self.model.dim

    def with_initial(self, state: DensityMatrix | PureState) -> ControlProblem:
        if isinstance(state, PureState):
            state = state.density()
        return dataclasses.replace(self, initial=state)


class SolveResult(NamedTuple):
    schedule: ControlSchedule
    cost: float
    terminal_error: float
    iterations: int
    converged: bool

    @property
    def t_f(self) -> float:
        return self.schedule.t_f


def evaluate_cost(problem: ControlProblem, schedule: ControlSchedule) -> float:
    """lambda0 * t_f + terminal error of the nominal propagation of *schedule*."""
    schedule.check_bounds(problem.model)
    nominal = problem.model.with_uncertainty(None)
    if problem.channel.is_empty and problem.initial.is_pure():
        final = evolve_nominal(nearest_pure_state(problem.initial), nominal, schedule).density()
    else:
        final = evolve_master(problem.initial, nominal, schedule, problem.channel, method="expm")
    cost = problem.lambda0 * schedule.t_f + terminal_error(problem.target, final)
    if not np.isfinite(cost):
        raise SolverError(f"Non-finite cost {cost} for a schedule of length {schedule.t_f}", schedule)
    return cost


def saturation_fraction(schedule: ControlSchedule, model: HamiltonianModel, tol: float = 1e-6) -> float:
    """Fraction of segments on which every control sits at its bound."""
    if not schedule.segments:
        return 0.0
    values = np.abs(schedule.values(model.n_controls))
    return float(np.mean(np.all(values >= model.bounds - tol, axis=1)))


class _Evaluator:
    """
    Propagates the nominal model with superoperators on row-major vec(rho).

    Closed segments use U kron conj(U) from a batched eigendecomposition,
    dissipative ones the exponential of the Liouvillian.
    """

    def __init__(self, problem: ControlProblem) -> None:
        self.problem = problem
        self.dim = problem.dim
        self.size = self.dim**2
        self.model = problem.model.with_uncertainty(None)
        self.open = not problem.channel.is_empty
        self.start = np.array(problem.initial.entries).reshape(-1)
        self.target = problem.target.entries
        if self.open:
            eye = np.eye(self.dim, dtype=np.complex128)
            self.dissipator = liouvillian(np.zeros_like(eye), problem.channel)
            self.commutators = (
                -1j * (np.kron(self.model.h0, eye) - np.kron(eye, self.model.h0.T)),
                [-1j * (np.kron(op, eye) - np.kron(eye, op.T)) for op, _ in self.model.controls],
            )

    def propagators(self, values: NDArray[np.float64], durations: NDArray[np.float64]) -> NDArray[np.complex128]:
        if self.open:
            drift, controls = self.commutators
            generators = np.broadcast_to(drift + self.dissipator, (len(values), self.size, self.size)).copy()
            for index, operator in enumerate(controls):
                generators += values[:, index, None, None] * operator
            return scipy.linalg.expm(generators * durations[:, None, None])
        hamiltonians = self.model.hamiltonians(values)
        eigenvalues, eigenvectors = np.linalg.eigh(hamiltonians)
        phases = np.exp(-1j * eigenvalues * durations[:, None])
        unitaries = np.einsum("kij,kj,klj->kil", eigenvectors, phases, eigenvectors.conj())
        return np.einsum("kij,kab->kiajb", unitaries, unitaries.conj()).reshape(-1, self.size, self.size)

    def errors(self, finals: NDArray[np.complex128]) -> NDArray[np.float64]:
        """Terminal errors of a stack of vec(rho_f)."""
        matrices = finals.reshape(-1, self.dim, self.dim)
        matrices = 0.5 * (matrices + np.swapaxes(matrices.conj(), -1, -2))
        matrices = matrices / np.trace(matrices, axis1=-2, axis2=-1).real[:, None, None]
        singular_values = np.linalg.svd(self.target - matrices, compute_uv=False)
        return np.clip(0.5 * singular_values.sum(axis=-1), 0.0, 1.0) ** 2

    def final(self, values: NDArray[np.float64], durations: NDArray[np.float64]) -> NDArray[np.complex128]:
        state = self.start
        for propagator in self.propagators(values, durations):
            state = propagator @ state
        return state

    def error(self, values: NDArray[np.float64], durations: NDArray[np.float64]) -> float:
        if len(durations) == 0:
            return float(self.errors(self.start)[0])
        return float(self.errors(self.final(values, durations))[0])

    def gradient(
        self, values: NDArray[np.float64], durations: NDArray[np.float64], step: float
    ) -> NDArray[np.float64]:
        """
        Central finite differences of the terminal error in every segment value.

        Forward states and backward products are cached, so each perturbed
        final state costs one new segment propagator.
        """
        count, n_controls = values.shape
        propagators = self.propagators(values, durations)
        forward = np.empty((count, self.size), dtype=np.complex128)
        state = self.start
        for k in range(count):
            forward[k] = state
            state = propagators[k] @ state
        backward = np.empty((count, self.size, self.size), dtype=np.complex128)
        product = np.eye(self.size, dtype=np.complex128)
        for k in range(count - 1, -1, -1):
            backward[k] = product
            product = product @ propagators[k]

        offsets = np.einsum("s,mc->smc", np.array([step, -step]), np.eye(n_controls))
        perturbed = (values[None, None, :, :] + offsets[:, :, None, :]).reshape(-1, n_controls)
        tiled = np.tile(durations, 2 * n_controls)
        shifted = self.propagators(perturbed, tiled).reshape(2, n_controls, count, self.size, self.size)
        finals = np.einsum("kab,smkbc,kc->smka", backward, shifted, forward)
        errors = self.errors(finals.reshape(-1, self.size)).reshape(2, n_controls, count)
        return ((errors[0] - errors[1]) / (2 * step)).T


def _schedule(values: NDArray[np.float64], durations: NDArray[np.float64]) -> ControlSchedule:
    return ControlSchedule(
        tuple(Segment(float(d), tuple(row)) for d, row in zip(durations, values) if d > 0)
    )


class _Candidate(NamedTuple):
    cost: float
    error: float
    values: NDArray[np.float64]
    durations: NDArray[np.float64]
    iterations: int
    converged: bool

    def result(self) -> SolveResult:
        schedule = _schedule(self.values, self.durations)
        return SolveResult(schedule, self.cost, self.error, self.iterations, self.converged)


def _check_finite(cost: float, values: NDArray, durations: NDArray) -> None:
    if not np.isfinite(cost):
        raise SolverError(f"Non-finite cost {cost}", _schedule(values, durations))


def _idle(problem: ControlProblem, evaluator: _Evaluator) -> _Candidate:
    error = evaluator.error(np.zeros((0, problem.model.n_controls)), np.zeros(0))
    return _Candidate(error, error, np.zeros((0, problem.model.n_controls)), np.zeros(0), 0, True)


def _warm_candidate(problem: ControlProblem, evaluator: _Evaluator, warm_start: ControlSchedule | None):
    if warm_start is None or not warm_start.segments:
        return None
    warm_start.check_bounds(problem.model)
    values = warm_start.values(problem.model.n_controls)
    durations = warm_start.durations
    error = evaluator.error(values, durations)
    cost = problem.lambda0 * warm_start.t_f + error
    _check_finite(cost, values, durations)
    return _Candidate(cost, error, values, durations, 0, True)


def _best(candidates) -> _Candidate:
    return min((c for c in candidates if c is not None), key=lambda c: (c.cost, c.durations.sum()))


# Bang-bang search


def _alternating(x: NDArray[np.float64], sign: float, u_max: float) -> tuple[NDArray, NDArray]:
    durations = np.abs(np.asarray(x, dtype=np.float64))
    values = (sign * u_max * (-1.0) ** np.arange(len(durations)))[:, None]
    return values, durations


def _bangbang_structure(schedule: ControlSchedule, u_max: float) -> tuple[NDArray, float] | None:
    """Merge a saturated schedule into alternating durations; None if it is not bang-bang."""
    durations: list[float] = []
    signs: list[float] = []
    for duration, (value,) in schedule.segments:
        if abs(abs(value) - u_max) > 1e-9:
            return None
        sign = float(np.sign(value))
        if signs and signs[-1] == sign:
            durations[-1] += duration
        else:
            durations.append(duration)
            signs.append(sign)
    return np.array(durations), signs[0]


def _switching_search(
    problem: ControlProblem, evaluator: _Evaluator, warm_start: ControlSchedule | None = None
) -> _Candidate:
    """
    Best alternating +-u_max schedule of a single-control problem, of any dimension.

    For every switch count up to ``problem.max_switches`` the segment
    durations are optimized by Nelder-Mead from eight starts: total lengths
    t_max/8, t_max/4, t_max/2 and t_max split evenly, each with both initial
    signs. The constant controls +-u_max with a line-searched t_f and the
    switching structure of *warm_start*, when it has one, are tried too.
    """
    u_max = problem.model.controls[0].u_max

    def cost(x: NDArray[np.float64], sign: float) -> float:
        values, durations = _alternating(x, sign, u_max)
        value = problem.lambda0 * durations.sum() + evaluator.error(values, durations)
        _check_finite(value, values, durations)
        return value

    def candidate(x: NDArray[np.float64], sign: float, iterations: int, converged: bool) -> _Candidate:
        values, durations = _alternating(x, sign, u_max)
        error = evaluator.error(values, durations)
        return _Candidate(problem.lambda0 * durations.sum() + error, error, values, durations, iterations, converged)

    def nelder_mead(x0: NDArray[np.float64], sign: float) -> _Candidate:
        outcome = minimize(
            cost,
            x0,
            args=(sign,),
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 400 * len(x0)},
        )
        return candidate(outcome.x, sign, int(outcome.nit), bool(outcome.success))

    candidates = []
    for sign in (1.0, -1.0):
        grid = np.linspace(0.0, problem.t_max, 201)[1:]
        costs = [cost(np.array([t]), sign) for t in grid]
        index = int(np.argmin(costs))
        low = grid[index - 1] if index else 0.0
        high = grid[min(index + 1, len(grid) - 1)]
        line = minimize_scalar(
            lambda t, s=sign: cost(np.array([t]), s), bounds=(low, high), method="bounded", options={"xatol": 1e-9}
        )
        candidates.append(candidate(np.array([line.x]), sign, int(line.nfev), bool(line.success)))

    for switches in range(problem.max_switches + 1):
        for fraction in _BANGBANG_FRACTIONS:
            x0 = np.full(switches + 1, problem.t_max * fraction / (switches + 1))
            for sign in (1.0, -1.0):
                candidates.append(nelder_mead(x0, sign))

    if warm_start is not None and warm_start.segments:
        structure = _bangbang_structure(warm_start, u_max)
        if structure is not None:
            candidates.append(nelder_mead(*structure))
    return _best(candidates)


def solve_bangbang_two_level(problem: ControlProblem, warm_start: ControlSchedule | None = None) -> SolveResult:
    """
    Search bang-bang controls for a two-level system with one control channel.

    The switching search runs over every switch count up to
    ``problem.max_switches``; the idle schedule and *warm_start* (when
    given) are candidates too.
    """
    if problem.dim != 2 or problem.model.n_controls != 1:
        raise DimensionMismatch("The bang-bang solver needs a two-level model with a single control")
    evaluator = _Evaluator(problem)
    idle = _idle(problem, evaluator)
    if idle.error == 0.0:
        return idle.result()

    best = _best([
        idle, _warm_candidate(problem, evaluator, warm_start), _switching_search(problem, evaluator, warm_start)
    ])
    if best is idle or best.durations.sum() == 0:
        logger.debug("No bang-bang candidate beats the idle schedule (J = %.6g)", idle.cost)
        return idle._replace(converged=False).result()
    logger.debug("Bang-bang solution: t_f = %.6g, J = %.6g, %d segments", best.durations.sum(), best.cost,
                 len(best.durations))
    return best.result()


# Projected gradient descent


def _resample(schedule: ControlSchedule, count: int, n_controls: int) -> NDArray[np.float64]:
    """Values of *schedule* at the midpoints of *count* equal slices of its own length."""
    edges = np.cumsum(schedule.durations)
    midpoints = (np.arange(count) + 0.5) / count * schedule.t_f
    indices = np.minimum(np.searchsorted(edges, midpoints), len(edges) - 1)
    return schedule.values(n_controls)[indices]


def _descend(
    problem: ControlProblem,
    evaluator: _Evaluator,
    t_f: float,
    start: NDArray[np.float64],
    max_iterations: int,
) -> _Candidate:
    bounds = problem.model.bounds
    durations = np.full(len(start), t_f / len(start))
    values = np.clip(start, -bounds, bounds)
    error = evaluator.error(values, durations)
    _check_finite(error, values, durations)
    step = 1.0
    for iteration in range(1, max_iterations + 1):
        gradient = evaluator.gradient(values, durations, problem.fd_step)
        accepted = None
        while step > _MIN_STEP:
            trial = np.clip(values - step * gradient, -bounds, bounds)
            decrease = float(np.sum(gradient * (values - trial)))
            if decrease <= 0:
                break
            trial_error = evaluator.error(trial, durations)
            _check_finite(trial_error, trial, durations)
            if trial_error <= error - _ARMIJO * decrease and trial_error < error:
                accepted = trial, trial_error
                break
            step *= 0.5
        if accepted is None:
            return _Candidate(problem.lambda0 * t_f + error, error, values, durations, iteration, True)
        improvement = error - accepted[1]
        values, error = accepted
        step = min(2.0 * step, 1e6)
        if improvement < problem.tolerance:
            return _Candidate(problem.lambda0 * t_f + error, error, values, durations, iteration, True)
    return _Candidate(problem.lambda0 * t_f + error, error, values, durations, max_iterations, False)


def solve_gradient(problem: ControlProblem, warm_start: ControlSchedule | None = None) -> SolveResult:
    """
    Projected gradient descent on ``problem.segments`` equal segments.

    For a fixed t_f, descent starts from u = 0 and u = +-u_max (and from the
    warm start, stretched to t_f) and the best run is kept. t_f itself is
    screened on a coarse grid over (0, t_max] and refined by a bounded
    scalar search to ``problem.tf_tolerance``.

    Single-control problems are also seeded with the best switching
    schedule: its resampled values join the starts, and t_f is refined
    around its length as well.
    """
    evaluator = _Evaluator(problem)
    idle = _idle(problem, evaluator)
    if idle.error == 0.0:
        return idle.result()

    count, n_controls = problem.segments, problem.model.n_controls
    bounds = problem.model.bounds
    starts = [np.zeros((count, n_controls)), np.tile(bounds, (count, 1)), np.tile(-bounds, (count, 1))]
    warm = _warm_candidate(problem, evaluator, warm_start)
    if warm is not None:
        starts.append(_resample(warm_start, count, n_controls))
    seed = _switching_search(problem, evaluator, warm_start) if n_controls == 1 else None
    if seed is not None and 0 < seed.durations.sum() <= problem.t_max:
        starts.append(_resample(_schedule(seed.values, seed.durations), count, n_controls))
    else:
        seed = None

    explored: list[_Candidate] = [idle] + ([warm] if warm is not None else [])

    def inner(t_f: float, max_iterations: int) -> float:
        best = _best(_descend(problem, evaluator, t_f, start, max_iterations) for start in starts)
        explored.append(best)
        return best.cost

    def refine(low: float, high: float) -> None:
        minimize_scalar(
            lambda t_f: inner(max(t_f, 1e-9), problem.max_iterations),
            bounds=(low, high),
            method="bounded",
            options={"xatol": problem.tf_tolerance},
        )

    grid = np.linspace(0.0, problem.t_max, _GRID_POINTS + 1)[1:]
    screened = [inner(t_f, min(_SCREEN_ITERATIONS, problem.max_iterations)) for t_f in grid]
    index = int(np.argmin(screened))
    refine(grid[index - 1] if index else 0.0, grid[min(index + 1, len(grid) - 1)])
    if seed is not None:
        t_switching = float(seed.durations.sum())
        inner(t_switching, problem.max_iterations)
        refine((1 - _SEED_BRACKET) * t_switching, min((1 + _SEED_BRACKET) * t_switching, problem.t_max))

    best = _best(explored)
    result = best.result()
    logger.debug(
        "Gradient solution: t_f = %.6g, J = %.6g, saturated on %.0f%% of segments",
        result.t_f,
        result.cost,
        100 * saturation_fraction(result.schedule, problem.model),
    )
    return result


def solve(
    problem: ControlProblem,
    warm_start: ControlSchedule | None = None,
    solver: Literal["auto", "bangbang", "gradient"] = "auto",
) -> SolveResult:
    """Dispatch to the bang-bang solver for single-control qubits and to gradient descent otherwise."""
    if solver == "auto":
        solver = "bangbang" if problem.dim == 2 and problem.model.n_controls == 1 else "gradient"
    match solver:
        case "bangbang":
            return solve_bangbang_two_level(problem, warm_start)
        case "gradient":
            return solve_gradient(problem, warm_start)
    raise ValueError(f"Unknown solver {solver!r}")
