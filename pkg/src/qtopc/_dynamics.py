"""
Time evolution of the controlled system.

Four propagators share one `HamiltonianModel` / `ControlSchedule` pair:

- `evolve_nominal`: closed, certain dynamics of a state vector.
- `evolve_master`: Lindblad dynamics of a density matrix, by RK4 or by the
  exact exponential of the Liouvillian of each segment.
- `sample_trajectory` / `sample_trajectories`: first-order quantum jump
  unraveling of the same Lindblad dynamics.
- `no_jump_path`: the deterministic branch of the unraveling.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, NamedTuple

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid

from ._base import DimensionMismatch, InvariantViolation, StepSizeError, Tolerances
from ._core import DensityMatrix, PureState, validate_state
from ._operators import LOWERING, SIGMA_X, SIGMA_Y, SIGMA_Z, J_Y, identity

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from numpy.typing import ArrayLike, NDArray

__all__ = [
    "STEPS_PER_PERIOD",
    "Control",
    "ControlSchedule",
    "DissipationChannel",
    "HamiltonianModel",
    "NoJumpPath",
    "Segment",
    "TrajectorySample",
    "Uncertainty",
    "apply_depolarizing",
    "average_state",
    "depolarizing_overlap",
    "evolve_master",
    "evolve_nominal",
    "lindblad_rhs",
    "liouvillian",
    "no_jump_fraction",
    "no_jump_path",
    "no_jump_probability",
    "sample_trajectories",
    "sample_trajectory",
    "sample_uncertainty",
    "segment_unitaries",
]

logger = logging.getLogger(__name__)

STEPS_PER_PERIOD = 1000
"""The default integration step is the sampling period divided by this."""

_DURATION_SLACK = 1e-12


def _operator_norm(matrix: NDArray) -> float:
    return float(np.linalg.norm(matrix, 2))


def _check_hermitian(name: str, matrix: NDArray) -> None:
    if np.max(np.abs(matrix - matrix.conj().T), initial=0.0) > Tolerances.hermitian:
        raise InvariantViolation(f"{name} is not Hermitian")


def _frozen(matrix: ArrayLike) -> NDArray[np.complex128]:
    array = np.array(matrix, dtype=np.complex128)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Uncertainty:
    """Hamiltonian perturbation delta * direction with ||direction|| = 1 and |delta| <= delta_bar."""

    delta_bar: float
    direction: NDArray[np.complex128]
    delta: float

    def __post_init__(self) -> None:
        direction = _frozen(self.direction)
        object.__setattr__(self, "direction", direction)
        if self.delta_bar < 0:
            raise InvariantViolation(f"delta_bar must be nonnegative, got {self.delta_bar}")
        if abs(self.delta) > self.delta_bar + Tolerances.norm:
            raise InvariantViolation(f"|delta| = {abs(self.delta)} exceeds delta_bar = {self.delta_bar}")
        _check_hermitian("Uncertainty direction", direction)
        if abs(_operator_norm(direction) - 1.0) > Tolerances.operator_norm:
            raise InvariantViolation("Uncertainty direction must have unit operator norm")

    @property
    def perturbation(self) -> NDArray[np.complex128]:
        return self.delta * self.direction


class Control(NamedTuple):
    operator: NDArray[np.complex128]
    u_max: float


@dataclass(frozen=True, eq=False)
class HamiltonianModel:
    """
    H(t) = h0 + sum_mu u_mu(t) H_mu, optionally perturbed by an `Uncertainty`.

    Energies are angular frequencies with hbar = 1.
    """

    h0: NDArray[np.complex128]
    controls: tuple[Control, ...] = ()
    uncertainty: Uncertainty | None = None

    def __post_init__(self) -> None:
        h0 = _frozen(self.h0)
        if h0.ndim != 2 or h0.shape[0] != h0.shape[1]:
            raise DimensionMismatch(f"h0 must be square, got shape {h0.shape}")
        _check_hermitian("h0", h0)
        controls = []
        for index, (operator, u_max) in enumerate(self.controls):
            operator = _frozen(operator)
            if operator.shape != h0.shape:
                raise DimensionMismatch(f"Control {index} has shape {operator.shape}, expected {h0.shape}")
            _check_hermitian(f"Control {index}", operator)
            if not u_max > 0:
                raise InvariantViolation(f"Control {index} bound must be positive, got {u_max}")
            controls.append(Control(operator, float(u_max)))
        if self.uncertainty is not None and self.uncertainty.direction.shape != h0.shape:
            raise DimensionMismatch("Uncertainty direction does not match h0")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "controls", tuple(controls))

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def bounds(self) -> NDArray[np.float64]:
        return np.array([control.u_max for control in self.controls], dtype=np.float64)

    def with_uncertainty(self, uncertainty: Uncertainty | None) -> HamiltonianModel:
        return HamiltonianModel(self.h0, self.controls, uncertainty)

    def hamiltonian(self, values: ArrayLike = (), include_uncertainty: bool = False) -> NDArray[np.complex128]:
        return self.hamiltonians(np.reshape(np.asarray(values, dtype=np.float64), (1, -1)), include_uncertainty)[0]

    def hamiltonians(self, values: NDArray[np.float64], include_uncertainty: bool = False) -> NDArray[np.complex128]:
        """Stack of Hamiltonians for a (segments, controls) array of control values."""
        values = np.asarray(values, dtype=np.float64).reshape(len(values), self.n_controls)
        stack = np.broadcast_to(self.h0, (len(values), self.dim, self.dim)).copy()
        if self.controls:
            operators = np.stack([control.operator for control in self.controls])
            stack += np.einsum("km,mij->kij", values, operators)
        if include_uncertainty and self.uncertainty is not None:
            stack += self.uncertainty.perturbation
        return stack


@dataclass(frozen=True, eq=False)
class DissipationChannel:
    """
    Lindblad operators L_i with unit operator norm and rates gamma_i <= rate_bound.

    An empty channel stands for closed dynamics.
    """

    operators: tuple[NDArray[np.complex128], ...] = ()
    rates: tuple[float, ...] = ()
    rate_bound: float = 0.0
    name: str = field(default="custom", compare=False)

    def __post_init__(self) -> None:
        operators = tuple(_frozen(operator) for operator in self.operators)
        rates = tuple(float(rate) for rate in self.rates)
        if len(operators) != len(rates):
            raise DimensionMismatch(f"{len(operators)} operators but {len(rates)} rates")
        if operators and any(operator.shape != operators[0].shape for operator in operators):
            raise DimensionMismatch("Lindblad operators must share one shape")
        for index, (operator, rate) in enumerate(zip(operators, rates)):
            if abs(_operator_norm(operator) - 1.0) > Tolerances.operator_norm:
                raise InvariantViolation(f"Lindblad operator {index} must have unit operator norm")
            if rate < 0:
                raise InvariantViolation(f"Rate {index} is negative: {rate}")
            if rate > self.rate_bound + Tolerances.norm:
                raise InvariantViolation(f"Rate {index} = {rate} exceeds the bound {self.rate_bound}")
        object.__setattr__(self, "operators", operators)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "rate_bound", float(self.rate_bound))

    @classmethod
    def empty(cls) -> DissipationChannel:
        return cls(name="none")

    @classmethod
    def single(
        cls, operator: ArrayLike, gamma: float, rate_bound: float | None = None, *, name: str = "custom"
    ) -> DissipationChannel:
        return cls((np.asarray(operator),), (gamma,), gamma if rate_bound is None else rate_bound, name=name)

    @classmethod
    def sigma_y(cls, gamma: float, rate_bound: float | None = None) -> DissipationChannel:
        """Uniform dissipation, L = sigma_y so that L^dagger L = I."""
        return cls.single(SIGMA_Y, gamma, rate_bound, name="sigma_y")

    @classmethod
    def phase_damping(cls, gamma: float, rate_bound: float | None = None) -> DissipationChannel:
        return cls.single(SIGMA_Z, gamma, rate_bound, name="phase_damping")

    @classmethod
    def amplitude_damping(cls, gamma: float, rate_bound: float | None = None) -> DissipationChannel:
        """Relaxation |1> -> |0> through L = |0><1|."""
        return cls.single(LOWERING, gamma, rate_bound, name="amplitude_damping")

    @classmethod
    def angular_momentum_y(cls, gamma: float, rate_bound: float | None = None) -> DissipationChannel:
        return cls.single(J_Y, gamma, rate_bound, name="J_y")

    @classmethod
    def depolarizing(cls, dim: int, gamma: float, rate_bound: float | None = None) -> DissipationChannel:
        """
        Depolarizing channel in any dimension.

        Uses the d^2 matrix units |i><j| at rate gamma/d each, which evolve a
        state as exp(-gamma t) rho + (1 - exp(-gamma t)) I/d.
        """
        operators = []
        for i in range(dim):
            for j in range(dim):
                unit = np.zeros((dim, dim), dtype=np.complex128)
                unit[i, j] = 1.0
                operators.append(unit)
        bound = gamma if rate_bound is None else rate_bound
        return cls(tuple(operators), (gamma / dim,) * len(operators), bound, name="depolarizing")

    @classmethod
    def pauli_depolarizing(cls, gamma: float, rate_bound: float | None = None) -> DissipationChannel:
        """sigma_x, sigma_y and sigma_z at rate gamma each; the Bloch vector shrinks as exp(-4 gamma t)."""
        bound = gamma if rate_bound is None else rate_bound
        return cls((SIGMA_X, SIGMA_Y, SIGMA_Z), (gamma,) * 3, bound, name="pauli_depolarizing")

    @classmethod
    def from_name(cls, name: str, gamma: float, dim: int = 2, rate_bound: float | None = None) -> DissipationChannel:
        if name == "none" or gamma == 0:
            return cls.empty()
        match name:
            case "sigma_y":
                return cls.sigma_y(gamma, rate_bound)
            case "phase_damping":
                return cls.phase_damping(gamma, rate_bound)
            case "amplitude_damping":
                return cls.amplitude_damping(gamma, rate_bound)
            case "J_y":
                return cls.angular_momentum_y(gamma, rate_bound)
            case "depolarizing":
                return cls.depolarizing(dim, gamma, rate_bound)
            case "pauli_depolarizing":
                return cls.pauli_depolarizing(gamma, rate_bound)
        raise ValueError(f"Unknown channel {name!r}")

    @property
    def is_empty(self) -> bool:
        return not any(self.rates)

    @property
    def dim(self) -> int | None:
        return self.operators[0].shape[0] if self.operators else None

    def total_rate(self) -> float:
        return float(sum(self.rates))

    def decay_operator(self, dim: int) -> NDArray[np.complex128]:
        """sum_i gamma_i L_i^dagger L_i"""
        result = np.zeros((dim, dim), dtype=np.complex128)
        for operator, rate in zip(self.operators, self.rates):
            result += rate * operator.conj().T @ operator
        return result

    def check_dim(self, dim: int) -> None:
        if self.dim is not None and self.dim != dim:
            raise DimensionMismatch(f"Channel acts on dimension {self.dim}, state has dimension {dim}")


class Segment(NamedTuple):
    duration: float
    values: tuple[float, ...]


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant control values; the empty schedule has t_f = 0."""

    segments: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        segments = []
        for duration, values in self.segments:
            if not duration > 0:
                raise InvariantViolation(f"Segment durations must be positive, got {duration}")
            segments.append(Segment(float(duration), tuple(float(value) for value in values)))
        object.__setattr__(self, "segments", tuple(segments))

    @classmethod
    def empty(cls) -> ControlSchedule:
        return cls()

    @classmethod
    def constant(cls, values: Iterable[float], duration: float) -> ControlSchedule:
        if duration <= 0:
            return cls()
        return cls((Segment(duration, tuple(values)),))

    @classmethod
    def uniform(cls, values: ArrayLike, t_f: float) -> ControlSchedule:
        """Split [0, t_f] into len(values) equal segments carrying the rows of *values*."""
        rows = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if np.ndim(values) == 1:
            rows = rows.T
        if t_f <= 0 or len(rows) == 0:
            return cls()
        duration = t_f / len(rows)
        return cls(tuple(Segment(duration, tuple(row)) for row in rows))

    @property
    def t_f(self) -> float:
        return float(sum(segment.duration for segment in self.segments))

    @property
    def durations(self) -> NDArray[np.float64]:
        return np.array([segment.duration for segment in self.segments], dtype=np.float64)

    def values(self, n_controls: int) -> NDArray[np.float64]:
        if not self.segments:
            return np.zeros((0, n_controls))
        values = np.array([segment.values for segment in self.segments], dtype=np.float64)
        return values.reshape(len(self.segments), n_controls)

    def __len__(self) -> int:
        return len(self.segments)

    def truncate(self, t: float) -> ControlSchedule:
        """The first *t* time units of the schedule."""
        kept = []
        remaining = t
        for duration, values in self.segments:
            if remaining <= _DURATION_SLACK:
                break
            piece = min(duration, remaining)
            kept.append(Segment(piece, values))
            remaining -= piece
        return ControlSchedule(tuple(kept))

    def shift(self, t: float) -> ControlSchedule:
        """What remains of the schedule after its first *t* time units."""
        kept = []
        elapsed = 0.0
        for duration, values in self.segments:
            end = elapsed + duration
            if end - t > _DURATION_SLACK:
                kept.append(Segment(end - max(elapsed, t), values))
            elapsed = end
        return ControlSchedule(tuple(kept))

    def check_bounds(self, model: HamiltonianModel) -> None:
        bounds = model.bounds
        for index, (_, values) in enumerate(self.segments):
            if len(values) != model.n_controls:
                raise DimensionMismatch(
                    f"Segment {index} has {len(values)} control values, model has {model.n_controls} controls"
                )
            if np.any(np.abs(values) > bounds + Tolerances.norm):
                raise InvariantViolation(f"Segment {index} exceeds the control bounds: {values}")


def segment_unitaries(
    model: HamiltonianModel, schedule: ControlSchedule, include_uncertainty: bool = False
) -> NDArray[np.complex128]:
    """exp(-i H_k t_k) for every segment, from one batched eigendecomposition."""
    if not schedule.segments:
        return np.zeros((0, model.dim, model.dim), dtype=np.complex128)
    hamiltonians = model.hamiltonians(schedule.values(model.n_controls), include_uncertainty)
    eigenvalues, eigenvectors = np.linalg.eigh(hamiltonians)
    phases = np.exp(-1j * eigenvalues * schedule.durations[:, None])
    return np.einsum("kij,kj,klj->kil", eigenvectors, phases, eigenvectors.conj())


def evolve_nominal(psi0: PureState, model: HamiltonianModel, schedule: ControlSchedule) -> PureState:
    """Closed evolution without uncertainty, one exact exponential per segment."""
    if psi0.dim != model.dim:
        raise DimensionMismatch(f"State dimension {psi0.dim} does not match the model dimension {model.dim}")
    schedule.check_bounds(model)
    return _closed_evolution(psi0, model, schedule, include_uncertainty=False)


def _rhs(rho: NDArray, hamiltonian: NDArray, operators: Sequence[NDArray], rates: Sequence[float]) -> NDArray:
    result = -1j * (hamiltonian @ rho - rho @ hamiltonian)
    for operator, rate in zip(operators, rates):
        if rate == 0:
            continue
        adjoint = operator.conj().T
        decay = adjoint @ operator
        result += rate * (operator @ rho @ adjoint - 0.5 * (decay @ rho + rho @ decay))
    return result


def lindblad_rhs(rho: DensityMatrix, h_total: ArrayLike, channel: DissipationChannel) -> NDArray[np.complex128]:
    """-i[H, rho] + sum_i gamma_i (L_i rho L_i^dagger - {L_i^dagger L_i, rho}/2)"""
    hamiltonian = np.asarray(h_total, dtype=np.complex128)
    if hamiltonian.shape != rho.entries.shape:
        raise DimensionMismatch(f"Hamiltonian shape {hamiltonian.shape} does not match the state {rho.entries.shape}")
    channel.check_dim(rho.dim)
    return _rhs(rho.entries, hamiltonian, channel.operators, channel.rates)


def liouvillian(hamiltonian: NDArray, channel: DissipationChannel) -> NDArray[np.complex128]:
    """
    Superoperator of the Lindblad generator acting on row-major vec(rho).

    Uses vec(A rho B) = (A kron B^T) vec(rho).
    """
    dim = hamiltonian.shape[0]
    eye = identity(dim)
    generator = -1j * (np.kron(hamiltonian, eye) - np.kron(eye, hamiltonian.T))
    for operator, rate in zip(channel.operators, channel.rates):
        if rate == 0:
            continue
        decay = operator.conj().T @ operator
        generator += rate * (
            np.kron(operator, operator.conj()) - 0.5 * np.kron(decay, eye) - 0.5 * np.kron(eye, decay.T)
        )
    return generator


def _sanitize(rho: NDArray) -> NDArray:
    rho = 0.5 * (rho + rho.conj().T)
    trace = np.real(np.trace(rho))
    if trace > 0:
        rho /= trace
    return rho


def _segment_steps(duration: float, step: float | None, period: float = 1.0) -> tuple[int, float]:
    if step is None:
        step = min(period / STEPS_PER_PERIOD, duration)
    elif step > duration * (1 + 1e-9):
        raise StepSizeError(f"Step {step} is larger than the segment duration {duration}")
    count = max(1, round(duration / step))
    return count, duration / count


def evolve_master(
    rho0: DensityMatrix,
    model: HamiltonianModel,
    schedule: ControlSchedule,
    channel: DissipationChannel | None = None,
    include_uncertainty: bool = False,
    *,
    step: float | None = None,
    period: float = 1.0,
    method: Literal["rk4", "expm"] = "rk4",
) -> DensityMatrix:
    """
    Integrate the Lindblad equation along *schedule*.

    ``method="rk4"`` runs classical fourth-order Runge-Kutta with a fixed
    step, adjusted per segment to divide it evenly, renormalizing the trace
    after each step; the step defaults to *period* / `STEPS_PER_PERIOD`.
    ``method="expm"`` applies the exact exponential of each segment's
    Liouvillian.
    """
    channel = channel or DissipationChannel.empty()
    if rho0.dim != model.dim:
        raise DimensionMismatch(f"State dimension {rho0.dim} does not match the model dimension {model.dim}")
    channel.check_dim(model.dim)
    schedule.check_bounds(model)

    dim = model.dim
    rho = np.array(rho0.entries)
    hamiltonians = model.hamiltonians(schedule.values(model.n_controls), include_uncertainty)
    for hamiltonian, segment in zip(hamiltonians, schedule.segments):
        if method == "expm":
            propagator = scipy.linalg.expm(liouvillian(hamiltonian, channel) * segment.duration)
            rho = _sanitize((propagator @ rho.reshape(-1)).reshape(dim, dim))
        elif method == "rk4":
            count, dt = _segment_steps(segment.duration, step, period)
            for _ in range(count):
                k1 = _rhs(rho, hamiltonian, channel.operators, channel.rates)
                k2 = _rhs(rho + 0.5 * dt * k1, hamiltonian, channel.operators, channel.rates)
                k3 = _rhs(rho + 0.5 * dt * k2, hamiltonian, channel.operators, channel.rates)
                k4 = _rhs(rho + dt * k3, hamiltonian, channel.operators, channel.rates)
                rho = _sanitize(rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        else:
            raise ValueError(f"Unknown integration method {method!r}")

    result = DensityMatrix(rho)
    report = validate_state(result, tol=Tolerances.integration)
    if not report.passed:
        raise InvariantViolation(f"State drifted during integration: {'; '.join(report.failures)}")
    return result


class TrajectorySample(NamedTuple):
    state: PureState
    jumps: tuple[tuple[float, int], ...]
    """(time, operator index) of every jump, in increasing time."""

    @property
    def no_jump(self) -> bool:
        return not self.jumps


def _time_grid(schedule: ControlSchedule, step: float | None, period: float) -> list[tuple[int, int, float]]:
    """(segment index, step count, dt) for every segment."""
    grid = []
    for index, segment in enumerate(schedule.segments):
        count, dt = _segment_steps(segment.duration, step, period)
        grid.append((index, count, dt))
    return grid


def _unravel(
    psi0: PureState,
    model: HamiltonianModel,
    schedule: ControlSchedule,
    channel: DissipationChannel,
    uniforms: NDArray[np.float64],
    grid: list[tuple[int, int, float]],
    include_uncertainty: bool,
) -> list[TrajectorySample]:
    """Run a batch of jump trajectories; *uniforms* has shape (batch, total steps, 2)."""
    dim = model.dim
    active = [(op, rate) for op, rate in zip(channel.operators, channel.rates) if rate > 0]
    operators = np.stack([op for op, _ in active])
    rates = np.array([rate for _, rate in active])
    decays = np.einsum("kji,kjl->kil", operators.conj(), operators)
    h_decay = channel.decay_operator(dim)

    batch = uniforms.shape[0]
    states = np.broadcast_to(psi0.amplitudes, (batch, dim)).copy()
    jumps: list[list[tuple[float, int]]] = [[] for _ in range(batch)]
    hamiltonians = model.hamiltonians(schedule.values(model.n_controls), include_uncertainty)

    time = 0.0
    column = 0
    for index, count, dt in grid:
        no_jump = scipy.linalg.expm(-1j * (hamiltonians[index] - 0.5j * h_decay) * dt)
        for _ in range(count):
            time += dt
            weights = rates * np.einsum("bi,kij,bj->bk", states.conj(), decays, states).real
            dp = dt * weights.sum(axis=1)
            if np.max(dp) > Tolerances.jump_probability_cap:
                raise StepSizeError(
                    f"Jump probability {np.max(dp):.3g} per step exceeds {Tolerances.jump_probability_cap}; "
                    "use a smaller step"
                )
            jumped = uniforms[:, column, 0] < dp
            column += 1

            states[~jumped] = states[~jumped] @ no_jump.T
            for row in np.flatnonzero(jumped):
                cumulative = np.cumsum(weights[row])
                choice = min(int(np.searchsorted(cumulative, uniforms[row, column - 1, 1] * cumulative[-1])),
                             len(active) - 1)
                states[row] = operators[choice] @ states[row]
                jumps[row].append((time, choice))
            states /= np.linalg.norm(states, axis=1, keepdims=True)

    return [
        TrajectorySample(PureState.normalized(state), tuple(log))
        for state, log in zip(states, jumps)
    ]


def _check_trajectory_inputs(psi0: PureState, model: HamiltonianModel, schedule, channel) -> None:
    if psi0.dim != model.dim:
        raise DimensionMismatch(f"State dimension {psi0.dim} does not match the model dimension {model.dim}")
    channel.check_dim(model.dim)
    schedule.check_bounds(model)


def sample_trajectory(
    psi0: PureState,
    model: HamiltonianModel,
    schedule: ControlSchedule,
    channel: DissipationChannel,
    rng: np.random.Generator,
    *,
    step: float | None = None,
    period: float = 1.0,
    include_uncertainty: bool = False,
) -> TrajectorySample:
    """
    Sample one quantum jump trajectory.

    The step defaults to *period* / `STEPS_PER_PERIOD`, like `evolve_master`.
    Each step either jumps with probability dp = dt sum_i gamma_i <L_i^dagger L_i>,
    picking operator i with probability proportional to its term, or
    propagates under H_eff = H - (i/2) sum_i gamma_i L_i^dagger L_i. The
    state is renormalized after each step.
    """
    _check_trajectory_inputs(psi0, model, schedule, channel)
    if channel.is_empty:
        return TrajectorySample(_closed_evolution(psi0, model, schedule, include_uncertainty), ())
    grid = _time_grid(schedule, step, period)
    uniforms = rng.random((sum(count for _, count, _ in grid), 2))
    return _unravel(psi0, model, schedule, channel, uniforms[None], grid, include_uncertainty)[0]


def _closed_evolution(
    psi0: PureState, model: HamiltonianModel, schedule: ControlSchedule, include_uncertainty: bool
) -> PureState:
    amplitudes = np.array(psi0.amplitudes)
    for unitary in segment_unitaries(model, schedule, include_uncertainty):
        amplitudes = unitary @ amplitudes
    return PureState.normalized(amplitudes)


def sample_trajectories(
    psi0: PureState,
    model: HamiltonianModel,
    schedule: ControlSchedule,
    channel: DissipationChannel,
    count: int,
    master_seed: int,
    *,
    step: float | None = None,
    period: float = 1.0,
    include_uncertainty: bool = False,
    batch_size: int = 4096,
) -> list[TrajectorySample]:
    """
    Sample *count* trajectories, the k-th from the stream seeded ``master_seed ^ k``.

    The k-th result equals ``sample_trajectory(..., np.random.default_rng(master_seed ^ k))``.
    """
    _check_trajectory_inputs(psi0, model, schedule, channel)
    if channel.is_empty:
        return [TrajectorySample(_closed_evolution(psi0, model, schedule, include_uncertainty), ())] * count

    grid = _time_grid(schedule, step, period)
    n_steps = sum(count for _, count, _ in grid)
    samples: list[TrajectorySample] = []
    for start in range(0, count, batch_size):
        stop = min(start + batch_size, count)
        uniforms = np.stack([np.random.default_rng(master_seed ^ k).random((n_steps, 2)) for k in range(start, stop)])
        samples.extend(_unravel(psi0, model, schedule, channel, uniforms, grid, include_uncertainty))
    logger.debug("Sampled %d trajectories, %d without jumps", count, sum(sample.no_jump for sample in samples))
    return samples


def average_state(samples: Sequence[TrajectorySample]) -> DensityMatrix:
    amplitudes = np.stack([sample.state.amplitudes for sample in samples])
    return DensityMatrix(np.einsum("bi,bj->ij", amplitudes, amplitudes.conj()) / len(samples))


def no_jump_fraction(samples: Sequence[TrajectorySample]) -> float:
    return sum(sample.no_jump for sample in samples) / len(samples)


class NoJumpPath(NamedTuple):
    times: NDArray[np.float64]
    states: NDArray[np.complex128]
    """Normalized states along the path, one row per time."""
    norms_squared: NDArray[np.float64]
    """Squared norm of the unnormalized state, the exact no-jump probability up to each time."""


def no_jump_path(
    psi0: PureState,
    model: HamiltonianModel,
    schedule: ControlSchedule,
    channel: DissipationChannel,
    *,
    step: float | None = None,
    period: float = 1.0,
    include_uncertainty: bool = False,
) -> NoJumpPath:
    """Integrate the unnormalized state under H_eff, recording every step."""
    _check_trajectory_inputs(psi0, model, schedule, channel)
    h_decay = channel.decay_operator(model.dim)
    hamiltonians = model.hamiltonians(schedule.values(model.n_controls), include_uncertainty)

    state = np.array(psi0.amplitudes)
    times, states, norms = [0.0], [state.copy()], [1.0]
    time = 0.0
    for index, count, dt in _time_grid(schedule, step, period):
        propagator = scipy.linalg.expm(-1j * (hamiltonians[index] - 0.5j * h_decay) * dt)
        for _ in range(count):
            state = propagator @ state
            time += dt
            norm_squared = float(np.vdot(state, state).real)
            times.append(time)
            states.append(state / np.sqrt(norm_squared))
            norms.append(norm_squared)
    return NoJumpPath(np.array(times), np.array(states), np.array(norms))


def no_jump_probability(
    channel: DissipationChannel, path: NoJumpPath, interval: tuple[float, float] | None = None
) -> float:
    """exp(-integral of sum_k gamma_k <L_k^dagger L_k>) along *path*, by the trapezoid rule."""
    if channel.is_empty:
        return 1.0
    times, states = path.times, path.states
    if interval is not None:
        start, stop = interval
        mask = (times >= start - _DURATION_SLACK) & (times <= stop + _DURATION_SLACK)
        times, states = times[mask], states[mask]
    if len(times) < 2:
        return 1.0
    decay = channel.decay_operator(states.shape[1])
    integrand = np.einsum("ti,ij,tj->t", states.conj(), decay, states).real
    return float(min(max(np.exp(-trapezoid(integrand, times)), 0.0), 1.0))


def apply_depolarizing(rho: DensityMatrix, p_d: float) -> DensityMatrix:
    """p_d I/d + (1 - p_d) rho"""
    if not 0.0 <= p_d <= 1.0:
        raise ValueError(f"Depolarizing probability must lie in [0, 1], got {p_d}")
    return DensityMatrix(p_d * identity(rho.dim) / rho.dim + (1.0 - p_d) * rho.entries)


def depolarizing_overlap(gamma: float, ts: float, dim: int) -> float:
    """Tr(rho_{t+Ts} rho_{Ts|t}) for a pure prediction under depolarizing noise with p_D = 1 - exp(-gamma Ts)."""
    return 1.0 / dim + (1.0 - 1.0 / dim) * float(np.exp(-gamma * ts))


def sample_uncertainty(
    delta_bar: float,
    dim: int,
    rng: np.random.Generator,
    mode: Literal["fixed", "uniform"] = "fixed",
) -> Uncertainty:
    """
    Draw a random unit-norm Hermitian direction and a strength.

    The strength is delta_bar itself in ``fixed`` mode and uniform on
    [0, delta_bar] in ``uniform`` mode.
    """
    if delta_bar < 0:
        raise ValueError(f"delta_bar must be nonnegative, got {delta_bar}")
    raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    hermitian = 0.5 * (raw + raw.conj().T)
    direction = hermitian / _operator_norm(hermitian)
    match mode:
        case "fixed":
            delta = delta_bar
        case "uniform":
            delta = float(rng.uniform(0.0, delta_bar))
        case _:
            raise ValueError(f"Unknown uncertainty mode {mode!r}")
    return Uncertainty(delta_bar, direction, delta)
