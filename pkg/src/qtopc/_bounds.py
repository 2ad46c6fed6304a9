"""
Analytic floors on the probability of finding the system in its nominal
prediction, stability conditions of the feedback loop and convergence
rates, together with randomized falsification suites that compare each
floor against simulated dynamics.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal, NamedTuple

import numpy as np

from ._core import PureState, overlap
from ._dynamics import (
    ControlSchedule,
    DissipationChannel,
    HamiltonianModel,
    evolve_master,
    evolve_nominal,
    sample_uncertainty,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

__all__ = [
    "BoundKind",
    "BoundSpec",
    "BoundValue",
    "Condition",
    "FalsificationReport",
    "StabilityReport",
    "VariantRow",
    "convergence_rate",
    "depolarizing_variant_report",
    "falsify_appendix_a",
    "falsify_bound",
    "stability_report",
    "success_floor",
    "success_floor_appendix_a",
    "success_floor_general",
    "success_floor_two_level",
    "target_probability_floor",
]

logger = logging.getLogger(__name__)

_SLACK = 1e-9
_BOUNDARY = 1e-12

Variant = Literal["appendix", "table"]


class BoundKind(enum.StrEnum):
    GENERAL = "general"
    APPENDIX_A = "appendix-A"
    CLOSED = "closed-2lvl"
    DEPOLARIZING = "depolarizing-2lvl"
    PHASE_DAMPING = "phase-damping-2lvl"
    AMPLITUDE_DAMPING = "amplitude-damping-2lvl"
    UNIFORM = "uniform-dissipation"
    DEPOLARIZING_N = "depolarizing-Nlvl"


_TWO_LEVEL = (BoundKind.CLOSED, BoundKind.DEPOLARIZING, BoundKind.PHASE_DAMPING, BoundKind.AMPLITUDE_DAMPING)


@dataclass(frozen=True)
class BoundSpec:
    """
    Parameters of one floor.

    ``steps`` is the number of periods l the prediction spans; ``variant``
    picks between the single-period derivation (``appendix``) and the
    multi-period table form (``table``) where the two disagree.
    """

    kind: BoundKind
    delta_bar: float = 0.0
    gamma_bar: float = 0.0
    ts: float = 1.0
    steps: int = 1
    dim: int = 2
    variant: Variant = "appendix"

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BoundKind(self.kind))
        for name in ("delta_bar", "gamma_bar", "ts"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.steps < 1 or self.dim < 2:
            raise ValueError("steps must be positive and dim at least 2")
        if self.variant not in ("appendix", "table"):
            raise ValueError(f"Unknown variant {self.variant!r}")

    @property
    def angle(self) -> float:
        """l * delta_bar * Ts"""
        return self.steps * self.delta_bar * self.ts


class BoundValue(NamedTuple):
    value: float
    valid: bool
    reason: str = ""


def success_floor_general(delta_bar: float, gamma_bar: float, ts: float) -> float:
    """max(0, 1 - (2 delta_bar + gamma_bar) Ts)"""
    if min(delta_bar, gamma_bar, ts) < 0:
        raise ValueError("Rates and times must be nonnegative")
    return max(0.0, 1.0 - (2.0 * delta_bar + gamma_bar) * ts)


def _expm_hermitian(hermitian: NDArray, factor: complex) -> NDArray[np.complex128]:
    eigenvalues, eigenvectors = np.linalg.eigh(hermitian)
    return (eigenvectors * np.exp(factor * eigenvalues)) @ eigenvectors.conj().T


def _norm(matrix: NDArray) -> float:
    return float(np.linalg.norm(matrix, 2))


def success_floor_appendix_a(h: ArrayLike, h_delta: ArrayLike, ts: float) -> BoundValue:
    """
    (1 - Gamma^2 / 2)^2 with Gamma = ||I - exp(i H_delta Ts)|| + Ts^2/2 ||[H, H_delta]||.

    Invalid when Gamma >= sqrt(2).
    """
    h = np.asarray(h, dtype=np.complex128)
    h_delta = np.asarray(h_delta, dtype=np.complex128)
    gamma = _norm(np.eye(len(h)) - _expm_hermitian(h_delta, 1j * ts)) + ts**2 / 2 * _norm(h @ h_delta - h_delta @ h)
    if gamma >= math.sqrt(2):
        return BoundValue(0.0, False, f"Gamma = {gamma:.6g} is not below sqrt(2)")
    return BoundValue((1.0 - gamma**2 / 2.0) ** 2, True)


def success_floor_two_level(spec: BoundSpec) -> BoundValue:
    """Floors of the two-level channels, with x = l delta_bar Ts."""
    if spec.kind not in _TWO_LEVEL:
        raise ValueError(f"{spec.kind} is not a two-level bound")
    x = spec.angle
    decay_time = spec.gamma_bar * spec.steps * spec.ts
    window = math.pi / 4 if spec.kind is BoundKind.AMPLITUDE_DAMPING else math.pi / 2
    if x > window + _BOUNDARY:
        return BoundValue(0.0, False, f"l delta_bar Ts = {x:.6g} exceeds {window:.6g}")
    cos2 = math.cos(x) ** 2

    match spec.kind:
        case BoundKind.CLOSED:
            value = cos2
        case BoundKind.DEPOLARIZING:
            rate = 4.0 if spec.variant == "table" else 1.0
            value = 0.5 * cos2 * (1.0 + math.exp(-rate * decay_time))
        case BoundKind.PHASE_DAMPING:
            value = cos2 * math.exp(-decay_time)
        case _:
            if spec.variant == "table":
                angle = spec.steps * spec.delta_bar
                logger.debug("Amplitude-damping table form evaluated without Ts (angle %.6g vs %.6g)", angle, x)
                x = angle
                cos2 = math.cos(x) ** 2
            value = cos2 * (1.0 - decay_time) - 0.5 * math.sin(2.0 * x)
    return BoundValue(max(value, 0.0), True)


def success_floor(spec: BoundSpec) -> BoundValue:
    """Evaluate any floor that is fully determined by scalar parameters."""
    match spec.kind:
        case BoundKind.GENERAL:
            return BoundValue(success_floor_general(spec.delta_bar, spec.gamma_bar, spec.steps * spec.ts), True)
        case BoundKind.APPENDIX_A:
            raise ValueError("The appendix-A floor depends on H and H_delta; call success_floor_appendix_a")
        case BoundKind.UNIFORM | BoundKind.DEPOLARIZING_N:
            if spec.delta_bar > 0:
                return BoundValue(0.0, False, "only derived without Hamiltonian uncertainty")
            decay = math.exp(-spec.gamma_bar * spec.steps * spec.ts)
            if spec.kind is BoundKind.UNIFORM:
                return BoundValue(decay, True)
            return BoundValue(1.0 / spec.dim + (1.0 - 1.0 / spec.dim) * decay, True)
    return success_floor_two_level(spec)


class Condition(NamedTuple):
    satisfied: bool
    margin: float
    """rhs - lhs of the inequality; nonnegative exactly when satisfied."""


def _condition(margin: float) -> Condition:
    if abs(margin) <= _BOUNDARY:
        margin = 0.0
    return Condition(margin >= 0.0, margin)


@dataclass(frozen=True)
class StabilityReport:
    eps_bar: float
    prop2: Condition
    cor3: Condition
    thm5: Condition
    depolarizing: Condition
    depolarizing_expectation: Condition
    uniform: Condition
    uniform_expectation: Condition

    def conditions(self) -> dict[str, Condition]:
        return {name: value for name, value in vars(self).items() if isinstance(value, Condition)}

    def to_dict(self) -> dict[str, object]:
        return {
            "eps_bar": self.eps_bar,
            **{name: {"satisfied": c.satisfied, "margin": c.margin} for name, c in self.conditions().items()},
        }


def stability_report(
    delta_bar: float,
    gamma_bar: float,
    ts: float,
    lambda0: float,
    n_steps: int,
    dim: int = 2,
    p_d: float | None = None,
    *,
    eps_bar: float | None = None,
) -> StabilityReport:
    """
    Evaluate every stability condition of the feedback loop.

    ``eps_bar`` defaults to 2 delta_bar + gamma_bar and ``p_d`` to
    1 - exp(-gamma_bar Ts).
    """
    if min(delta_bar, gamma_bar, ts, lambda0) < 0 or n_steps < 1:
        raise ValueError("Rates, times and weights must be nonnegative and n_steps positive")
    eps = 2.0 * delta_bar + gamma_bar if eps_bar is None else eps_bar
    p = 1.0 - math.exp(-gamma_bar * ts) if p_d is None else p_d
    budget = lambda0 * ts
    depolarizing = math.sqrt(2.0 * p * (1.0 - 1.0 / dim))
    uniform_loss = 1.0 - math.exp(-gamma_bar * ts)
    return StabilityReport(
        eps_bar=eps,
        prop2=_condition(lambda0**2 * ts / 4.0 - eps),
        cor3=_condition(lambda0 / (2.0 * math.sqrt(n_steps)) - eps),
        thm5=_condition(budget - eps * ts - 2.0 * math.sqrt(eps * ts)),
        depolarizing=_condition(budget - depolarizing),
        depolarizing_expectation=_condition(budget - depolarizing - (1.0 - 1.0 / dim) * p),
        uniform=_condition(budget - 2.0 * math.sqrt(uniform_loss)),
        uniform_expectation=_condition(budget - 2.0 * math.sqrt(uniform_loss) - uniform_loss),
    )


def convergence_rate(eps_ts: float, window: int) -> float:
    """
    Rate eta of the decay of the failure probability over windows of *window* steps.

    With q = 1 - eps_ts and alpha = eps_ts q^L, eta is min(1 - alpha, 2L/(L+1) - q)
    below q = L/(L+1), 2L/(L+1) - q above it, and q at equality.
    """
    if not 0.0 <= eps_ts <= 1.0:
        raise ValueError(f"eps_bar * Ts must lie in [0, 1], got {eps_ts}")
    if isinstance(window, bool) or not isinstance(window, int) or window < 1:
        raise ValueError(f"Window length must be a positive integer, got {window!r}")
    q = 1.0 - eps_ts
    threshold = window / (window + 1)
    if abs(q - threshold) <= _BOUNDARY:
        return q
    if q > threshold:
        return 2.0 * threshold - q
    alpha = eps_ts * q**window
    return min(1.0 - alpha, 2.0 * threshold - q)


def target_probability_floor(
    eps_ts: float, n: int, window: int, failures: Sequence[float] | None = None
) -> float:
    """
    1 - eps_ts sum_{l=1..L} (1 - eps_ts)^(l-1) F_{N-l}.

    *failures* supplies F_0 .. F_{N-1}; without it F is generated by the
    same recursion from F_0 = 1. F at a negative index counts as 1.
    """
    if not 0.0 <= eps_ts <= 1.0:
        raise ValueError(f"eps_bar * Ts must lie in [0, 1], got {eps_ts}")
    if n < 0 or window < 1:
        raise ValueError("n must be nonnegative and the window positive")
    weights = eps_ts * (1.0 - eps_ts) ** np.arange(window)

    def term(sequence: Sequence[float], index: int) -> float:
        return float(sum(w * (sequence[index - l] if index - l >= 0 else 1.0) for l, w in enumerate(weights, 1)))

    if failures is None:
        generated = [1.0]
        for index in range(1, n):
            generated.append(term(generated, index))
        failures = generated
    elif len(failures) < n:
        raise ValueError(f"{n} failure probabilities needed, got {len(failures)}")
    elif any(not 0.0 <= value <= 1.0 for value in failures[:n]):
        raise ValueError("Failure probabilities must lie in [0, 1]")
    return 1.0 - term(failures, n)


class FalsificationReport(NamedTuple):
    kind: BoundKind
    variant: str
    instances: int
    violations: int
    min_slack: float
    """Smallest simulated overlap minus floor."""

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _random_hermitian(dim: int, rng: np.random.Generator, scale: float) -> NDArray[np.complex128]:
    raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    hermitian = 0.5 * (raw + raw.conj().T)
    return scale * hermitian / _norm(hermitian)


def _random_state(dim: int, rng: np.random.Generator) -> PureState:
    return PureState.normalized(rng.standard_normal(dim) + 1j * rng.standard_normal(dim))


def _channel_for(kind: BoundKind, gamma: float, dim: int, variant: str, rng: np.random.Generator):
    match kind:
        case BoundKind.CLOSED:
            return DissipationChannel.empty()
        case BoundKind.DEPOLARIZING:
            if variant == "table":
                return DissipationChannel.pauli_depolarizing(gamma)
            return DissipationChannel.depolarizing(2, gamma)
        case BoundKind.PHASE_DAMPING:
            return DissipationChannel.phase_damping(gamma)
        case BoundKind.AMPLITUDE_DAMPING:
            return DissipationChannel.amplitude_damping(gamma)
        case BoundKind.UNIFORM:
            return DissipationChannel.sigma_y(gamma) if dim == 2 else DissipationChannel.depolarizing(dim, gamma)
        case BoundKind.DEPOLARIZING_N:
            return DissipationChannel.depolarizing(dim, gamma)
    if dim == 2:
        names = ("sigma_y", "phase_damping", "amplitude_damping", "depolarizing")
        return DissipationChannel.from_name(names[int(rng.integers(len(names)))], gamma, dim)
    return DissipationChannel.depolarizing(dim, gamma)


def _overlap_after(
    psi: PureState,
    model: HamiltonianModel,
    schedule: ControlSchedule,
    channel: DissipationChannel,
    method: Literal["expm", "rk4"],
    period: float,
) -> float:
    prediction = evolve_nominal(psi, model.with_uncertainty(None), schedule).density()
    true = evolve_master(
        psi.density(), model, schedule, channel, include_uncertainty=True, period=period, method=method
    )
    return overlap(true, prediction)


def falsify_bound(
    kind: BoundKind | str,
    *,
    instances: int = 200,
    seed: int = 0,
    delta_bar: float = 0.1,
    gamma_bar: float = 0.2,
    ts: float = 1.0,
    steps: int = 1,
    dim: int = 2,
    variant: Variant = "appendix",
    channel_parameterization: Literal["auto", "p_D", "pauli"] = "auto",
    method: Literal["expm", "rk4"] = "expm",
) -> FalsificationReport:
    """
    Compare a floor with the simulated overlap on random admissible instances.

    Each instance draws a Hamiltonian, a pure start, bounds up to
    *delta_bar* and *gamma_bar* inside the validity window, an uncertainty
    of size at most its bound and a rate at most its bound, then checks
    overlap >= floor - 1e-9 after ``steps * ts``.
    """
    kind = BoundKind(kind)
    if kind is BoundKind.APPENDIX_A:
        return falsify_appendix_a(instances=instances, seed=seed, ts=ts)
    if kind in _TWO_LEVEL:
        dim = 2
    rng = np.random.default_rng(seed)
    window = math.pi / 4 if kind is BoundKind.AMPLITUDE_DAMPING else math.pi / 2
    channel_variant = variant if channel_parameterization == "auto" else (
        "table" if channel_parameterization == "pauli" else "appendix"
    )
    uncertain = kind not in (BoundKind.UNIFORM, BoundKind.DEPOLARIZING_N)

    violations, min_slack = 0, math.inf
    for _ in range(instances):
        instance_delta = rng.uniform(0.0, min(delta_bar, window / (steps * ts))) if uncertain else 0.0
        instance_gamma = 0.0 if kind is BoundKind.CLOSED else rng.uniform(0.0, gamma_bar)
        uncertainty = sample_uncertainty(instance_delta, dim, rng, mode="uniform")
        rate = rng.uniform(0.0, instance_gamma)
        channel = _channel_for(kind, rate, dim, channel_variant, rng)
        if kind is BoundKind.GENERAL:
            instance_gamma = max(instance_gamma, _norm(channel.decay_operator(dim)))
        model = HamiltonianModel(_random_hermitian(dim, rng, rng.uniform(0.0, 2.0)), (), uncertainty)
        psi = _random_state(dim, rng)
        schedule = ControlSchedule.constant((), steps * ts)

        spec = BoundSpec(kind, instance_delta, instance_gamma, ts, steps, dim, variant)
        floor = success_floor(spec)
        if not floor.valid:
            continue
        slack = _overlap_after(psi, model, schedule, channel, method, ts) - floor.value
        min_slack = min(min_slack, slack)
        if slack < -_SLACK:
            violations += 1
    report = FalsificationReport(kind, variant, instances, violations, min_slack)
    logger.debug("%s/%s: %d violations, min slack %.3g", kind, variant, violations, min_slack)
    return report


def falsify_appendix_a(*, instances: int = 200, seed: int = 0, ts: float = 1.0, dim: int = 2) -> FalsificationReport:
    """
    Check |<psi|U^dagger V|psi>|^2 >= (1 - Gamma^2/2)^2 on random time-independent pairs with Gamma < sqrt(2).

    Pairs with Gamma >= sqrt(2) are redrawn.
    """
    rng = np.random.default_rng(seed)
    violations, min_slack = 0, math.inf
    accepted = 0
    while accepted < instances:
        h = _random_hermitian(dim, rng, rng.uniform(0.0, 2.0))
        h_delta = _random_hermitian(dim, rng, rng.uniform(0.0, 1.0))
        floor = success_floor_appendix_a(h, h_delta, ts)
        if not floor.valid:
            continue
        accepted += 1
        psi = _random_state(dim, rng).amplitudes
        nominal = _expm_hermitian(h, -1j * ts) @ psi
        true = _expm_hermitian(h + h_delta, -1j * ts) @ psi
        slack = abs(np.vdot(nominal, true)) ** 2 - floor.value
        min_slack = min(min_slack, slack)
        if slack < -_SLACK:
            violations += 1
    return FalsificationReport(BoundKind.APPENDIX_A, "appendix", instances, violations, min_slack)


class VariantRow(NamedTuple):
    variant: str
    parameterization: str
    report: FalsificationReport


def depolarizing_variant_report(
    *, instances: int = 200, seed: int = 0, delta_bar: float = 0.1, gamma_bar: float = 0.2, ts: float = 1.0
) -> list[VariantRow]:
    """
    Run both depolarizing floors against both channel parameterizations.

    ``p_D`` evolves rho to exp(-gamma t) rho + (1 - exp(-gamma t)) I/2;
    ``pauli`` applies sigma_x, sigma_y and sigma_z at rate gamma each.
    """
    rows = []
    for variant in ("appendix", "table"):
        for parameterization in ("p_D", "pauli"):
            report = falsify_bound(
                BoundKind.DEPOLARIZING,
                instances=instances,
                seed=seed,
                delta_bar=delta_bar,
                gamma_bar=gamma_bar,
                ts=ts,
                variant=variant,
                channel_parameterization=parameterization,
            )
            rows.append(VariantRow(variant, parameterization, report))
            if not report.passed:
                logger.debug("Depolarizing %s floor fails under the %s parameterization", variant, parameterization)
    return rows
