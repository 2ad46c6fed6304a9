import numpy as np
import pytest
from qtopc import _core, _dynamics
from qtopc._base import DimensionMismatch, InvariantViolation, StepSizeError
from qtopc._operators import J_X, J_Z, LOWERING, SIGMA_X, SIGMA_Y, SIGMA_Z


def two_level_model(uncertainty=None):
    return _dynamics.HamiltonianModel(SIGMA_Z, (_dynamics.Control(SIGMA_X, 1.0),), uncertainty)


def test_model_validation():
    with pytest.raises(DimensionMismatch):
        _dynamics.HamiltonianModel(np.zeros((2, 3)))
    with pytest.raises(InvariantViolation):
        _dynamics.HamiltonianModel(np.array([[0, 1], [0, 0]]))
    with pytest.raises(DimensionMismatch):
        _dynamics.HamiltonianModel(SIGMA_Z, (_dynamics.Control(J_X, 1.0),))
    with pytest.raises(InvariantViolation):
        _dynamics.HamiltonianModel(SIGMA_Z, (_dynamics.Control(SIGMA_X, 0.0),))

    model = two_level_model()
    assert model.dim == 2
    assert model.n_controls == 1
    assert np.allclose(model.hamiltonian([0.5]), SIGMA_Z + 0.5 * SIGMA_X)


def test_uncertainty():
    uncertainty = _dynamics.Uncertainty(0.1, SIGMA_Y, -0.05)
    model = two_level_model(uncertainty)
    assert np.allclose(model.hamiltonian([0.0], include_uncertainty=True), SIGMA_Z - 0.05 * SIGMA_Y)
    assert np.allclose(model.hamiltonian([0.0]), SIGMA_Z)

    with pytest.raises(InvariantViolation):
        _dynamics.Uncertainty(0.1, SIGMA_Y, 0.2)
    with pytest.raises(InvariantViolation):
        _dynamics.Uncertainty(0.1, 2 * SIGMA_Y, 0.1)
    with pytest.raises(DimensionMismatch):
        _dynamics.HamiltonianModel(J_Z, (), uncertainty)


def test_sample_uncertainty(rng):
    fixed = _dynamics.sample_uncertainty(0.2, 3, rng)
    assert fixed.delta == 0.2
    assert np.linalg.norm(fixed.direction, 2) == pytest.approx(1.0)

    uniform = _dynamics.sample_uncertainty(0.2, 3, rng, mode="uniform")
    assert 0.0 <= uniform.delta <= 0.2
    with pytest.raises(ValueError):
        _dynamics.sample_uncertainty(-0.1, 2, rng)


def test_channels():
    assert _dynamics.DissipationChannel.empty().is_empty
    assert _dynamics.DissipationChannel.from_name("sigma_y", 0.0).is_empty

    channel = _dynamics.DissipationChannel.from_name("J_y", 0.01, 3)
    assert channel.dim == 3
    assert channel.total_rate() == pytest.approx(0.01)

    depolarizing = _dynamics.DissipationChannel.depolarizing(3, 0.3)
    assert len(depolarizing.operators) == 9
    assert np.allclose(depolarizing.decay_operator(3), 0.3 * np.eye(3))

    with pytest.raises(ValueError):
        _dynamics.DissipationChannel.from_name("unknown", 0.1)
    with pytest.raises(InvariantViolation):
        _dynamics.DissipationChannel.single(2 * SIGMA_Y, 0.1)
    with pytest.raises(InvariantViolation):
        _dynamics.DissipationChannel.sigma_y(0.3, rate_bound=0.25)
    with pytest.raises(InvariantViolation):
        _dynamics.DissipationChannel.single(SIGMA_Y, -0.1, rate_bound=0.1)
    with pytest.raises(DimensionMismatch):
        _dynamics.DissipationChannel((SIGMA_Y,), (0.1, 0.2), 0.2)
    with pytest.raises(DimensionMismatch):
        depolarizing.check_dim(2)


def test_schedule_truncate_shift():
    schedule = _dynamics.ControlSchedule(((1.0, (1.0,)), (2.0, (-1.0,)), (0.5, (0.0,))))
    assert schedule.t_f == pytest.approx(3.5)
    assert len(schedule) == 3

    head = schedule.truncate(1.5)
    assert head.t_f == pytest.approx(1.5)
    assert np.allclose(head.values(1).ravel(), [1.0, -1.0])

    tail = schedule.shift(1.5)
    assert tail.t_f == pytest.approx(2.0)
    assert np.allclose(tail.durations, [1.5, 0.5])
    assert np.allclose(tail.values(1).ravel(), [-1.0, 0.0])

    assert schedule.shift(1.0).segments == schedule.segments[1:]
    assert schedule.shift(5.0).t_f == 0.0
    assert schedule.truncate(0.0) == _dynamics.ControlSchedule.empty()
    assert _dynamics.ControlSchedule.constant((1.0,), 0.0).t_f == 0.0

    with pytest.raises(InvariantViolation):
        _dynamics.ControlSchedule(((0.0, (1.0,)),))


def test_schedule_bounds():
    model = two_level_model()
    _dynamics.ControlSchedule.constant((1.0,), 1.0).check_bounds(model)
    with pytest.raises(InvariantViolation):
        _dynamics.ControlSchedule.constant((1.5,), 1.0).check_bounds(model)
    with pytest.raises(DimensionMismatch):
        _dynamics.ControlSchedule.constant((0.5, 0.5), 1.0).check_bounds(model)

    uniform = _dynamics.ControlSchedule.uniform([0.5, -0.5, 0.25, 0.0], 2.0)
    assert np.allclose(uniform.durations, 0.5)
    assert uniform.values(1).shape == (4, 1)


def test_evolve_nominal():
    model = two_level_model()
    # sigma_z + sigma_x rotates |0> onto |1> in two half turns about tilted axes
    half_turn = np.pi / (2 * np.sqrt(2))
    schedule = _dynamics.ControlSchedule(((half_turn, (1.0,)), (half_turn, (-1.0,))))
    final = _dynamics.evolve_nominal(_core.PureState.basis(2, 0), model, schedule)
    assert abs(final.amplitudes[1]) == pytest.approx(1.0)

    with pytest.raises(DimensionMismatch):
        _dynamics.evolve_nominal(_core.PureState.basis(3, 0), model, schedule)


def test_lindblad_rhs():
    rho = _core.DensityMatrix.basis(2, 1)
    channel = _dynamics.DissipationChannel.amplitude_damping(0.5)
    derivative = _dynamics.lindblad_rhs(rho, np.zeros((2, 2)), channel)
    assert np.allclose(derivative, np.diag([0.5, -0.5]))
    assert abs(np.trace(derivative)) < 1e-14

    with pytest.raises(DimensionMismatch):
        _dynamics.lindblad_rhs(rho, np.zeros((3, 3)), channel)


def test_rk4_matches_expm(rng):
    model = two_level_model(_dynamics.sample_uncertainty(0.1, 2, rng))
    schedule = _dynamics.ControlSchedule(((0.7, (1.0,)), (0.6, (-0.3,))))
    channel = _dynamics.DissipationChannel.sigma_y(0.2)
    rho0 = _core.DensityMatrix.from_pure([1, 1j])

    rk4 = _dynamics.evolve_master(rho0, model, schedule, channel, include_uncertainty=True)
    exact = _dynamics.evolve_master(rho0, model, schedule, channel, include_uncertainty=True, method="expm")
    assert np.max(np.abs(rk4.entries - exact.entries)) < 1e-8
    assert _core.validate_state(rk4).passed


def test_closed_master_equals_nominal():
    model = _dynamics.HamiltonianModel(J_Z, (_dynamics.Control(J_X, 1.0),))
    schedule = _dynamics.ControlSchedule(((0.8, (1.0,)), (1.1, (-1.0,))))
    psi0 = _core.PureState.basis(3, 0)

    pure = _dynamics.evolve_nominal(psi0, model, schedule)
    mixed = _dynamics.evolve_master(psi0.density(), model, schedule, method="expm")
    assert _core.overlap(mixed, pure.density()) == pytest.approx(1.0)


def test_depolarizing_closed_form():
    gamma, ts = 0.3, 1.5
    model = _dynamics.HamiltonianModel(np.zeros((3, 3)))
    rho0 = _core.DensityMatrix.basis(3, 0)
    final = _dynamics.evolve_master(
        rho0, model, _dynamics.ControlSchedule.constant((), ts), _dynamics.DissipationChannel.depolarizing(3, gamma)
    )
    expected = _dynamics.apply_depolarizing(rho0, 1 - np.exp(-gamma * ts))
    assert np.allclose(final.entries, expected.entries, atol=1e-9)
    assert _core.overlap(final, rho0) == pytest.approx(_dynamics.depolarizing_overlap(gamma, ts, 3))

    with pytest.raises(ValueError):
        _dynamics.apply_depolarizing(rho0, 1.5)


def test_amplitude_damping_decay():
    model = _dynamics.HamiltonianModel(np.zeros((2, 2)))
    final = _dynamics.evolve_master(
        _core.DensityMatrix.basis(2, 1),
        model,
        _dynamics.ControlSchedule.constant((), 2.0),
        _dynamics.DissipationChannel.single(LOWERING, 0.4),
    )
    assert final.entries[1, 1].real == pytest.approx(np.exp(-0.8), abs=1e-10)


def test_evolve_master_errors():
    model = two_level_model()
    schedule = _dynamics.ControlSchedule.constant((0.5,), 0.1)
    rho0 = _core.DensityMatrix.basis(2, 0)
    with pytest.raises(StepSizeError):
        _dynamics.evolve_master(rho0, model, schedule, step=0.2)
    with pytest.raises(DimensionMismatch):
        _dynamics.evolve_master(_core.DensityMatrix.basis(3, 0), model, schedule)
    with pytest.raises(DimensionMismatch):
        _dynamics.evolve_master(rho0, model, schedule, _dynamics.DissipationChannel.depolarizing(3, 0.1))
    with pytest.raises(ValueError):
        _dynamics.evolve_master(rho0, model, schedule, method="euler")  # type: ignore


def test_liouvillian_preserves_trace():
    channel = _dynamics.DissipationChannel.pauli_depolarizing(0.2)
    generator = _dynamics.liouvillian(SIGMA_Z + 0.3 * SIGMA_X, channel)
    # row-major vec of the identity picks the diagonal, so trace preservation reads Tr(L(rho)) = 0
    trace_row = np.eye(2).reshape(-1)
    assert np.allclose(trace_row @ generator, 0.0)


def test_trajectory_seeds():
    model = two_level_model()
    schedule = _dynamics.ControlSchedule.constant((0.4,), 1.0)
    channel = _dynamics.DissipationChannel.sigma_y(0.5)
    psi0 = _core.PureState.basis(2, 0)

    samples = _dynamics.sample_trajectories(psi0, model, schedule, channel, 6, 11, step=0.01, batch_size=4)
    assert len(samples) == 6
    for k, sample in enumerate(samples):
        single = _dynamics.sample_trajectory(psi0, model, schedule, channel, np.random.default_rng(11 ^ k), step=0.01)
        assert single.jumps == sample.jumps
        assert np.allclose(single.state.amplitudes, sample.state.amplitudes)

    again = _dynamics.sample_trajectories(psi0, model, schedule, channel, 6, 11, step=0.01)
    assert [sample.jumps for sample in again] == [sample.jumps for sample in samples]


def test_trajectory_closed_and_cap():
    model = two_level_model()
    schedule = _dynamics.ControlSchedule.constant((1.0,), 0.5)
    psi0 = _core.PureState.basis(2, 0)

    samples = _dynamics.sample_trajectories(psi0, model, schedule, _dynamics.DissipationChannel.empty(), 3, 0)
    assert _dynamics.no_jump_fraction(samples) == 1.0
    expected = _dynamics.evolve_nominal(psi0, model, schedule)
    assert abs(samples[0].state.inner(expected)) == pytest.approx(1.0)

    with pytest.raises(StepSizeError):
        _dynamics.sample_trajectory(
            psi0, model, schedule, _dynamics.DissipationChannel.sigma_y(0.5), np.random.default_rng(0), step=0.25
        )


@pytest.mark.slow
def test_trajectories_average_to_master_equation():
    model = two_level_model()
    schedule = _dynamics.ControlSchedule(((0.5, (1.0,)), (0.5, (-1.0,))))
    channel = _dynamics.DissipationChannel.sigma_y(0.3)
    psi0 = _core.PureState.basis(2, 0)

    samples = _dynamics.sample_trajectories(psi0, model, schedule, channel, 20000, 3, step=1e-3)
    averaged = _dynamics.average_state(samples)
    exact = _dynamics.evolve_master(psi0.density(), model, schedule, channel, method="expm")
    assert _core.trace_distance(averaged, exact) < 0.02


def test_no_jump_probability():
    model = _dynamics.HamiltonianModel(np.zeros((2, 2)))
    schedule = _dynamics.ControlSchedule.constant((), 1.0)
    channel = _dynamics.DissipationChannel.sigma_y(0.3)
    psi0 = _core.PureState.basis(2, 0)

    path = _dynamics.no_jump_path(psi0, model, schedule, channel, step=0.01)
    # sigma_y^dagger sigma_y = I, so the no-jump probability is exp(-gamma t) for every state
    assert path.norms_squared[-1] == pytest.approx(np.exp(-0.3))
    assert _dynamics.no_jump_probability(channel, path) == pytest.approx(np.exp(-0.3), rel=1e-6)
    assert _dynamics.no_jump_probability(channel, path, (0.0, 0.5)) == pytest.approx(np.exp(-0.15), rel=1e-6)
    assert _dynamics.no_jump_probability(_dynamics.DissipationChannel.empty(), path) == 1.0


def test_default_step_follows_period():
    assert _dynamics._segment_steps(0.5, None) == (500, 0.001)
    assert _dynamics._segment_steps(0.5, None, period=0.01) == (50000, 1e-5)
    assert _dynamics._segment_steps(1e-4, None) == (1, 1e-4)

    model = _dynamics.HamiltonianModel(SIGMA_Z)
    schedule = _dynamics.ControlSchedule.constant((), 0.02)
    channel = _dynamics.DissipationChannel.sigma_y(200.0)
    psi0 = _core.PureState.basis(2, 0)

    assert len(_dynamics.no_jump_path(psi0, model, schedule, channel).times) == 21
    assert len(_dynamics.no_jump_path(psi0, model, schedule, channel, period=0.02).times) == 1001

    with pytest.raises(StepSizeError):
        _dynamics.sample_trajectory(psi0, model, schedule, channel, np.random.default_rng(0))
    sample = _dynamics.sample_trajectory(psi0, model, schedule, channel, np.random.default_rng(0), period=0.1)
    assert sample.state.dim == 2

    plus = _core.DensityMatrix.from_pure([1, 1])
    rk4 = _dynamics.evolve_master(plus, model, schedule, channel, period=0.02)
    exact = _dynamics.evolve_master(plus, model, schedule, channel, method="expm")
    assert _core.trace_distance(rk4, exact) < 1e-10
    coarse = _dynamics.evolve_master(plus, model, schedule, channel)
    assert _core.trace_distance(coarse, exact) > _core.trace_distance(rk4, exact)


def random_density(dim, rng):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    product = g @ g.conj().T
    return _core.DensityMatrix(product / np.trace(product).real)


def random_schedule(rng, segments=3):
    return _dynamics.ControlSchedule(
        tuple((float(rng.uniform(0.1, 0.5)), (float(rng.uniform(-1, 1)),)) for _ in range(segments))
    )


def test_lindblad_evolution_contracts(rng):
    model = two_level_model()
    for name in ("sigma_y", "phase_damping", "amplitude_damping", "depolarizing"):
        channel = _dynamics.DissipationChannel.from_name(name, float(rng.uniform(0.05, 0.5)), 2)
        for _ in range(10):
            first, second = random_density(2, rng), random_density(2, rng)
            schedule = random_schedule(rng)
            before = _core.trace_distance(first, second)
            after = _core.trace_distance(
                _dynamics.evolve_master(first, model, schedule, channel),
                _dynamics.evolve_master(second, model, schedule, channel),
            )
            assert after <= before + 1e-6


def test_closed_evolution_keeps_purity(rng):
    model = _dynamics.HamiltonianModel(J_Z, (_dynamics.Control(J_X, 1.0),))
    for _ in range(10):
        amplitudes = rng.normal(size=3) + 1j * rng.normal(size=3)
        psi0 = _core.PureState.normalized(amplitudes)
        schedule = random_schedule(rng)
        final = _dynamics.evolve_master(psi0.density(), model, schedule)
        assert final.purity() == pytest.approx(1.0, abs=1e-8)
        nominal = _dynamics.evolve_nominal(psi0, model, schedule).density()
        assert _core.trace_distance(final, nominal) < 1e-6

        mixed = random_density(3, rng)
        evolved = _dynamics.evolve_master(mixed, model, schedule)
        assert evolved.purity() == pytest.approx(mixed.purity(), abs=1e-8)


def test_no_jump_frequency():
    model = two_level_model()
    schedule = _dynamics.ControlSchedule.constant((0.3,), 1.0)
    gamma, count = 0.4, 10000
    samples = _dynamics.sample_trajectories(
        _core.PureState.basis(2, 0), model, schedule, _dynamics.DissipationChannel.sigma_y(gamma), count, 17, step=0.01
    )
    expected = np.exp(-gamma)
    stderr = np.sqrt(expected * (1 - expected) / count)
    assert abs(_dynamics.no_jump_fraction(samples) - expected) <= 3 * stderr
