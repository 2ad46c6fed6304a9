import numpy as np
import pytest
from qtopc import _core, _operators
from qtopc._base import DimensionMismatch, InvariantViolation, Tolerances


def test_pure_state_norm():
    state = _core.PureState([0, 1])
    assert state.dim == 2

    with pytest.raises(InvariantViolation):
        _core.PureState([1, 1])
    with pytest.raises(InvariantViolation):
        _core.PureState.normalized([0, 0])

    normalized = _core.PureState.normalized([3, 4])
    assert np.allclose(normalized.amplitudes, [0.6, 0.8])


def test_pure_state_is_read_only():
    state = _core.PureState.basis(3, 1)
    with pytest.raises(ValueError):
        state.amplitudes[0] = 1.0
    with pytest.raises(AttributeError):
        state.amplitudes = np.zeros(3)  # type: ignore


def test_fix_phase():
    state = _core.PureState.normalized([0, 1j], fix_phase=True)
    assert np.allclose(state.amplitudes, [0, 1])

    state = _core.PureState.normalized([1j, 1j], fix_phase=True)
    assert np.allclose(state.amplitudes, [2 ** -0.5, 2 ** -0.5])


def test_inner():
    plus = _core.PureState.normalized([1, 1])
    zero = _core.PureState.basis(2, 0)
    assert plus.inner(zero) == pytest.approx(2 ** -0.5)
    with pytest.raises(DimensionMismatch):
        plus.inner(_core.PureState.basis(3, 0))


def test_density_matrix_shape():
    with pytest.raises(DimensionMismatch):
        _core.DensityMatrix(np.zeros((2, 3)))
    with pytest.raises(DimensionMismatch):
        _core.DensityMatrix(np.zeros(4))

    rho = _core.DensityMatrix.maximally_mixed(4)
    assert rho.dim == 4
    assert rho.purity() == pytest.approx(0.25)
    assert not rho.is_pure()
    assert _core.DensityMatrix.basis(3, 2).is_pure()


def test_validate_state():
    report = _core.validate_state(_core.DensityMatrix.diagonal([0.25, 0.75]))
    assert report.passed
    assert report.min_eigenvalue == pytest.approx(0.25)

    report = _core.validate_state([[1, 1], [0, 0]])
    assert not report.passed
    assert len(report.failures) == 2
    assert report.hermiticity_defect == pytest.approx(1.0)
    assert report.trace_defect == pytest.approx(0.0)

    report = _core.validate_state(np.diag([1.2, -0.2]))
    assert len(report.failures) == 1
    assert "negative eigenvalue" in report.failures[0]

    assert _core.validate_state(np.diag([0.5, 0.5 + 1e-7]), tol=1e-6).passed
    with pytest.raises(InvariantViolation):
        _core.DensityMatrix(np.diag([0.5, 0.6])).checked()


def test_distances():
    zero = _core.DensityMatrix.basis(2, 0)
    one = _core.DensityMatrix.basis(2, 1)
    plus = _core.DensityMatrix.from_pure([1, 1])

    assert _core.trace_distance(zero, one) == pytest.approx(1.0)
    assert _core.trace_distance(zero, zero) == pytest.approx(0.0)
    assert _core.trace_distance(zero, plus) == pytest.approx(0.5 ** 0.5)
    assert _core.terminal_error(zero, plus) == pytest.approx(0.5)

    assert _core.overlap(zero, plus) == pytest.approx(0.5)
    assert _core.fidelity(plus, zero) == pytest.approx(0.5 ** 0.5)
    assert _core.infidelity(plus, zero) == pytest.approx(0.5)
    assert _core.infidelity(zero, zero) == pytest.approx(0.0)

    with pytest.raises(DimensionMismatch):
        _core.overlap(zero, _core.DensityMatrix.basis(3, 0))
    with pytest.raises(DimensionMismatch):
        _core.trace_distance(zero, _core.DensityMatrix.basis(3, 0))


def test_mixed_state_fidelity():
    mixed = _core.DensityMatrix.maximally_mixed(3)
    target = _core.DensityMatrix.basis(3, 2)
    assert _core.infidelity(mixed, target) == pytest.approx(2 / 3)
    assert _core.trace_distance(mixed, target) == pytest.approx(2 / 3)


def test_nearest_pure_state():
    state = _core.nearest_pure_state(_core.DensityMatrix.diagonal([0.3, 0.7]))
    assert np.allclose(state.amplitudes, [0, 1])

    state = _core.nearest_pure_state(_core.DensityMatrix.maximally_mixed(2))
    assert np.allclose(state.amplitudes, [1, 0])

    state = _core.nearest_pure_state(_core.DensityMatrix.diagonal([0.0, 0.5, 0.5]))
    assert np.allclose(state.amplitudes, [0, 1, 0])

    state = _core.nearest_pure_state(_core.DensityMatrix.from_pure([1j, 0]))
    assert np.allclose(state.amplitudes, [1, 0])

    psi = _core.PureState.normalized([1, 2j, -1])
    rho = _core.DensityMatrix(0.9 * psi.density().entries + 0.1 * np.eye(3) / 3)
    assert abs(_core.nearest_pure_state(rho).inner(psi)) == pytest.approx(1.0)


def test_tolerances_override():
    before = Tolerances.integration
    with Tolerances.override(integration=1e-3):
        assert Tolerances.integration == 1e-3
    assert Tolerances.integration == before

    assert "jump_probability_cap" in Tolerances.names()
    with pytest.raises(TypeError), Tolerances.override(nonsense=1.0):
        pass


def test_operators():
    for operator in (_operators.SIGMA_X, _operators.SIGMA_Y, _operators.SIGMA_Z):
        assert np.allclose(operator @ operator, np.eye(2))
    assert np.allclose(_operators.J_X @ _operators.J_Y - _operators.J_Y @ _operators.J_X, 1j * _operators.J_Z)
    with pytest.raises(ValueError):
        _operators.SIGMA_X[0, 0] = 1

    assert np.allclose(_operators.projector(3, 1), np.diag([0, 1, 0]))
    with pytest.raises(ValueError):
        _operators.ket(2, 2)
    assert "sigma_y" in _operators.operator_names()
    assert np.array_equal(_operators.named_operator("sigma_y"), _operators.SIGMA_Y)
    with pytest.raises(ValueError):
        _operators.named_operator("sigma_w")


def random_pure(dim, rng):
    return _core.PureState.normalized(rng.normal(size=dim) + 1j * rng.normal(size=dim))


def random_density(dim, rng):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    product = g @ g.conj().T
    return _core.DensityMatrix(product / np.trace(product).real)


def test_distance_inequalities(rng):
    for _ in range(200):
        dim = int(rng.integers(2, 5))
        a, b, c = (random_density(dim, rng) for _ in range(3))
        assert _core.trace_distance(a, c) <= _core.trace_distance(a, b) + _core.trace_distance(b, c) + 1e-9

        psi, phi = random_pure(dim, rng).density(), random_pure(dim, rng).density()
        assert _core.trace_distance(psi, phi) <= np.sqrt(max(1 - _core.overlap(psi, phi), 0.0)) + 1e-9


def test_terminal_error_of_pure_pairs(rng):
    for _ in range(200):
        dim = int(rng.integers(2, 5))
        psi, phi = random_pure(dim, rng), random_pure(dim, rng)
        expected = 1 - abs(psi.inner(phi)) ** 2
        assert _core.terminal_error(psi.density(), phi.density()) == pytest.approx(expected, abs=1e-9)


def test_nearest_pure_state_is_maximal(rng):
    for _ in range(20):
        rho = random_density(int(rng.integers(2, 5)), rng)
        psi = _core.nearest_pure_state(rho)
        best = _core.overlap(psi.density(), rho)
        for _ in range(100):
            phi = random_pure(rho.dim, rng)
            assert _core.overlap(phi.density(), rho) <= best + 1e-10
