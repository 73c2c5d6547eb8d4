import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from binqc.controls import ControlSequence
from binqc.dynamics import assemble_hamiltonian, check_hermitian, evolve, step_propagator
from binqc.errors import DimensionError, NotHermitianError
from binqc.instances import (InstanceParams, QuantumInstance, build_cnot_instance, build_energy_instance,
                             random_hermitian, unitarity_error)
from binqc.objectives import InfidelitySpec, evaluate

from conftest import FIXTURES, SIGMA_X, SIGMA_Y, SIGMA_Z


def _instance(h0, hc):
    d = h0.shape[0]
    return QuantumInstance("toy", 1, h0, hc, np.eye(d), InfidelitySpec(np.eye(d), float(d)),
                           InstanceParams(1.0, 4, 0.0, 1, 1))


def rk4_propagator(H, dt, substeps=10_000):
    X = np.eye(H.shape[0], dtype=complex)
    h = dt / substeps
    f = lambda Y: -1j * H @ Y
    for _ in range(substeps):
        k1 = f(X)
        k2 = f(X + 0.5 * h * k1)
        k3 = f(X + 0.5 * h * k2)
        k4 = f(X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return X


def test_hamiltonian_zero_controls_zero_drift():
    inst = _instance(np.zeros((2, 2)), np.stack([SIGMA_X]))
    assert np.array_equal(assemble_hamiltonian(inst, [0.0]), np.zeros((2, 2)))


def test_hamiltonian_single_term():
    inst = _instance(np.zeros((2, 2)), np.stack([SIGMA_X]))
    assert np.array_equal(assemble_hamiltonian(inst, [1.0]), SIGMA_X)


def test_cnot_hamiltonian_against_hand_built_kronecker():
    inst = build_cnot_instance(10)
    kron = lambda a, b: np.array([[a[i // 2, j // 2] * b[i % 2, j % 2] for j in range(4)] for i in range(4)])
    expected = kron(SIGMA_X, SIGMA_X) + kron(SIGMA_Y, SIGMA_Y) + kron(SIGMA_Z, SIGMA_Z) + kron(SIGMA_X, np.eye(2))
    np.testing.assert_allclose(assemble_hamiltonian(inst, [1.0, 0.0]), expected, atol=1e-15)


def test_hamiltonian_wrong_length():
    inst = _instance(np.zeros((2, 2)), np.stack([SIGMA_X, SIGMA_Z]))
    with pytest.raises(DimensionError):
        assemble_hamiltonian(inst, [1.0])


def test_hermitian_check():
    check_hermitian(SIGMA_Y)
    with pytest.raises(NotHermitianError):
        check_hermitian(np.array([[0, 1], [0, 0]], dtype=complex))


def test_propagator_closed_forms():
    np.testing.assert_allclose(step_propagator(np.zeros((3, 3)), 0.7), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(step_propagator(SIGMA_X, math.pi), -np.eye(2), atol=1e-14)


def test_propagator_matches_rk4():
    H = random_hermitian(4, np.random.default_rng(0))
    U = step_propagator(H, 0.05)
    assert np.linalg.norm(U - rk4_propagator(H, 0.05)) <= 1e-8
    assert unitarity_error(U) <= 1e-12


def test_evolve_zero_hamiltonians_is_static():
    inst = _instance(np.zeros((2, 2)), np.zeros((1, 2, 2)))
    tr = evolve(inst, ControlSequence.constant(1, 5, 1.0))
    for X in tr.states:
        assert np.array_equal(X, np.eye(2))


@pytest.mark.parametrize("steps", [1, 3, 16])
def test_evolve_constant_sigma_x_flips_sign(steps):
    inst = _instance(np.zeros((2, 2)), np.stack([SIGMA_X]))
    tr = evolve(inst, ControlSequence(np.ones((1, steps)), math.pi))
    np.testing.assert_allclose(tr.final, -np.eye(2), atol=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_trace_recursion_and_unitarity(seed, steps):
    rng = np.random.default_rng(seed)
    inst = _instance(random_hermitian(2, rng), np.stack([random_hermitian(2, rng) for _ in range(3)]))
    tr = evolve(inst, ControlSequence(rng.uniform(size=(3, steps)), 1.3))
    assert np.array_equal(tr.states[0], inst.x_init)
    for k in range(steps):
        np.testing.assert_allclose(tr.states[k + 1], tr.propagators[k] @ tr.states[k], atol=1e-12)
        assert unitarity_error(tr.states[k + 1]) <= 1e-10


def test_energy2_fixture_regression():
    from binqc.pipeline import read_controls
    import json
    u = read_controls(FIXTURES / "energy2_pgrape.csv")
    stored = json.loads((FIXTURES / "energy2_pgrape.json").read_text())["objective"]
    assert abs(evaluate(build_energy_instance(2), u) - stored) <= 1e-8
