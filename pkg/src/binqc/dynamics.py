"""Step Hamiltonians and unitary propagation over the time grid.

Each step Hamiltonian is diagonalised once; the propagator and (in
:mod:`binqc.objectives`) the exact derivative of the propagator are both
built from the same eigendecomposition.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import ControlSequence
from .errors import DimensionError, NotHermitianError

HERMITIAN_TOL = 1e-12


def check_hermitian(H, tol=HERMITIAN_TOL, what="matrix"):
    H = np.asarray(H)
    if H.shape[-1] != H.shape[-2]:
        raise DimensionError(f"{what} is not square: shape {H.shape}")
    dev = np.max(np.abs(H - np.swapaxes(H.conj(), -1, -2))) if H.size else 0.0
    if dev > tol:
        raise NotHermitianError(f"{what} is not Hermitian: max |A - A^H| = {dev:.3e} > {tol:.0e}")


def assemble_hamiltonian(instance, controls_at_step) -> np.ndarray:
    """Return ``H0 + sum_j u_j H_j`` for one time step."""
    u = np.asarray(controls_at_step, dtype=float).ravel()
    hc = instance.h_controls
    if u.size != len(hc):
        raise DimensionError(f"expected {len(hc)} control values, got {u.size}")
    H = np.array(instance.h_drift, dtype=complex, copy=True)
    for j, (uj, Hj) in enumerate(zip(u, hc)):
        if Hj.shape != H.shape:
            raise DimensionError(
                f"control Hamiltonian {j} has shape {Hj.shape}, drift has {H.shape}", index=j)
        H += uj * Hj
    return H


def step_propagator(H, dt: float) -> np.ndarray:
    """``exp(-i H dt)`` via the Hermitian eigendecomposition ``H = V diag(w) V^H``."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {H.shape}")
    check_hermitian(H, what="step Hamiltonian")
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w * dt)) @ V.conj().T


def step_hamiltonians(instance, values) -> np.ndarray:
    """Stack of step Hamiltonians, shape ``(T, d, d)``, for an ``N x T`` control matrix."""
    values = np.asarray(values, dtype=float)
    hc = instance.h_controls
    if values.ndim != 2 or values.shape[0] != len(hc):
        raise DimensionError(
            f"controls have {values.shape[0] if values.ndim == 2 else '?'} rows, "
            f"instance has {len(hc)} controllers")
    # index-ordered accumulation keeps results bitwise reproducible
    Hs = np.broadcast_to(instance.h_drift, (values.shape[1],) + instance.h_drift.shape).copy()
    for j in range(len(hc)):
        Hs += values[j][:, None, None] * hc[j]
    return Hs


@dataclass(frozen=True, eq=False)
class EvolutionTrace:
    """Propagators ``U_1..U_T`` and cumulative operators ``X_0..X_T``.

    ``propagators[k]`` is the propagator of step ``k+1`` (0-based storage), so
    ``states[k+1] = propagators[k] @ states[k]``.
    """

    propagators: np.ndarray
    states: np.ndarray
    dt: float
    eigvals: np.ndarray = field(repr=False)
    eigvecs: np.ndarray = field(repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def n_steps(self) -> int:
        return self.propagators.shape[0]


def evolve(instance, controls: ControlSequence, x_init=None) -> EvolutionTrace:
    """Propagate ``X_k = U_k X_{k-1}`` from ``X_0`` (the instance's ``x_init`` by default)."""
    if controls.n_controllers != instance.n_controllers:
        raise DimensionError(
            f"controls have {controls.n_controllers} rows, instance has "
            f"{instance.n_controllers} controllers")
    Hs = step_hamiltonians(instance, controls.values)
    check_hermitian(Hs, what="step Hamiltonian")
    dt = controls.dt
    w, V = np.linalg.eigh(Hs)
    Us = (V * np.exp(-1j * dt * w)[:, None, :]) @ np.swapaxes(V.conj(), -1, -2)
    X0 = np.asarray(instance.x_init if x_init is None else x_init, dtype=complex)
    states = np.empty((Us.shape[0] + 1,) + X0.shape, dtype=complex)
    states[0] = X0
    for k in range(Us.shape[0]):
        states[k + 1] = Us[k] @ states[k]
    return EvolutionTrace(Us, states, dt, w, V)
