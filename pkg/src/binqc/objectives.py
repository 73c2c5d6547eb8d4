"""Energy and infidelity objectives, SOS1 / TV terms, and adjoint gradients.

Gradients use the exact derivative of each step propagator,

    dU_k/du_jk = V_k (G_k o V_k^H H_j V_k) V_k^H,
    G_k[p, q] = (e^{-i w_p dt} - e^{-i w_q dt}) / (w_p - w_q)   (p != q)
    G_k[p, p] = -i dt e^{-i w_p dt},

where ``H_k = V_k diag(w) V_k^H``. For small ``dt`` this reduces to the
first-order form ``-i dt H_j U_k``; the exact form is needed for the gradient
to agree with finite differences at moderate step lengths.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .controls import ControlSequence
from .dynamics import EvolutionTrace, evolve
from .errors import DimensionError, ObjectiveError

IMAG_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class EnergySpec:
    """Minimise ``1 - <psi0| X^H Hbar X |psi0> / e_min``."""

    hbar: np.ndarray
    psi0: np.ndarray
    e_min: float

    def __post_init__(self):
        psi0 = np.asarray(self.psi0, dtype=complex).ravel()
        if abs(np.linalg.norm(psi0) - 1.0) > 1e-12:
            raise ValueError("psi0 must have unit norm")
        if not self.e_min < 0:
            raise ValueError(f"e_min must be negative, got {self.e_min}")
        object.__setattr__(self, "psi0", psi0)
        object.__setattr__(self, "hbar", np.asarray(self.hbar, dtype=complex))


@dataclass(frozen=True, eq=False)
class InfidelitySpec:
    """Minimise ``1 - |tr(target^H X)| / norm_dim``."""

    target: np.ndarray
    norm_dim: float

    def __post_init__(self):
        if not self.norm_dim > 0:
            raise ValueError("norm_dim must be positive")
        object.__setattr__(self, "target", np.asarray(self.target, dtype=complex))


ObjectiveSpec = Union[EnergySpec, InfidelitySpec]


class Sos1Mode(str, enum.Enum):
    PENALIZED = "penalized"
    SUBSTITUTED = "substituted"
    OFF = "off"


@dataclass(frozen=True)
class PenaltyConfig:
    rho: float = 0.0
    alpha: float = 0.0
    sos1_mode: Sos1Mode = Sos1Mode.PENALIZED

    def __post_init__(self):
        if self.rho < 0 or self.alpha < 0:
            raise ValueError("rho and alpha must be nonnegative")
        object.__setattr__(self, "sos1_mode", Sos1Mode(self.sos1_mode))


@dataclass(frozen=True, eq=False)
class AdmmTerms:
    """Augmented-Lagrangian data for the ADMM u-update: ``v``, ``mu`` are ``N x (T-1)``."""

    v: np.ndarray
    mu: np.ndarray
    beta: float


def _values(u):
    return u.values if isinstance(u, ControlSequence) else np.asarray(u, dtype=float)


def energy_objective(trace: EvolutionTrace, spec: EnergySpec) -> float:
    phi = trace.final @ spec.psi0
    e = np.vdot(phi, spec.hbar @ phi)
    if abs(e.imag) > IMAG_TOL:
        raise ObjectiveError(f"energy expectation has imaginary part {e.imag:.3e}")
    return float(1.0 - e.real / spec.e_min)


def infidelity_objective(trace_or_final, spec: InfidelitySpec) -> float:
    X = trace_or_final.final if isinstance(trace_or_final, EvolutionTrace) else trace_or_final
    X = np.asarray(X)
    if X.shape != spec.target.shape:
        raise DimensionError(f"final operator {X.shape} vs target {spec.target.shape}")
    value = 1.0 - abs(np.vdot(spec.target, X)) / spec.norm_dim
    if __debug__ and spec.norm_dim == X.shape[0]:
        assert -1e-12 <= value <= 1 + 1e-12, value
    return float(value)


def objective_value(trace: EvolutionTrace, spec: ObjectiveSpec) -> float:
    if isinstance(spec, EnergySpec):
        return energy_objective(trace, spec)
    return infidelity_objective(trace, spec)


def evaluate(instance, controls: ControlSequence, spec: Optional[ObjectiveSpec] = None) -> float:
    """Objective of ``controls`` on ``instance`` (its own objective unless ``spec`` is given)."""
    return objective_value(evolve(instance, controls), spec or instance.objective)


def sos1_penalty(controls) -> float:
    """``sum_k (sum_j u_jk - 1)^2``."""
    s = _values(controls).sum(axis=0) - 1.0
    return float(np.dot(s, s))


def tv_seminorm(controls) -> float:
    """``sum_j sum_k |u_jk - u_j,k+1|``."""
    return float(np.abs(np.diff(_values(controls), axis=1)).sum())


def _divided_differences(w, dt):
    # G[k,p,q] for the propagator derivative; expm1 keeps near-degenerate pairs accurate
    E = np.exp(-1j * dt * w)
    z = -1j * dt * (w[:, :, None] - w[:, None, :])
    small = np.abs(z) < 1e-300
    phi = np.where(small, 1.0, np.expm1(z) / np.where(small, 1.0, z))
    return -1j * dt * E[:, None, :] * phi


def _contract(trace, A, h_controls):
    # sum_pq A[k,p,q] (V_k^H H_j V_k)[p,q] for all j, k
    V = trace.eigvecs
    W = np.conj(V) @ A @ np.swapaxes(V, -1, -2)
    return np.einsum("jrs,krs->jk", h_controls, W)


def value_and_gradient(instance, controls: ControlSequence, spec: Optional[ObjectiveSpec] = None):
    """Objective value, ``N x T`` gradient and the forward trace, from one forward/backward sweep."""
    spec = spec or instance.objective
    trace = evolve(instance, controls)
    G = _divided_differences(trace.eigvals, trace.dt)
    Us = trace.propagators
    T = Us.shape[0]

    if isinstance(spec, EnergySpec):
        phis = trace.states @ spec.psi0           # phi_k = X_k psi0, k = 0..T
        kappa = np.empty((T,) + spec.psi0.shape, dtype=complex)
        kappa[T - 1] = spec.hbar @ phis[T]
        for k in range(T - 1, 0, -1):
            kappa[k - 1] = Us[k].conj().T @ kappa[k]
        e = np.vdot(phis[T], kappa[T - 1])
        if abs(e.imag) > IMAG_TOL:
            raise ObjectiveError(f"energy expectation has imaginary part {e.imag:.3e}")
        Vh = np.swapaxes(trace.eigvecs.conj(), -1, -2)
        a = np.einsum("kpr,kr->kp", Vh, kappa)
        b = np.einsum("kpr,kr->kp", Vh, phis[:-1])
        A = np.conj(a)[:, :, None] * G * b[:, None, :]
        dE = 2.0 * _contract(trace, A, instance.h_controls).real
        return float(1.0 - e.real / spec.e_min), -dE / spec.e_min, trace

    target_h = spec.target.conj().T
    overlap = np.vdot(spec.target, trace.final)
    mag = abs(overlap)
    if mag == 0.0:
        raise ObjectiveError("undefined phase: tr(target^H X_T) = 0; restart from perturbed controls")
    B = np.empty_like(Us)
    B[T - 1] = target_h
    for k in range(T - 1, 0, -1):
        B[k - 1] = B[k] @ Us[k]
    M = trace.states[:-1] @ B                    # X_{k-1} B_k
    V = trace.eigvecs
    Mp = np.swapaxes(V.conj(), -1, -2) @ M @ V
    A = G * np.swapaxes(Mp, -1, -2)
    dtr = _contract(trace, A, instance.h_controls)
    phase = np.conj(overlap) / mag
    grad = -(phase * dtr).real / spec.norm_dim
    return float(1.0 - mag / spec.norm_dim), grad, trace


def adjoint_gradient(instance, controls: ControlSequence, spec: Optional[ObjectiveSpec] = None) -> np.ndarray:
    return value_and_gradient(instance, controls, spec)[1]


def admm_quadratic(values, terms: AdmmTerms):
    """Value and gradient of ``beta/2 * sum (u_jk - u_j,k+1 - v_jk + mu_jk)^2``."""
    r = values[:, :-1] - values[:, 1:] - terms.v + terms.mu
    g = np.zeros_like(values)
    g[:, :-1] += terms.beta * r
    g[:, 1:] -= terms.beta * r
    return 0.5 * terms.beta * float(np.sum(r * r)), g


def composite_value_and_gradient(instance, controls: ControlSequence, spec: Optional[ObjectiveSpec],
                                 penalty: PenaltyConfig, admm_terms: Optional[AdmmTerms] = None):
    """``F + rho*l(u,T)`` (plus the ADMM quadratic when given) and its gradient w.r.t. the full matrix.

    With ``Sos1Mode.SUBSTITUTED`` the controls must already satisfy
    ``u2 = 1 - u1`` and the penalty is identically zero; use
    :func:`reduce_substituted` to get the derivative w.r.t. row 1.
    """
    vals = controls.values
    if penalty.sos1_mode is Sos1Mode.SUBSTITUTED:
        if controls.n_controllers != 2:
            raise DimensionError("substituted SOS1 mode needs exactly two controllers")
        if np.max(np.abs(vals[0] + vals[1] - 1.0)) > 1e-12:
            raise ValueError("substituted SOS1 mode needs u2 = 1 - u1")
    value, grad, _ = value_and_gradient(instance, controls, spec)
    if penalty.sos1_mode is Sos1Mode.PENALIZED and penalty.rho > 0:
        s = vals.sum(axis=0) - 1.0
        value += penalty.rho * float(np.dot(s, s))
        grad = grad + 2.0 * penalty.rho * s[None, :]
    if admm_terms is not None:
        qv, qg = admm_quadratic(vals, admm_terms)
        value += qv
        grad = grad + qg
    return value, grad


def reduce_substituted(grad: np.ndarray) -> np.ndarray:
    """Chain rule for ``u = (x, 1 - x)``: derivative w.r.t. ``x``."""
    return grad[0] - grad[1]
