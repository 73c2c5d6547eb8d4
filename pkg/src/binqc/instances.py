"""Benchmark problem families: energy minimisation, CNOT, leaky NOT, circuit compilation."""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .controls import ControlSequence
from .dynamics import check_hermitian
from .errors import DimensionError, FormatError, NotUnitaryError
from .objectives import EnergySpec, InfidelitySpec, ObjectiveSpec, Sos1Mode

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PROJ_1 = np.array([[0, 0], [0, 1]], dtype=complex)
I2 = np.eye(2, dtype=complex)

UNITARY_TOL = 1e-10
TARGET_UNITARY_TOL = 1e-8

# gmon coupling strengths (charge drive, flux drive, qubit-qubit coupling)
J_CHARGE = 0.2 * math.pi
J_FLUX = 3.0 * math.pi
J_EDGE = 0.1 * math.pi

X_CNOT = np.array([[1, 0, 0, 0],
                   [0, 1, 0, 0],
                   [0, 0, 0, 1],
                   [0, 0, 1, 0]], dtype=complex)

X_NOT = np.array([[0, 1, 0],
                  [1, 0, 0],
                  [0, 0, 0]], dtype=complex)


@dataclass(frozen=True)
class InstanceParams:
    """Per-family defaults: horizon, grid, TV weight, min-up steps, max switches, SOS1 penalty."""

    t_f: float
    n_steps: int
    alpha: float
    t_minup: int
    s_max: int
    rho: float = 0.0


@dataclass(frozen=True, eq=False)
class QuantumInstance:
    name: str
    n_qubits: int
    h_drift: np.ndarray
    h_controls: np.ndarray
    x_init: np.ndarray
    objective: ObjectiveSpec
    params: InstanceParams
    sos1_mode: Sos1Mode = Sos1Mode.PENALIZED
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h0 = np.asarray(self.h_drift, dtype=complex)
        hc = np.asarray(self.h_controls, dtype=complex)
        if hc.ndim != 3 or hc.shape[0] < 1:
            raise DimensionError(f"need a stack of control Hamiltonians, got shape {hc.shape}")
        check_hermitian(h0, what="drift Hamiltonian")
        for j, Hj in enumerate(hc):
            if Hj.shape != h0.shape:
                raise DimensionError(f"control Hamiltonian {j} has shape {Hj.shape}, drift has {h0.shape}",
                                     index=j)
            check_hermitian(Hj, what=f"control Hamiltonian {j}")
        x0 = np.asarray(self.x_init, dtype=complex)
        if unitarity_error(x0) > UNITARY_TOL:
            raise NotUnitaryError("x_init is not unitary")
        object.__setattr__(self, "h_drift", h0)
        object.__setattr__(self, "h_controls", hc)
        object.__setattr__(self, "x_init", x0)
        object.__setattr__(self, "sos1_mode", Sos1Mode(self.sos1_mode))

    @property
    def dim(self) -> int:
        return self.h_drift.shape[0]

    @property
    def n_controllers(self) -> int:
        return self.h_controls.shape[0]

    def with_grid(self, t_f: Optional[float] = None, n_steps: Optional[int] = None) -> "QuantumInstance":
        p = self.params
        params = InstanceParams(p.t_f if t_f is None else t_f, p.n_steps if n_steps is None else n_steps,
                                p.alpha, p.t_minup, p.s_max, p.rho)
        return QuantumInstance(self.name, self.n_qubits, self.h_drift, self.h_controls, self.x_init,
                               self.objective, params, self.sos1_mode, dict(self.meta))


def unitarity_error(X) -> float:
    X = np.asarray(X)
    return float(np.max(np.abs(X.conj().T @ X - np.eye(X.shape[0]))))


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats)


def pauli_embed(p, site: int, q: int) -> np.ndarray:
    """``I^(site-1) (x) p (x) I^(q-site)``; sites are 1-based, qubit 1 is the most significant."""
    if not 1 <= site <= q:
        raise IndexError(f"site {site} outside 1..{q}")
    p = np.asarray(p, dtype=complex)
    if p.shape != (2, 2):
        raise DimensionError(f"single-site operator must be 2x2, got {p.shape}")
    return np.kron(np.kron(np.eye(2 ** (site - 1), dtype=complex), p), np.eye(2 ** (q - site), dtype=complex))


def random_coupling_matrix(q: int, seed) -> np.ndarray:
    """Symmetric ``q x q`` matrix, zero diagonal, off-diagonal entries uniform on [-1, 1]."""
    rng = np.random.default_rng(seed)
    J = np.zeros((q, q))
    iu = np.triu_indices(q, k=1)
    J[iu] = rng.uniform(-1.0, 1.0, size=len(iu[0]))
    return J + J.T


def build_energy_instance(q: int, j_matrix=None, seed=None, name: Optional[str] = None) -> QuantumInstance:
    """Transverse-field mixer ``-sum X_i`` and Ising cost ``sum_{i != j} J_ij Z_i Z_j``.

    For ``q = 2`` and no ``j_matrix`` the coupling is the all-ones off-diagonal
    matrix; otherwise a random matrix is drawn from ``seed``. The sum runs over
    ordered pairs, so each edge contributes twice (as does ``e_min``).
    """
    if j_matrix is None:
        if q == 2 and seed is None:
            j_matrix = np.array([[0.0, 1.0], [1.0, 0.0]])
        else:
            j_matrix = random_coupling_matrix(q, 0 if seed is None else seed)
    J = np.asarray(j_matrix, dtype=float)
    if J.shape != (q, q):
        raise DimensionError(f"J must be {q}x{q}, got {J.shape}")
    if not np.array_equal(J, J.T):
        raise ValueError("J must be symmetric")
    if np.any(np.diag(J) != 0):
        raise ValueError("J must have a zero diagonal")

    dim = 2 ** q
    h_mix = -sum(pauli_embed(SIGMA_X, i, q) for i in range(1, q + 1))
    h_cost = np.zeros((dim, dim), dtype=complex)
    zs = [pauli_embed(SIGMA_Z, i, q) for i in range(1, q + 1)]
    for i in range(q):
        for j in range(q):
            if i != j and J[i, j] != 0:
                h_cost += J[i, j] * (zs[i] @ zs[j])
    e_min = float(np.min(np.diag(h_cost).real))
    if not e_min < 0:
        raise ValueError("cost Hamiltonian has no negative energy; J is degenerate")
    psi0 = np.full(dim, 2.0 ** (-q / 2), dtype=complex)
    spec = EnergySpec(h_cost, psi0, e_min)
    params = InstanceParams(t_f=2.0, n_steps=40, alpha=0.01, t_minup=10, s_max=5)
    return QuantumInstance(name or f"Energy{q}", q, np.zeros((dim, dim), dtype=complex),
                           np.stack([h_mix, h_cost]), np.eye(dim, dtype=complex), spec, params,
                           Sos1Mode.SUBSTITUTED, {"J": J})


_CNOT_PARAMS = {5: (100, 0.01), 10: (200, 0.001), 15: (300, 1e-4), 20: (400, 1e-4)}


def build_cnot_instance(t_f: float = 10.0, n_steps: Optional[int] = None) -> QuantumInstance:
    """Two-qubit isotropic Heisenberg drift with ``X_1`` and ``Y_1`` controls, CNOT target."""
    steps, alpha = _CNOT_PARAMS.get(int(t_f) if float(t_f).is_integer() else -1, (int(round(20 * t_f)), 1e-3))
    n_steps = steps if n_steps is None else n_steps
    h0 = sum(pauli_embed(P, 1, 2) @ pauli_embed(P, 2, 2) for P in (SIGMA_X, SIGMA_Y, SIGMA_Z))
    hc = np.stack([pauli_embed(SIGMA_X, 1, 2), pauli_embed(SIGMA_Y, 1, 2)])
    params = InstanceParams(t_f=float(t_f), n_steps=n_steps, alpha=alpha, t_minup=10, s_max=20)
    name = f"CNOT{int(t_f)}" if float(t_f).is_integer() else f"CNOT{t_f}"
    return QuantumInstance(name, 2, h0, hc, np.eye(4, dtype=complex), InfidelitySpec(X_CNOT, 4.0),
                           params, Sos1Mode.OFF)


_NOT_PARAMS = {2: (20, 4), 6: (60, 12), 10: (100, 20)}


def build_not_instance(t_f: float = 6.0, n_steps: Optional[int] = None,
                       mu=(0.0, 2 * math.pi), omega=(1.0, math.sqrt(2.0))) -> QuantumInstance:
    """Three-level qubit with leakage level; NOT target on the lowest two levels, normalised by 2."""
    steps, s_max = _NOT_PARAMS.get(int(t_f) if float(t_f).is_integer() else -1, (int(round(10 * t_f)), 2 * int(t_f)))
    n_steps = steps if n_steps is None else n_steps
    h0 = np.diag([0.0, mu[0], mu[1]]).astype(complex)
    w1, w2 = omega
    h1 = np.array([[0, w1, 0], [w1, 0, w2], [0, w2, 0]], dtype=complex)
    h2 = np.array([[0, 1j * w1, 0], [-1j * w1, 0, 1j * w2], [0, -1j * w2, 0]], dtype=complex)
    params = InstanceParams(t_f=float(t_f), n_steps=n_steps, alpha=0.001, t_minup=5, s_max=s_max)
    name = f"NOT{int(t_f)}" if float(t_f).is_integer() else f"NOT{t_f}"
    return QuantumInstance(name, 1, h0, np.stack([h1, h2]), np.eye(3, dtype=complex),
                           InfidelitySpec(X_NOT, 2.0), params, Sos1Mode.SUBSTITUTED)


def grid_edges(rows: int, cols: int):
    """Nearest-neighbour pairs (1-based, row-major) of a ``rows x cols`` qubit grid."""
    idx = lambda r, c: r * cols + c + 1
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((idx(r, c), idx(r, c + 1)))
            if r + 1 < rows:
                edges.append((idx(r, c), idx(r + 1, c)))
    return edges


def build_circuit_instance(q: int, edges, target, rho: float = 1.0, name: Optional[str] = None,
                           params: Optional[InstanceParams] = None) -> QuantumInstance:
    """gmon controllers: per qubit a charge drive and a flux drive, then one coupler per edge.

    ``target`` is a unitary matrix or a path to a target file (see :func:`read_target`).
    """
    if isinstance(target, (str, Path)):
        target = read_target(target)
    target = np.asarray(target, dtype=complex)
    dim = 2 ** q
    if target.shape != (dim, dim):
        raise DimensionError(f"target must be {dim}x{dim}, got {target.shape}")
    if unitarity_error(target) > TARGET_UNITARY_TOL:
        raise NotUnitaryError(f"target is not unitary (max |X^H X - I| = {unitarity_error(target):.2e})")
    controls = []
    for j in range(1, q + 1):
        controls.append(J_CHARGE * pauli_embed(SIGMA_X, j, q))
        controls.append(J_FLUX * pauli_embed(PROJ_1, j, q))
    for a, b in edges:
        if not (1 <= a <= q and 1 <= b <= q and a != b):
            raise ValueError(f"bad edge ({a}, {b}) for {q} qubits")
        controls.append(J_EDGE * pauli_embed(SIGMA_X, a, q) @ pauli_embed(SIGMA_X, b, q))
    if params is None:
        params = InstanceParams(t_f=4.0, n_steps=80, alpha=0.001, t_minup=10, s_max=8, rho=rho)
    return QuantumInstance(name or f"Circuit{q}q", q, np.zeros((dim, dim), dtype=complex), np.stack(controls),
                           np.eye(dim, dtype=complex), InfidelitySpec(target, float(dim)), params,
                           Sos1Mode.PENALIZED, {"edges": [tuple(e) for e in edges]})


def build_circuit_h2(target, rho: float = 1.0) -> QuantumInstance:
    return build_circuit_instance(2, [(1, 2)], target, rho, "CircuitH2",
                                  InstanceParams(4.0, 80, 0.001, 10, 8, rho))


def build_circuit_lih(target, rho: float = 0.1) -> QuantumInstance:
    return build_circuit_instance(4, grid_edges(2, 2), target, rho, "CircuitLiH",
                                  InstanceParams(20.0, 200, 0.001, 5, 40, rho))


def random_unitary(dim: int, seed=0) -> np.ndarray:
    """Haar-random unitary from the QR decomposition of a complex Gaussian matrix."""
    rng = np.random.default_rng(seed)
    Z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))


def random_hermitian(dim: int, rng) -> np.ndarray:
    A = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    H = (A + A.conj().T) / 2
    return (H + H.conj().T) / 2


def build_synthetic_instance(n_controllers: int = 3, q: int = 1, seed=0, target=None,
                             t_f: float = 2.0, n_steps: int = 20, rho: float = 1.0) -> QuantumInstance:
    """Random Hermitian controls (no drift) with an infidelity objective; for property tests."""
    rng = np.random.default_rng(seed)
    dim = 2 ** q
    hc = np.stack([random_hermitian(dim, rng) for _ in range(n_controllers)])
    if target is None:
        target = random_unitary(dim, rng.integers(2 ** 31))
    params = InstanceParams(t_f, n_steps, 0.001, max(1, n_steps // 8), max(1, n_steps // 10), rho)
    return QuantumInstance(f"Synthetic{n_controllers}x{q}q", q, np.zeros((dim, dim), dtype=complex), hc,
                           np.eye(dim, dtype=complex), InfidelitySpec(target, float(dim)), params,
                           Sos1Mode.PENALIZED)


# -- on/off combinations for problems without the one-active-controller rule ---------------

def combination_vertices(n_controllers: int) -> np.ndarray:
    """All ``2^L`` on/off patterns, shape ``(2^L, L)``, in binary counting order (all-off first)."""
    return np.array(list(itertools.product((0, 1), repeat=n_controllers)), dtype=float)


def expand_combinations(instance: QuantumInstance) -> QuantumInstance:
    """Instance whose controllers are the ``2^L`` on/off patterns of ``instance``'s controllers.

    Pattern ``v`` drives with ``sum_l v_l H_l``. Exactly one pattern is active
    per step, so binary sequences of the original problem with no SOS1 rule
    are the SOS1 sequences of the expanded one.
    """
    verts = combination_vertices(instance.n_controllers)
    hc = np.einsum("vl,lrs->vrs", verts, instance.h_controls)
    meta = dict(instance.meta, expanded_from=instance.name, vertices=verts.tolist())
    return QuantumInstance(instance.name + "-expanded", instance.n_qubits, instance.h_drift, hc,
                           instance.x_init, instance.objective, instance.params, Sos1Mode.PENALIZED, meta)


def combination_weights(u) -> ControlSequence:
    """Product weights ``prod_l (u_l if v_l else 1 - u_l)`` per pattern; they sum to 1 and reproduce ``u``."""
    a = u.values
    verts = combination_vertices(a.shape[0])
    w = np.ones((len(verts), a.shape[1]))
    for i, v in enumerate(verts):
        for l, on in enumerate(v):
            w[i] *= a[l] if on else 1.0 - a[l]
    return ControlSequence(w, u.t_f)


def collapse_combinations(w, n_controllers: int) -> ControlSequence:
    """Inverse map ``u_l = sum_v w_v v_l``."""
    verts = combination_vertices(n_controllers)
    if w.n_controllers != len(verts):
        raise DimensionError(f"expected {len(verts)} pattern rows, got {w.n_controllers}")
    return ControlSequence(verts.T @ w.values, w.t_f)


# -- target-unitary text format -------------------------------------------------------------

_COMPLEX_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?[+-](\d+\.?\d*|\.\d+)([eE][+-]?\d+)?i$")


def format_complex(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}i"


def parse_complex(token: str, line: Optional[int] = None) -> complex:
    tok = token.strip()
    if not _COMPLEX_RE.match(tok):
        raise FormatError(f"bad complex entry {token!r}, expected 'a+bi'", line)
    return complex(tok[:-1] + "j")


def write_target(path, X) -> None:
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionError(f"target must be square, got {X.shape}")
    lines = [f"dim {X.shape[0]}"]
    lines += [" ".join(format_complex(z) for z in row) for row in X]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_target(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    rows = [(i + 1, ln) for i, ln in enumerate(text) if ln.strip()]
    if not rows:
        raise FormatError("empty target file", 1)
    lineno, header = rows[0]
    parts = header.split()
    if len(parts) != 2 or parts[0] != "dim" or not parts[1].isdigit() or int(parts[1]) < 1:
        raise FormatError(f"expected header 'dim <d>', got {header!r}", lineno)
    d = int(parts[1])
    body = rows[1:]
    if len(body) != d:
        raise FormatError(f"expected {d} matrix rows, found {len(body)}",
                          body[d][0] if len(body) > d else lineno + len(body) + 1)
    X = np.empty((d, d), dtype=complex)
    for r, (ln, content) in enumerate(body):
        toks = content.split()
        if len(toks) != d:
            raise FormatError(f"expected {d} entries, found {len(toks)}", ln)
        X[r] = [parse_complex(t, ln) for t in toks]
    return X


def build_named(name: str, target=None, seed=None, rho: Optional[float] = None) -> QuantumInstance:
    """Instance by family name, e.g. ``Energy4``, ``CNOT10``, ``NOT6``, ``CircuitH2``."""
    m = re.fullmatch(r"(Energy|CNOT|NOT|CircuitH2|CircuitLiH)(\d*)", name)
    if not m:
        raise ValueError(f"unknown instance {name!r}")
    family, num = m.group(1), m.group(2)
    if family == "Energy":
        q = int(num or 2)
        # the two-qubit coupling is fixed; larger sizes draw J from the seed
        return build_energy_instance(q, seed=None if q == 2 else (0 if seed is None else seed))
    if family == "CNOT":
        return build_cnot_instance(float(num or 10))
    if family == "NOT":
        return build_not_instance(float(num or 6))
    if target is None:
        dim = 4 if family == "CircuitH2" else 16
        target = random_unitary(dim, 0 if seed is None else seed)
    builder = build_circuit_h2 if family == "CircuitH2" else build_circuit_lih
    return builder(target) if rho is None else builder(target, rho)
