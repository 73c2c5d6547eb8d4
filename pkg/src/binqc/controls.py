"""Piecewise-constant control sequences on a uniform time grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

_BOX_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ControlSequence:
    """An ``N x T`` matrix of control amplitudes on ``[0, t_f]``.

    Row ``j`` holds controller ``j``; column ``k`` holds time step ``k``.
    The step length is derived as ``t_f / T`` so that the horizon is stored
    exactly.
    """

    values: np.ndarray
    t_f: float

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise DimensionError(f"controls must be a non-empty N x T matrix, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("controls contain non-finite values")
        if not self.t_f > 0:
            raise ValueError(f"t_f must be positive, got {self.t_f}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "t_f", float(self.t_f))

    @classmethod
    def constant(cls, n_controllers, n_steps, t_f, value=0.5):
        return cls(np.full((n_controllers, n_steps), float(value)), t_f)

    @classmethod
    def from_active(cls, active, n_controllers, t_f):
        """Binary SOS1 sequence from a per-step active-controller index list."""
        active = np.asarray(active, dtype=int)
        vals = np.zeros((n_controllers, active.size))
        vals[active, np.arange(active.size)] = 1.0
        return cls(vals, t_f)

    @property
    def n_controllers(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return self.t_f / self.n_steps

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values) -> "ControlSequence":
        return ControlSequence(values, self.t_f)

    def in_box(self, tol=_BOX_TOL) -> bool:
        return bool(np.all(self.values >= -tol) and np.all(self.values <= 1 + tol))

    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))

    def is_sos1(self, tol=0.0) -> bool:
        return bool(np.all(np.abs(self.values.sum(axis=0) - 1.0) <= tol))

    def active(self) -> np.ndarray:
        """Index of the active controller per step (binary SOS1 sequences only)."""
        if not (self.is_binary() and self.is_sos1()):
            raise ValueError("active() needs a binary SOS1 sequence")
        return np.argmax(self.values, axis=0)

    def switch_counts(self) -> np.ndarray:
        """Per-controller count of steps k with u[j,k] != u[j,k+1]."""
        return np.count_nonzero(np.diff(self.values, axis=1) != 0, axis=1)

    def same_grid(self, other: "ControlSequence") -> bool:
        return self.shape == other.shape and self.t_f == other.t_f

    def refine(self, factor: int) -> "ControlSequence":
        """Same piecewise-constant function on a grid ``factor`` times finer."""
        return ControlSequence(np.repeat(self.values, factor, axis=1), self.t_f)

    def __eq__(self, other):
        if not isinstance(other, ControlSequence):
            return NotImplemented
        return self.t_f == other.t_f and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"ControlSequence(N={self.n_controllers}, T={self.n_steps}, t_f={self.t_f})"
