"""Rounding of relaxed controls to binary SOS1 controls.

Sum-up rounding (SUR) is a single greedy pass. Combinatorial integral
approximation (CIA) minimises the maximum integral deviation over binary SOS1
sequences in a constrained set, by exact depth-first branch-and-bound over the
active controller of each step. The same engine solves the constrained
trust-region subproblem in :mod:`binqc.alb`, with an additive node cost.
"""
from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import report as rp
from .controls import ControlSequence
from .errors import DimensionError, InfeasibleConstraintError
from .objectives import sos1_penalty


@dataclass(frozen=True)
class Unconstrained:
    def __str__(self):
        return "unconstrained"


@dataclass(frozen=True)
class MinUpTime:
    """At most one switch per controller in any ``t_minup`` consecutive transitions."""

    t_minup: int

    def __post_init__(self):
        if int(self.t_minup) != self.t_minup or self.t_minup < 1:
            raise ValueError(f"t_minup must be a positive integer, got {self.t_minup}")

    def __str__(self):
        return f"min-up-time({self.t_minup})"


@dataclass(frozen=True)
class MaxSwitching:
    """At most ``s_max`` switches per controller over the horizon."""

    s_max: int

    def __post_init__(self):
        if int(self.s_max) != self.s_max or self.s_max < 0:
            raise ValueError(f"s_max must be a nonnegative integer, got {self.s_max}")

    def __str__(self):
        return f"max-switching({self.s_max})"


RoundingConstraint = Union[Unconstrained, MinUpTime, MaxSwitching]


# -- SUR and bound quantities -------------------------------------------------

def sum_up_rounding(u_c: ControlSequence) -> ControlSequence:
    """SOS1 sum-up rounding: each step goes to the controller with the largest accrued deficit.

    Ties go to the smallest controller index.
    """
    vals = u_c.values
    n, t = vals.shape
    dt = u_c.dt
    active = np.empty(t, dtype=int)
    cum_c = np.zeros(n)
    cum_b = np.zeros(n)
    for k in range(t):
        cum_c += vals[:, k] * dt
        j = int(np.argmax(cum_c - cum_b))
        cum_b[j] += dt
        active[k] = j
    out = ControlSequence.from_active(active, n, u_c.t_f)
    assert out.is_sos1()
    return out


def independent_sum_up_rounding(u_c: ControlSequence) -> ControlSequence:
    """Sum-up rounding of each controller on its own, for binaries without the one-active rule.

    Step ``k`` is on when the accrued deficit reaches ``dt / 2``. This equals
    SOS1 rounding of the pair ``(u_j, 1 - u_j)`` for every ``j``.
    """
    vals = u_c.values
    dt = u_c.dt
    out = np.zeros_like(vals)
    deficit = np.zeros(vals.shape[0])
    for k in range(vals.shape[1]):
        deficit += vals[:, k] * dt
        on = deficit >= 0.5 * dt
        out[on, k] = 1.0
        deficit[on] -= dt
    return ControlSequence(out, u_c.t_f)


def sos1_drift_epsilon(u_c: ControlSequence) -> float:
    """``max_k |sum_{tau <= k} (sum_j u_j,tau - 1) dt|``."""
    drift = np.cumsum((u_c.values.sum(axis=0) - 1.0) * u_c.dt)
    return float(np.max(np.abs(drift)))


def max_integral_deviation(u_c: ControlSequence, u_b: ControlSequence) -> float:
    """``max_{j,k} |sum_{tau <= k} (u_c - u_b)_{j,tau} dt|``."""
    if not u_c.same_grid(u_b):
        raise DimensionError(f"grids differ: {u_c.shape}, t_f={u_c.t_f} vs {u_b.shape}, t_f={u_b.t_f}")
    return float(np.max(np.abs(np.cumsum((u_c.values - u_b.values) * u_c.dt, axis=1))))


@dataclass(frozen=True)
class BoundCertificate:
    epsilon: float
    max_integral_deviation: float
    deviation_bound: float
    epsilon_bound: float
    lower_bound: float

    @property
    def deviation_margin(self) -> float:
        return self.deviation_bound - self.max_integral_deviation

    @property
    def epsilon_margin(self) -> float:
        return self.epsilon_bound - self.epsilon

    @property
    def lower_margin(self) -> float:
        return self.max_integral_deviation - self.lower_bound

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "max_integral_deviation": self.max_integral_deviation,
                "deviation_bound": self.deviation_bound, "epsilon_bound": self.epsilon_bound,
                "lower_bound": self.lower_bound, "deviation_margin": self.deviation_margin,
                "epsilon_margin": self.epsilon_margin, "lower_margin": self.lower_margin}


def bound_certificate(u_c: ControlSequence, u_b: ControlSequence) -> BoundCertificate:
    """SUR error bounds for the pair ``(u_c, u_b)``.

    ``deviation_bound = (N-1) dt + (2N-1)/N * eps`` bounds the deviation of an SUR
    output from above; ``eps / N`` bounds any SOS1 binary sequence's deviation
    from below; ``epsilon_bound = sqrt(t_f * l(u_c) * dt)`` bounds ``eps``.
    """
    n, dt = u_c.n_controllers, u_c.dt
    eps = sos1_drift_epsilon(u_c)
    dev = max_integral_deviation(u_c, u_b)
    return BoundCertificate(eps, dev, (n - 1) * dt + (2 * n - 1) / n * eps,
                            math.sqrt(u_c.t_f * sos1_penalty(u_c) * dt), eps / n)


# -- constraint handling ------------------------------------------------------

def _minup_windows_active(constraint, n_steps):
    # windows t = 1..T - t_minup over transitions; none exist when T <= t_minup
    return isinstance(constraint, MinUpTime) and n_steps > constraint.t_minup


def check_feasible(constraint: RoundingConstraint, n_controllers: int, n_steps: int) -> None:
    """Raise :class:`InfeasibleConstraintError` if no binary SOS1 sequence satisfies ``constraint``.

    A constant single-controller sequence has no switches, so every valid
    constraint is feasible; what remains to check is the shape of the problem.
    """
    if n_controllers < 1 or n_steps < 1:
        raise InfeasibleConstraintError(f"empty problem: N={n_controllers}, T={n_steps}")
    if isinstance(constraint, MinUpTime) and constraint.t_minup > n_steps:
        raise InfeasibleConstraintError(f"t_minup={constraint.t_minup} exceeds the horizon T={n_steps}")
    if not isinstance(constraint, (Unconstrained, MinUpTime, MaxSwitching)):
        raise TypeError(f"unknown constraint {constraint!r}")


def switch_transitions(active: Sequence[int], n_controllers: int):
    """Per controller, the 1-based transitions ``k`` (between steps k and k+1) where it switches."""
    out = [[] for _ in range(n_controllers)]
    for k in range(1, len(active)):
        if active[k] != active[k - 1]:
            out[active[k - 1]].append(k)
            out[active[k]].append(k)
    return out


def satisfies(u_b: ControlSequence, constraint: RoundingConstraint) -> bool:
    """Binary SOS1 plus the window / switch-count constraint, checked literally."""
    if not (u_b.is_binary() and u_b.is_sos1()):
        return False
    if isinstance(constraint, Unconstrained):
        return True
    vals = u_b.values
    v = np.abs(np.diff(vals, axis=1))          # v[j, k-1] for transition k
    if isinstance(constraint, MaxSwitching):
        return bool(np.all(v.sum(axis=1) <= constraint.s_max))
    tm, t = constraint.t_minup, u_b.n_steps
    for start in range(1, t - tm + 1):
        if np.any(v[:, start - 1:start - 1 + tm].sum(axis=1) > 1):
            return False
    return True


class _Constraint:
    """Incremental constraint state for the search; states are hashable tuples."""

    def __init__(self, constraint, n, t):
        self.kind = constraint
        self.n = n
        self.minup = _minup_windows_active(constraint, t)
        self.tm = constraint.t_minup if isinstance(constraint, MinUpTime) else 0
        self.smax = constraint.s_max if isinstance(constraint, MaxSwitching) else 0
        self.maxsw = isinstance(constraint, MaxSwitching)

    def initial(self):
        if self.minup:
            return (0,) * self.n    # last switch transition, 0 = none yet
        if self.maxsw:
            return (0,) * self.n    # switch counts
        return ()

    def step(self, state, k, jprev, j):
        """State after choosing ``j`` at 0-based step ``k`` (transition ``k``), or None if forbidden."""
        if j == jprev or jprev < 0:
            return self._normalise(state, k)
        if self.minup:
            for c in (jprev, j):
                if state[c] and k - state[c] < self.tm:
                    return None
            s = list(state)
            s[jprev] = s[j] = k
            return self._normalise(tuple(s), k)
        if self.maxsw:
            if state[jprev] >= self.smax or state[j] >= self.smax:
                return None
            s = list(state)
            s[jprev] += 1
            s[j] += 1
            return tuple(s)
        return state

    def _normalise(self, state, k):
        # forget switches old enough to no longer restrict anything, so more states share memo entries
        if self.minup and any(state):
            return tuple(0 if s and k - s >= self.tm else s for s in state)
        return state


class _TimeUp(Exception):
    pass


class _BranchAndBound:
    """Exact DFS over per-step active-controller choices with memoised subtrees.

    ``solve(state, z)`` returns ``(value, exact)``: when the best completion
    from ``state`` is below ``z`` it is returned exactly, otherwise a lower
    bound ``>= z``. Node costs combine by ``max`` (CIA) or ``+`` (trust region).
    The global incumbent is updated at leaves and at exact memo hits.
    """

    MEMO_CAP = 2_000_000
    CHECK_EVERY = 1024

    def __init__(self, n, t, children: Callable, suffix_lb, additive: bool, time_limit: Optional[float]):
        self.n, self.t = n, t
        self.children = children           # (k, jprev, aux) -> list of (j, cost, new_aux) in preferred order
        self.suffix_lb = suffix_lb         # suffix_lb[k]: lower bound on the completion cost of steps k..T-1
        self.additive = additive
        self.deadline = None if time_limit is None else time.perf_counter() + time_limit
        self.memo = {}
        self.nodes = 0
        self.best_value = math.inf
        self.best_path = None
        self.path = []
        self.prefix = [0.0 if additive else -math.inf]

    def _combine(self, a, b):
        return a + b if self.additive else max(a, b)

    def _threshold_for_future(self):
        # completions must beat the incumbent in total, which caps the future value
        p = self.prefix[-1]
        if self.additive:
            return self.best_value - p
        return self.best_value if self.best_value > p else -math.inf

    def seed(self, path, value):
        self.best_path, self.best_value = list(path), value

    def _record(self, tail, total):
        if total < self.best_value:
            self.best_value = total
            self.best_path = self.path + tail

    def _tail(self, key):
        tail = []
        while key[0] < self.t:
            entry = self.memo.get(key)
            if entry is None or entry[2] is None:
                return None
            tail.append(entry[2])
            key = entry[3]
        return tail

    def solve(self, k, jprev, cstate, aux, z):
        if k == self.t:
            self._record([], self.prefix[-1])
            return (0.0 if self.additive else -math.inf), True
        self.nodes += 1
        if self.deadline is not None and self.nodes % self.CHECK_EVERY == 0 and time.perf_counter() > self.deadline:
            raise _TimeUp
        z = min(z, self._threshold_for_future())
        if self.suffix_lb[k] >= z:
            return self.suffix_lb[k], False
        key = (k, jprev, cstate, aux)
        hit = self.memo.get(key)
        if hit is not None:
            value, exact = hit[0], hit[1]
            if exact:
                tail = self._tail(key)
                if tail is not None:
                    self._record(tail, self._combine(self.prefix[-1], value))
                return value, True
            if value >= z:
                return value, False
        best, best_child, exact_best = z, None, False
        lower = math.inf
        for j, cost, new_cstate, new_aux in self.children(k, jprev, cstate, aux):
            bound = cost + self.suffix_lb[k + 1] if self.additive else cost
            if bound >= best:
                lower = min(lower, bound)
                continue
            self.path.append(j)
            self.prefix.append(self._combine(self.prefix[-1], cost))
            try:
                sub_z = best - cost if self.additive else best
                sub, sub_exact = self.solve(k + 1, j, new_cstate, new_aux, sub_z)
            finally:
                self.path.pop()
                self.prefix.pop()
            through = self._combine(cost, sub)
            if sub_exact and through < best:
                best, best_child, exact_best = through, (j, (k + 1, j, new_cstate, new_aux)), True
            else:
                lower = min(lower, through)
        if exact_best and lower >= best:
            entry = (best, True, best_child[0], best_child[1])
        else:
            # a child cut off by the global incumbent may still hide something below ``best``
            entry = (max(min(lower, best), self.suffix_lb[k]), False, None, None)
        if len(self.memo) < self.MEMO_CAP or key in self.memo:
            self.memo[key] = entry
        return entry[0], entry[1]

    def run(self, jprev0, cstate0, aux0):
        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 4 * self.t + 200))
        try:
            self.solve(0, jprev0, cstate0, aux0, math.inf)
            status = rp.CONVERGED
        except _TimeUp:
            status = rp.TIME_LIMIT
        finally:
            sys.setrecursionlimit(limit)
        return self.best_path, self.best_value, status


# -- CIA ----------------------------------------------------------------------

@dataclass
class CiaResult:
    controls: ControlSequence
    objective: float
    status: str
    nodes: int
    wall_seconds: float


def cia_round(u_c: ControlSequence, constraint: RoundingConstraint = Unconstrained(),
              time_limit: Optional[float] = 60.0):
    """Minimise the max integral deviation over binary SOS1 sequences obeying ``constraint``.

    Returns ``(controls, objective, status)`` with status ``"converged"`` when
    the search closed (proven optimum) and ``"time-limit"`` otherwise.
    """
    res = cia_solve(u_c, constraint, time_limit)
    return res.controls, res.objective, res.status


def cia_solve(u_c: ControlSequence, constraint: RoundingConstraint = Unconstrained(),
              time_limit: Optional[float] = 60.0) -> CiaResult:
    n, t = u_c.shape
    check_feasible(constraint, n, t)
    dt = u_c.dt
    cum_c = np.cumsum(u_c.values * dt, axis=1)           # cum_c[j, k] includes step k
    cons = _Constraint(constraint, n, t)
    # any SOS1 sequence has sum_j count_j = k+1, so some controller deviates by >= |drift| / N
    drift = np.abs(cum_c.sum(axis=0) - dt * np.arange(1, t + 1)) / n
    suffix_lb = np.append(np.maximum.accumulate(drift[::-1])[::-1], -math.inf)
    cum_list = cum_c.T.tolist()

    def children(k, jprev, cstate, counts):
        col = cum_list[k]
        base = [col[c] - counts[c] * dt for c in range(n)]
        order = sorted(range(n), key=lambda c: (-base[c], c))
        out = []
        for j in order:
            new_c = cons.step(cstate, k, jprev, j)
            if new_c is None:
                continue
            dev = max(abs(base[c] - (dt if c == j else 0.0)) for c in range(n))
            new_counts = counts[:j] + (counts[j] + 1,) + counts[j + 1:]
            out.append((j, dev, new_c, new_counts))
        return out

    start = time.perf_counter()
    engine = _BranchAndBound(n, t, children, suffix_lb, additive=False, time_limit=time_limit)
    path, value, status = engine.run(-1, cons.initial(), (0,) * n)
    wall = time.perf_counter() - start
    u_b = ControlSequence.from_active(path, n, u_c.t_f)
    if not satisfies(u_b, constraint):
        raise AssertionError("branch-and-bound returned an infeasible sequence")
    return CiaResult(u_b, max_integral_deviation(u_c, u_b), status, engine.nodes, wall)


def round_report(stage, instance, u_c, u_b, status=rp.CONVERGED, wall=0.0, extra=None):
    """SolveReport for a rounding stage, with SUR bound certificates."""
    from .objectives import evaluate, tv_seminorm

    cert = bound_certificate(u_c, u_b)
    return rp.SolveReport(stage, evaluate(instance, u_b), tv_seminorm(u_b), sos1_penalty(u_b), 0, wall, status,
                          epsilon=cert.epsilon, bound_certificates=cert.to_dict(), extra=dict(extra or {}))


# -- constrained trust-region subproblem ---------------------------------------

def linear_subproblem(u_hat: ControlSequence, grad, radius: int, constraint: RoundingConstraint = Unconstrained(),
                      time_limit: Optional[float] = 60.0):
    """Minimise ``<grad, u - u_hat>`` over binary SOS1 ``u`` in the constrained set with ``||u - u_hat||_1 <= radius``.

    Returns ``(u, optimal_value, status)``; ``u_hat`` itself (value 0) is the
    starting incumbent, so ties resolve towards it.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    grad = np.asarray(grad, dtype=float)
    n, t = u_hat.shape
    if grad.shape != (n, t):
        raise DimensionError(f"gradient shape {grad.shape} does not match controls {u_hat.shape}")
    check_feasible(constraint, n, t)
    if not satisfies(u_hat, constraint):
        raise InfeasibleConstraintError(f"center point violates {constraint}")
    hat = u_hat.active()
    cost = grad - grad[hat, np.arange(t)][None, :]      # cost[j, k] of making j active at step k
    step_min = cost.min(axis=0)
    suffix_lb = np.append(np.cumsum(step_min[::-1])[::-1], 0.0)
    cons = _Constraint(constraint, n, t)
    cost_list = cost.T.tolist()
    hat_list = hat.tolist()
    r = int(radius)

    def children(k, jprev, cstate, used):
        col = cost_list[k]
        h = hat_list[k]
        order = [h] + sorted((c for c in range(n) if c != h), key=lambda c: (col[c], c))
        out = []
        for j in order:
            b = used + (0 if j == h else 2)
            if b > r:
                continue
            new_c = cons.step(cstate, k, jprev, j)
            if new_c is None:
                continue
            out.append((j, col[j], new_c, b))
        return out

    engine = _BranchAndBound(n, t, children, suffix_lb, additive=True, time_limit=time_limit)
    engine.seed(hat_list, 0.0)
    path, value, status = engine.run(-1, cons.initial(), 0)
    u = ControlSequence.from_active(path, n, u_hat.t_f)
    return u, float(value), status
