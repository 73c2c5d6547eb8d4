"""Approximate local branching: trust-region improvement of binary SOS1 controls.

Each subproblem minimises the linearised objective over binary SOS1 sequences
within an L1 ball around the current point. With a TV regulariser the
subproblem is an exact dynamic program over (step, active controller, flips
used); with min-up-time / max-switching constraints it goes to the
branch-and-bound engine of :mod:`binqc.rounding`.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import report as rp
from .controls import ControlSequence
from .errors import DimensionError, InfeasibleConstraintError
from .objectives import evaluate, sos1_penalty, tv_seminorm, value_and_gradient
from .rounding import RoundingConstraint, Unconstrained, linear_subproblem, satisfies

log = logging.getLogger(__name__)

# relative slack below which a predicted decrease counts as zero
_DECREASE_TOL = 1e-12


@dataclass(frozen=True)
class TrustRegionConfig:
    r0: Optional[int] = None        # None -> ceil(T / 5)
    r_bar: int = 2
    eta: float = 1e-3
    max_outer: int = 100
    subproblem_time_limit: Optional[float] = 60.0

    def __post_init__(self):
        if self.r_bar < 1:
            raise ValueError("r_bar must be at least 1")
        if self.r0 is not None and self.r0 < self.r_bar:
            raise ValueError("r0 must be at least r_bar")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.max_outer < 1:
            raise ValueError("max_outer must be positive")

    def start_radius(self, n_steps: int) -> int:
        return self.r0 if self.r0 is not None else max(self.r_bar, math.ceil(n_steps / 5))


@dataclass(frozen=True)
class TvMode:
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


@dataclass(frozen=True)
class ConstrainedMode:
    constraint: RoundingConstraint


Mode = Union[TvMode, ConstrainedMode]


def _check_center(u_hat: ControlSequence, grad):
    grad = np.asarray(grad, dtype=float)
    if grad.shape != u_hat.shape:
        raise DimensionError(f"gradient shape {grad.shape} does not match controls {u_hat.shape}")
    if not (u_hat.is_binary() and u_hat.is_sos1()):
        raise InfeasibleConstraintError("center point must be binary and SOS1-feasible")
    return grad


def tr_subproblem_tv(u_hat: ControlSequence, grad, alpha: float, radius: int):
    """Exact minimiser of ``<grad, u - u_hat> + alpha TV(u) - alpha TV(u_hat)`` within ``||u - u_hat||_1 <= radius``.

    Moving step ``k`` to another controller flips two entries, so the budget
    allows ``radius // 2`` moved steps. A change of active controller between
    consecutive steps adds ``2 alpha`` of TV. Among optimal sequences the one
    with the fewest moved steps is returned, and ``u_hat`` itself unless the
    improvement is above round-off. Returns ``(u, predicted_decrease)``.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    grad = _check_center(u_hat, grad)
    n, t = u_hat.shape
    hat = u_hat.active()
    cols = np.arange(t)
    cost = grad - grad[hat, cols][None, :]
    moves = min(int(radius) // 2, t)
    flip = np.ones((n, t), dtype=int)
    flip[hat, cols] = 0
    switch = 2.0 * alpha * (1.0 - np.eye(n))             # switch[jp, j]

    inf = math.inf
    dp = np.full((n, moves + 1), inf)
    for j in range(n):
        if flip[j, 0] <= moves:
            dp[j, flip[j, 0]] = cost[j, 0]
    back = np.zeros((t, n, moves + 1), dtype=int)
    for k in range(1, t):
        new = np.full_like(dp, inf)
        for j in range(n):
            f = flip[j, k]
            if f > moves:
                continue
            # cand[jp, m] = dp[jp, m] + switch[jp, j], landing in budget m + f
            cand = dp[:, :moves + 1 - f] + switch[:, j][:, None]
            arg = np.argmin(cand, axis=0)
            new[j, f:] = cand[arg, np.arange(cand.shape[1])] + cost[j, k]
            back[k, j, f:] = arg
        dp = new
    tv_hat = alpha * tv_seminorm(u_hat)
    total = dp - tv_hat
    best = float(np.min(total))
    scale = 1.0 + float(np.abs(grad).sum()) + tv_hat
    if not best < -_DECREASE_TOL * scale:
        return u_hat, 0.0
    # fewest moves among (near-)optimal end states
    ok = total <= best + _DECREASE_TOL * scale
    m = int(np.argmax(ok.any(axis=0)))
    j = int(np.argmin(np.where(ok[:, m], total[:, m], inf)))
    path = np.empty(t, dtype=int)
    for k in range(t - 1, -1, -1):
        path[k] = j
        if k:
            jp = back[k, j, m]
            m -= flip[j, k]
            j = int(jp)
    u = ControlSequence.from_active(path, n, u_hat.t_f)
    return u, -float(total.min())


def tr_subproblem_constrained(u_hat: ControlSequence, grad, radius: int, constraint: RoundingConstraint,
                              time_limit: Optional[float] = 60.0):
    """Minimise ``<grad, u - u_hat>`` over the constrained binary SOS1 set within the L1 ball.

    Returns ``(u, predicted_decrease, status)``; status is ``"time-limit"`` if
    the search did not close (the incumbent is still feasible).
    """
    grad = _check_center(u_hat, grad)
    u, value, status = linear_subproblem(u_hat, grad, radius, constraint, time_limit)
    return u, -value, status


def decreases(instance, spec, u_hat: ControlSequence, u_bar: ControlSequence, grad, alpha: float = 0.0,
              f_hat: Optional[float] = None, f_bar: Optional[float] = None):
    """Predicted and actual decrease ``(dF_p, dF_a)`` of moving from ``u_hat`` to ``u_bar``.

    ``alpha = 0`` gives the constrained-mode formulas (no TV terms).
    """
    spec = spec or instance.objective
    step = u_hat.values - u_bar.values
    dtv = alpha * (tv_seminorm(u_hat) - tv_seminorm(u_bar)) if alpha else 0.0
    dp = float(np.sum(np.asarray(grad) * step)) + dtv
    if f_hat is None:
        f_hat = evaluate(instance, u_hat, spec)
    if f_bar is None:
        f_bar = evaluate(instance, u_bar, spec)
    return dp, f_hat - f_bar + dtv


def _mode_feasible(u: ControlSequence, mode: Mode) -> bool:
    if isinstance(mode, ConstrainedMode):
        return satisfies(u, mode.constraint)
    return satisfies(u, Unconstrained())


def alb_improve(instance, spec, u0: ControlSequence, mode: Mode, config: TrustRegionConfig = TrustRegionConfig()):
    """Shrinking-radius trust-region loop over binary controls.

    Inner loop: solve the subproblem at radius ``R``; accept when the actual
    decrease is at least ``eta`` times the predicted one, else shrink ``R``
    (halving down to ``r_bar``, then by one). Outer loop: re-center at the
    accepted point with a fresh gradient and restart from the full radius.

    Status ``converged``: no predicted decrease at the full radius.
    ``stalled``: the radius shrank to where no predicted decrease remains (or
    below 1) without an acceptable step. ``max-iter``: outer budget spent.
    """
    spec = spec or instance.objective
    if not _mode_feasible(u0, mode):
        raise InfeasibleConstraintError("starting point is infeasible for the improvement mode")
    alpha = mode.alpha if isinstance(mode, TvMode) else 0.0
    r0 = config.start_radius(u0.n_steps)
    start = time.perf_counter()

    u = u0
    f, grad, _ = value_and_gradient(instance, u, spec)
    merit = f + alpha * tv_seminorm(u)
    history, status, outer, sub_status = [], rp.MAX_ITER, 0, rp.CONVERGED
    for outer in range(1, config.max_outer + 1):
        radius = r0
        accepted = None
        while radius >= 1:
            if isinstance(mode, TvMode):
                u_bar, _ = tr_subproblem_tv(u, grad, alpha, radius)
            else:
                u_bar, _, st = tr_subproblem_constrained(u, grad, radius, mode.constraint,
                                                         config.subproblem_time_limit)
                if st == rp.TIME_LIMIT:
                    sub_status = rp.TIME_LIMIT
            assert np.abs(u_bar.values - u.values).sum() <= radius
            assert _mode_feasible(u_bar, mode)
            f_bar = evaluate(instance, u_bar, spec) if u_bar != u else f
            dp, da = decreases(instance, spec, u, u_bar, grad, alpha, f, f_bar)
            history.append({"outer": outer, "radius": radius, "predicted": dp, "actual": da})
            if not dp > 0:
                break
            if da >= config.eta * dp:
                accepted = (u_bar, f_bar)
                break
            radius = max(radius // 2, config.r_bar) if radius > config.r_bar else radius - 1
        if accepted is None:
            status = rp.CONVERGED if radius == r0 and history[-1]["predicted"] <= 0 else rp.STALLED
            break
        u, f = accepted
        new_merit = f + alpha * tv_seminorm(u)
        assert new_merit < merit, (new_merit, merit)
        merit = new_merit
        f, grad, _ = value_and_gradient(instance, u, spec)
        log.debug("alb outer %d: merit %.6e at radius %d", outer, merit, radius)
    wall = time.perf_counter() - start
    rep = rp.SolveReport("alb", f, tv_seminorm(u), sos1_penalty(u), outer, wall, status,
                         extra={"merit": merit, "alpha": alpha, "r0": r0, "r_bar": config.r_bar, "eta": config.eta,
                                "mode": "tv" if isinstance(mode, TvMode) else str(mode.constraint),
                                "subproblem_status": sub_status, "history": history,
                                "switches": u.switch_counts().tolist()})
    return u, rep
