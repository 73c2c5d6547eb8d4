"""Continuous relaxations: penalised GRAPE (pGRAPE) and ADMM with a TV regulariser."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from . import report as rp
from .controls import ControlSequence
from .errors import BinqcError, DimensionError
from .objectives import (AdmmTerms, PenaltyConfig, Sos1Mode, composite_value_and_gradient, evaluate,
                         reduce_substituted, sos1_penalty, tv_seminorm)
from .report import SolveReport

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuasiNewtonConfig:
    memory: int = 10
    max_iterations: int = 5000
    projected_gradient_tol: float = 1e-8
    max_line_search: int = 50

    def __post_init__(self):
        if min(self.memory, self.max_iterations, self.max_line_search) < 1:
            raise ValueError("memory, max_iterations and max_line_search must be positive")
        if not self.projected_gradient_tol > 0:
            raise ValueError("projected_gradient_tol must be positive")


@dataclass(frozen=True)
class AdmmConfig:
    beta: float = 0.5
    alpha: float = 1e-3
    delta: float = 1e-6
    max_outer: int = 100
    inner: QuasiNewtonConfig = field(default_factory=QuasiNewtonConfig)
    inner_tol_floor: float = 1e-6

    def __post_init__(self):
        if not (self.beta > 0 and self.delta > 0):
            raise ValueError("beta and delta must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.max_outer < 1:
            raise ValueError("max_outer must be positive")


@dataclass
class QNResult:
    x: np.ndarray
    value: float
    iterations: int
    status: str
    projected_gradient: float
    history: list


def projected_gradient_norm(x, g, lower, upper) -> float:
    """Infinity norm of ``P(x - g) - x`` for the box ``[lower, upper]``."""
    return float(np.max(np.abs(np.clip(x - g, lower, upper) - x))) if x.size else 0.0


def bound_qn_minimize(value_and_gradient: Callable, x0, lower, upper,
                      config: QuasiNewtonConfig = QuasiNewtonConfig()) -> QNResult:
    """Box-constrained limited-memory BFGS (scipy's L-BFGS-B).

    Stops when the projected-gradient infinity norm is at most
    ``config.projected_gradient_tol`` or the iteration budget is spent. A
    line-search breakdown is reported as ``status='stalled'`` with the best
    point seen, never raised.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x0.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x0.shape)
    if np.any(x0 < lower) or np.any(x0 > upper):
        raise ValueError("x0 must lie within the bounds")

    best = {"x": x0.copy(), "f": np.inf, "g": None}
    last = {}

    def fun(x):
        f, g = value_and_gradient(x)
        g = np.asarray(g, dtype=float).ravel()
        last["x"], last["f"], last["g"] = x.copy(), float(f), g
        if f < best["f"]:
            best.update(x=x.copy(), f=float(f), g=g)
        return f, g

    history = []

    def callback(xk):
        # accepted iterate: reuse the evaluation made at this point by the line search
        if "x" in last and np.array_equal(last["x"], xk):
            history.append(last["f"])
        else:
            history.append(float(value_and_gradient(xk)[0]))

    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=list(zip(lower, upper)), callback=callback,
                   options=dict(maxcor=config.memory, maxiter=config.max_iterations,
                                gtol=config.projected_gradient_tol, ftol=0.0,
                                maxls=config.max_line_search, maxfun=20 * config.max_iterations))
    x = np.clip(res.x, lower, upper)
    f, g = value_and_gradient(x)
    f = float(f)
    if best["f"] < f:
        x, f, g = best["x"], best["f"], best["g"]
    pg = projected_gradient_norm(x, np.asarray(g).ravel(), lower, upper)
    if pg <= config.projected_gradient_tol:
        status = rp.CONVERGED
    elif res.nit >= config.max_iterations:
        status = rp.MAX_ITER
    else:
        status = rp.STALLED
    return QNResult(x, f, int(res.nit), status, pg, history)


def _unpack(x, n, t, substituted):
    if substituted:
        return np.vstack([x, 1.0 - x])
    return x.reshape(n, t)


def _pack(values, substituted):
    return values[0].copy() if substituted else values.ravel().copy()


def _check_mode(instance, penalty):
    if penalty.sos1_mode is Sos1Mode.SUBSTITUTED and instance.n_controllers != 2:
        raise DimensionError("substituted SOS1 mode needs exactly two controllers")


def _start_values(x0: ControlSequence, substituted):
    vals = np.clip(x0.values, 0.0, 1.0)
    if substituted:
        vals = np.vstack([vals[0], 1.0 - vals[0]])
    return vals


def _make_objective(instance, spec, penalty, t_f, n, t, substituted, admm_terms=None):
    def fg(x):
        vals = _unpack(np.asarray(x, dtype=float), n, t, substituted)
        value, grad = composite_value_and_gradient(instance, ControlSequence(vals, t_f), spec, penalty,
                                                   admm_terms)
        return value, (reduce_substituted(grad) if substituted else grad.ravel())
    return fg


def pgrape_solve(instance, spec=None, penalty: Optional[PenaltyConfig] = None, x0: Optional[ControlSequence] = None,
                 config: QuasiNewtonConfig = QuasiNewtonConfig()):
    """Minimise ``F + rho * l(u, T)`` over ``[0, 1]^(N x T)``.

    In substituted mode (two controllers) only row 1 is optimised and row 2 is
    tied to ``1 - row 1``, so the SOS1 penalty is identically zero.
    """
    spec = spec or instance.objective
    penalty = penalty or PenaltyConfig(rho=instance.params.rho, sos1_mode=instance.sos1_mode)
    _check_mode(instance, penalty)
    if x0 is None:
        x0 = ControlSequence.constant(instance.n_controllers, instance.params.n_steps, instance.params.t_f)
    if not x0.in_box():
        raise ValueError("x0 must lie in [0, 1]")
    n, t = x0.shape
    sub = penalty.sos1_mode is Sos1Mode.SUBSTITUTED
    fg = _make_objective(instance, spec, penalty, x0.t_f, n, t, sub)
    start = time.perf_counter()
    res = bound_qn_minimize(fg, _pack(_start_values(x0, sub), sub), 0.0, 1.0, config)
    wall = time.perf_counter() - start
    u = ControlSequence(_unpack(res.x, n, t, sub), x0.t_f)
    obj = evaluate(instance, u, spec)
    rep = SolveReport("pgrape", obj, tv_seminorm(u), sos1_penalty(u), res.iterations, wall, res.status,
                      extra={"penalized_value": res.value, "rho": penalty.rho,
                             "sos1_mode": penalty.sos1_mode.value, "projected_gradient": res.projected_gradient,
                             "history": res.history})
    log.info("pgrape %s: objective %.3e after %d iterations (%s)", instance.name, obj, res.iterations, res.status)
    return u, rep


def soft_threshold(d, threshold):
    """Closed-form minimiser of ``(1/2)(d - v)^2 + threshold * |v|`` over ``v``."""
    d = np.asarray(d, dtype=float)
    return np.where(d > threshold, d - threshold, np.where(d < -threshold, d + threshold, 0.0))


def _dual_residual(dv, beta):
    # squared norm of beta * D^T (v_new - v_old), D the forward-difference operator
    g = np.zeros((dv.shape[0], dv.shape[1] + 1))
    g[:, :-1] += dv
    g[:, 1:] -= dv
    return float(beta * beta * np.sum(g * g))


def admm_solve(instance, spec=None, penalty: Optional[PenaltyConfig] = None, config: AdmmConfig = AdmmConfig(),
               x0: Optional[ControlSequence] = None, v0=None, mu0=None):
    """ADMM on ``F + rho*l + alpha*TV`` with the split ``v = u_k - u_{k+1}``.

    Each outer iteration (i) re-minimises the augmented objective in ``u``
    with the quasi-Newton solver, warm-started at the previous ``u``, (ii)
    soft-thresholds ``v`` and (iii) takes a dual step on ``mu``. Iteration stops
    once both the squared primal residual ``||Du - v||^2`` and the squared dual
    residual ``||beta D^T (v - v_prev)||^2`` are at most ``delta``, or after
    ``max_outer`` rounds. The dual test keeps the loop from stopping at a
    point that merely satisfies the split, e.g. after one round when
    ``alpha = 0``.
    """
    spec = spec or instance.objective
    penalty = penalty or PenaltyConfig(rho=instance.params.rho, sos1_mode=instance.sos1_mode)
    _check_mode(instance, penalty)
    if x0 is None:
        x0 = ControlSequence.constant(instance.n_controllers, instance.params.n_steps, instance.params.t_f)
    if not x0.in_box():
        raise ValueError("x0 must lie in [0, 1]")
    n, t = x0.shape
    sub = penalty.sos1_mode is Sos1Mode.SUBSTITUTED
    vals = _start_values(x0, sub)
    v = np.zeros((n, t - 1)) if v0 is None else np.array(v0, dtype=float)
    mu = np.zeros((n, t - 1)) if mu0 is None else np.array(mu0, dtype=float)
    if v.shape != (n, t - 1) or mu.shape != (n, t - 1):
        raise DimensionError(f"v and mu must be {n} x {t - 1}")
    thresh = config.alpha / config.beta
    residual = float(np.sum((vals[:, :-1] - vals[:, 1:] - v) ** 2))
    history, status, inner_iters, dual_residual = [], rp.MAX_ITER, 0, float("nan")
    start = time.perf_counter()
    outer = 0
    for outer in range(1, config.max_outer + 1):
        tol = max(config.inner_tol_floor, 0.1 * residual)
        inner = QuasiNewtonConfig(config.inner.memory, config.inner.max_iterations, tol, config.inner.max_line_search)
        terms = AdmmTerms(v, mu, config.beta)
        fg = _make_objective(instance, spec, penalty, x0.t_f, n, t, sub, terms)
        try:
            res = bound_qn_minimize(fg, _pack(vals, sub), 0.0, 1.0, inner)
        except BinqcError as exc:
            log.warning("admm: inner solve failed at outer iteration %d: %s", outer, exc)
            status = rp.FAILED
            break
        inner_iters += res.iterations
        vals = _unpack(res.x, n, t, sub)
        d = vals[:, :-1] - vals[:, 1:] + mu
        v_prev, v = v, soft_threshold(d, thresh)
        r = vals[:, :-1] - vals[:, 1:] - v
        mu = mu + r
        residual = float(np.sum(r * r))
        dual_residual = _dual_residual(v - v_prev, config.beta)
        u = ControlSequence(vals, x0.t_f)
        obj = evaluate(instance, u, spec)
        history.append({"iteration": outer, "objective": obj, "tv": tv_seminorm(u), "residual": residual,
                        "dual_residual": dual_residual, "inner_iterations": res.iterations, "inner_tol": tol})
        if residual <= config.delta and dual_residual <= config.delta:
            status = rp.CONVERGED
            break
    wall = time.perf_counter() - start
    u = ControlSequence(vals, x0.t_f)
    obj = evaluate(instance, u, spec)
    rep = SolveReport("admm", obj, tv_seminorm(u), sos1_penalty(u), outer, wall, status,
                      extra={"residual": residual, "dual_residual": dual_residual, "inner_iterations": inner_iters, "alpha": config.alpha,
                             "beta": config.beta, "rho": penalty.rho, "sos1_mode": penalty.sos1_mode.value,
                             "inner_tol_rule": "max(floor, 0.1 * residual)", "history": history,
                             "v": v.tolist(), "mu": mu.tolist()})
    return u, rep
