"""Slow, independent reference computations used to cross-check the fast solvers.

Nothing here shares code with the routines it checks: gradients are checked
by central differences of the objective, rounding and trust-region searches
by full enumeration of SOS1 sequences.
"""
from __future__ import annotations

import itertools

import numpy as np

from .controls import ControlSequence
from .objectives import evaluate


def fd_gradient(instance, controls: ControlSequence, spec=None, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient, one component at a time."""
    vals = controls.values
    g = np.zeros_like(vals)
    for j in range(vals.shape[0]):
        for k in range(vals.shape[1]):
            up = vals.copy()
            dn = vals.copy()
            up[j, k] += h
            dn[j, k] -= h
            g[j, k] = (evaluate(instance, controls.with_values(up), spec)
                       - evaluate(instance, controls.with_values(dn), spec)) / (2 * h)
    return g


def gradient_error_ratio(adjoint, reference, rel=1e-5, floor=1e-8) -> float:
    """``max |a - f| / max(rel * |f|, floor)``; at most 1 means every component is within tolerance."""
    adjoint, reference = np.asarray(adjoint), np.asarray(reference)
    return float(np.max(np.abs(adjoint - reference) / np.maximum(rel * np.abs(reference), floor)))


def sos1_sequences(n_controllers: int, n_steps: int):
    """Every active-controller assignment, as tuples."""
    return itertools.product(range(n_controllers), repeat=n_steps)


def _switches(active, n):
    # per controller, transitions k (1-based) where it turns on or off
    sw = [[] for _ in range(n)]
    for k in range(1, len(active)):
        a, b = active[k - 1], active[k]
        if a != b:
            sw[a].append(k)
            sw[b].append(k)
    return sw


def feasible_brute(active, n, t_minup=None, s_max=None) -> bool:
    """Window / switch-count test written straight from the constraint sums."""
    t = len(active)
    u = np.zeros((n, t))
    u[list(active), np.arange(t)] = 1
    v = np.abs(u[:, :-1] - u[:, 1:])
    if s_max is not None and np.any(v.sum(axis=1) > s_max):
        return False
    if t_minup is not None:
        for start in range(t - t_minup):
            if np.any(v[:, start:start + t_minup].sum(axis=1) > 1):
                return False
    return True


def brute_force_cia(u_c: ControlSequence, t_minup=None, s_max=None):
    """Optimal max integral deviation and one minimiser, by enumeration."""
    n, t = u_c.shape
    cum_c = np.cumsum(u_c.values * u_c.dt, axis=1)
    best, arg = np.inf, None
    for active in sos1_sequences(n, t):
        if not feasible_brute(active, n, t_minup, s_max):
            continue
        b = np.zeros((n, t))
        b[list(active), np.arange(t)] = u_c.dt
        dev = np.max(np.abs(cum_c - np.cumsum(b, axis=1)))
        if dev < best:
            best, arg = dev, active
    return float(best), arg


def brute_force_trust_region(u_hat: ControlSequence, grad, radius, alpha=0.0, t_minup=None, s_max=None):
    """Optimal value of ``<grad, u - u_hat> + alpha (TV(u) - TV(u_hat))`` within the L1 ball, by enumeration."""
    n, t = u_hat.shape
    hat = u_hat.values
    tv_hat = np.abs(np.diff(hat, axis=1)).sum()
    best = np.inf
    for active in sos1_sequences(n, t):
        if not feasible_brute(active, n, t_minup, s_max):
            continue
        u = np.zeros((n, t))
        u[list(active), np.arange(t)] = 1
        if np.abs(u - hat).sum() > radius:
            continue
        val = float(np.sum(grad * (u - hat))) + alpha * (np.abs(np.diff(u, axis=1)).sum() - tv_hat)
        best = min(best, val)
    return best


def projected_gradient_descent(grad_fn, x0, lower, upper, step, iterations=1_000_000, tol=0.0):
    """Fixed-step projected gradient; the reference minimiser for small convex box QPs."""
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    for _ in range(iterations):
        x_new = np.clip(x - step * grad_fn(x), lower, upper)
        if np.max(np.abs(x_new - x)) <= tol:
            return x_new
        x = x_new
    return x


def soft_threshold_grid(d, beta, alpha, lo=-2.0, hi=2.0, resolution=1e-4):
    """Grid minimiser of ``beta/2 (d - v)^2 + alpha |v|``."""
    grid = np.arange(lo, hi + resolution / 2, resolution)
    return float(grid[np.argmin(0.5 * beta * (d - grid) ** 2 + alpha * np.abs(grid))])
