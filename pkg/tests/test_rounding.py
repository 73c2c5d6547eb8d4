import numpy as np
import pytest
from hypothesis import given, strategies as st

from binqc.controls import ControlSequence
from binqc.errors import DimensionError, InfeasibleConstraintError
from binqc.oracles import brute_force_cia, feasible_brute
from binqc.rounding import (MaxSwitching, MinUpTime, Unconstrained, bound_certificate, check_feasible, cia_round,
                            cia_solve, max_integral_deviation, satisfies, sos1_drift_epsilon, sum_up_rounding,
                            switch_transitions)

from binqc.objectives import sos1_penalty


def cols(*columns, t_f=None):
    vals = np.array(columns, dtype=float).T
    return ControlSequence(vals, vals.shape[1] if t_f is None else t_f)


def test_sur_keeps_binary_input():
    u = ControlSequence.from_active([1, 0, 2, 2, 1], 3, 2.5)
    assert sum_up_rounding(u) == u


def test_sur_hand_example():
    out = sum_up_rounding(cols((0.6, 0.4), (0.6, 0.4), (0.6, 0.4)))
    np.testing.assert_array_equal(out.values.T, [(1, 0), (0, 1), (1, 0)])


def test_sur_tie_goes_to_first_index():
    out = sum_up_rounding(cols((0.5, 0.5), (0.5, 0.5)))
    np.testing.assert_array_equal(out.values.T, [(1, 0), (0, 1)])


def test_epsilon_examples():
    assert sos1_drift_epsilon(ControlSequence.from_active([0, 1], 2, 1.0)) == 0.0
    assert sos1_drift_epsilon(cols((0.7, 0.7), (0.1, 0.1), t_f=1.0)) == pytest.approx(0.2)


def test_deviation_examples():
    u = ControlSequence.from_active([0, 1, 1], 2, 3.0)
    assert max_integral_deviation(u, u) == 0.0
    assert max_integral_deviation(cols((0.5,), (0.5,)), cols((1.0,), (0.0,))) == pytest.approx(0.5)
    with pytest.raises(DimensionError):
        max_integral_deviation(u, ControlSequence.from_active([0, 1], 2, 3.0))


@st.composite
def continuous(draw, n_choices=(2, 3, 5), t_range=(8, 64)):
    n = draw(st.sampled_from(n_choices))
    t = draw(st.integers(*t_range))
    seed = draw(st.integers(0, 2 ** 31))
    t_f = draw(st.floats(0.5, 10.0))
    return ControlSequence(np.random.default_rng(seed).uniform(size=(n, t)), t_f)


@given(continuous())
def test_sur_bounds_hold(u_c):
    u_b = sum_up_rounding(u_c)
    assert u_b.is_binary() and u_b.is_sos1()
    c = bound_certificate(u_c, u_b)
    assert c.deviation_margin >= 0
    assert c.epsilon_margin >= 0
    assert c.lower_margin >= 0
    assert c.epsilon_bound == pytest.approx(np.sqrt(u_c.t_f * sos1_penalty(u_c) * u_c.dt))


@given(continuous(n_choices=(2, 3), t_range=(1, 20)), st.integers(1, 6))
def test_lower_bound_holds_for_any_sos1_sequence(u_c, seed):
    n, t = u_c.shape
    other = ControlSequence.from_active(np.random.default_rng(seed).integers(0, n, t), n, u_c.t_f)
    assert max_integral_deviation(u_c, other) >= sos1_drift_epsilon(u_c) / n - 1e-15


def test_switch_transitions_count_both_controllers():
    assert switch_transitions([0, 0, 1, 2, 2], 3) == [[2], [2, 3], [3]]


@pytest.mark.parametrize("active, t_minup, ok", [
    ([0, 0, 0, 1, 1, 1], 3, True),
    ([0, 0, 1, 1, 1, 1], 3, True),       # a single switch: a short first run is not constrained
    ([0, 1, 1, 1, 0, 0], 3, True),       # switches at transitions 1 and 4 are 3 apart
    ([0, 1, 1, 0, 0, 0], 3, False),      # switches at transitions 1 and 3 share a window
    ([0, 0, 0, 1, 1, 0], 3, False),
    ([0, 1], 3, True),                   # horizon no longer than the window: no windows
    ([0, 1, 1, 1], 3, True),             # first switch at transition 1, next would need >= 4
])
def test_min_up_time_semantics(active, t_minup, ok):
    u = ControlSequence.from_active(active, 2, 1.0)
    assert satisfies(u, MinUpTime(t_minup)) is ok
    assert feasible_brute(active, 2, t_minup=t_minup) is ok


def test_max_switching_counts_per_controller():
    u = ControlSequence.from_active([0, 1, 0, 2], 3, 1.0)
    assert u.switch_counts().tolist() == [3, 2, 1]
    assert satisfies(u, MaxSwitching(3))
    assert not satisfies(u, MaxSwitching(2))


def test_satisfies_requires_binary_sos1():
    assert not satisfies(ControlSequence.constant(2, 3, 1.0), Unconstrained())


def test_infeasible_problems_raise():
    with pytest.raises(InfeasibleConstraintError):
        check_feasible(MinUpTime(5), 2, 4)
    with pytest.raises(InfeasibleConstraintError):
        cia_solve(ControlSequence.constant(2, 4, 1.0), MinUpTime(5))
    with pytest.raises(ValueError):
        MinUpTime(0)
    with pytest.raises(ValueError):
        MaxSwitching(-1)


def test_cia_keeps_binary_input():
    u = ControlSequence.from_active([0, 1, 1, 0, 1], 2, 5.0)
    out, obj, status = cia_round(u, Unconstrained())
    assert out == u and obj == 0.0 and status == "converged"


@pytest.mark.parametrize("constraint, t", [(MinUpTime(3), 6), (MaxSwitching(2), 8), (Unconstrained(), 9)])
@pytest.mark.parametrize("seed", range(5))
def test_cia_matches_enumeration(constraint, t, seed):
    u_c = ControlSequence(np.random.default_rng(seed).uniform(size=(2, t)), 3.0)
    res = cia_solve(u_c, constraint, time_limit=None)
    ref, _ = brute_force_cia(u_c, getattr(constraint, "t_minup", None), getattr(constraint, "s_max", None))
    assert res.objective == pytest.approx(ref, abs=1e-12)
    assert satisfies(res.controls, constraint)
    assert res.status == "converged"


@given(continuous(n_choices=(2, 3), t_range=(2, 7)))
def test_cia_never_worse_than_sur(u_c):
    res = cia_solve(u_c, Unconstrained(), time_limit=None)
    assert res.objective <= max_integral_deviation(u_c, sum_up_rounding(u_c)) + 1e-15


def test_cia_time_limit_returns_feasible_incumbent():
    u_c = ControlSequence(np.random.default_rng(0).uniform(size=(5, 80)), 4.0)
    res = cia_solve(u_c, MaxSwitching(4), time_limit=0.05)
    assert res.status in ("converged", "time-limit")
    assert satisfies(res.controls, MaxSwitching(4))


@given(continuous(n_choices=(1, 2, 4), t_range=(1, 40)))
def test_independent_rounding_equals_pairwise_sos1_rounding(u_c):
    from binqc.rounding import independent_sum_up_rounding
    out = independent_sum_up_rounding(u_c)
    for j, x in enumerate(u_c.values):
        pair = sum_up_rounding(ControlSequence(np.vstack([x, 1 - x]), u_c.t_f))
        np.testing.assert_array_equal(out.values[j], pair.values[0])


def test_binary_objective_gap_shrinks_with_refinement():
    from binqc.instances import build_cnot_instance
    from binqc.objectives import evaluate
    from binqc.relax import pgrape_solve
    from binqc.rounding import independent_sum_up_rounding
    inst = build_cnot_instance(5)
    u, _ = pgrape_solve(inst)
    gaps = []
    for t in (100, 200, 400, 800):
        fine = u.refine(t // u.n_steps)
        grid = inst.with_grid(n_steps=t)
        gaps.append(abs(evaluate(grid, independent_sum_up_rounding(fine)) - evaluate(grid, fine)))
    assert all(b < a for a, b in zip(gaps, gaps[1:])), gaps
