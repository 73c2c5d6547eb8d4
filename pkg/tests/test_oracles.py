import numpy as np
import pytest
from hypothesis import given, strategies as st

from binqc.controls import ControlSequence
from binqc.oracles import feasible_brute, gradient_error_ratio, sos1_sequences
from binqc.rounding import MaxSwitching, MinUpTime, satisfies
from binqc.verify import check


@given(st.lists(st.integers(0, 2), min_size=1, max_size=9), st.integers(1, 4), st.integers(0, 4))
def test_enumeration_feasibility_agrees_with_satisfies(active, t_minup, s_max):
    u = ControlSequence.from_active(active, 3, 1.0)
    assert feasible_brute(active, 3, t_minup=t_minup) == satisfies(u, MinUpTime(t_minup))
    assert feasible_brute(active, 3, s_max=s_max) == satisfies(u, MaxSwitching(s_max))


def test_sequence_count():
    assert sum(1 for _ in sos1_sequences(3, 4)) == 81


def test_gradient_ratio_uses_relative_and_floor():
    assert gradient_error_ratio([1.0 + 1e-6], [1.0]) == pytest.approx(0.1)
    assert gradient_error_ratio([5e-9], [0.0]) == pytest.approx(0.5)


@pytest.mark.parametrize("sense, value, passed", [("le", 1.0, True), ("le", 1.5, False), ("ge", 1.0, True),
                                                  ("ge", 0.5, False), ("lt", 1.0, False), ("lt", 0.5, True)])
def test_check_entries(sense, value, passed):
    c = check(0, "x", value, 1.0, sense)
    assert c["passed"] is passed
    assert set(c) == {"criterion", "name", "value", "bound", "margin", "passed"}
