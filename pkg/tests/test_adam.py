import numpy as np
import pytest

from nlprecode.adam import AdamState, adam_step
from nlprecode.errors import ContractError


def test_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_first_step_magnitude_is_lr():
    p = {"w": np.array([0.5, 0.5])}
    st = AdamState(lr=0.01)
    adam_step(p, {"w": np.array([3.0, -0.2])}, st)
    np.testing.assert_allclose(p["w"] - 0.5, [-0.01, 0.01], rtol=1e-6)
    assert st.t == 1


def test_missing_gradient():
    with pytest.raises(ContractError):
        adam_step({"w": np.ones(1), "b": np.ones(1)}, {"w": np.ones(1)}, AdamState())


def test_quadratic_convergence():
    w = {"w": np.array([1.0])}
    st = AdamState(lr=0.1)
    trace = [abs(w["w"][0])]
    for _ in range(100):
        adam_step(w, {"w": 2 * w["w"]}, st)
        trace.append(abs(w["w"][0]))
    # |w| shrinks steadily until it first drops below 0.1
    first_below = next(i for i, v in enumerate(trace) if v < 0.1)
    assert all(b < a for a, b in zip(trace[:first_below], trace[1 : first_below + 1]))
    assert trace[-1] < 0.1
