"""Controller checks: proportional/integral behaviour, clamping, stopping rule."""

import math

import numpy as np
import pytest

from gcvae.control import ControllerState, WeightTriple, clamp_weights, pid_step, stopping_check
from gcvae.errors import ContractError


def reference_trace(kp, ki, min_value, set_point, actuals):
    """Scripted recurrence the implementation must reproduce bit for bit."""
    integral = 0.0
    outputs = []
    for actual in actuals:
        e = set_point - actual
        p = kp / (1.0 + math.exp(min(max(e, -50.0), 50.0)))
        integral = integral + e
        w = p - ki * integral + min_value
        w = min(max(w, min_value), 1.0)
        outputs.append(w)
    return outputs


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def test_zero_error_gives_half_kp_plus_min():
    state = ControllerState(kp=0.02, ki=0.0, min_value=0.1, set_point=5.0)
    _, w = pid_step(state, actual=5.0)
    assert w == 0.02 / 2.0 + 0.1


def test_actual_far_above_set_point_saturates_proportional_term():
    state = ControllerState(kp=0.03, ki=0.0, min_value=0.2, set_point=1.0)
    _, w = pid_step(state, actual=1e9)  # e clamps to -50, logistic -> 1
    assert abs(w - (0.03 + 0.2)) < 1e-18


def test_actual_far_below_set_point_floors_at_min():
    state = ControllerState(kp=0.03, ki=0.0, min_value=0.2, set_point=1e9)
    _, w = pid_step(state, actual=0.0)
    assert w == 0.2


def test_proportional_term_monotone_in_actual():
    state = ControllerState(kp=0.05, ki=0.0, min_value=0.0, set_point=10.0)
    outputs = [pid_step(state, actual)[1] for actual in (0.0, 5.0, 10.0, 15.0, 30.0)]
    assert all(b > a for a, b in zip(outputs, outputs[1:]))


def test_integral_accumulates_exactly():
    state = ControllerState(kp=0.0, ki=1.0, min_value=0.0, set_point=0.0)
    state, w1 = pid_step(state, actual=0.25)  # e = -0.25, integral = -0.25
    assert state.integral == -0.25
    assert w1 == 0.25
    state, w2 = pid_step(state, actual=0.25)  # integral = -0.5
    assert state.integral == -0.5
    assert w2 == 0.5
    state, _ = pid_step(state, actual=-10.0)  # big positive error unwinds it
    assert state.integral == 9.5


def test_output_always_within_bounds():
    rng = np.random.default_rng(0)
    state = ControllerState(kp=0.5, ki=0.01, min_value=0.05, set_point=3.0)
    for _ in range(500):
        state, w = pid_step(state, float(rng.uniform(-100, 100)))
        assert 0.05 <= w <= 1.0
        assert state.last_output == w


def test_pid_step_rejects_non_finite_input():
    state = ControllerState(kp=0.1, ki=0.0, min_value=0.0, set_point=1.0)
    with pytest.raises(ContractError):
        pid_step(state, float("nan"))
    with pytest.raises(ContractError):
        pid_step(state, float("inf"))


def test_controller_state_validation():
    with pytest.raises(ContractError):
        ControllerState(kp=-0.1, ki=0.0, min_value=0.0, set_point=1.0)
    with pytest.raises(ContractError):
        ControllerState(kp=0.1, ki=0.0, min_value=1.5, set_point=1.0)
    with pytest.raises(ContractError):
        ControllerState(kp=0.1, ki=0.0, min_value=0.0, set_point=float("nan"))


# ---------------------------------------------------------------------------
# multi-step traces
# ---------------------------------------------------------------------------


def test_hundred_step_trace_is_bit_exact():
    kp, ki, min_value, set_point = 0.01, 1e-4, 0.0, 30.0
    actuals = [set_point + 1.0] * 100
    expected = reference_trace(kp, ki, min_value, set_point, actuals)
    state = ControllerState(kp=kp, ki=ki, min_value=min_value, set_point=set_point)
    got = []
    for actual in actuals:
        state, w = pid_step(state, actual)
        got.append(w)
    assert got == expected  # bit-for-bit


def test_trace_with_varying_signal_is_bit_exact():
    rng = np.random.default_rng(17)
    actuals = list(rng.uniform(0.0, 60.0, size=100))
    kp, ki, min_value, set_point = 0.02, 5e-4, 0.01, 30.0
    expected = reference_trace(kp, ki, min_value, set_point, actuals)
    state = ControllerState(kp=kp, ki=ki, min_value=min_value, set_point=set_point)
    got = []
    for actual in actuals:
        state, w = pid_step(state, actual)
        got.append(w)
    assert got == expected


def test_traces_are_deterministic():
    def run():
        state = ControllerState(kp=0.01, ki=1e-4, min_value=0.0, set_point=10.0)
        out = []
        for k in range(50):
            state, w = pid_step(state, 10.0 + math.sin(k))
            out.append(w)
        return out
    assert run() == run()


def test_persistent_overshoot_drives_weight_up():
    """Actual stuck above the target: the integral term keeps pushing the weight."""
    state = ControllerState(kp=0.01, ki=1e-3, min_value=0.0, set_point=10.0)
    ws = []
    for _ in range(200):
        state, w = pid_step(state, 40.0)
        ws.append(w)
    assert ws[-1] > ws[0]
    assert ws[-1] <= 1.0


# ---------------------------------------------------------------------------
# weight clamping
# ---------------------------------------------------------------------------


def test_clamp_leaves_feasible_triples_alone():
    t = WeightTriple(alpha=0.3, beta=0.4, gamma=0.5)
    assert clamp_weights(t) == t


def test_clamp_rescales_overweight_pairs():
    out = clamp_weights(WeightTriple(alpha=0.9, beta=0.9, gamma=2.0))
    assert out == WeightTriple(alpha=0.5, beta=0.5, gamma=1.0)


def test_clamp_clips_out_of_range_components():
    out = clamp_weights(WeightTriple(alpha=1.2, beta=0.0, gamma=-0.1))
    assert out == WeightTriple(alpha=1.0, beta=0.0, gamma=0.0)


def test_clamp_is_idempotent():
    rng = np.random.default_rng(5)
    for _ in range(300):
        raw = WeightTriple(alpha=float(rng.uniform(-1, 3)),
                           beta=float(rng.uniform(-1, 3)),
                           gamma=float(rng.uniform(-1, 3)))
        once = clamp_weights(raw)
        assert clamp_weights(once) == once
        assert 0.0 <= once.alpha <= 1.0
        assert 0.0 <= once.beta <= 1.0
        assert 0.0 <= once.gamma <= 1.0
        assert once.alpha + once.beta <= 1.0


def test_clamp_handles_near_one_sums():
    # sums a hair above 1 must still land exactly inside the simplex
    for a in (0.1, 0.3, 0.5000000000000001, 0.7):
        raw = WeightTriple(alpha=a, beta=1.0 - a + 1e-16, gamma=0.0)
        out = clamp_weights(raw)
        assert out.alpha + out.beta <= 1.0


# ---------------------------------------------------------------------------
# stopping rule
# ---------------------------------------------------------------------------


def test_stopping_check_truth_table():
    assert stopping_check(0.5, 0.50005, 0.3, 0.3005, eps_a=1e-4, eps_b=1e-3)
    assert not stopping_check(0.5, 0.51, 0.3, 0.3, eps_a=1e-4, eps_b=1e-3)
    assert not stopping_check(0.5, 0.5, 0.3, 0.32, eps_a=1e-4, eps_b=1e-3)
    assert not stopping_check(0.5, 0.51, 0.3, 0.32, eps_a=1e-4, eps_b=1e-3)
    # boundary: delta equal to the threshold does not stop (strict <)
    assert not stopping_check(0.0, 1e-4, 0.0, 0.0, eps_a=1e-4, eps_b=1e-3)


def test_stopping_check_rejects_bad_thresholds():
    with pytest.raises(ContractError):
        stopping_check(0.1, 0.1, 0.1, 0.1, eps_a=0.0, eps_b=1e-3)
    with pytest.raises(ContractError):
        stopping_check(0.1, 0.1, 0.1, 0.1, eps_a=1e-4, eps_b=-1.0)
